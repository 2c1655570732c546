//! Small hand-built worlds for policy unit tests.

use crate::arrivals::{ArrivalRateTable, EmergencyCall, DEFAULT_BIN_SECONDS};
use crate::citymodel::{build_rect_grid, BBox, CityInstance, GeoPoint, Site, TravelProvider};
use crate::ctmc::FleetVector;
use crate::metrics::CostModel;
use crate::simulator::{AmbStatus, Ambulance, Job, ServiceDraw, ServiceParams, SystemState};

pub(crate) struct World {
    pub instance: CityInstance,
    pub cost: CostModel,
    pub service: ServiceParams,
    pub ambulances: Vec<Ambulance>,
    pub queue: Vec<EmergencyCall>,
    pub clock: f64,
    fleets: Vec<FleetVector>,
    next_call: usize,
}

impl World {
    /// `n` zones in a west-east row, 0.05° each, with a station at every centroid
    /// and one hospital in zone 0.
    pub fn line(n: usize) -> Self {
        let bbox = BBox::new(GeoPoint::new(0.0, 0.0).unwrap(), GeoPoint::new(0.05, 0.05 * n as f64).unwrap()).unwrap();
        let zones = build_rect_grid(bbox, n, 1).unwrap();
        let stations: Vec<Site> = zones.iter().map(|z| Site { id: z.id, location: z.centroid }).collect();
        let hospitals = vec![Site { id: 0, location: zones[0].centroid }];
        let mut rates = ArrivalRateTable::new(n, 4, DEFAULT_BIN_SECONDS).unwrap();
        for z in 0..n {
            for c in 0..4 {
                rates.set_constant(z, c, 1e-4).unwrap();
            }
        }
        let instance =
            CityInstance::new(zones, stations, hospitals, TravelProvider::great_circle(60.0).unwrap(), rates).unwrap();
        Self {
            fleets: vec![FleetVector::zeros(2); n],
            instance,
            cost: CostModel::default(),
            service: ServiceParams::uniform(4),
            ambulances: Vec::new(),
            queue: Vec::new(),
            clock: 0.0,
            next_call: 0,
        }
    }

    fn recount(&mut self) {
        self.fleets = vec![FleetVector::zeros(self.cost.n_amb_types()); self.instance.stations.len()];
        for a in &self.ambulances {
            if let Some(s) = a.station() {
                self.fleets[s].0[a.amb_type] += 1;
            }
        }
    }

    pub fn add_amb(&mut self, amb_type: usize, station: usize) -> usize {
        let id = self.ambulances.len();
        self.ambulances.push(Ambulance::new(id, amb_type, station, &self.instance));
        self.recount();
        id
    }

    pub fn enqueue(&mut self, time: impl Into<f64>, zone: usize, etype: usize) -> EmergencyCall {
        let call = EmergencyCall {
            id: self.next_call,
            time: time.into(),
            zone,
            location: self.instance.zones[zone].centroid,
            etype,
        };
        self.next_call += 1;
        self.queue.push(call);
        call
    }

    /// On scene at its current place, expected to finish at `release`.
    pub fn make_busy(&mut self, amb: usize, release: f64) {
        let loc = self.ambulances[amb].location;
        let mean = self.service.on_scene[0].mean;
        let call = EmergencyCall { id: usize::MAX, time: self.clock, zone: 0, location: loc, etype: 0 };
        let a = &mut self.ambulances[amb];
        a.status = AmbStatus::OnScene;
        a.job = Some(Job {
            call,
            draw: ServiceDraw { on_scene: mean, transport: false, hospital_wait: 0.0, cleaning: false, cleaning_time: 0.0 },
            hospital: 0,
            clean_station: 0,
            stage_start: release - mean,
            stage_end: release,
        });
        self.recount();
    }

    /// Just finished a task at station `station`'s location.
    pub fn make_free(&mut self, amb: usize, station: usize) {
        let loc = self.instance.stations[station].location;
        let a = &mut self.ambulances[amb];
        a.status = AmbStatus::Free;
        a.location = loc;
        a.job = None;
        self.recount();
    }

    pub fn state(&self) -> SystemState<'_> {
        SystemState {
            clock: self.clock,
            instance: &self.instance,
            cost: &self.cost,
            service: &self.service,
            ambulances: &self.ambulances,
            queue: &self.queue,
            fleets: &self.fleets,
        }
    }
}
