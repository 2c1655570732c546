//! Discrete-event simulation of one scenario.
//!
//! An ambulance dispatched to an emergency drives to the scene, treats the
//! patient, possibly transports to the nearest hospital and waits there,
//! possibly drives to the nearest station to be cleaned, and then becomes
//! free. The policy is consulted when a call arrives, when an ambulance
//! becomes free, and periodically for calls that stay in queue.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::arrivals::{sample_scenario, EmergencyCall};
use crate::citymodel::{interpolate, CityInstance, GeoPoint};
use crate::ctmc::FleetVector;
use crate::error::{Error, Result};
use crate::metrics::{CostModel, EmergencyRecord};
use crate::policies::{Policy, PolicyDecision};

/// Mixed into the scenario seed for service-time streams, so that they do not
/// collide with the arrival streams.
const SERVICE_STREAM_SALT: u64 = 0x5e27_1ce5_d0a7_a5ed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DurationFamily {
    #[default]
    Lognormal,
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationSpec {
    pub mean: f64,
    pub sd: f64,
}

impl DurationSpec {
    pub fn with_half_sd(mean: f64) -> Self {
        Self { mean, sd: 0.5 * mean }
    }

    fn sample<R: Rng>(&self, family: DurationFamily, rng: &mut R) -> f64 {
        match family {
            DurationFamily::Lognormal => {
                let s2 = (1.0 + (self.sd / self.mean).powi(2)).ln();
                LogNormal::new(self.mean.ln() - 0.5 * s2, s2.sqrt())
                    .expect("validated parameters")
                    .sample(rng)
            }
            DurationFamily::Exponential => Exp::new(1.0 / self.mean).expect("validated mean").sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceParams {
    /// Per emergency type.
    pub on_scene: Vec<DurationSpec>,
    pub hospital_wait: DurationSpec,
    pub cleaning: DurationSpec,
    pub p_transport: Vec<f64>,
    pub p_cleaning: Vec<f64>,
    pub family: DurationFamily,
}

impl ServiceParams {
    pub fn uniform(n_types: usize) -> Self {
        Self {
            on_scene: vec![DurationSpec::with_half_sd(600.0); n_types],
            hospital_wait: DurationSpec::with_half_sd(900.0),
            cleaning: DurationSpec::with_half_sd(600.0),
            p_transport: vec![0.75; n_types],
            p_cleaning: vec![0.3; n_types],
            family: DurationFamily::Lognormal,
        }
    }

    pub fn validate(&self, n_types: usize) -> Result<()> {
        if self.on_scene.len() != n_types || self.p_transport.len() != n_types || self.p_cleaning.len() != n_types {
            return Err(Error::Config(format!("service parameters must cover {n_types} emergency types")));
        }
        for d in self.on_scene.iter().chain([&self.hospital_wait, &self.cleaning]) {
            if !(d.mean > 0.0) || !(d.sd >= 0.0) || !d.mean.is_finite() || !d.sd.is_finite() {
                return Err(Error::Config(format!("bad duration {d:?}")));
            }
        }
        if self.p_transport.iter().chain(&self.p_cleaning).any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Service draws for one call. They depend only on the call, so every policy
/// sees the same on-scene times and transport outcomes for a given seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceDraw {
    pub on_scene: f64,
    pub transport: bool,
    pub hospital_wait: f64,
    pub cleaning: bool,
    pub cleaning_time: f64,
}

impl ServiceDraw {
    pub fn sample(params: &ServiceParams, call: &EmergencyCall, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SERVICE_STREAM_SALT);
        rng.set_stream(call.id as u64);
        let c = call.etype;
        let on_scene = params.on_scene[c].sample(params.family, &mut rng);
        let transport = rng.random::<f64>() < params.p_transport[c];
        let hospital_wait = params.hospital_wait.sample(params.family, &mut rng);
        let cleaning = rng.random::<f64>() < params.p_cleaning[c];
        let cleaning_time = params.cleaning.sample(params.family, &mut rng);
        Self { on_scene, transport, hospital_wait, cleaning, cleaning_time }
    }
}

/// The emergency an ambulance is working on and where its task leads.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub call: EmergencyCall,
    pub draw: ServiceDraw,
    pub hospital: usize,
    pub clean_station: usize,
    pub stage_start: f64,
    pub stage_end: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AmbStatus {
    AtStation { station: usize },
    EnrouteStation { station: usize, from: GeoPoint, depart: f64, eta: f64 },
    ToScene,
    OnScene,
    ToHospital,
    AtHospital,
    ToCleaning,
    Cleaning,
    /// Between finishing a task and the policy's reassignment decision.
    Free,
}

/// Whether an ambulance in `status` may be sent to a new emergency.
pub fn redirectable_check(status: &AmbStatus) -> bool {
    matches!(status, AmbStatus::AtStation { .. } | AmbStatus::EnrouteStation { .. })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ambulance {
    pub id: usize,
    pub amb_type: usize,
    pub home: usize,
    pub status: AmbStatus,
    /// Last fixed position: station, scene, hospital, or departure point.
    pub location: GeoPoint,
    pub job: Option<Job>,
    pub busy_time: f64,
    busy_since: f64,
    token: u64,
}

impl Ambulance {
    pub fn new(id: usize, amb_type: usize, home: usize, instance: &CityInstance) -> Self {
        Self {
            id,
            amb_type,
            home,
            status: AmbStatus::AtStation { station: home },
            location: instance.stations[home].location,
            job: None,
            busy_time: 0.0,
            busy_since: 0.0,
            token: 0,
        }
    }

    pub fn is_available(&self) -> bool {
        redirectable_check(&self.status)
    }

    /// Station whose fleet vector counts this ambulance.
    pub fn station(&self) -> Option<usize> {
        match self.status {
            AmbStatus::AtStation { station } | AmbStatus::EnrouteStation { station, .. } => Some(station),
            _ => None,
        }
    }

    /// Position at `clock`. Rides to a station move along the great circle;
    /// with a travel matrix the ambulance stays at its departure point.
    pub fn position(&self, clock: f64, instance: &CityInstance) -> GeoPoint {
        match self.status {
            AmbStatus::EnrouteStation { station, from, depart, eta } if !instance.travel.is_matrix() => {
                let frac = if eta > depart { ((clock - depart) / (eta - depart)).clamp(0.0, 1.0) } else { 1.0 };
                interpolate(from, instance.stations[station].location, frac)
            }
            _ => self.location,
        }
    }

    /// Expected time and place at which the current task ends. Travel legs use
    /// the scheduled arrival, service stages their mean durations.
    pub fn release_forecast(&self, clock: f64, instance: &CityInstance, service: &ServiceParams) -> Result<(f64, GeoPoint)> {
        let Some(job) = &self.job else {
            return Ok((clock, self.location));
        };
        if self.is_available() || matches!(self.status, AmbStatus::Free) {
            return Ok((clock, self.location));
        }
        let scene = job.call.location;
        let hosp = instance.hospitals[job.hospital].location;
        let clean = instance.stations[job.clean_station].location;
        let c = job.call.etype;
        let after_clean_start = |t: f64| t + service.cleaning.mean;
        let to_cleaning = |from: GeoPoint, t: f64| -> Result<f64> { Ok(after_clean_start(t + instance.travel_time(from, clean)?)) };
        let after_hospital_done = |t: f64| -> Result<(f64, GeoPoint)> {
            if job.draw.cleaning {
                Ok((to_cleaning(hosp, t)?, clean))
            } else {
                Ok((t, hosp))
            }
        };
        let after_scene_done = |t: f64| -> Result<(f64, GeoPoint)> {
            if job.draw.transport {
                after_hospital_done(t + instance.travel_time(scene, hosp)? + service.hospital_wait.mean)
            } else if job.draw.cleaning {
                Ok((to_cleaning(scene, t)?, clean))
            } else {
                Ok((t, scene))
            }
        };
        let mean_end = |mean: f64| (job.stage_start + mean).max(clock);
        match self.status {
            AmbStatus::ToScene => after_scene_done(job.stage_end + service.on_scene[c].mean),
            AmbStatus::OnScene => after_scene_done(mean_end(service.on_scene[c].mean)),
            AmbStatus::ToHospital => after_hospital_done(job.stage_end + service.hospital_wait.mean),
            AmbStatus::AtHospital => after_hospital_done(mean_end(service.hospital_wait.mean)),
            AmbStatus::ToCleaning => Ok((after_clean_start(job.stage_end), clean)),
            AmbStatus::Cleaning => Ok((mean_end(service.cleaning.mean), clean)),
            _ => unreachable!("handled above"),
        }
    }
}

/// Read-only view handed to policies at a decision epoch.
#[derive(Debug, Clone, Copy)]
pub struct SystemState<'a> {
    pub clock: f64,
    pub instance: &'a CityInstance,
    pub cost: &'a CostModel,
    pub service: &'a ServiceParams,
    pub ambulances: &'a [Ambulance],
    /// Waiting calls ordered by arrival.
    pub queue: &'a [EmergencyCall],
    /// Per station position: ambulances at or riding to it, by type.
    pub fleets: &'a [FleetVector],
}

impl SystemState<'_> {
    pub fn position(&self, amb: usize) -> GeoPoint {
        self.ambulances[amb].position(self.clock, self.instance)
    }

    pub fn travel(&self, p: GeoPoint, q: GeoPoint) -> Result<f64> {
        self.instance.travel_time(p, q)
    }

    pub fn available(&self) -> impl Iterator<Item = &Ambulance> + '_ {
        self.ambulances.iter().filter(|a| a.is_available())
    }

    pub fn compatible(&self, amb: usize, call: &EmergencyCall) -> bool {
        self.cost.compatible(self.ambulances[amb].amb_type, call.etype)
    }

    pub fn queued(&self, call_id: usize) -> Option<&EmergencyCall> {
        self.queue.iter().find(|c| c.id == call_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpochKind {
    Call,
    Free,
    Review,
}

impl EpochKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EpochKind::Call => "call",
            EpochKind::Free => "free",
            EpochKind::Review => "review",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Dispatch,
    Reposition,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Dispatch => "dispatch",
            ActionKind::Reposition => "reposition",
        }
    }
}

/// One executed action; `target` is a call id or a station position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionLogEntry {
    pub time: f64,
    pub epoch: EpochKind,
    pub policy: String,
    pub action: ActionKind,
    pub amb: usize,
    pub target: usize,
    pub position: GeoPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub service: ServiceParams,
    pub cost: CostModel,
    /// `(ambulance type, home station position)` per ambulance.
    pub fleet: Vec<(usize, usize)>,
    /// Interval between policy reviews of a waiting call.
    pub review_interval: f64,
    pub log_decisions: bool,
    /// Recount fleet vectors from scratch after every event.
    pub audit: bool,
}

impl SimConfig {
    pub fn new(horizon: f64, service: ServiceParams, cost: CostModel, fleet: Vec<(usize, usize)>) -> Self {
        Self { horizon, service, cost, fleet, review_interval: 300.0, log_decisions: false, audit: cfg!(debug_assertions) }
    }
}

/// Alternating ALS/BLS ambulances placed round-robin over `n_stations`.
pub fn round_robin_fleet(n_ambulances: usize, n_types: usize, n_stations: usize) -> Vec<(usize, usize)> {
    (0..n_ambulances).map(|k| (k % n_types, k % n_stations)).collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioOutcome {
    /// Sorted by call id.
    pub records: Vec<EmergencyRecord>,
    pub n_calls: usize,
    pub free_epochs: usize,
    pub events: usize,
    pub log: Vec<DecisionLogEntry>,
}

/// Calls of one scenario, placed where the travel provider can route them.
pub fn scenario_calls(instance: &CityInstance, horizon: f64, seed: u64) -> Result<Vec<EmergencyCall>> {
    let mut calls = sample_scenario(&instance.zones, &instance.rates, horizon, seed)?;
    for c in &mut calls {
        c.location = instance.call_point(c.zone, c.location);
    }
    Ok(calls)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    CallArrival { call: usize },
    SceneArrival { amb: usize },
    SceneDone { amb: usize },
    HospitalArrival { amb: usize },
    HospitalDone { amb: usize },
    CleaningArrival { amb: usize },
    CleaningDone { amb: usize },
    StationArrival { amb: usize },
    QueueReview { call: usize },
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    token: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap pops the earliest
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Engine<'a> {
    instance: &'a CityInstance,
    cfg: &'a SimConfig,
    policy: &'a dyn Policy,
    seed: u64,
    clock: f64,
    seq: u64,
    heap: BinaryHeap<Event>,
    calls: Vec<EmergencyCall>,
    ambulances: Vec<Ambulance>,
    queue: Vec<EmergencyCall>,
    fleets: Vec<FleetVector>,
    records: HashMap<usize, EmergencyRecord>,
    log: Vec<DecisionLogEntry>,
    free_epochs: usize,
    events: usize,
}

/// Runs one scenario to completion: calls arrive over the horizon and the
/// simulation continues until every call has been served.
pub fn run_scenario(instance: &CityInstance, policy: &dyn Policy, cfg: &SimConfig, seed: u64) -> Result<ScenarioOutcome> {
    let calls = scenario_calls(instance, cfg.horizon, seed)?;
    run_calls(instance, policy, cfg, seed, calls)
}

/// Runs a scenario on a given call list (ids must be `0..n` in time order).
pub fn run_calls(
    instance: &CityInstance,
    policy: &dyn Policy,
    cfg: &SimConfig,
    seed: u64,
    calls: Vec<EmergencyCall>,
) -> Result<ScenarioOutcome> {
    let n_types = cfg.cost.n_call_types();
    cfg.cost.validate()?;
    cfg.service.validate(n_types)?;
    if cfg.cost.n_call_types() != instance.rates.n_types() {
        return Err(Error::Config("cost model and rate table disagree on emergency types".into()));
    }
    if !(cfg.review_interval > 0.0) {
        return Err(Error::Config("review interval must be positive".into()));
    }
    for &(t, s) in &cfg.fleet {
        if t >= cfg.cost.n_amb_types() || s >= instance.stations.len() {
            return Err(Error::Config(format!("ambulance (type {t}, station {s}) is out of range")));
        }
    }
    for (i, c) in calls.iter().enumerate() {
        if c.id != i || i > 0 && c.time < calls[i - 1].time {
            return Err(Error::Simulation("calls must have ids 0..n in time order".into()));
        }
        if !cfg.fleet.iter().any(|&(t, _)| cfg.cost.compatible(t, c.etype)) {
            return Err(Error::Config(format!("no ambulance in the fleet can serve emergency type {}", c.etype)));
        }
    }
    let n_amb_types = cfg.cost.n_amb_types();
    let ambulances: Vec<Ambulance> =
        cfg.fleet.iter().enumerate().map(|(k, &(t, s))| Ambulance::new(k, t, s, instance)).collect();
    let mut fleets = vec![FleetVector::zeros(n_amb_types); instance.stations.len()];
    for a in &ambulances {
        fleets[a.home].0[a.amb_type] += 1;
    }
    let mut engine = Engine {
        instance,
        cfg,
        policy,
        seed,
        clock: 0.0,
        seq: 0,
        heap: BinaryHeap::new(),
        calls,
        ambulances,
        queue: Vec::new(),
        fleets,
        records: HashMap::new(),
        log: Vec::new(),
        free_epochs: 0,
        events: 0,
    };
    for i in 0..engine.calls.len() {
        let t = engine.calls[i].time;
        engine.schedule(t, 0, EventKind::CallArrival { call: i });
    }
    engine.run()?;
    let n_calls = engine.calls.len();
    if engine.records.len() != n_calls {
        return Err(Error::Simulation(format!("{} records for {n_calls} calls", engine.records.len())));
    }
    let mut records: Vec<EmergencyRecord> = engine.records.into_values().collect();
    records.sort_by_key(|r| r.call_id);
    Ok(ScenarioOutcome { records, n_calls, free_epochs: engine.free_epochs, events: engine.events, log: engine.log })
}

impl Engine<'_> {
    fn schedule(&mut self, time: f64, token: u64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event { time, seq: self.seq, token, kind });
    }

    fn schedule_amb(&mut self, amb: usize, time: f64, kind: EventKind) {
        let token = self.ambulances[amb].token;
        if let Some(job) = self.ambulances[amb].job.as_mut() {
            job.stage_start = self.clock;
            job.stage_end = time;
        }
        self.schedule(time, token, kind);
    }

    fn state(&self) -> SystemState<'_> {
        SystemState {
            clock: self.clock,
            instance: self.instance,
            cost: &self.cfg.cost,
            service: &self.cfg.service,
            ambulances: &self.ambulances,
            queue: &self.queue,
            fleets: &self.fleets,
        }
    }

    fn run(&mut self) -> Result<()> {
        let max_events = 1_000_000 + 1_000 * self.calls.len();
        while let Some(ev) = self.heap.pop() {
            if ev.time < self.clock {
                return Err(Error::Simulation(format!("event at {} before clock {}", ev.time, self.clock)));
            }
            self.clock = ev.time;
            self.events += 1;
            if self.events > max_events {
                return Err(Error::Simulation("event limit reached; calls are not being served".into()));
            }
            self.handle(ev)?;
            if self.cfg.audit {
                self.audit()?;
            }
        }
        if !self.queue.is_empty() {
            return Err(Error::Simulation(format!("{} calls left in queue", self.queue.len())));
        }
        Ok(())
    }

    fn handle(&mut self, ev: Event) -> Result<()> {
        let stale = |amb: usize, s: &Self| s.ambulances[amb].token != ev.token;
        match ev.kind {
            EventKind::CallArrival { call } => {
                let c = self.calls[call];
                self.queue.push(c);
                let decision = self.policy.on_call(&self.state(), &c)?;
                self.apply(EpochKind::Call, None, decision)?;
                if self.queue.iter().any(|q| q.id == c.id) {
                    let t = self.clock + self.cfg.review_interval;
                    self.schedule(t, 0, EventKind::QueueReview { call });
                }
            }
            EventKind::QueueReview { call } => {
                if let Some(c) = self.queue.iter().find(|q| q.id == call).copied() {
                    let decision = self.policy.on_review(&self.state(), &c)?;
                    self.apply(EpochKind::Review, None, decision)?;
                    if self.queue.iter().any(|q| q.id == call) {
                        let t = self.clock + self.cfg.review_interval;
                        self.schedule(t, 0, EventKind::QueueReview { call });
                    }
                }
            }
            EventKind::SceneArrival { amb } if !stale(amb, self) => {
                let a = &mut self.ambulances[amb];
                a.status = AmbStatus::OnScene;
                let job = a.job.as_ref().expect("ambulance on a job");
                a.location = job.call.location;
                let t = self.clock + job.draw.on_scene;
                self.schedule_amb(amb, t, EventKind::SceneDone { amb });
            }
            EventKind::SceneDone { amb } if !stale(amb, self) => {
                let job = self.ambulances[amb].job.clone().expect("ambulance on a job");
                if job.draw.transport {
                    let h = self.instance.hospitals[job.hospital].location;
                    let t = self.clock + self.instance.travel_time(job.call.location, h)?;
                    self.ambulances[amb].status = AmbStatus::ToHospital;
                    self.schedule_amb(amb, t, EventKind::HospitalArrival { amb });
                } else if job.draw.cleaning {
                    self.start_cleaning_leg(amb, job.call.location)?;
                } else {
                    self.free(amb)?;
                }
            }
            EventKind::HospitalArrival { amb } if !stale(amb, self) => {
                let a = &mut self.ambulances[amb];
                let job = a.job.as_ref().expect("ambulance on a job");
                a.status = AmbStatus::AtHospital;
                a.location = self.instance.hospitals[job.hospital].location;
                let t = self.clock + job.draw.hospital_wait;
                self.schedule_amb(amb, t, EventKind::HospitalDone { amb });
            }
            EventKind::HospitalDone { amb } if !stale(amb, self) => {
                let job = self.ambulances[amb].job.clone().expect("ambulance on a job");
                if job.draw.cleaning {
                    self.start_cleaning_leg(amb, self.instance.hospitals[job.hospital].location)?;
                } else {
                    self.free(amb)?;
                }
            }
            EventKind::CleaningArrival { amb } if !stale(amb, self) => {
                let a = &mut self.ambulances[amb];
                let job = a.job.as_ref().expect("ambulance on a job");
                a.status = AmbStatus::Cleaning;
                a.location = self.instance.stations[job.clean_station].location;
                let t = self.clock + job.draw.cleaning_time;
                self.schedule_amb(amb, t, EventKind::CleaningDone { amb });
            }
            EventKind::CleaningDone { amb } if !stale(amb, self) => self.free(amb)?,
            EventKind::StationArrival { amb } if !stale(amb, self) => {
                let a = &mut self.ambulances[amb];
                if let AmbStatus::EnrouteStation { station, .. } = a.status {
                    a.status = AmbStatus::AtStation { station };
                    a.location = self.instance.stations[station].location;
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn start_cleaning_leg(&mut self, amb: usize, from: GeoPoint) -> Result<()> {
        let job = self.ambulances[amb].job.as_ref().expect("ambulance on a job");
        let to = self.instance.stations[job.clean_station].location;
        let t = self.clock + self.instance.travel_time(from, to)?;
        self.ambulances[amb].status = AmbStatus::ToCleaning;
        self.schedule_amb(amb, t, EventKind::CleaningArrival { amb });
        Ok(())
    }

    /// Task finished: close the record and let the policy reassign the ambulance.
    fn free(&mut self, amb: usize) -> Result<()> {
        let a = &mut self.ambulances[amb];
        let job = a.job.take().expect("ambulance on a job");
        a.status = AmbStatus::Free;
        a.busy_time += self.clock - a.busy_since;
        let rec = self
            .records
            .get_mut(&job.call.id)
            .ok_or_else(|| Error::Simulation(format!("no record for call {}", job.call.id)))?;
        rec.finish_time = self.clock;
        self.free_epochs += 1;
        let decision = self.policy.on_free(&self.state(), amb)?;
        self.apply(EpochKind::Free, Some(amb), decision)
    }

    fn fault(&self, reason: String) -> Error {
        Error::PolicyFault { policy: self.policy.name().to_string(), time: self.clock, reason }
    }

    /// Validates a decision against the live state and executes it.
    fn apply(&mut self, epoch: EpochKind, freed: Option<usize>, d: PolicyDecision) -> Result<()> {
        let n = self.ambulances.len();
        let mut acted = vec![false; n];
        let mut served = Vec::new();
        for &(amb, call) in &d.dispatches {
            if amb >= n || acted[amb] {
                return Err(self.fault(format!("ambulance {amb} unknown or given two actions")));
            }
            let a = &self.ambulances[amb];
            if !(a.is_available() || freed == Some(amb)) {
                return Err(self.fault(format!("ambulance {amb} is busy ({:?})", a.status)));
            }
            let Some(c) = self.queue.iter().find(|q| q.id == call) else {
                return Err(self.fault(format!("call {call} is not waiting")));
            };
            if served.contains(&call) {
                return Err(self.fault(format!("call {call} dispatched twice")));
            }
            if !self.cfg.cost.compatible(a.amb_type, c.etype) {
                return Err(self.fault(format!("ambulance {amb} cannot serve call {call}")));
            }
            acted[amb] = true;
            served.push(call);
        }
        for &(amb, station) in &d.repositions {
            if freed != Some(amb) || acted[amb] {
                return Err(self.fault(format!("ambulance {amb} cannot be repositioned now")));
            }
            if station >= self.instance.stations.len() {
                return Err(self.fault(format!("unknown station {station}")));
            }
            acted[amb] = true;
        }
        if let Some(a0) = freed {
            if !acted[a0] {
                return Err(self.fault(format!("freed ambulance {a0} was given no action")));
            }
        }
        for (amb, call) in d.dispatches {
            self.dispatch(epoch, amb, call)?;
        }
        for (amb, station) in d.repositions {
            self.reposition(epoch, amb, station)?;
        }
        Ok(())
    }

    fn log(&mut self, epoch: EpochKind, action: ActionKind, amb: usize, target: usize, position: GeoPoint) {
        if self.cfg.log_decisions {
            self.log.push(DecisionLogEntry {
                time: self.clock,
                epoch,
                policy: self.policy.name().to_string(),
                action,
                amb,
                target,
                position,
            });
        }
    }

    fn dispatch(&mut self, epoch: EpochKind, amb: usize, call_id: usize) -> Result<()> {
        let pos = self.queue.iter().position(|q| q.id == call_id).expect("validated");
        let call = self.queue.remove(pos);
        let from = self.ambulances[amb].position(self.clock, self.instance);
        if let Some(s) = self.ambulances[amb].station() {
            let v = &mut self.fleets[s].0[self.ambulances[amb].amb_type];
            *v = v.checked_sub(1).ok_or_else(|| Error::Simulation(format!("fleet underflow at station {s}")))?;
        }
        let travel = self.instance.travel_time(from, call.location)?;
        let response_time = (self.clock - call.time) + travel;
        let a_type = self.ambulances[amb].amb_type;
        let allocation_cost = self.cfg.cost.allocation_cost(a_type, call.etype, response_time)?;
        self.records.insert(
            call.id,
            EmergencyRecord { call_id: call.id, etype: call.etype, amb, response_time, allocation_cost, finish_time: f64::NAN },
        );
        let draw = ServiceDraw::sample(&self.cfg.service, &call, self.seed);
        let hospital = self.instance.nearest_hospital(call.location)?;
        let leaves_from = if draw.transport { self.instance.hospitals[hospital].location } else { call.location };
        let clean_station = self.instance.nearest_station(leaves_from)?;
        let a = &mut self.ambulances[amb];
        a.token += 1;
        a.location = from;
        a.status = AmbStatus::ToScene;
        a.busy_since = self.clock;
        a.job = Some(Job { call, draw, hospital, clean_station, stage_start: self.clock, stage_end: self.clock + travel });
        self.log(epoch, ActionKind::Dispatch, amb, call.id, from);
        let t = self.clock + travel;
        self.schedule_amb(amb, t, EventKind::SceneArrival { amb });
        Ok(())
    }

    fn reposition(&mut self, epoch: EpochKind, amb: usize, station: usize) -> Result<()> {
        let from = self.ambulances[amb].location;
        let travel = self.instance.travel_time(from, self.instance.stations[station].location)?;
        let a = &mut self.ambulances[amb];
        a.token += 1;
        a.status = AmbStatus::EnrouteStation { station, from, depart: self.clock, eta: self.clock + travel };
        self.fleets[station].0[a.amb_type] += 1;
        self.log(epoch, ActionKind::Reposition, amb, station, from);
        let token = self.ambulances[amb].token;
        self.schedule(self.clock + travel, token, EventKind::StationArrival { amb });
        Ok(())
    }

    fn audit(&self) -> Result<()> {
        let mut recount = vec![FleetVector::zeros(self.cfg.cost.n_amb_types()); self.instance.stations.len()];
        for a in &self.ambulances {
            if let Some(s) = a.station() {
                recount[s].0[a.amb_type] += 1;
            }
            if matches!(a.status, AmbStatus::Free) {
                return Err(Error::Simulation(format!("ambulance {} left without an action", a.id)));
            }
        }
        if recount != self.fleets {
            return Err(Error::Simulation(format!("fleet bookkeeping drifted at t={}", self.clock)));
        }
        if self.queue.windows(2).any(|w| (w[0].time, w[0].id) > (w[1].time, w[1].id)) {
            return Err(Error::Simulation("queue out of order".into()));
        }
        Ok(())
    }
}
