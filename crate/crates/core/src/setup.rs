//! Built-in city setups: a Rio-like and a US-like synthetic city, and a small
//! uniform test city.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arrivals::{ArrivalRateTable, DEFAULT_BIN_SECONDS};
use crate::citymodel::{build_hex_grid, build_rect_grid, BBox, CityInstance, GeoPoint, Site, TravelProvider, Zone};
use crate::error::{Error, Result};
use crate::metrics::CostModel;
use crate::simulator::ServiceParams;

pub const ONE_WEEK: f64 = crate::arrivals::WEEK_SECONDS;
pub const TRAVEL_SPEED_KMH: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AmbSetup {
    Rj,
    Us,
    Synthetic,
}

impl AmbSetup {
    pub fn as_str(&self) -> &'static str {
        match self {
            AmbSetup::Rj => "rj",
            AmbSetup::Us => "us",
            AmbSetup::Synthetic => "synthetic",
        }
    }
}

impl FromStr for AmbSetup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rj" => Ok(AmbSetup::Rj),
            "us" => Ok(AmbSetup::Us),
            "synthetic" => Ok(AmbSetup::Synthetic),
            other => Err(Error::Config(format!("unknown setup {other:?}; expected rj, us or synthetic"))),
        }
    }
}

/// A city with the service and cost models it is simulated under.
#[derive(Debug, Clone)]
pub struct Setup {
    pub kind: AmbSetup,
    pub instance: CityInstance,
    pub service: ServiceParams,
    pub cost: CostModel,
}

/// Gaussian demand bump: centre, spread (degrees), weight.
struct Hotspot {
    at: (f64, f64),
    sigma: f64,
    weight: f64,
}

struct CitySpec {
    zones: Vec<Zone>,
    hotspots: Vec<Hotspot>,
    floor: f64,
    /// Mean calls per second over the whole city.
    total_rate: f64,
    type_mix: [f64; 4],
    n_stations: usize,
    n_hospitals: usize,
    daily_swing: f64,
}

fn bbox(lat0: f64, lon0: f64, lat1: f64, lon1: f64) -> Result<BBox> {
    BBox::new(GeoPoint::new(lat0, lon0)?, GeoPoint::new(lat1, lon1)?)
}

fn zone_weights(spec: &CitySpec) -> Vec<f64> {
    spec.zones
        .iter()
        .map(|z| {
            let (lat, lon) = (z.centroid.lat, z.centroid.lon);
            spec.floor
                + spec
                    .hotspots
                    .iter()
                    .map(|h| {
                        let d2 = (lat - h.at.0).powi(2) + (lon - h.at.1).powi(2);
                        h.weight * (-0.5 * d2 / (h.sigma * h.sigma)).exp()
                    })
                    .sum::<f64>()
        })
        .collect()
}

/// Greedy spread: start at the heaviest zone, then repeatedly take the zone
/// maximizing `sqrt(weight) · distance to the closest pick`.
fn spread_sites(zones: &[Zone], weights: &[f64], n: usize) -> Vec<usize> {
    let dist = |a: usize, b: usize| {
        let (p, q) = (zones[a].centroid, zones[b].centroid);
        ((p.lat - q.lat).powi(2) + (p.lon - q.lon).powi(2)).sqrt()
    };
    let first = (0..zones.len()).max_by(|&a, &b| weights[a].total_cmp(&weights[b]).then(b.cmp(&a)));
    let mut picked: Vec<usize> = first.into_iter().collect();
    while picked.len() < n.min(zones.len()) {
        let next = (0..zones.len())
            .filter(|z| !picked.contains(z))
            .map(|z| (z, weights[z].sqrt() * picked.iter().map(|&p| dist(z, p)).fold(f64::INFINITY, f64::min)))
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .expect("zones left");
        picked.push(next.0);
    }
    picked
}

fn build_city(spec: CitySpec) -> Result<CityInstance> {
    let weights = zone_weights(&spec);
    let total_w: f64 = weights.iter().sum();
    let mut rates = ArrivalRateTable::new(spec.zones.len(), 4, DEFAULT_BIN_SECONDS)?;
    let n_bins = rates.n_bins();
    // daily cycle peaking mid-afternoon, normalized to mean 1 over the week
    let profile: Vec<f64> = (0..n_bins)
        .map(|b| {
            let hour = (b as f64 + 0.5) * DEFAULT_BIN_SECONDS / 3600.0 % 24.0;
            1.0 + spec.daily_swing * (std::f64::consts::TAU * (hour - 15.0) / 24.0).cos()
        })
        .collect();
    let mean_profile = profile.iter().sum::<f64>() / n_bins as f64;
    for (z, w) in weights.iter().enumerate() {
        for (c, share) in spec.type_mix.iter().enumerate() {
            let base = spec.total_rate * w / total_w * share;
            for (b, f) in profile.iter().enumerate() {
                rates.set(z, c, b, base * f / mean_profile)?;
            }
        }
    }
    let stations: Vec<Site> = spread_sites(&spec.zones, &weights, spec.n_stations)
        .into_iter()
        .enumerate()
        .map(|(id, z)| Site { id, location: spec.zones[z].centroid })
        .collect();
    let flat = vec![1.0; spec.zones.len()];
    let hospitals: Vec<Site> = spread_sites(&spec.zones, &flat, spec.n_hospitals)
        .into_iter()
        .enumerate()
        .map(|(id, z)| Site { id, location: spec.zones[z].centroid })
        .collect();
    CityInstance::new(spec.zones, stations, hospitals, TravelProvider::great_circle(TRAVEL_SPEED_KMH)?, rates)
}

/// Rio-like city: 10 × 10 rectangular zones, 34 stations, three demand
/// centres, ALS/BLS fleet against four emergency types.
pub fn rj_like() -> Result<CityInstance> {
    build_city(CitySpec {
        zones: build_rect_grid(bbox(-23.02, -43.70, -22.80, -43.15)?, 10, 10)?,
        hotspots: vec![
            Hotspot { at: (-22.905, -43.19), sigma: 0.04, weight: 1.0 },
            Hotspot { at: (-22.88, -43.35), sigma: 0.05, weight: 0.7 },
            Hotspot { at: (-22.97, -43.40), sigma: 0.05, weight: 0.5 },
        ],
        floor: 0.15,
        total_rate: 2.2e-3,
        type_mix: [0.15, 0.25, 0.25, 0.35],
        n_stations: 34,
        n_hospitals: 8,
        daily_swing: 0.4,
    })
}

/// US-like city on a hexagonal grid with 20 stations.
pub fn us_like() -> Result<CityInstance> {
    build_city(CitySpec {
        zones: build_hex_grid(bbox(39.90, -75.28, 40.10, -75.00)?, 0.02)?,
        hotspots: vec![
            Hotspot { at: (39.95, -75.16), sigma: 0.03, weight: 1.0 },
            Hotspot { at: (40.03, -75.13), sigma: 0.04, weight: 0.6 },
        ],
        floor: 0.2,
        total_rate: 1.8e-3,
        type_mix: [0.2, 0.3, 0.2, 0.3],
        n_stations: 20,
        n_hospitals: 6,
        daily_swing: 0.3,
    })
}

/// 4 × 4 zones, 6 stations, 2 hospitals, flat demand.
pub fn synthetic() -> Result<CityInstance> {
    build_city(CitySpec {
        zones: build_rect_grid(bbox(0.0, 0.0, 0.12, 0.12)?, 4, 4)?,
        hotspots: vec![],
        floor: 1.0,
        total_rate: 1.2e-3,
        type_mix: [0.25; 4],
        n_stations: 6,
        n_hospitals: 2,
        daily_swing: 0.0,
    })
}

pub fn build_setup(kind: AmbSetup) -> Result<Setup> {
    let instance = match kind {
        AmbSetup::Rj => rj_like()?,
        AmbSetup::Us => us_like()?,
        AmbSetup::Synthetic => synthetic()?,
    };
    Ok(Setup { kind, instance, service: ServiceParams::uniform(4), cost: CostModel::default() })
}

/// Keeps the first `nb_bases` stations; district maps are recomputed.
pub fn with_bases(instance: &CityInstance, nb_bases: usize) -> Result<CityInstance> {
    let n = instance.stations.len();
    if nb_bases == 0 || nb_bases > n {
        return Err(Error::Config(format!("nb_bases must be in 1..={n}, got {nb_bases}")));
    }
    CityInstance::new(
        instance.zones.clone(),
        instance.stations[..nb_bases].to_vec(),
        instance.hospitals.clone(),
        instance.travel.clone(),
        instance.rates.clone(),
    )
}
