//! Dispatch and reassignment policies behind a common decision interface.

mod batch;
mod closest;
mod mp;
mod zonal;
pub mod zone;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use batch::{Carvalho, Lee2014};
pub use closest::{Bandara, ClosestAvailable, Jagtenberg, Mayorga};
pub use mp::{MarkovPreparedness, MpVersion};
pub use zonal::{Andersson, Lee2011, Lee2017};
pub use zone::{centrality, Centrality, ZonePreparedness};

use crate::arrivals::EmergencyCall;
use crate::ctmc::PreparednessTable;
use crate::error::{Error, Result};
use crate::simulator::SystemState;

/// Actions to execute now: `(ambulance, call id)` and `(ambulance, station position)`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub dispatches: Vec<(usize, usize)>,
    pub repositions: Vec<(usize, usize)>,
}

impl PolicyDecision {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn dispatch(amb: usize, call: usize) -> Self {
        Self { dispatches: vec![(amb, call)], repositions: vec![] }
    }

    pub fn reposition(amb: usize, station: usize) -> Self {
        Self { dispatches: vec![], repositions: vec![(amb, station)] }
    }
}

pub trait Policy: Send + Sync {
    fn name(&self) -> &'static str;

    /// A call has arrived and is already in the queue.
    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision>;

    /// Ambulance `amb` finished its task; the decision must dispatch or reposition it.
    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision>;

    /// Periodic reconsideration of a call still in queue.
    fn on_review(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        self.on_call(state, call)
    }
}

/// Tunables shared by the policy registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Preparedness weight Γ.
    pub weight: f64,
    /// Queue penalty horizon: γ(i) = scale · θ_c · (window + elapsed wait).
    pub gamma_window: f64,
    pub gamma_scale: f64,
    /// Waits beyond this make the queue penalty prohibitive.
    pub max_queue_wait: f64,
    pub version: MpVersion,
    pub leaf_budget: u64,
    /// Busy fraction q of the coverage policy.
    pub busy_fraction: f64,
    /// Coverage threshold T, seconds.
    pub coverage_threshold: f64,
    /// Travel time standing in for "no ambulance left".
    pub uncovered_time: f64,
    /// Centrality exponent of the assignment policy.
    pub centrality_exponent: f64,
    /// Weight of the type-split preparedness term in batch assignment.
    pub batch_weight: f64,
    pub batch_budget: u64,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self {
            weight: 1800.0,
            gamma_window: 1800.0,
            gamma_scale: 1.0,
            max_queue_wait: 3600.0,
            version: MpVersion::Linear,
            leaf_budget: crate::assignment::DEFAULT_LEAF_BUDGET,
            busy_fraction: 0.4,
            coverage_threshold: 600.0,
            uncovered_time: 7200.0,
            centrality_exponent: 1.0,
            batch_weight: 1800.0,
            batch_budget: 100_000,
        }
    }
}

/// Registry names, in reporting order.
pub const POLICY_NAMES: [&str; 10] = [
    "markov_preparedness",
    "dummy_queue",
    "preparedness",
    "prep2",
    "centrality",
    "dist_centrality",
    "district",
    "ordered",
    "coverage",
    "tipat",
];

pub fn build_policy(name: &str, params: &PolicyParams, table: Option<Arc<PreparednessTable>>) -> Result<Box<dyn Policy>> {
    let p = params.clone();
    Ok(match name {
        "markov_preparedness" => {
            let table = table.ok_or_else(|| Error::Config("markov_preparedness needs a preparedness table".into()))?;
            Box::new(MarkovPreparedness::new(table, p))
        }
        "dummy_queue" => Box::new(ClosestAvailable),
        "preparedness" => Box::new(Andersson),
        "prep2" => Box::new(Lee2011),
        "centrality" => Box::new(Lee2014 { exponent: p.centrality_exponent }),
        "dist_centrality" => Box::new(Lee2017 { uncovered_time: p.uncovered_time }),
        "district" => Box::new(Mayorga),
        "ordered" => Box::new(Bandara),
        "coverage" => Box::new(Jagtenberg { busy_fraction: p.busy_fraction, threshold: p.coverage_threshold }),
        "tipat" => Box::new(Carvalho { weight: p.batch_weight, uncovered_time: p.uncovered_time, budget: p.batch_budget }),
        other => {
            return Err(Error::Config(format!("unknown policy {other:?}; expected one of {}", POLICY_NAMES.join(", "))))
        }
    })
}

/// Weekly-average total arrival rate per zone.
pub fn zone_demand(state: &SystemState) -> Vec<f64> {
    let r = &state.instance.rates;
    (0..r.n_zones()).map(|z| r.weekly_mean_total(z)).collect()
}

/// Available compatible ambulance nearest to `call`, lowest id on ties.
pub fn closest_available(state: &SystemState, call: &EmergencyCall) -> Result<Option<usize>> {
    argmin_by(state.available().filter(|a| state.compatible(a.id, call)).map(|a| a.id), |k| {
        state.travel(state.position(k), call.location)
    })
}

/// Station position nearest to the ambulance, lowest index on ties.
pub fn closest_station(state: &SystemState, amb: usize) -> Result<usize> {
    let p = state.position(amb);
    let best = argmin_by(0..state.instance.stations.len(), |s| state.travel(p, state.instance.stations[s].location))?;
    Ok(best.expect("instances have stations"))
}

/// Oldest waiting call the ambulance can serve.
pub fn oldest_queued(state: &SystemState, amb: usize) -> Option<usize> {
    state.queue.iter().find(|c| state.compatible(amb, c)).map(|c| c.id)
}

/// Waiting call nearest to the ambulance.
pub fn closest_queued(state: &SystemState, amb: usize) -> Result<Option<usize>> {
    let p = state.position(amb);
    let idx = argmin_by(
        state.queue.iter().enumerate().filter(|(_, c)| state.compatible(amb, c)).map(|(i, _)| i),
        |i| state.travel(p, state.queue[i].location),
    )?;
    Ok(idx.map(|i| state.queue[i].id))
}

/// First candidate with the smallest key; keys compared with `total_cmp`.
pub(crate) fn argmin_by<I, F>(items: I, mut key: F) -> Result<Option<usize>>
where
    I: IntoIterator<Item = usize>,
    F: FnMut(usize) -> Result<f64>,
{
    let mut best: Option<(usize, f64)> = None;
    for i in items {
        let k = key(i)?;
        if best.is_none_or(|(_, b)| k < b) {
            best = Some((i, k));
        }
    }
    Ok(best.map(|(i, _)| i))
}

/// Dispatch `amb` to `call` if given, otherwise send it to `station`.
pub(crate) fn dispatch_or_station(amb: usize, call: Option<usize>, station: impl FnOnce() -> Result<usize>) -> Result<PolicyDecision> {
    match call {
        Some(c) => Ok(PolicyDecision::dispatch(amb, c)),
        None => Ok(PolicyDecision::reposition(amb, station()?)),
    }
}

#[cfg(test)]
pub(crate) mod testkit;
