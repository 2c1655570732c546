//! Rules scoring the zone preparedness left behind by a decision.

use super::zone::{centrality, Centrality, ZoneTimes, MIN_TRAVEL};
use super::{closest_queued, closest_station, dispatch_or_station, oldest_queued, zone_demand, Policy, PolicyDecision};
use crate::arrivals::EmergencyCall;
use crate::error::Result;
use crate::simulator::SystemState;

fn nearly_equal(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// `(id, score, tie key)` maximizing the score; ties go to the smaller key, then id.
fn argmax_scored(items: Vec<(usize, f64, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64, f64)> = None;
    for it in items {
        best = match best {
            None => Some(it),
            Some(b) if nearly_equal(it.1, b.1) => Some(if (it.2, it.0) < (b.2, b.0) { it } else { b }),
            Some(b) if it.1 > b.1 => Some(it),
            keep => keep,
        };
    }
    best.map(|b| b.0)
}

/// Candidates for `call`: available compatible ambulances with their travel times.
fn candidates(state: &SystemState, call: &EmergencyCall) -> Result<Vec<(usize, f64)>> {
    let mut out = Vec::new();
    for a in state.available().filter(|a| state.compatible(a.id, call)) {
        out.push((a.id, state.travel(state.position(a.id), call.location)?));
    }
    Ok(out)
}

/// Station maximizing `score(min ψ^{b+}, travel to b)`, ties to the closer station.
fn best_station(state: &SystemState, amb: usize, score: impl Fn(f64, f64) -> f64) -> Result<usize> {
    let zt = ZoneTimes::available(state, zone_demand(state), vec![])?;
    let here = state.position(amb);
    let mut items = Vec::with_capacity(state.instance.stations.len());
    for (b, st) in state.instance.stations.iter().enumerate() {
        let added = zt.times_from(state, st.location)?;
        let min_psi = zt.scores(None, Some(&added)).min();
        let t = state.travel(here, st.location)?;
        items.push((b, score(min_psi, t), t));
    }
    Ok(argmax_scored(items).expect("instances have stations"))
}

/// Dispatches the ambulance whose removal keeps the smallest zone preparedness
/// highest. Freed ambulances take the oldest call or go where the smallest
/// zone preparedness becomes highest.
#[derive(Debug, Clone, Copy, Default)]
pub struct Andersson;

impl Policy for Andersson {
    fn name(&self) -> &'static str {
        "preparedness"
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        let zt = ZoneTimes::available(state, zone_demand(state), vec![])?;
        let items = candidates(state, call)?
            .into_iter()
            .map(|(a, t)| (a, zt.scores(Some(a), None).min(), t))
            .collect();
        Ok(argmax_scored(items).map_or_else(PolicyDecision::none, |a| PolicyDecision::dispatch(a, call.id)))
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        dispatch_or_station(amb, oldest_queued(state, amb), || best_station(state, amb, |psi, _| psi))
    }
}

/// Smallest remaining zone preparedness divided by the travel time to the call.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lee2011;

impl Policy for Lee2011 {
    fn name(&self) -> &'static str {
        "prep2"
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        let zt = ZoneTimes::available(state, zone_demand(state), vec![])?;
        let items = candidates(state, call)?
            .into_iter()
            .map(|(a, t)| (a, zt.scores(Some(a), None).min() / t.max(MIN_TRAVEL), t))
            .collect();
        Ok(argmax_scored(items).map_or_else(PolicyDecision::none, |a| PolicyDecision::dispatch(a, call.id)))
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        dispatch_or_station(amb, closest_queued(state, amb)?, || closest_station(state, amb))
    }
}

/// Minimizes travel time to the call times the demand-weighted response time
/// the remaining ambulances leave behind.
#[derive(Debug, Clone, Copy)]
pub struct Lee2017 {
    pub uncovered_time: f64,
}

impl Lee2017 {
    /// `Σ_ℓ λ_ℓ (1 + min_{a' ≠ removed} t_ℓ^{a'})`.
    pub fn weighted_response(&self, zt: &ZoneTimes, removed: usize) -> f64 {
        (0..zt.demand.len())
            .filter(|&z| zt.demand[z] > 0.0)
            .map(|z| {
                let t = zt
                    .rows
                    .iter()
                    .filter(|(id, _)| *id != removed)
                    .map(|(_, row)| row[z])
                    .fold(f64::INFINITY, f64::min);
                zt.demand[z] * (1.0 + if t.is_finite() { t } else { self.uncovered_time })
            })
            .sum()
    }
}

impl Policy for Lee2017 {
    fn name(&self) -> &'static str {
        "dist_centrality"
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        let zt = ZoneTimes::available(state, zone_demand(state), vec![])?;
        let items = candidates(state, call)?
            .into_iter()
            .map(|(a, t)| (a, -((1.0 + t) * self.weighted_response(&zt, a)), t))
            .collect();
        Ok(argmax_scored(items).map_or_else(PolicyDecision::none, |a| PolicyDecision::dispatch(a, call.id)))
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        let here = state.position(amb);
        let queue: Vec<&EmergencyCall> = state.queue.iter().filter(|c| state.compatible(amb, c)).collect();
        if queue.is_empty() {
            let b = best_station(state, amb, |psi, t| psi / t.max(MIN_TRAVEL))?;
            return Ok(PolicyDecision::reposition(amb, b));
        }
        let mut pair = vec![vec![0.0; queue.len()]; queue.len()];
        for i in 0..queue.len() {
            for j in 0..queue.len() {
                if i != j {
                    pair[i][j] = state.travel(queue[i].location, queue[j].location)?;
                }
            }
        }
        let c = centrality(&pair, Centrality::WeightedDegree);
        let mut items = Vec::with_capacity(queue.len());
        for (i, call) in queue.iter().enumerate() {
            let w = 1.0 - state.service.p_transport[call.etype];
            let t = state.travel(here, call.location)?;
            items.push((i, c[i].powf(w) / (1.0 + t), t));
        }
        let i = argmax_scored(items).expect("queue is not empty");
        Ok(PolicyDecision::dispatch(amb, queue[i].id))
    }
}
