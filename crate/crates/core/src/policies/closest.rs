//! Rules built on travel times, districts, workload and expected coverage.

use super::{argmin_by, closest_available, dispatch_or_station, oldest_queued, zone_demand, Policy, PolicyDecision};
use crate::arrivals::EmergencyCall;
use crate::error::Result;
use crate::simulator::SystemState;

/// Closest available ambulance; freed ambulances take the oldest waiting call
/// or return to the closest station.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClosestAvailable;

impl Policy for ClosestAvailable {
    fn name(&self) -> &'static str {
        "dummy_queue"
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        Ok(match closest_available(state, call)? {
            Some(a) => PolicyDecision::dispatch(a, call.id),
            None => PolicyDecision::none(),
        })
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        dispatch_or_station(amb, oldest_queued(state, amb), || super::closest_station(state, amb))
    }
}

fn home_or_oldest(state: &SystemState, amb: usize) -> Result<PolicyDecision> {
    dispatch_or_station(amb, oldest_queued(state, amb), || Ok(state.ambulances[amb].home))
}

/// High priority: closest available. Low priority: least cumulative busy time.
fn workload_rule(state: &SystemState, call: &EmergencyCall) -> Result<Option<usize>> {
    if state.cost.is_high_priority(call.etype) {
        return closest_available(state, call);
    }
    argmin_by(state.available().filter(|a| state.compatible(a.id, call)).map(|a| a.id), |k| {
        Ok(state.ambulances[k].busy_time)
    })
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Bandara;

impl Policy for Bandara {
    fn name(&self) -> &'static str {
        "ordered"
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        Ok(workload_rule(state, call)?.map_or_else(PolicyDecision::none, |a| PolicyDecision::dispatch(a, call.id)))
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        home_or_oldest(state, amb)
    }
}

/// Closest available ambulance of the call's district (the zones nearest to one
/// station); an empty district falls back to the workload rule over all
/// available ambulances.
#[derive(Debug, Clone, Copy, Default)]
pub struct Mayorga;

impl Policy for Mayorga {
    fn name(&self) -> &'static str {
        "district"
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        let district = state.instance.station_zone_map[call.zone];
        let local = argmin_by(
            state
                .available()
                .filter(|a| a.station() == Some(district) && state.compatible(a.id, call))
                .map(|a| a.id),
            |k| state.travel(state.position(k), call.location),
        )?;
        let pick = match local {
            Some(a) => Some(a),
            None => workload_rule(state, call)?,
        };
        Ok(pick.map_or_else(PolicyDecision::none, |a| PolicyDecision::dispatch(a, call.id)))
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        home_or_oldest(state, amb)
    }
}

/// Contribution `λ(1−q)q^(k−1)` of the `k`-th covering ambulance.
pub fn mexclp_marginal(lambda: f64, q: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        lambda * (1.0 - q) * q.powi(k as i32 - 1)
    }
}

/// Dispatches the ambulance whose removal loses the least expected coverage.
#[derive(Debug, Clone, Copy)]
pub struct Jagtenberg {
    pub busy_fraction: f64,
    pub threshold: f64,
}

impl Jagtenberg {
    /// Coverage loss of removing each available ambulance, by ambulance id.
    pub fn losses(&self, state: &SystemState) -> Result<Vec<(usize, f64)>> {
        let demand = zone_demand(state);
        let avail: Vec<usize> = state.available().map(|a| a.id).collect();
        let mut covers = vec![Vec::new(); avail.len()];
        let mut count = vec![0usize; demand.len()];
        for (i, &a) in avail.iter().enumerate() {
            let p = state.position(a);
            for (z, zone) in state.instance.zones.iter().enumerate() {
                if state.travel(p, zone.centroid)? < self.threshold {
                    covers[i].push(z);
                    count[z] += 1;
                }
            }
        }
        Ok(avail
            .iter()
            .zip(&covers)
            .map(|(&a, zs)| (a, zs.iter().map(|&z| mexclp_marginal(demand[z], self.busy_fraction, count[z])).sum()))
            .collect())
    }
}

impl Policy for Jagtenberg {
    fn name(&self) -> &'static str {
        "coverage"
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        let losses = self.losses(state)?;
        let mut candidates = Vec::new();
        for &(a, loss) in &losses {
            if state.compatible(a, call) {
                let t = state.travel(state.position(a), call.location)?;
                candidates.push((a, loss, t));
            }
        }
        let covering: Vec<_> = candidates.iter().copied().filter(|c| c.2 < self.threshold).collect();
        let pool = if covering.is_empty() { candidates } else { covering };
        let pick = pool
            .into_iter()
            .min_by(|x, y| x.1.total_cmp(&y.1).then(x.2.total_cmp(&y.2)).then(x.0.cmp(&y.0)));
        Ok(pick.map_or_else(PolicyDecision::none, |(a, _, _)| PolicyDecision::dispatch(a, call.id)))
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        home_or_oldest(state, amb)
    }
}
