//! Markov preparedness dispatch and reassignment.

use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Policy, PolicyDecision, PolicyParams};
use crate::arrivals::EmergencyCall;
use crate::assignment::{solve_linear, solve_nonlinear, DispatchDecision, DispatchProblem, IdleAmb, OnTaskAmb};
use crate::ctmc::PreparednessTable;
use crate::error::{Error, Result};
use crate::simulator::{AmbStatus, SystemState};

/// Queue penalty once a call has waited past the configured limit, per unit θ.
const OVERDUE_PENALTY: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpVersion {
    /// Objective linearized with the s⁺/s⁻ marginals, solved as a matching.
    #[default]
    Linear,
    /// Table lookups at post-decision fleets, solved by enumeration.
    Nonlinear,
}

impl FromStr for MpVersion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "nonlinear" => Ok(Self::Nonlinear),
            "2" | "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!("unknown MP version {other:?}; expected linear or nonlinear"))),
        }
    }
}

pub struct MarkovPreparedness {
    table: Arc<PreparednessTable>,
    params: PolicyParams,
}

impl MarkovPreparedness {
    pub fn new(table: Arc<PreparednessTable>, params: PolicyParams) -> Self {
        Self { table, params }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    /// γ for a call that has waited `wait` seconds.
    pub fn gamma(&self, state: &SystemState, call: &EmergencyCall) -> f64 {
        let theta = state.cost.theta(call.etype);
        let wait = (state.clock - call.time).max(0.0);
        if wait >= self.params.max_queue_wait {
            OVERDUE_PENALTY * theta
        } else {
            self.params.gamma_scale * theta * (self.params.gamma_window + wait)
        }
    }

    /// Snapshot of the epoch. `freed` is the ambulance whose task just ended.
    pub fn problem(&self, state: &SystemState, freed: Option<usize>) -> Result<DispatchProblem> {
        let all_stations: Vec<usize> = (0..state.instance.stations.len()).collect();
        let nonlinear = self.params.version == MpVersion::Nonlinear;
        let mut idle = Vec::new();
        let mut ontask = Vec::new();
        let mut cost = Vec::new();
        for amb in state.ambulances {
            let (ready_at, from) = match amb.station() {
                Some(_) => (state.clock, state.position(amb.id)),
                None if Some(amb.id) == freed || amb.status == AmbStatus::Free => (state.clock, amb.location),
                None => amb.release_forecast(state.clock, state.instance, state.service)?,
            };
            let mut row = Vec::with_capacity(state.queue.len());
            for call in state.queue {
                row.push(if state.compatible(amb.id, call) {
                    let rt = (ready_at - call.time) + state.travel(from, call.location)?;
                    Some(state.cost.allocation_cost(amb.amb_type, call.etype, rt)?)
                } else {
                    None
                });
            }
            match amb.station() {
                Some(b) => {
                    idle.push(IdleAmb { id: amb.id, amb_type: amb.amb_type, station: b });
                    cost.insert(idle.len() - 1, row);
                }
                None => {
                    // the exact search stays tractable only if other busy
                    // ambulances keep to the station nearest their release point
                    let permitted = if nonlinear && Some(amb.id) != freed {
                        vec![state.instance.nearest_station(from)?]
                    } else {
                        all_stations.clone()
                    };
                    ontask.push(OnTaskAmb { id: amb.id, amb_type: amb.amb_type, permitted });
                    cost.push(row);
                }
            }
        }
        let gamma = state.queue.iter().map(|c| self.gamma(state, c)).collect();
        let stations: Vec<usize> = state.instance.stations.iter().map(|s| s.id).collect();
        let n_types = state.cost.n_amb_types();
        let mut s_plus = Vec::with_capacity(stations.len());
        let mut s_minus = Vec::with_capacity(stations.len());
        for (b, &id) in stations.iter().enumerate() {
            let m = &state.fleets[b];
            s_plus.push((0..n_types).map(|a| self.table.s_plus(id, m, a)).collect::<Result<Vec<_>>>()?);
            s_minus.push((0..n_types).map(|a| self.table.s_minus(id, m, a)).collect::<Result<Vec<_>>>()?);
        }
        Ok(DispatchProblem {
            idle,
            ontask,
            queue: state.queue.iter().map(|c| c.id).collect(),
            cost,
            gamma,
            stations,
            fleets: state.fleets.to_vec(),
            s_plus,
            s_minus,
            weight: self.params.weight,
        })
    }

    pub fn solve(&self, problem: &DispatchProblem) -> Result<DispatchDecision> {
        match self.params.version {
            MpVersion::Linear => solve_linear(problem),
            MpVersion::Nonlinear => match solve_nonlinear(problem, &self.table, self.params.leaf_budget) {
                Err(Error::BudgetExceeded { budget }) => {
                    log::debug!("exact MP search exceeded {budget} leaves; using the linearized objective");
                    solve_linear(problem)
                }
                other => other,
            },
        }
    }

    fn station_position(state: &SystemState, id: usize) -> Result<usize> {
        state
            .instance
            .stations
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::Modeling(format!("solver returned unknown station {id}")))
    }
}

impl Policy for MarkovPreparedness {
    fn name(&self) -> &'static str {
        "markov_preparedness"
    }

    /// Only the action for `call` is executed; it is dropped when the chosen
    /// ambulance is still on task.
    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        let d = self.solve(&self.problem(state, None)?)?;
        Ok(match d.dispatches.iter().find(|&&(_, e)| e == call.id) {
            Some(&(a, e)) if state.ambulances[a].is_available() => PolicyDecision::dispatch(a, e),
            _ => PolicyDecision::none(),
        })
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        let d = self.solve(&self.problem(state, Some(amb))?)?;
        if let Some(&(a, e)) = d.dispatches.iter().find(|&&(a, _)| a == amb) {
            return Ok(PolicyDecision::dispatch(a, e));
        }
        match d.repositions.iter().find(|&&(a, _)| a == amb) {
            Some(&(a, id)) => Ok(PolicyDecision::reposition(a, Self::station_position(state, id)?)),
            None => Err(Error::Modeling(format!("solver left freed ambulance {amb} without an action"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{build_preparedness_table, station_models, SolverMethod};
    use crate::policies::testkit::World;

    fn table(w: &World) -> Arc<PreparednessTable> {
        let models = station_models(&w.instance, &w.cost, &w.service, 1800.0).unwrap();
        Arc::new(build_preparedness_table(&models, &[2, 2], SolverMethod::Cg).unwrap().0)
    }

    fn mp(w: &World, params: PolicyParams) -> MarkovPreparedness {
        MarkovPreparedness::new(table(w), params)
    }

    #[test]
    fn lone_als_is_dispatched_to_high_priority_call() {
        let mut w = World::line(2);
        w.add_amb(0, 0);
        let c = w.enqueue(0, 0, 0);
        let p = mp(&w, PolicyParams::default());
        // oracle over the two actions: dispatch (r + Γ s⁻) or wait (γ)
        let s = w.state();
        let prob = p.problem(&s, None).unwrap();
        let dispatch = DispatchDecision { dispatches: vec![(0, c.id)], repositions: vec![] };
        let wait = DispatchDecision::default();
        assert!(prob.linear_objective(&dispatch).unwrap() < prob.linear_objective(&wait).unwrap());
        assert_eq!(p.on_call(&s, &c).unwrap(), PolicyDecision::dispatch(0, c.id));
    }

    #[test]
    fn busy_fleet_with_small_gamma_queues() {
        let mut w = World::line(2);
        w.add_amb(0, 0);
        w.make_busy(0, 1e7);
        let c = w.enqueue(0, 1, 1);
        let params = PolicyParams { gamma_scale: 1e-6, ..PolicyParams::default() };
        assert_eq!(mp(&w, params).on_call(&w.state(), &c).unwrap(), PolicyDecision::none());
    }

    #[test]
    fn zero_weight_and_huge_gamma_is_closest_immediate_assignment() {
        let mut w = World::line(4);
        w.add_amb(0, 0);
        w.add_amb(0, 3);
        w.add_amb(1, 1);
        let params = PolicyParams { weight: 0.0, gamma_scale: 1e9, ..PolicyParams::default() };
        let p = mp(&w, params);
        for zone in 0..4 {
            w.queue.clear();
            let c = w.enqueue(0, zone, 0);
            let s = w.state();
            // single call, ALS-preferred: cheapest immediate assignment
            let best = (0..3)
                .min_by(|&a, &b| {
                    let r = |k: usize| {
                        let t = s.travel(s.position(k), c.location).unwrap();
                        s.cost.allocation_cost(s.ambulances[k].amb_type, 0, t).unwrap()
                    };
                    r(a).total_cmp(&r(b))
                })
                .unwrap();
            assert_eq!(p.on_call(&s, &c).unwrap(), PolicyDecision::dispatch(best, c.id));
        }
    }

    #[test]
    fn freed_ambulance_goes_to_best_marginal_station() {
        let mut w = World::line(3);
        w.add_amb(0, 0);
        w.add_amb(0, 0);
        w.make_free(1, 2);
        let p = mp(&w, PolicyParams::default());
        let s = w.state();
        let t = &p.table;
        let gains: Vec<f64> =
            (0..3).map(|b| t.s_plus(s.instance.stations[b].id, &s.fleets[b], 0).unwrap()).collect();
        let mut best = 0;
        for b in 1..3 {
            if gains[b] < gains[best] {
                best = b;
            }
        }
        assert_eq!(p.on_free(&s, 1).unwrap(), PolicyDecision::reposition(1, best));
        assert_ne!(best, 0);
    }

    #[test]
    fn freed_ambulance_takes_call_with_dominant_penalty() {
        let mut w = World::line(2);
        w.add_amb(0, 0);
        w.make_free(0, 0);
        let c = w.enqueue(0, 1, 0);
        let params = PolicyParams { gamma_scale: 1e6, ..PolicyParams::default() };
        assert_eq!(mp(&w, params).on_free(&w.state(), 0).unwrap(), PolicyDecision::dispatch(0, c.id));
    }

    #[test]
    fn equal_marginals_break_ties_to_first_station() {
        let mut w = World::line(2);
        w.add_amb(0, 0);
        w.make_free(0, 1);
        let entries = (0..2)
            .flat_map(|b| crate::ctmc::fleet_grid(&[2, 2]).into_iter().map(move |m| (b, m, 0.0)))
            .collect();
        let t = Arc::new(PreparednessTable::from_entries(vec![2, 2], entries).unwrap());
        let p = MarkovPreparedness::new(t, PolicyParams::default());
        assert_eq!(p.on_free(&w.state(), 0).unwrap(), PolicyDecision::reposition(0, 0));
    }

    #[test]
    fn overdue_calls_get_prohibitive_penalty() {
        let mut w = World::line(2);
        w.clock = 4000.0;
        let c = w.enqueue(0, 0, 1);
        let p = mp(&w, PolicyParams::default());
        assert_eq!(p.gamma(&w.state(), &c), OVERDUE_PENALTY);
        w.clock = 100.0;
        assert_eq!(p.gamma(&w.state(), &c), 1900.0);
    }

    #[test]
    fn nonlinear_version_agrees_on_single_changes() {
        let mut w = World::line(3);
        w.add_amb(0, 0);
        w.add_amb(1, 1);
        let c = w.enqueue(0, 2, 0);
        let lin = mp(&w, PolicyParams::default());
        let non = mp(&w, PolicyParams { version: MpVersion::Nonlinear, ..PolicyParams::default() });
        assert_eq!(lin.on_call(&w.state(), &c).unwrap(), non.on_call(&w.state(), &c).unwrap());
    }

    #[test]
    fn version_parsing() {
        assert_eq!("1".parse::<MpVersion>().unwrap(), MpVersion::Nonlinear);
        assert_eq!("linear".parse::<MpVersion>().unwrap(), MpVersion::Linear);
        assert!("3".parse::<MpVersion>().is_err());
    }
}
