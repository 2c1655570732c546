//! Policies that match the whole queue against the fleet at every epoch.

use super::zone::{centrality, Centrality};
use super::{argmin_by, closest_station, Policy, PolicyDecision};
use crate::arrivals::EmergencyCall;
use crate::assignment::min_cost_matching;
use crate::error::Result;
use crate::simulator::SystemState;

/// Shifts every pair cost down so that a larger matching always beats a
/// smaller one, whatever the pair costs.
fn cardinality_first(cost: Vec<Vec<Option<f64>>>, n_cols: usize) -> Vec<Vec<Option<f64>>> {
    let spread = cost.iter().flatten().flatten().fold(0.0_f64, |m, c| m.max(c.abs()));
    let bonus = 1.0 + 2.0 * (cost.len().min(n_cols) as f64 + 1.0) * spread;
    cost.into_iter().map(|row| row.into_iter().map(|c| c.map(|c| c - bonus)).collect()).collect()
}

/// Turns matched pairs into actions: available (or freed) ambulances go now,
/// busy ones are postponed. An unmatched freed ambulance goes to `station`.
fn execute(
    state: &SystemState,
    queue: &[&EmergencyCall],
    ambs: &[usize],
    matched: &[Option<usize>],
    freed: Option<usize>,
    station: impl FnOnce() -> Result<usize>,
) -> Result<PolicyDecision> {
    let mut d = PolicyDecision::none();
    for (j, k) in matched.iter().enumerate() {
        if let Some(k) = k {
            let a = ambs[*k];
            if state.ambulances[a].is_available() || freed == Some(a) {
                d.dispatches.push((a, queue[j].id));
            }
        }
    }
    if let Some(a0) = freed {
        if !d.dispatches.iter().any(|&(a, _)| a == a0) {
            d.repositions.push((a0, station()?));
        }
    }
    Ok(d)
}

/// Centrality-weighted assignment over all ambulances, busy ones included at
/// their forecast release time and place.
#[derive(Debug, Clone, Copy)]
pub struct Lee2014 {
    pub exponent: f64,
}

impl Lee2014 {
    /// Time until ambulance `a` could reach `call`.
    fn reach_time(state: &SystemState, a: usize, freed: Option<usize>, call: &EmergencyCall) -> Result<f64> {
        let amb = &state.ambulances[a];
        if amb.is_available() || freed == Some(a) {
            return state.travel(state.position(a), call.location);
        }
        let (release, at) = amb.release_forecast(state.clock, state.instance, state.service)?;
        Ok((release - state.clock) + state.travel(at, call.location)?)
    }

    fn decide(&self, state: &SystemState, freed: Option<usize>) -> Result<PolicyDecision> {
        let queue: Vec<&EmergencyCall> = state.queue.iter().collect();
        let ambs: Vec<usize> = state.ambulances.iter().map(|a| a.id).collect();
        let mut pair = vec![vec![0.0; queue.len()]; queue.len()];
        for i in 0..queue.len() {
            for j in 0..queue.len() {
                if i != j {
                    pair[i][j] = state.travel(queue[i].location, queue[j].location)?;
                }
            }
        }
        let c = centrality(&pair, Centrality::WeightedDegree);
        let mut cost = vec![vec![None; queue.len()]; ambs.len()];
        for (k, &a) in ambs.iter().enumerate() {
            for (j, call) in queue.iter().enumerate() {
                if state.compatible(a, call) {
                    let t = Self::reach_time(state, a, freed, call)?;
                    // the small travel term breaks ties between zero-centrality calls
                    let score = c[j].powf(self.exponent) / (1.0 + t) + 1e-6 / (1.0 + t);
                    cost[k][j] = Some(-score);
                }
            }
        }
        let matched = min_cost_matching(&cardinality_first(cost, queue.len()), queue.len());
        execute(state, &queue, &ambs, &matched, freed, || closest_station(state, freed.expect("freed ambulance")))
    }
}

impl Policy for Lee2014 {
    fn name(&self) -> &'static str {
        "centrality"
    }

    fn on_call(&self, state: &SystemState, _call: &EmergencyCall) -> Result<PolicyDecision> {
        self.decide(state, None)
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        self.decide(state, Some(amb))
    }
}

/// Batch assignment of waiting calls to available ambulances minimizing excess
/// response time plus a type-split preparedness term: demand for each
/// ambulance type times the travel time of the nearest remaining ambulance of
/// that type.
#[derive(Debug, Clone, Copy)]
pub struct Carvalho {
    pub weight: f64,
    pub uncovered_time: f64,
    pub budget: u64,
}

struct Batch<'a> {
    demand: Vec<Vec<f64>>,
    ambs: Vec<usize>,
    types: Vec<usize>,
    times: Vec<Vec<f64>>,
    excess: Vec<Vec<Option<f64>>>,
    queue: Vec<&'a EmergencyCall>,
}

impl Batch<'_> {
    /// `Σ_ℓ Σ_type λ^type_ℓ · min travel` over the ambulances flagged in `left`.
    fn preparedness(&self, left: &[bool], uncovered: f64, extra: Option<(usize, &[f64])>) -> f64 {
        let mut total = 0.0;
        for (ty, per_zone) in self.demand.iter().enumerate() {
            for (z, &lam) in per_zone.iter().enumerate() {
                if lam <= 0.0 {
                    continue;
                }
                let mut best = f64::INFINITY;
                for (k, row) in self.times.iter().enumerate() {
                    if left[k] && self.types[k] == ty {
                        best = best.min(row[z]);
                    }
                }
                if let Some((t, row)) = extra {
                    if t == ty {
                        best = best.min(row[z]);
                    }
                }
                total += lam * if best.is_finite() { best } else { uncovered };
            }
        }
        total
    }
}

impl Carvalho {
    fn batch<'a>(&self, state: &'a SystemState, freed: Option<usize>) -> Result<Batch<'a>> {
        let n_types = state.cost.n_amb_types();
        let rates = &state.instance.rates;
        let mut demand = vec![vec![0.0; rates.n_zones()]; n_types];
        for c in 0..rates.n_types() {
            let preferred = state.cost.preference(c)[0];
            for (z, d) in demand[preferred].iter_mut().enumerate() {
                *d += rates.weekly_mean(z, c);
            }
        }
        let ambs: Vec<usize> = state
            .ambulances
            .iter()
            .filter(|a| a.is_available() || freed == Some(a.id))
            .map(|a| a.id)
            .collect();
        let types = ambs.iter().map(|&a| state.ambulances[a].amb_type).collect();
        let mut times = Vec::with_capacity(ambs.len());
        for &a in &ambs {
            let p = state.position(a);
            times.push(state.instance.zones.iter().map(|z| state.travel(p, z.centroid)).collect::<Result<Vec<_>>>()?);
        }
        let queue: Vec<&EmergencyCall> = state.queue.iter().collect();
        let mut excess = vec![vec![None; queue.len()]; ambs.len()];
        for (k, &a) in ambs.iter().enumerate() {
            for (j, call) in queue.iter().enumerate() {
                if state.compatible(a, call) {
                    let rt = (state.clock - call.time) + state.travel(state.position(a), call.location)?;
                    excess[k][j] = Some(state.cost.extra_response_time(call.etype, rt));
                }
            }
        }
        Ok(Batch { demand, ambs, types, times, excess, queue })
    }

    /// Best matching of maximum size, by exhaustive search within the budget
    /// and by marginal costs beyond it.
    fn solve(&self, b: &Batch) -> Vec<Option<usize>> {
        let (na, nq) = (b.ambs.len(), b.queue.len());
        let unit: Vec<Vec<Option<f64>>> =
            b.excess.iter().map(|row| row.iter().map(|e| e.map(|_| -1.0)).collect()).collect();
        let size = min_cost_matching(&unit, nq).iter().flatten().count();
        if size == 0 {
            return vec![None; nq];
        }
        let mut search = Search {
            b,
            uncovered: self.uncovered_time,
            weight: self.weight,
            size,
            leaves: 0,
            budget: self.budget,
            left: vec![true; na],
            cur: vec![None; nq],
            best: None,
        };
        if search.run(0, 0, 0.0) {
            return search.best.expect("a matching of this size exists").1;
        }
        let all = vec![true; na];
        let base = b.preparedness(&all, self.uncovered_time, None);
        let marginal: Vec<f64> = (0..na)
            .map(|k| {
                let mut left = all.clone();
                left[k] = false;
                b.preparedness(&left, self.uncovered_time, None) - base
            })
            .collect();
        let cost: Vec<Vec<Option<f64>>> = (0..na)
            .map(|k| b.excess[k].iter().map(|e| e.map(|e| e + self.weight * marginal[k])).collect())
            .collect();
        min_cost_matching(&cardinality_first(cost, nq), nq)
    }

    fn decide(&self, state: &SystemState, freed: Option<usize>) -> Result<PolicyDecision> {
        let b = self.batch(state, freed)?;
        let matched = self.solve(&b);
        let station = || -> Result<usize> {
            let a0 = freed.expect("freed ambulance");
            let mut left: Vec<bool> = b.ambs.iter().map(|&a| a != a0).collect();
            for k in matched.iter().flatten() {
                left[*k] = false;
            }
            let ty = state.ambulances[a0].amb_type;
            let here = state.position(a0);
            let mut scored = Vec::new();
            for st in &state.instance.stations {
                let row: Vec<f64> =
                    state.instance.zones.iter().map(|z| state.travel(st.location, z.centroid)).collect::<Result<_>>()?;
                scored.push((b.preparedness(&left, self.uncovered_time, Some((ty, &row))), state.travel(here, st.location)?));
            }
            let best = argmin_by(0..scored.len(), |s| Ok(scored[s].0))?.expect("instances have stations");
            let ties = (0..scored.len()).filter(|&s| scored[s].0 <= scored[best].0 * (1.0 + 1e-12));
            Ok(argmin_by(ties, |s| Ok(scored[s].1))?.expect("best is a tie"))
        };
        execute(state, &b.queue, &b.ambs, &matched, freed, station)
    }
}

struct Search<'a, 'b> {
    b: &'a Batch<'b>,
    uncovered: f64,
    weight: f64,
    size: usize,
    leaves: u64,
    budget: u64,
    left: Vec<bool>,
    cur: Vec<Option<usize>>,
    best: Option<(f64, Vec<Option<usize>>)>,
}

impl Search<'_, '_> {
    /// Returns false once the leaf budget is exhausted.
    fn run(&mut self, j: usize, used: usize, acc: f64) -> bool {
        let nq = self.b.queue.len();
        if used == self.size {
            self.leaves += 1;
            if self.leaves > self.budget {
                return false;
            }
            let v = acc + self.weight * self.b.preparedness(&self.left, self.uncovered, None);
            if self.best.as_ref().is_none_or(|(bv, _)| v < *bv - 1e-12 * (1.0 + bv.abs())) {
                self.best = Some((v, self.cur.clone()));
            }
            return true;
        }
        if j == nq || nq - j < self.size - used {
            return true;
        }
        for k in 0..self.b.ambs.len() {
            if let (true, Some(e)) = (self.left[k], self.b.excess[k][j]) {
                self.left[k] = false;
                self.cur[j] = Some(k);
                let ok = self.run(j + 1, used + 1, acc + e);
                self.cur[j] = None;
                self.left[k] = true;
                if !ok {
                    return false;
                }
            }
        }
        self.run(j + 1, used, acc)
    }
}

impl Policy for Carvalho {
    fn name(&self) -> &'static str {
        "tipat"
    }

    fn on_call(&self, state: &SystemState, _call: &EmergencyCall) -> Result<PolicyDecision> {
        self.decide(state, None)
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        self.decide(state, Some(amb))
    }
}
