//! Dispatch/reassignment optimization at one decision epoch.
//!
//! Every queued emergency gets at most one ambulance, every ambulance serves at
//! most one emergency, and every on-task ambulance is either matched to an
//! emergency or sent to one permitted station. The linearized objective is a
//! bipartite min-cost flow; the table-based objective is searched exhaustively.

use crate::ctmc::{FleetVector, PreparednessTable};
use crate::error::{Error, Result};

pub const DEFAULT_LEAF_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct IdleAmb {
    pub id: usize,
    pub amb_type: usize,
    /// Index into `DispatchProblem::stations`.
    pub station: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnTaskAmb {
    pub id: usize,
    pub amb_type: usize,
    /// Indices into `DispatchProblem::stations`, non-empty.
    pub permitted: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchProblem {
    pub idle: Vec<IdleAmb>,
    pub ontask: Vec<OnTaskAmb>,
    /// Emergency ids, in queue order.
    pub queue: Vec<usize>,
    /// `cost[k][j]` for ambulance `k` (idle first, then on-task) and emergency
    /// `queue[j]`; `None` forbids the pair.
    pub cost: Vec<Vec<Option<f64>>>,
    pub gamma: Vec<f64>,
    /// Station ids and their current fleet vectors.
    pub stations: Vec<usize>,
    pub fleets: Vec<FleetVector>,
    /// `s_plus[b][a]`, `s_minus[b][a]` per station index and ambulance type.
    pub s_plus: Vec<Vec<f64>>,
    pub s_minus: Vec<Vec<f64>>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DispatchDecision {
    /// `(ambulance id, emergency id)`, sorted by emergency id.
    pub dispatches: Vec<(usize, usize)>,
    /// `(on-task ambulance id, station id)`, sorted by ambulance id.
    pub repositions: Vec<(usize, usize)>,
}

/// Decision in positional form: emergency `j` → ambulance `k`, on-task `o` → station index.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Plan {
    served_by: Vec<Option<usize>>,
    station_of: Vec<Option<usize>>,
}

impl DispatchProblem {
    pub fn n_ambs(&self) -> usize {
        self.idle.len() + self.ontask.len()
    }

    fn amb_id(&self, k: usize) -> usize {
        if k < self.idle.len() {
            self.idle[k].id
        } else {
            self.ontask[k - self.idle.len()].id
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (na, nq, ns) = (self.n_ambs(), self.queue.len(), self.stations.len());
        if self.cost.len() != na || self.cost.iter().any(|r| r.len() != nq) || self.gamma.len() != nq {
            return Err(Error::Dimension("cost matrix or penalties do not match the problem".into()));
        }
        if self.fleets.len() != ns || self.s_plus.len() != ns || self.s_minus.len() != ns {
            return Err(Error::Dimension("station data do not match the station list".into()));
        }
        if self.idle.iter().any(|a| a.station >= ns) {
            return Err(Error::Modeling("idle ambulance at unknown station".into()));
        }
        for a in &self.ontask {
            if a.permitted.is_empty() {
                return Err(Error::Modeling(format!("on-task ambulance {} has no permitted station", a.id)));
            }
            if a.permitted.iter().any(|&b| b >= ns) {
                return Err(Error::Modeling(format!("on-task ambulance {} permits unknown station", a.id)));
            }
        }
        let mut ids: Vec<usize> = (0..na).map(|k| self.amb_id(k)).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Modeling("duplicate ambulance id".into()));
        }
        if self.cost.iter().flatten().flatten().chain(&self.gamma).any(|v| !v.is_finite())
            || self.s_plus.iter().chain(&self.s_minus).flatten().any(|v| !v.is_finite())
            || !self.weight.is_finite()
        {
            return Err(Error::Modeling("non-finite cost in dispatch problem".into()));
        }
        Ok(())
    }

    fn station_index(&self, id: usize) -> Option<usize> {
        self.stations.iter().position(|&s| s == id)
    }

    fn to_plan(&self, d: &DispatchDecision) -> Result<Plan> {
        let mut served_by = vec![None; self.queue.len()];
        let mut station_of = vec![None; self.ontask.len()];
        let mut used = vec![false; self.n_ambs()];
        for &(amb, e) in &d.dispatches {
            let k = (0..self.n_ambs())
                .find(|&k| self.amb_id(k) == amb)
                .ok_or_else(|| Error::Modeling(format!("unknown ambulance {amb}")))?;
            let j = self
                .queue
                .iter()
                .position(|&q| q == e)
                .ok_or_else(|| Error::Modeling(format!("unknown emergency {e}")))?;
            if used[k] {
                return Err(Error::Modeling(format!("ambulance {amb} dispatched twice")));
            }
            if served_by[j].is_some() {
                return Err(Error::Modeling(format!("emergency {e} served twice")));
            }
            if self.cost[k][j].is_none() {
                return Err(Error::Modeling(format!("forbidden pair ({amb}, {e})")));
            }
            used[k] = true;
            served_by[j] = Some(k);
        }
        for &(amb, s) in &d.repositions {
            let o = self
                .ontask
                .iter()
                .position(|a| a.id == amb)
                .ok_or_else(|| Error::Modeling(format!("ambulance {amb} is not on task")))?;
            let b = self
                .station_index(s)
                .ok_or_else(|| Error::Modeling(format!("unknown station {s}")))?;
            if !self.ontask[o].permitted.contains(&b) {
                return Err(Error::Modeling(format!("station {s} not permitted for ambulance {amb}")));
            }
            if used[self.idle.len() + o] || station_of[o].is_some() {
                return Err(Error::Modeling(format!("ambulance {amb} given two actions")));
            }
            station_of[o] = Some(b);
        }
        for (o, a) in self.ontask.iter().enumerate() {
            if !used[self.idle.len() + o] && station_of[o].is_none() {
                return Err(Error::Modeling(format!("on-task ambulance {} has no action", a.id)));
            }
        }
        Ok(Plan { served_by, station_of })
    }

    fn from_plan(&self, plan: &Plan) -> DispatchDecision {
        let mut dispatches: Vec<(usize, usize)> = plan
            .served_by
            .iter()
            .enumerate()
            .filter_map(|(j, k)| k.map(|k| (self.amb_id(k), self.queue[j])))
            .collect();
        dispatches.sort_by_key(|&(_, e)| e);
        let mut repositions: Vec<(usize, usize)> = plan
            .station_of
            .iter()
            .enumerate()
            .filter_map(|(o, b)| b.map(|b| (self.ontask[o].id, self.stations[b])))
            .collect();
        repositions.sort_unstable();
        DispatchDecision { dispatches, repositions }
    }

    fn immediate_cost(&self, plan: &Plan) -> f64 {
        plan.served_by
            .iter()
            .enumerate()
            .map(|(j, k)| match k {
                Some(k) => self.cost[*k][j].expect("validated pair"),
                None => self.gamma[j],
            })
            .sum()
    }

    fn linear_value(&self, plan: &Plan) -> f64 {
        let mut prep = 0.0;
        for k in plan.served_by.iter().flatten().copied().filter(|&k| k < self.idle.len()) {
            let a = &self.idle[k];
            prep += self.s_minus[a.station][a.amb_type];
        }
        for (o, b) in plan.station_of.iter().enumerate() {
            if let Some(b) = b {
                prep += self.s_plus[*b][self.ontask[o].amb_type];
            }
        }
        self.immediate_cost(plan) + self.weight * prep
    }

    fn post_fleets(&self, plan: &Plan) -> Vec<FleetVector> {
        let mut fleets = self.fleets.clone();
        for k in plan.served_by.iter().flatten().copied().filter(|&k| k < self.idle.len()) {
            let a = &self.idle[k];
            let v = &mut fleets[a.station].0[a.amb_type];
            *v = v.saturating_sub(1);
        }
        for (o, b) in plan.station_of.iter().enumerate() {
            if let Some(b) = b {
                fleets[*b].0[self.ontask[o].amb_type] += 1;
            }
        }
        fleets
    }

    fn nonlinear_value(&self, plan: &Plan, table: &PreparednessTable) -> Result<f64> {
        let mut prep = 0.0;
        for (b, m) in self.post_fleets(plan).iter().enumerate() {
            prep += table.lookup(self.stations[b], m)?;
        }
        Ok(self.immediate_cost(plan) + self.weight * prep)
    }

    /// Linearized objective of a decision.
    pub fn linear_objective(&self, d: &DispatchDecision) -> Result<f64> {
        Ok(self.linear_value(&self.to_plan(d)?))
    }

    /// Table-based objective of a decision, preparedness evaluated at post-decision fleets.
    pub fn nonlinear_objective(&self, d: &DispatchDecision, table: &PreparednessTable) -> Result<f64> {
        self.nonlinear_value(&self.to_plan(d)?, table)
    }

    /// `Γ · Σ_b ψ̄(m_b)` at the current fleets.
    pub fn baseline_preparedness(&self, table: &PreparednessTable) -> Result<f64> {
        let mut s = 0.0;
        for (b, m) in self.fleets.iter().enumerate() {
            s += table.lookup(self.stations[b], m)?;
        }
        Ok(self.weight * s)
    }

    /// Checks a decision against the problem constraints.
    pub fn check(&self, d: &DispatchDecision) -> Result<()> {
        self.to_plan(d).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy)]
struct Arc {
    to: usize,
    cap: i32,
    cost: f64,
}

struct FlowGraph {
    arcs: Vec<Arc>,
    adj: Vec<Vec<usize>>,
    scale: f64,
}

impl FlowGraph {
    fn new(n: usize) -> Self {
        Self { arcs: Vec::new(), adj: vec![Vec::new(); n], scale: 0.0 }
    }

    fn add(&mut self, from: usize, to: usize, cost: f64) -> usize {
        let id = self.arcs.len();
        self.scale = self.scale.max(cost.abs());
        self.arcs.push(Arc { to, cap: 1, cost });
        self.arcs.push(Arc { to: from, cap: 0, cost: -cost });
        self.adj[from].push(id);
        self.adj[to].push(id + 1);
        id
    }

    /// Smallest cost difference treated as real, relative to the largest arc cost.
    fn tol(&self) -> f64 {
        1e-12 * (1.0 + self.scale) * self.adj.len() as f64
    }

    /// Bellman-Ford shortest path in the residual graph; strict improvements only,
    /// so the result depends only on the arc insertion order.
    fn shortest_path(&self, s: usize, t: usize) -> Option<(f64, Vec<usize>)> {
        let n = self.adj.len();
        let tol = self.tol();
        let mut dist = vec![f64::INFINITY; n];
        let mut via = vec![usize::MAX; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if !dist[u].is_finite() {
                    continue;
                }
                for &e in &self.adj[u] {
                    let arc = self.arcs[e];
                    let (cand, cur) = (dist[u] + arc.cost, dist[arc.to]);
                    if arc.cap > 0 && (cur == f64::INFINITY || cand < cur - tol) {
                        dist[arc.to] = cand;
                        via[arc.to] = e;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if !dist[t].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = t;
        while v != s {
            if path.len() > n {
                debug_assert!(false, "cycle in shortest-path tree");
                return None;
            }
            let e = via[v];
            path.push(e);
            v = self.arcs[e ^ 1].to;
        }
        path.reverse();
        Some((dist[t], path))
    }
}

/// Exact minimizer of the linearized objective.
///
/// On-task ambulances that stay unmatched go to their best permitted station,
/// so the problem reduces to a bipartite matching where matching `k` to `j`
/// changes the objective by `r(k,j) − γ(j)` plus `Γ·s⁻` for station ambulances
/// or minus the station default for on-task ones. Augmenting paths are taken
/// while they have negative cost.
pub fn solve_linear(problem: &DispatchProblem) -> Result<DispatchDecision> {
    problem.validate()?;
    let (ni, na, nq) = (problem.idle.len(), problem.n_ambs(), problem.queue.len());
    let default_station: Vec<(usize, f64)> = problem
        .ontask
        .iter()
        .map(|a| {
            a.permitted
                .iter()
                .map(|&b| (b, problem.weight * problem.s_plus[b][a.amb_type]))
                .fold((usize::MAX, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        })
        .collect();
    let adjusted: Vec<Vec<Option<f64>>> = (0..na)
        .map(|k| {
            let prep = if k < ni {
                let a = &problem.idle[k];
                problem.weight * problem.s_minus[a.station][a.amb_type]
            } else {
                -default_station[k - ni].1
            };
            (0..nq).map(|j| problem.cost[k][j].map(|r| r - problem.gamma[j] + prep)).collect()
        })
        .collect();
    let mut plan = Plan { served_by: min_cost_matching(&adjusted, nq), station_of: vec![None; problem.ontask.len()] };
    let matched: Vec<bool> = (0..na).map(|k| plan.served_by.contains(&Some(k))).collect();
    for (o, &(b, _)) in default_station.iter().enumerate() {
        if !matched[ni + o] {
            plan.station_of[o] = Some(b);
        }
    }
    let decision = problem.from_plan(&plan);
    problem.check(&decision)?;
    Ok(decision)
}

/// Minimum-cost matching of any size between rows and `n_cols` columns.
/// A pair is used only if it lowers the total, so with all costs positive the
/// result is empty. Returns the matched row of every column.
pub fn min_cost_matching(cost: &[Vec<Option<f64>>], n_cols: usize) -> Vec<Option<usize>> {
    let nr = cost.len();
    let (src, sink) = (0, 1 + nr + n_cols);
    let mut g = FlowGraph::new(sink + 1);
    for k in 0..nr {
        g.add(src, 1 + k, 0.0);
    }
    let mut pair_arcs = Vec::new();
    for j in 0..n_cols {
        for (k, row) in cost.iter().enumerate() {
            if let Some(c) = row.get(j).copied().flatten() {
                pair_arcs.push((g.add(1 + k, 1 + nr + j, c), k, j));
            }
        }
    }
    for j in 0..n_cols {
        g.add(1 + nr + j, sink, 0.0);
    }
    while let Some((d, path)) = g.shortest_path(src, sink) {
        if d >= -g.tol() {
            break;
        }
        for e in path {
            g.arcs[e].cap -= 1;
            g.arcs[e ^ 1].cap += 1;
        }
    }
    let mut matched = vec![None; n_cols];
    for &(id, k, j) in &pair_arcs {
        if g.arcs[id].cap == 0 {
            matched[j] = Some(k);
        }
    }
    matched
}

/// Exact minimizer of the table-based objective by exhaustive search over
/// complete decisions, at most `budget` of them.
pub fn solve_nonlinear(problem: &DispatchProblem, table: &PreparednessTable, budget: u64) -> Result<DispatchDecision> {
    problem.validate()?;
    for &s in &problem.stations {
        table.lookup(s, &FleetVector::zeros(table.caps().len()))?;
    }
    let mut search = Search {
        p: problem,
        table,
        budget,
        leaves: 0,
        best: None,
        plan: Plan { served_by: vec![None; problem.queue.len()], station_of: vec![None; problem.ontask.len()] },
        used: vec![false; problem.n_ambs()],
    };
    search.emergency(0)?;
    let (_, plan) = search.best.expect("at least one complete decision exists");
    let decision = problem.from_plan(&plan);
    problem.check(&decision)?;
    Ok(decision)
}

struct Search<'a> {
    p: &'a DispatchProblem,
    table: &'a PreparednessTable,
    budget: u64,
    leaves: u64,
    best: Option<(f64, Plan)>,
    plan: Plan,
    used: Vec<bool>,
}

impl Search<'_> {
    fn emergency(&mut self, j: usize) -> Result<()> {
        if j == self.p.queue.len() {
            return self.station(0);
        }
        self.emergency(j + 1)?;
        for k in 0..self.p.n_ambs() {
            if self.used[k] || self.p.cost[k][j].is_none() {
                continue;
            }
            self.used[k] = true;
            self.plan.served_by[j] = Some(k);
            self.emergency(j + 1)?;
            self.plan.served_by[j] = None;
            self.used[k] = false;
        }
        Ok(())
    }

    fn station(&mut self, o: usize) -> Result<()> {
        let ni = self.p.idle.len();
        if o == self.p.ontask.len() {
            self.leaves += 1;
            if self.leaves > self.budget {
                return Err(Error::BudgetExceeded { budget: self.budget });
            }
            let v = self.p.nonlinear_value(&self.plan, self.table)?;
            if self.best.as_ref().is_none_or(|(b, _)| v < *b - 1e-12 * (1.0 + b.abs())) {
                self.best = Some((v, self.plan.clone()));
            }
            return Ok(());
        }
        if self.used[ni + o] {
            return self.station(o + 1);
        }
        for i in 0..self.p.ontask[o].permitted.len() {
            self.plan.station_of[o] = Some(self.p.ontask[o].permitted[i]);
            self.station(o + 1)?;
        }
        self.plan.station_of[o] = None;
        Ok(())
    }
}
