//! Per-station continuous-time Markov chain of busy ambulances and the
//! preparedness table of steady-state penalty rates built from it.
//!
//! A state records, for every ambulance type `a` and every emergency type `c`
//! it can serve, how many type-`a` ambulances are busy with type-`c`
//! emergencies. Arrivals of type `c` take the most preferred available
//! compatible type; completions free one ambulance at rate `μ(a,c)·x[a,c]`.
//! The steady-state penalty rate charges `λ(c)·φ(c)` in every state where no
//! compatible ambulance is left for `c`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::citymodel::CityInstance;
use crate::error::{Error, Result};
use crate::linalg::{self, SolveReport, SparseMatrix};
use crate::metrics::CostModel;
use crate::simulator::ServiceParams;

pub const DEFAULT_CAP: u32 = 8;

/// Stationary residual bound `‖Qᵀν‖∞` required of every accepted solve.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-8;

/// Components below this are a solver failure; those between it and zero are clamped.
pub const NEGATIVE_PROBABILITY_TOL: f64 = 1e-9;

/// Relative residual target of CG on the normal equations, whose conditioning
/// is the square of the reduced system's.
const CG_NORMAL_TOL: f64 = 1e-14;
const CG_REFINE_ROUNDS: usize = 4;
const CG_REFINE_TARGET: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationModel {
    pub station: usize,
    pub n_amb_types: usize,
    /// Arrival rate per emergency type.
    pub lambda: Vec<f64>,
    /// Service rate `mu[a][c]`, used only where `a` can serve `c`.
    pub mu: Vec<Vec<f64>>,
    /// Compatible ambulance types per emergency type, most preferred first.
    pub compat: Vec<Vec<usize>>,
    /// Penalty per emergency that finds no compatible ambulance.
    pub phi: Vec<f64>,
}

impl StationModel {
    pub fn n_call_types(&self) -> usize {
        self.lambda.len()
    }

    pub fn validate(&self) -> Result<()> {
        let nc = self.n_call_types();
        if self.compat.len() != nc || self.phi.len() != nc || self.mu.len() != self.n_amb_types {
            return Err(Error::Modeling(format!("station {}: inconsistent model dimensions", self.station)));
        }
        for c in 0..nc {
            if !(self.lambda[c] >= 0.0) || !self.lambda[c].is_finite() {
                return Err(Error::Modeling(format!("lambda[{c}] = {}", self.lambda[c])));
            }
            if !(self.phi[c] >= 0.0) || !self.phi[c].is_finite() {
                return Err(Error::Modeling(format!("phi[{c}] = {}", self.phi[c])));
            }
            if self.compat[c].is_empty() {
                return Err(Error::Modeling(format!("emergency type {c} has no compatible ambulance type")));
            }
            let mut seen = vec![false; self.n_amb_types];
            for &a in &self.compat[c] {
                if a >= self.n_amb_types || seen[a] {
                    return Err(Error::Modeling(format!("bad preference list for type {c}: {:?}", self.compat[c])));
                }
                seen[a] = true;
                let mu = self.mu[a].get(c).copied().unwrap_or(f64::NAN);
                if !(mu > 0.0) || !mu.is_finite() {
                    return Err(Error::Modeling(format!("mu[{a}][{c}] = {mu}")));
                }
            }
        }
        Ok(())
    }

    /// Emergency types ambulance type `a` can serve, ascending.
    pub fn served_by(&self, a: usize) -> Vec<usize> {
        (0..self.n_call_types()).filter(|&c| self.compat[c].contains(&a)).collect()
    }
}

/// Ambulances of each type credited to one station.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FleetVector(pub Vec<u32>);

impl FleetVector {
    pub fn zeros(n_types: usize) -> Self {
        Self(vec![0; n_types])
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn capped(&self, caps: &[u32]) -> Self {
        Self(self.0.iter().zip(caps).map(|(&m, &c)| m.min(c)).collect())
    }

    pub fn plus(&self, a: usize) -> Self {
        let mut v = self.clone();
        v.0[a] += 1;
        v
    }

    pub fn minus(&self, a: usize) -> Option<Self> {
        let mut v = self.clone();
        v.0[a] = v.0[a].checked_sub(1)?;
        Some(v)
    }
}

/// Busy counts `x[a,c]`, flattened over `StateSpace::pairs`.
pub type CtmcState = Vec<u16>;

/// Sub-states of one ambulance type: all busy vectors over its served
/// emergency types with total at most `m(a)`, in lexicographic order.
#[derive(Debug, Clone)]
struct TypeBlock {
    served: Vec<usize>,
    states: Vec<Vec<u16>>,
    busy: Vec<u32>,
    rank: HashMap<Vec<u16>, usize>,
    inc: Vec<Vec<Option<usize>>>,
    dec: Vec<Vec<Option<usize>>>,
}

impl TypeBlock {
    fn new(served: Vec<usize>, m: u32) -> Self {
        let k = served.len();
        let mut states = Vec::new();
        let mut cur = vec![0u16; k];
        fn rec(slot: usize, left: u32, cur: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
            if slot == cur.len() {
                out.push(cur.clone());
                return;
            }
            for v in 0..=left {
                cur[slot] = v as u16;
                rec(slot + 1, left - v, cur, out);
            }
            cur[slot] = 0;
        }
        rec(0, m, &mut cur, &mut states);
        let rank: HashMap<Vec<u16>, usize> = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        let busy: Vec<u32> = states.iter().map(|s| s.iter().map(|&v| v as u32).sum()).collect();
        let mut inc = vec![vec![None; k]; states.len()];
        let mut dec = vec![vec![None; k]; states.len()];
        for (i, s) in states.iter().enumerate() {
            for slot in 0..k {
                if busy[i] < m {
                    let mut t = s.clone();
                    t[slot] += 1;
                    inc[i][slot] = rank.get(&t).copied();
                }
                if s[slot] > 0 {
                    let mut t = s.clone();
                    t[slot] -= 1;
                    dec[i][slot] = rank.get(&t).copied();
                }
            }
        }
        Self { served, states, busy, rank, inc, dec }
    }
}

/// Enumerated state space for one station model and fleet vector, with a
/// perfect index map (lexicographic over the flattened pairs).
#[derive(Debug, Clone)]
pub struct StateSpace {
    fleet: FleetVector,
    /// `(ambulance type, emergency type)` of each state component.
    pub pairs: Vec<(usize, usize)>,
    blocks: Vec<TypeBlock>,
    strides: Vec<usize>,
    offsets: Vec<usize>,
    len: usize,
}

impl StateSpace {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn fleet(&self) -> &FleetVector {
        &self.fleet
    }

    fn ranks(&self, mut i: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|&s| {
                let r = i / s;
                i %= s;
                r
            })
            .collect()
    }

    pub fn state(&self, i: usize) -> CtmcState {
        let mut out = Vec::with_capacity(self.pairs.len());
        for (block, r) in self.blocks.iter().zip(self.ranks(i)) {
            out.extend_from_slice(&block.states[r]);
        }
        out
    }

    pub fn index(&self, x: &[u16]) -> Option<usize> {
        if x.len() != self.pairs.len() {
            return None;
        }
        let mut idx = 0;
        for (a, block) in self.blocks.iter().enumerate() {
            let part = &x[self.offsets[a]..self.offsets[a] + block.served.len()];
            idx += block.rank.get(part)? * self.strides[a];
        }
        Some(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = CtmcState> + '_ {
        (0..self.len).map(|i| self.state(i))
    }

    /// Busy ambulances of each type in state `i`.
    fn busy_by_type(&self, i: usize) -> Vec<u32> {
        self.blocks.iter().zip(self.ranks(i)).map(|(b, r)| b.busy[r]).collect()
    }
}

pub fn enumerate_states(model: &StationModel, m: &FleetVector) -> Result<StateSpace> {
    model.validate()?;
    if m.0.len() != model.n_amb_types {
        return Err(Error::Dimension(format!(
            "fleet vector has {} types, model has {}",
            m.0.len(),
            model.n_amb_types
        )));
    }
    let mut blocks = Vec::with_capacity(model.n_amb_types);
    let mut pairs = Vec::new();
    let mut offsets = Vec::with_capacity(model.n_amb_types);
    for a in 0..model.n_amb_types {
        let served = model.served_by(a);
        offsets.push(pairs.len());
        pairs.extend(served.iter().map(|&c| (a, c)));
        blocks.push(TypeBlock::new(served, m.0[a]));
    }
    let mut strides = vec![1usize; model.n_amb_types];
    for a in (0..model.n_amb_types.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * blocks[a + 1].states.len();
    }
    let len = blocks.iter().map(|b| b.states.len()).product();
    Ok(StateSpace { fleet: m.clone(), pairs, blocks, strides, offsets, len })
}

/// Most preferred compatible type with an idle ambulance in `x`, if any.
pub fn preferred_available_type(model: &StationModel, m: &FleetVector, x: &[u16], c: usize) -> Option<usize> {
    let busy = |a: usize| -> u32 {
        x.iter()
            .zip(model_pairs(model))
            .filter(|(_, (pa, _))| *pa == a)
            .map(|(&v, _)| v as u32)
            .sum()
    };
    model.compat[c].iter().copied().find(|&a| m.0[a] > busy(a))
}

fn model_pairs(model: &StationModel) -> Vec<(usize, usize)> {
    (0..model.n_amb_types)
        .flat_map(|a| model.served_by(a).into_iter().map(move |c| (a, c)))
        .collect()
}

fn preferred_in(model: &StationModel, fleet: &FleetVector, busy: &[u32], c: usize) -> Option<usize> {
    model.compat[c].iter().copied().find(|&a| fleet.0[a] > busy[a])
}

/// Generator matrix over an enumerated state space.
pub fn generator(model: &StationModel, space: &StateSpace) -> Result<SparseMatrix> {
    let n = space.len();
    let nc = model.n_call_types();
    let mut entries = Vec::with_capacity(n * (nc + space.pairs.len() + 1));
    let slot_of: Vec<Vec<Option<usize>>> = space
        .blocks
        .iter()
        .map(|b| (0..nc).map(|c| b.served.iter().position(|&s| s == c)).collect())
        .collect();
    for i in 0..n {
        let ranks = space.ranks(i);
        let busy: Vec<u32> = space.blocks.iter().zip(&ranks).map(|(b, &r)| b.busy[r]).collect();
        let mut out_rate = 0.0;
        for c in 0..nc {
            let lam = model.lambda[c];
            if lam == 0.0 {
                continue;
            }
            if let Some(a) = preferred_in(model, &space.fleet, &busy, c) {
                let slot = slot_of[a][c].expect("compatible pair has a slot");
                let next = space.blocks[a].inc[ranks[a]][slot].expect("available type can take one more");
                let j = i - ranks[a] * space.strides[a] + next * space.strides[a];
                entries.push((i, j, lam));
                out_rate += lam;
            }
        }
        for (a, block) in space.blocks.iter().enumerate() {
            let sub = &block.states[ranks[a]];
            for (slot, &c) in block.served.iter().enumerate() {
                let x = sub[slot];
                if x == 0 {
                    continue;
                }
                let rate = model.mu[a][c] * x as f64;
                let next = block.dec[ranks[a]][slot].expect("busy slot can drop one");
                let j = i - ranks[a] * space.strides[a] + next * space.strides[a];
                entries.push((i, j, rate));
                out_rate += rate;
            }
        }
        entries.push((i, i, -out_rate));
    }
    SparseMatrix::from_triplets(n, n, entries)
}

pub fn build_generator(model: &StationModel, m: &FleetVector) -> Result<SparseMatrix> {
    generator(model, &enumerate_states(model, m)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    Gmres,
    #[default]
    Cg,
}

impl std::str::FromStr for SolverMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmres" => Ok(SolverMethod::Gmres),
            "cg" => Ok(SolverMethod::Cg),
            other => Err(Error::Config(format!("unknown solver {other:?} (expected gmres or cg)"))),
        }
    }
}

fn solve_failure(reason: impl Into<String>, report: SolveReport) -> Error {
    Error::Solver { station: None, fleet: None, reason: reason.into(), report }
}

/// CG on the normal equations followed by iterative refinement against the
/// square system `Dᵀν = e₁`.
fn cg_refined(d: &SparseMatrix, max_iter: usize) -> Result<(Vec<f64>, SolveReport)> {
    let (mut nu, mut report) = linalg::cg_normal_solve(d, CG_NORMAL_TOL, max_iter)?;
    let dt = d.transpose();
    for _ in 0..CG_REFINE_ROUNDS {
        if !report.converged {
            break;
        }
        let mut r = dt.matvec(&nu);
        r.iter_mut().for_each(|v| *v = -*v);
        r[0] += 1.0;
        let worst = nu.iter().copied().fold(0.0_f64, f64::min);
        if r.iter().all(|v| v.abs() <= CG_REFINE_TARGET) && worst >= -CG_REFINE_TARGET {
            break;
        }
        let (dx, step) = linalg::cg_normal_solve_rhs(d, &r, CG_NORMAL_TOL, max_iter)?;
        nu.iter_mut().zip(&dx).for_each(|(x, e)| *x += e);
        report.iterations += step.iterations;
        report.converged = step.converged;
        report.residual_norm = step.residual_norm;
        report.preconditioner_fallback |= step.preconditioner_fallback;
    }
    Ok((nu, report))
}

/// Stationary distribution of an irreducible generator.
///
/// The generator is rescaled by its largest exit rate before solving, which
/// leaves ν unchanged and balances the ones column of the reduced matrix
/// against the rate columns.
pub fn stationary_distribution(q: &SparseMatrix, method: SolverMethod) -> Result<(Vec<f64>, SolveReport)> {
    let n = q.n_rows();
    if n == 0 {
        return Err(Error::Dimension("empty generator".into()));
    }
    let scale = q.max_abs();
    let qs = if scale > 0.0 { q.scaled(1.0 / scale) } else { q.clone() };
    let d = linalg::build_reduced_matrix(&qs, 0)?;
    let max_iter = (10 * n).max(100);
    let (mut nu, report) = match method {
        SolverMethod::Gmres => {
            let mut e1 = vec![0.0; n];
            e1[0] = 1.0;
            linalg::gmres_solve(&d.transpose(), &e1, linalg::DEFAULT_TOL, max_iter)?
        }
        SolverMethod::Cg => cg_refined(&d, max_iter)?,
    };
    if !report.converged {
        return Err(solve_failure("iterative solver did not converge", report));
    }
    if let Some(v) = nu.iter().copied().find(|&v| v < -NEGATIVE_PROBABILITY_TOL || !v.is_finite()) {
        return Err(solve_failure(format!("stationary component {v:e} is negative"), report));
    }
    nu.iter_mut().for_each(|v| *v = v.max(0.0));
    let total: f64 = nu.iter().sum();
    if !(total > 0.0) {
        return Err(solve_failure("stationary vector sums to zero", report));
    }
    nu.iter_mut().for_each(|v| *v /= total);
    let resid = stationary_residual(q, &nu);
    if resid > STATIONARY_RESIDUAL_TOL * scale.max(1.0) {
        return Err(solve_failure(format!("balance residual {resid:e} too large"), report));
    }
    Ok((nu, report))
}

/// `‖Qᵀν‖∞`.
pub fn stationary_residual(q: &SparseMatrix, nu: &[f64]) -> f64 {
    q.matvec_transpose(nu).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Steady-state penalty rate over an enumerated state space.
pub fn steady_state_cost_in(model: &StationModel, space: &StateSpace, nu: &[f64]) -> f64 {
    let nc = model.n_call_types();
    let mut acc = 0.0;
    for (i, &p) in nu.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let busy = space.busy_by_type(i);
        let rate: f64 = (0..nc)
            .filter(|&c| preferred_in(model, &space.fleet, &busy, c).is_none())
            .map(|c| model.lambda[c] * model.phi[c])
            .sum();
        acc += p * rate;
    }
    acc
}

pub fn steady_state_cost(model: &StationModel, m: &FleetVector, nu: &[f64]) -> Result<f64> {
    let space = enumerate_states(model, m)?;
    if nu.len() != space.len() {
        return Err(Error::Dimension(format!("{} probabilities for {} states", nu.len(), space.len())));
    }
    Ok(steady_state_cost_in(model, &space, nu))
}

/// `ψ̄` for one station and fleet vector.
pub fn preparedness(model: &StationModel, m: &FleetVector, method: SolverMethod) -> Result<(f64, SolveReport, usize)> {
    let space = enumerate_states(model, m)?;
    let q = generator(model, &space)?;
    let (nu, report) = stationary_distribution(&q, method).map_err(|e| match e {
        Error::Solver { reason, report, .. } => Error::Solver {
            station: Some(model.station),
            fleet: Some(m.0.clone()),
            reason,
            report,
        },
        other => other,
    })?;
    Ok((steady_state_cost_in(model, &space, &nu), report, space.len()))
}

/// All fleet vectors in `∏ {0..=cap(a)}`, first type most significant.
pub fn fleet_grid(caps: &[u32]) -> Vec<FleetVector> {
    let mut out = vec![FleetVector(Vec::with_capacity(caps.len()))];
    for &cap in caps {
        out = out
            .into_iter()
            .flat_map(|v| {
                (0..=cap).map(move |k| {
                    let mut w = v.clone();
                    w.0.push(k);
                    w
                })
            })
            .collect();
    }
    out
}

/// Precomputed `ψ̄` per station and capped fleet vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparednessTable {
    caps: Vec<u32>,
    stations: Vec<usize>,
    station_pos: HashMap<usize, usize>,
    values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveTiming {
    pub station: usize,
    pub fleet: FleetVector,
    pub states: usize,
    pub iterations: usize,
    pub seconds: f64,
}

impl PreparednessTable {
    pub fn caps(&self) -> &[u32] {
        &self.caps
    }

    pub fn stations(&self) -> &[usize] {
        &self.stations
    }

    pub fn len(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn offset(&self, m: &FleetVector) -> usize {
        let mut idx = 0usize;
        for (&v, &cap) in m.0.iter().zip(&self.caps) {
            idx = idx * (cap as usize + 1) + v.min(cap) as usize;
        }
        idx
    }

    /// `ψ̄` at the component-wise capped fleet vector.
    pub fn lookup(&self, station: usize, m: &FleetVector) -> Result<f64> {
        let pos = *self
            .station_pos
            .get(&station)
            .ok_or_else(|| Error::Lookup(format!("station {station} not in preparedness table")))?;
        if m.0.len() != self.caps.len() {
            return Err(Error::Dimension(format!("fleet vector {m:?} vs caps {:?}", self.caps)));
        }
        Ok(self.values[pos][self.offset(m)])
    }

    /// `ψ̄(m + e(a)) − ψ̄(m)`.
    pub fn s_plus(&self, station: usize, m: &FleetVector, a: usize) -> Result<f64> {
        Ok(self.lookup(station, &m.plus(a))? - self.lookup(station, m)?)
    }

    /// `ψ̄(m − e(a)) − ψ̄(m)`; zero when there is no type-`a` ambulance to remove.
    pub fn s_minus(&self, station: usize, m: &FleetVector, a: usize) -> Result<f64> {
        match m.minus(a) {
            Some(less) => Ok(self.lookup(station, &less)? - self.lookup(station, m)?),
            None => Ok(0.0),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, FleetVector, f64)> + '_ {
        let grid = fleet_grid(&self.caps);
        self.stations.iter().enumerate().flat_map(move |(pos, &s)| {
            grid.clone().into_iter().zip(self.values[pos].iter().copied()).map(move |(m, v)| (s, m, v))
        })
    }

    pub fn from_entries(caps: Vec<u32>, entries: Vec<(usize, FleetVector, f64)>) -> Result<Self> {
        let mut stations: Vec<usize> = entries.iter().map(|e| e.0).collect();
        stations.sort_unstable();
        stations.dedup();
        let station_pos: HashMap<usize, usize> = stations.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        let per = fleet_grid(&caps).len();
        let mut values = vec![vec![f64::NAN; per]; stations.len()];
        let mut table = Self { caps, stations, station_pos, values: Vec::new() };
        for (s, m, v) in entries {
            if m.0.len() != table.caps.len() || m.0.iter().zip(&table.caps).any(|(a, b)| a > b) {
                return Err(Error::Parse(format!("fleet vector {m:?} outside caps {:?}", table.caps)));
            }
            values[table.station_pos[&s]][table.offset(&m)] = v;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(Error::Parse("preparedness table is incomplete".into()));
        }
        table.values = values;
        Ok(table)
    }

    /// CSV cache: a `# hash=<hex>` line, a header, then one row per entry.
    pub fn to_cache_string(&self, hash: &str) -> String {
        let mut s = format!("# hash={hash}\nstation_id");
        for a in 0..self.caps.len() {
            let _ = write!(s, ",m_a{}", a + 1);
        }
        s.push_str(",psi_bar\n");
        for (st, m, v) in self.entries() {
            let _ = write!(s, "{st}");
            for k in &m.0 {
                let _ = write!(s, ",{k}");
            }
            let _ = writeln!(s, ",{v:?}");
        }
        s
    }

    /// Parses a cache; `Ok(None)` when its hash differs from `expected_hash`.
    pub fn from_cache_str(text: &str, caps: &[u32], expected_hash: &str) -> Result<Option<Self>> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| Error::Parse("empty cache file".into()))?;
        let hash = first
            .strip_prefix("# hash=")
            .ok_or_else(|| Error::Parse("cache file lacks a hash line".into()))?;
        if hash.trim() != expected_hash {
            return Ok(None);
        }
        lines.next();
        let mut entries = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != caps.len() + 2 {
                return Err(Error::Parse(format!("bad cache row {line:?}")));
            }
            let parse_u = |s: &str| s.trim().parse::<u32>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
            let station = parse_u(cols[0])? as usize;
            let m = cols[1..=caps.len()].iter().map(|s| parse_u(s)).collect::<Result<Vec<_>>>()?;
            let v = cols[caps.len() + 1]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{line:?}: {e}")))?;
            entries.push((station, FleetVector(m), v));
        }
        Self::from_entries(caps.to_vec(), entries).map(Some)
    }
}

/// Hash of everything a table depends on, used to key the cache.
pub fn table_hash(models: &[StationModel], caps: &[u32]) -> String {
    let payload = serde_json::to_string(&(models, caps)).expect("models serialize");
    let digest = Sha256::digest(payload.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Solves every (station, fleet vector) pair in parallel. Results are
/// placed by index, so the table does not depend on scheduling.
pub fn build_preparedness_table(
    models: &[StationModel],
    caps: &[u32],
    method: SolverMethod,
) -> Result<(PreparednessTable, Vec<SolveTiming>)> {
    if caps.is_empty() || caps.iter().any(|&c| c < 1) {
        return Err(Error::Config(format!("caps must all be >= 1, got {caps:?}")));
    }
    for m in models {
        m.validate()?;
        if m.n_amb_types != caps.len() {
            return Err(Error::Dimension(format!(
                "station {} has {} ambulance types, caps has {}",
                m.station,
                m.n_amb_types,
                caps.len()
            )));
        }
    }
    let grid = fleet_grid(caps);
    let jobs: Vec<(usize, &FleetVector)> = (0..models.len()).flat_map(|s| grid.iter().map(move |m| (s, m))).collect();
    let results: Vec<Result<(f64, SolveTiming)>> = jobs
        .par_iter()
        .map(|&(s, m)| {
            let start = Instant::now();
            let (psi, report, states) = preparedness(&models[s], m, method)?;
            Ok((
                psi,
                SolveTiming {
                    station: models[s].station,
                    fleet: m.clone(),
                    states,
                    iterations: report.iterations,
                    seconds: start.elapsed().as_secs_f64(),
                },
            ))
        })
        .collect();
    let mut entries = Vec::with_capacity(jobs.len());
    let mut timings = Vec::with_capacity(jobs.len());
    for ((s, m), r) in jobs.iter().zip(results) {
        let (psi, timing) = r?;
        entries.push((models[*s].station, (*m).clone(), psi));
        timings.push(timing);
    }
    Ok((PreparednessTable::from_entries(caps.to_vec(), entries)?, timings))
}

/// Loads the table from `cache` when its hash matches, otherwise builds and writes it.
/// Returns the table and whether it came from the cache.
pub fn load_or_build_table(
    models: &[StationModel],
    caps: &[u32],
    method: SolverMethod,
    cache: &Path,
) -> Result<(PreparednessTable, bool, Vec<SolveTiming>)> {
    let hash = table_hash(models, caps);
    if let Ok(text) = std::fs::read_to_string(cache) {
        if let Some(t) = PreparednessTable::from_cache_str(&text, caps, &hash)? {
            return Ok((t, true, Vec::new()));
        }
    }
    let (table, timings) = build_preparedness_table(models, caps, method)?;
    crate::reporting::write_atomic(cache, table.to_cache_string(&hash).as_bytes())?;
    Ok((table, false, timings))
}

/// Per-station models for an instance.
///
/// `λ(c)` sums the weekly-mean rates of the zones whose nearest station is the
/// station. `μ(a,c)` is the inverse of an expected busy period assembled from
/// demand-weighted travel estimates and the service parameters. Preferences
/// sort compatible types by `M[a][c]`, ties by type index, and the penalty is
/// `φ(c) = θ_c · penalty_window`.
pub fn station_models(
    instance: &CityInstance,
    cost: &CostModel,
    service: &ServiceParams,
    penalty_window: f64,
) -> Result<Vec<StationModel>> {
    let nc = instance.rates.n_types();
    let na = cost.n_amb_types();
    if cost.n_call_types() != nc {
        return Err(Error::Config(format!("cost model has {} emergency types, rates have {nc}", cost.n_call_types())));
    }
    let compat: Vec<Vec<usize>> = (0..nc)
        .map(|c| {
            let mut types: Vec<usize> = (0..na).filter(|&a| cost.compatible(a, c)).collect();
            types.sort_by(|&a, &b| cost.m(a, c).total_cmp(&cost.m(b, c)).then(a.cmp(&b)));
            types
        })
        .collect();
    let mut models = Vec::with_capacity(instance.stations.len());
    for (pos, station) in instance.stations.iter().enumerate() {
        let district: Vec<usize> = instance.district(pos).collect();
        let mut lambda = vec![0.0; nc];
        let (mut w_sum, mut to_scene, mut to_hosp, mut to_base) = (0.0, 0.0, 0.0, 0.0);
        for &z in &district {
            let zc = instance.zones[z].centroid;
            let w = instance.rates.weekly_mean_total(z);
            for (c, l) in lambda.iter_mut().enumerate() {
                *l += instance.rates.weekly_mean(z, c);
            }
            let h = instance.hospitals[instance.nearest_hospital(zc)?].location;
            let back = instance.stations[instance.nearest_station(h)?].location;
            // Unweighted fallback for districts without demand.
            let w_eff = if w > 0.0 { w } else { 1e-12 };
            w_sum += w_eff;
            to_scene += w_eff * instance.travel_time(station.location, zc)?;
            to_hosp += w_eff * instance.travel_time(zc, h)?;
            to_base += w_eff * instance.travel_time(h, back)?;
        }
        if w_sum > 0.0 {
            to_scene /= w_sum;
            to_hosp /= w_sum;
            to_base /= w_sum;
        }
        let mut mu = vec![vec![0.0; nc]; na];
        for c in 0..nc {
            let busy = to_scene
                + service.on_scene[c].mean
                + service.p_transport[c] * (to_hosp + service.hospital_wait.mean)
                + service.p_cleaning[c] * (to_base + service.cleaning.mean);
            for &a in &compat[c] {
                mu[a][c] = 1.0 / busy;
            }
        }
        let phi = (0..nc).map(|c| cost.theta(c) * penalty_window).collect();
        let model = StationModel { station: station.id, n_amb_types: na, lambda, mu, compat: compat.clone(), phi };
        model.validate()?;
        models.push(model);
    }
    Ok(models)
}
