//! Allocation cost model and summary statistics over simulated records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ALS: usize = 0;
pub const BLS: usize = 1;

/// Urgency weights and care-quality mismatch costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// `theta[c]`, cost per second of response time.
    pub theta: Vec<f64>,
    /// `mismatch[a][c]`; `None` marks an incompatible pair.
    pub mismatch: Vec<Vec<Option<f64>>>,
    /// Extra-response-time target per emergency type, seconds.
    pub targets: Vec<f64>,
}

impl Default for CostModel {
    /// ALS/BLS against four emergency types; types 0 and 2 are high priority.
    fn default() -> Self {
        Self {
            theta: vec![4.0, 1.0, 4.0, 1.0],
            mismatch: vec![
                vec![Some(0.0), Some(0.0), Some(1500.0), Some(1500.0)],
                vec![Some(6000.0), Some(6000.0), Some(0.0), Some(0.0)],
            ],
            targets: vec![600.0, 1200.0, 600.0, 1200.0],
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        let nc = self.theta.len();
        if self.targets.len() != nc || self.mismatch.iter().any(|row| row.len() != nc) || self.mismatch.is_empty() {
            return Err(Error::Config("cost model dimensions disagree".into()));
        }
        if self.theta.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(Error::Config(format!("theta must be positive, got {:?}", self.theta)));
        }
        if self.mismatch.iter().flatten().flatten().any(|&m| !(m >= 0.0) || !m.is_finite()) {
            return Err(Error::Config("mismatch costs must be non-negative".into()));
        }
        for c in 0..nc {
            if (0..self.n_amb_types()).all(|a| self.mismatch[a][c].is_none()) {
                return Err(Error::Config(format!("no ambulance type can serve emergency type {c}")));
            }
        }
        Ok(())
    }

    pub fn n_amb_types(&self) -> usize {
        self.mismatch.len()
    }

    pub fn n_call_types(&self) -> usize {
        self.theta.len()
    }

    pub fn compatible(&self, a: usize, c: usize) -> bool {
        self.mismatch.get(a).and_then(|r| r.get(c)).is_some_and(Option::is_some)
    }

    /// Mismatch cost, `+∞` for incompatible pairs.
    pub fn m(&self, a: usize, c: usize) -> f64 {
        self.mismatch.get(a).and_then(|r| r.get(c)).copied().flatten().unwrap_or(f64::INFINITY)
    }

    pub fn theta(&self, c: usize) -> f64 {
        self.theta[c]
    }

    pub fn is_high_priority(&self, c: usize) -> bool {
        let max = self.theta.iter().cloned().fold(f64::MIN, f64::max);
        self.theta[c] == max
    }

    /// `θ_c · t + M_ac`.
    pub fn allocation_cost(&self, a: usize, c: usize, t: f64) -> Result<f64> {
        if c >= self.n_call_types() || a >= self.n_amb_types() {
            return Err(Error::Config(format!("unknown pair (ambulance type {a}, emergency type {c})")));
        }
        let m = self.mismatch[a][c]
            .ok_or_else(|| Error::Config(format!("ambulance type {a} cannot serve emergency type {c}")))?;
        Ok(self.theta[c] * t + m)
    }

    /// Response time beyond the type's target.
    pub fn extra_response_time(&self, c: usize, t: f64) -> f64 {
        (t - self.targets[c]).max(0.0)
    }

    /// Ambulance types ordered by mismatch cost for `c`, ties by index.
    pub fn preference(&self, c: usize) -> Vec<usize> {
        let mut types: Vec<usize> = (0..self.n_amb_types()).filter(|&a| self.compatible(a, c)).collect();
        types.sort_by(|&a, &b| self.m(a, c).total_cmp(&self.m(b, c)).then(a.cmp(&b)));
        types
    }
}

/// One served emergency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmergencyRecord {
    pub call_id: usize,
    pub etype: usize,
    pub amb: usize,
    pub response_time: f64,
    pub allocation_cost: f64,
    pub finish_time: f64,
}

/// Nearest-rank quantile of unsorted data; `None` when empty.
pub fn quantile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_scenarios: usize,
    pub n_records: usize,
    pub mean_rt: f64,
    pub q50_rt: f64,
    pub q90_rt: f64,
    pub mean_cost: f64,
    pub mean_extra_high: f64,
    pub mean_extra_low: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Pools emergencies across scenarios. Empty scenarios contribute nothing; the
/// pooled values are sorted first, so the scenario order does not matter.
pub fn summarize(scenarios: &[Vec<EmergencyRecord>], cost: &CostModel) -> Summary {
    let mut pooled: Vec<EmergencyRecord> = scenarios.iter().flatten().copied().collect();
    pooled.sort_by(|a, b| {
        a.response_time
            .total_cmp(&b.response_time)
            .then(a.allocation_cost.total_cmp(&b.allocation_cost))
            .then(a.etype.cmp(&b.etype))
    });
    let rts: Vec<f64> = pooled.iter().map(|r| r.response_time).collect();
    let extra = |high: bool| {
        mean(
            pooled
                .iter()
                .filter(|r| cost.is_high_priority(r.etype) == high)
                .map(|r| cost.extra_response_time(r.etype, r.response_time)),
        )
    };
    Summary {
        n_scenarios: scenarios.iter().filter(|s| !s.is_empty()).count(),
        n_records: pooled.len(),
        mean_rt: mean(rts.iter().copied()),
        q50_rt: quantile_nearest_rank(&rts, 0.5).unwrap_or(f64::NAN),
        q90_rt: quantile_nearest_rank(&rts, 0.9).unwrap_or(f64::NAN),
        mean_cost: mean(pooled.iter().map(|r| r.allocation_cost)),
        mean_extra_high: extra(true),
        mean_extra_low: extra(false),
    }
}

/// Percentile interval of the bootstrap distribution of `mean(a − b)` over
/// paired samples.
pub fn paired_bootstrap_interval(a: &[f64], b: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    use rand::{Rng, SeedableRng};
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Dimension(format!("paired samples of length {} and {}", a.len(), b.len())));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = diffs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    let lo = quantile_nearest_rank(&means, alpha).unwrap_or(f64::NAN);
    let hi = quantile_nearest_rank(&means, 1.0 - alpha).unwrap_or(f64::NAN);
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn allocation_cost_table_values() {
        let cm = CostModel::default();
        assert_eq!(cm.allocation_cost(ALS, 0, 100.0).unwrap(), 400.0);
        assert_eq!(cm.allocation_cost(BLS, 0, 100.0).unwrap(), 6400.0);
        assert_eq!(cm.allocation_cost(ALS, 3, 0.0).unwrap(), 1500.0);
        assert!(cm.allocation_cost(2, 0, 1.0).is_err());
        assert!(cm.allocation_cost(ALS, 4, 1.0).is_err());
    }

    #[test]
    fn extra_time_targets() {
        let cm = CostModel::default();
        assert_eq!(cm.extra_response_time(0, 600.0), 0.0);
        assert_eq!(cm.extra_response_time(0, 700.0), 100.0);
        assert_eq!(cm.extra_response_time(1, 1100.0), 0.0);
        assert_eq!(cm.extra_response_time(3, 1300.0), 100.0);
    }

    #[test]
    fn preferences_follow_mismatch_costs() {
        let cm = CostModel::default();
        assert_eq!(cm.preference(0), vec![ALS, BLS]);
        assert_eq!(cm.preference(1), vec![ALS, BLS]);
        assert_eq!(cm.preference(2), vec![BLS, ALS]);
        assert_eq!(cm.preference(3), vec![BLS, ALS]);
        assert!(cm.is_high_priority(0) && cm.is_high_priority(2));
        assert!(!cm.is_high_priority(1) && !cm.is_high_priority(3));
        cm.validate().unwrap();
    }

    fn rec(etype: usize, rt: f64, cost: f64) -> EmergencyRecord {
        EmergencyRecord { call_id: 0, etype, amb: 0, response_time: rt, allocation_cost: cost, finish_time: rt }
    }

    #[test]
    fn singleton_summary() {
        let s = summarize(&[vec![rec(0, 700.0, 2800.0)]], &CostModel::default());
        assert_eq!(s.mean_rt, 700.0);
        assert_eq!(s.q90_rt, 700.0);
        assert_eq!(s.mean_cost, 2800.0);
        assert_eq!(s.mean_extra_high, 100.0);
        assert!(s.mean_extra_low.is_nan());
    }

    #[test]
    fn four_record_quantiles_by_hand() {
        let data = [40.0, 10.0, 30.0, 20.0];
        // sorted 10 20 30 40; rank = ceil(p·4)
        assert_eq!(quantile_nearest_rank(&data, 0.25), Some(10.0));
        assert_eq!(quantile_nearest_rank(&data, 0.5), Some(20.0));
        assert_eq!(quantile_nearest_rank(&data, 0.75), Some(30.0));
        assert_eq!(quantile_nearest_rank(&data, 0.9), Some(40.0));
        assert_eq!(quantile_nearest_rank(&data, 0.0), Some(10.0));
        assert_eq!(quantile_nearest_rank(&[], 0.5), None);
    }

    #[test]
    fn empty_scenarios_are_not_pooled() {
        let cm = CostModel::default();
        let a = summarize(&[vec![rec(1, 5.0, 5.0)], vec![]], &cm);
        let b = summarize(&[vec![rec(1, 5.0, 5.0)]], &cm);
        assert_eq!(a.n_scenarios, 1);
        assert_eq!(a.mean_rt, b.mean_rt);
    }

    #[test]
    fn bootstrap_interval_brackets_shift() {
        let a: Vec<f64> = (0..50).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 3.0).collect();
        let (lo, hi) = paired_bootstrap_interval(&a, &b, 0.9, 1000, 1).unwrap();
        assert_eq!((lo, hi), (-3.0, -3.0));
    }

    proptest! {
        #[test]
        fn cost_strictly_increasing_in_time(a in 0usize..2, c in 0usize..4, t in 0.0f64..1e5, dt in 1e-3f64..1e3) {
            let cm = CostModel::default();
            prop_assert!(cm.allocation_cost(a, c, t + dt).unwrap() > cm.allocation_cost(a, c, t).unwrap());
        }

        #[test]
        fn summary_invariant_under_reordering(
            scen in proptest::collection::vec(
                proptest::collection::vec((0usize..4, 0.0f64..5000.0), 0..6), 1..6),
            rot in 0usize..6,
        ) {
            let cm = CostModel::default();
            let records: Vec<Vec<EmergencyRecord>> = scen
                .iter()
                .map(|s| s.iter().map(|&(c, t)| rec(c, t, cm.allocation_cost(ALS, c, t).unwrap())).collect())
                .collect();
            let mut shuffled = records.clone();
            let k = rot % shuffled.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            let a = summarize(&records, &cm);
            let b = summarize(&shuffled, &cm);
            prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        }
    }
}
