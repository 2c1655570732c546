use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use ambfleet::arrivals::EmergencyCall;
use ambfleet::ctmc::{build_preparedness_table, station_models, PreparednessTable, SolverMethod};
use ambfleet::policies::{build_policy, MarkovPreparedness, Policy, PolicyDecision, PolicyParams, POLICY_NAMES};
use ambfleet::setup::{build_setup, AmbSetup, Setup};
use ambfleet::simulator::{round_robin_fleet, run_scenario, ActionKind, AmbStatus, SimConfig, SystemState};
use ambfleet::Result;

fn synthetic() -> Setup {
    build_setup(AmbSetup::Synthetic).unwrap()
}

fn table(setup: &Setup) -> Arc<PreparednessTable> {
    let models = station_models(&setup.instance, &setup.cost, &setup.service, 1800.0).unwrap();
    Arc::new(build_preparedness_table(&models, &[3, 3], SolverMethod::Gmres).unwrap().0)
}

fn config(setup: &Setup, n: usize, horizon: f64) -> SimConfig {
    let mut cfg = SimConfig::new(
        horizon,
        setup.service.clone(),
        setup.cost.clone(),
        round_robin_fleet(n, setup.cost.n_amb_types(), setup.instance.stations.len()),
    );
    cfg.log_decisions = true;
    cfg.audit = true;
    cfg
}

#[test]
fn no_ambulance_serves_two_calls_at_once() {
    let setup = synthetic();
    let table = table(&setup);
    let cfg = config(&setup, 5, 2.0 * 86_400.0);
    for name in POLICY_NAMES {
        let policy = build_policy(name, &PolicyParams::default(), Some(table.clone())).unwrap();
        for seed in 0..5 {
            let out = run_scenario(&setup.instance, policy.as_ref(), &cfg, seed).unwrap();
            let finish: HashMap<usize, f64> = out.records.iter().map(|r| (r.call_id, r.finish_time)).collect();
            let mut busy: HashMap<usize, Vec<(f64, f64)>> = HashMap::new();
            for e in out.log.iter().filter(|e| e.action == ActionKind::Dispatch) {
                busy.entry(e.amb).or_default().push((e.time, finish[&e.target]));
            }
            for (amb, mut spans) in busy {
                spans.sort_by(|a, b| a.0.total_cmp(&b.0));
                for w in spans.windows(2) {
                    assert!(w[0].0 <= w[0].1, "{name}: ambulance {amb} finishes before it starts");
                    assert!(w[1].0 >= w[0].1, "{name} seed {seed}: ambulance {amb} overlaps {:?} and {:?}", w[0], w[1]);
                }
            }
            assert!(out.log.windows(2).all(|w| w[0].time <= w[1].time), "{name}: decision times go backwards");
        }
    }
}

#[test]
fn decision_logs_are_reproducible() {
    let setup = synthetic();
    let table = table(&setup);
    let cfg = config(&setup, 6, 86_400.0);
    for name in POLICY_NAMES {
        let policy = build_policy(name, &PolicyParams::default(), Some(table.clone())).unwrap();
        let a = run_scenario(&setup.instance, policy.as_ref(), &cfg, 17).unwrap();
        let b = run_scenario(&setup.instance, policy.as_ref(), &cfg, 17).unwrap();
        assert!(!a.log.is_empty());
        assert_eq!(a.log, b.log, "{name}");
        let c = run_scenario(&setup.instance, policy.as_ref(), &cfg, 18).unwrap();
        assert_ne!(a.log, c.log, "{name}: different seeds should differ");
    }
}

#[test]
fn every_call_is_recorded_once() {
    let setup = synthetic();
    let cfg = config(&setup, 3, 86_400.0);
    let policy = build_policy("dummy_queue", &PolicyParams::default(), None).unwrap();
    let out = run_scenario(&setup.instance, policy.as_ref(), &cfg, 3).unwrap();
    assert_eq!(out.records.len(), out.n_calls);
    let mut ids: Vec<usize> = out.records.iter().map(|r| r.call_id).collect();
    ids.sort_unstable();
    ids.dedup();
    assert_eq!(ids.len(), out.n_calls);
    assert!(out.records.iter().all(|r| r.finish_time.is_finite() && r.response_time >= 0.0));
}

/// Wraps the MP policy and checks every executed action against exhaustive
/// minimum-cost immediate assignment.
struct Oracle {
    inner: MarkovPreparedness,
    checked: Mutex<usize>,
    failures: Mutex<Vec<String>>,
}

#[derive(Clone, Copy, PartialEq)]
enum Forced {
    /// Ambulance `amb` serves call `call`.
    Pair { amb: usize, call: usize },
    /// Call `call` gets no available ambulance.
    NotNow { call: usize },
    /// Ambulance `amb` serves nobody.
    Unmatched { amb: usize },
}

impl Oracle {
    fn costs(&self, state: &SystemState, freed: Option<usize>) -> Result<Vec<Vec<Option<f64>>>> {
        let mut rows = Vec::new();
        for amb in state.ambulances {
            let (ready, from) = if amb.station().is_some() {
                (state.clock, state.position(amb.id))
            } else if Some(amb.id) == freed || amb.status == AmbStatus::Free {
                (state.clock, amb.location)
            } else {
                amb.release_forecast(state.clock, state.instance, state.service)?
            };
            let mut row = Vec::new();
            for call in state.queue {
                row.push(if state.compatible(amb.id, call) {
                    let rt = (ready - call.time) + state.travel(from, call.location)?;
                    Some(state.cost.allocation_cost(amb.amb_type, call.etype, rt)?)
                } else {
                    None
                });
            }
            rows.push(row);
        }
        Ok(rows)
    }

    fn best(state: &SystemState, cost: &[Vec<Option<f64>>], gamma: &[f64], forced: Option<Forced>) -> f64 {
        fn go(
            j: usize,
            used: &mut Vec<bool>,
            served: &mut Vec<Option<usize>>,
            acc: f64,
            ctx: &(&SystemState, &[Vec<Option<f64>>], &[f64], Option<Forced>),
            best: &mut f64,
        ) {
            let (state, cost, gamma, forced) = *ctx;
            if j == gamma.len() {
                let ok = match forced {
                    None => true,
                    Some(Forced::Pair { amb, call }) => {
                        served[state.queue.iter().position(|c| c.id == call).unwrap()] == Some(amb)
                    }
                    Some(Forced::NotNow { call }) => {
                        let j = state.queue.iter().position(|c| c.id == call).unwrap();
                        served[j].is_none_or(|k| !state.ambulances[k].is_available())
                    }
                    Some(Forced::Unmatched { amb }) => !used[amb],
                };
                if ok && acc < *best {
                    *best = acc;
                }
                return;
            }
            served[j] = None;
            go(j + 1, used, served, acc + gamma[j], ctx, best);
            for k in 0..cost.len() {
                if let (false, Some(c)) = (used[k], cost[k][j]) {
                    used[k] = true;
                    served[j] = Some(k);
                    go(j + 1, used, served, acc + c, ctx, best);
                    used[k] = false;
                }
            }
            served[j] = None;
        }
        let mut best = f64::INFINITY;
        let ctx = (state, cost, gamma, forced);
        go(0, &mut vec![false; cost.len()], &mut vec![None; gamma.len()], 0.0, &ctx, &mut best);
        best
    }

    fn verify(&self, state: &SystemState, freed: Option<usize>, forced: Forced) -> Result<()> {
        if state.queue.len() > 5 {
            return Ok(());
        }
        let cost = self.costs(state, freed)?;
        let gamma: Vec<f64> = state.queue.iter().map(|c| self.inner.gamma(state, c)).collect();
        let best = Self::best(state, &cost, &gamma, None);
        let with = Self::best(state, &cost, &gamma, Some(forced));
        if with - best > 1e-9 * (1.0 + best.abs()) {
            self.failures.lock().unwrap().push(format!("t={} {:?}: {with} vs optimum {best}", state.clock, freed));
        }
        *self.checked.lock().unwrap() += 1;
        Ok(())
    }
}

impl std::fmt::Debug for Forced {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Forced::Pair { amb, call } => write!(f, "{amb}->{call}"),
            Forced::NotNow { call } => write!(f, "hold {call}"),
            Forced::Unmatched { amb } => write!(f, "idle {amb}"),
        }
    }
}

impl Policy for Oracle {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn on_call(&self, state: &SystemState, call: &EmergencyCall) -> Result<PolicyDecision> {
        let d = self.inner.on_call(state, call)?;
        let forced = match d.dispatches.first() {
            Some(&(amb, c)) => Forced::Pair { amb, call: c },
            None => Forced::NotNow { call: call.id },
        };
        self.verify(state, None, forced)?;
        Ok(d)
    }

    fn on_free(&self, state: &SystemState, amb: usize) -> Result<PolicyDecision> {
        let d = self.inner.on_free(state, amb)?;
        let forced = match d.dispatches.first() {
            Some(&(a, c)) => Forced::Pair { amb: a, call: c },
            None => Forced::Unmatched { amb },
        };
        self.verify(state, Some(amb), forced)?;
        Ok(d)
    }
}

#[test]
fn mp_without_preparedness_is_min_cost_immediate_assignment() {
    let setup = synthetic();
    let params = PolicyParams { weight: 0.0, gamma_scale: 100.0, ..PolicyParams::default() };
    let oracle = Oracle {
        inner: MarkovPreparedness::new(table(&setup), params),
        checked: Mutex::new(0),
        failures: Mutex::new(Vec::new()),
    };
    let cfg = config(&setup, 6, 86_400.0);
    let out = run_scenario(&setup.instance, &oracle, &cfg, 5).unwrap();
    assert!(out.n_calls >= 100, "only {} calls", out.n_calls);
    let checked = *oracle.checked.lock().unwrap();
    assert!(checked >= out.n_calls, "{checked} epochs checked");
    let failures = oracle.failures.lock().unwrap();
    assert!(failures.is_empty(), "{} mismatches, first: {}", failures.len(), failures[0]);
}
