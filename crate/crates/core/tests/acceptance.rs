//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line; the
//! test fails if any of them fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ambfleet::assignment::{solve_linear, DispatchDecision, DispatchProblem, IdleAmb, OnTaskAmb};
use ambfleet::citymodel::GeoPoint;
use ambfleet::ctmc::{
    build_generator, build_preparedness_table, enumerate_states, fleet_grid, station_models, stationary_distribution,
    stationary_residual, steady_state_cost, FleetVector, PreparednessTable, SolverMethod, StationModel,
};
use ambfleet::metrics::EmergencyRecord;
use ambfleet::policies::{build_policy, PolicyParams, POLICY_NAMES};
use ambfleet::setup::{build_setup, AmbSetup, Setup, ONE_WEEK};
use ambfleet::simulator::{round_robin_fleet, run_scenario, scenario_calls, ActionKind, SimConfig};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn erlang_b(m: u32, load: f64) -> f64 {
    (1..=m).fold(1.0, |b, k| load * b / (k as f64 + load * b))
}

fn erlang_loss_equivalence() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    for m in 1..=8u32 {
        for load in [0.1, 1.0, 5.0] {
            let mu = 1.0 / 1800.0;
            let model = StationModel {
                station: 0,
                n_amb_types: 1,
                lambda: vec![load * mu],
                mu: vec![vec![mu]],
                compat: vec![vec![0]],
                phi: vec![1.0],
            };
            let fleet = FleetVector(vec![m]);
            let q = build_generator(&model, &fleet).map_err(|e| e.to_string())?;
            for method in [SolverMethod::Gmres, SolverMethod::Cg] {
                let (nu, _) = stationary_distribution(&q, method).map_err(|e| e.to_string())?;
                let blocking = steady_state_cost(&model, &fleet, &nu).map_err(|e| e.to_string())? / (load * mu);
                let err = (blocking - erlang_b(m, load)).abs();
                worst = worst.max(err);
                ensure(err <= 1e-8, || format!("m={m} load={load} {method:?}: {blocking} vs {}", erlang_b(m, load)))?;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2} s"))?;
    Ok(format!("max |error| {worst:.1e}, {secs:.2} s"))
}

fn synthetic() -> Setup {
    build_setup(AmbSetup::Synthetic).unwrap()
}

fn models_of(setup: &Setup) -> Vec<StationModel> {
    station_models(&setup.instance, &setup.cost, &setup.service, PolicyParams::default().gamma_window).unwrap()
}

fn solver_cross_check() -> Outcome {
    let start = Instant::now();
    let models = models_of(&synthetic());
    let (mut max_diff, mut max_resid, mut count) = (0.0_f64, 0.0_f64, 0);
    for model in &models {
        ensure(model.n_amb_types == 2 && model.lambda.len() == 4, || "expected a 2-type, 4-call model".into())?;
        for fleet in fleet_grid(&[4, 4]) {
            let q = build_generator(model, &fleet).map_err(|e| e.to_string())?;
            let (g, _) = stationary_distribution(&q, SolverMethod::Gmres).map_err(|e| e.to_string())?;
            let (c, _) = stationary_distribution(&q, SolverMethod::Cg).map_err(|e| e.to_string())?;
            let diff = g.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let resid = stationary_residual(&q, &g).max(stationary_residual(&q, &c));
            max_diff = max_diff.max(diff);
            max_resid = max_resid.max(resid);
            count += 1;
            ensure(diff <= 1e-6, || format!("station {} fleet {:?}: |Δ|∞ = {diff:e}", model.station, fleet.0))?;
            ensure(resid <= 1e-8, || format!("station {} fleet {:?}: residual {resid:e}", model.station, fleet.0))?;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("{count} systems, max |Δ|∞ {max_diff:.1e}, max residual {max_resid:.1e}, {secs:.2} s"))
}

fn state_count() -> Outcome {
    let model = StationModel {
        station: 0,
        n_amb_types: 1,
        lambda: vec![1.0; 4],
        mu: vec![vec![1.0; 4]],
        compat: vec![vec![0]; 4],
        phi: vec![1.0; 4],
    };
    let n = enumerate_states(&model, &FleetVector(vec![8])).map_err(|e| e.to_string())?.len();
    // placing at most 8 busy ambulances on 4 call classes: C(8 + 4, 4)
    let expected = (1..=4u64).fold(1u64, |acc, k| acc * (8 + k) / k);
    ensure(n as u64 == expected && n == 495, || format!("{n} states"))?;
    Ok(format!("{n} states"))
}

/// Independent evaluation of a complete decision.
struct Evaluated {
    linear: f64,
    post: Vec<FleetVector>,
    /// Ambulances leaving or joining each station.
    moves: Vec<usize>,
    immediate: f64,
}

fn evaluate(p: &DispatchProblem, served_by: &[Option<usize>], station_of: &[Option<usize>]) -> Evaluated {
    let ni = p.idle.len();
    let mut immediate = 0.0;
    let mut prep = 0.0;
    let mut post = p.fleets.clone();
    let mut moves = vec![0; p.fleets.len()];
    for (j, k) in served_by.iter().enumerate() {
        match k {
            Some(k) => {
                immediate += p.cost[*k][j].unwrap();
                if *k < ni {
                    let a = &p.idle[*k];
                    prep += p.s_minus[a.station][a.amb_type];
                    post[a.station].0[a.amb_type] -= 1;
                    moves[a.station] += 1;
                }
            }
            None => immediate += p.gamma[j],
        }
    }
    for (o, b) in station_of.iter().enumerate() {
        if let Some(b) = b {
            let t = p.ontask[o].amb_type;
            prep += p.s_plus[*b][t];
            post[*b].0[t] += 1;
            moves[*b] += 1;
        }
    }
    Evaluated { linear: immediate + p.weight * prep, post, moves, immediate }
}

/// Every feasible decision, as (emergency → ambulance index, on-task → station index).
fn all_decisions(p: &DispatchProblem) -> Vec<(Vec<Option<usize>>, Vec<Option<usize>>)> {
    fn emergencies(
        p: &DispatchProblem,
        j: usize,
        used: &mut Vec<bool>,
        served: &mut Vec<Option<usize>>,
        out: &mut Vec<(Vec<Option<usize>>, Vec<Option<usize>>)>,
    ) {
        if j == p.queue.len() {
            let mut st = vec![None; p.ontask.len()];
            stations(p, 0, used, &mut st, served, out);
            return;
        }
        served[j] = None;
        emergencies(p, j + 1, used, served, out);
        for k in 0..p.n_ambs() {
            if !used[k] && p.cost[k][j].is_some() {
                used[k] = true;
                served[j] = Some(k);
                emergencies(p, j + 1, used, served, out);
                used[k] = false;
            }
        }
        served[j] = None;
    }
    fn stations(
        p: &DispatchProblem,
        o: usize,
        used: &[bool],
        st: &mut Vec<Option<usize>>,
        served: &[Option<usize>],
        out: &mut Vec<(Vec<Option<usize>>, Vec<Option<usize>>)>,
    ) {
        if o == p.ontask.len() {
            out.push((served.to_vec(), st.clone()));
            return;
        }
        if used[p.idle.len() + o] {
            st[o] = None;
            stations(p, o + 1, used, st, served, out);
            return;
        }
        for &b in &p.ontask[o].permitted {
            st[o] = Some(b);
            stations(p, o + 1, used, st, served, out);
        }
        st[o] = None;
    }
    let mut out = Vec::new();
    emergencies(p, 0, &mut vec![false; p.n_ambs()], &mut vec![None; p.queue.len()], &mut out);
    out
}

fn positional(p: &DispatchProblem, d: &DispatchDecision) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let ni = p.idle.len();
    let index_of = |id: usize| {
        p.idle.iter().position(|a| a.id == id).or_else(|| p.ontask.iter().position(|a| a.id == id).map(|o| ni + o)).unwrap()
    };
    let mut served = vec![None; p.queue.len()];
    for &(amb, e) in &d.dispatches {
        served[p.queue.iter().position(|&q| q == e).unwrap()] = Some(index_of(amb));
    }
    let mut st = vec![None; p.ontask.len()];
    for &(amb, s) in &d.repositions {
        st[index_of(amb) - ni] = Some(p.stations.iter().position(|&b| b == s).unwrap());
    }
    (served, st)
}

fn random_problem(rng: &mut ChaCha8Rng, max_ambs: usize, max_calls: usize, max_stations: usize) -> DispatchProblem {
    let ns = rng.random_range(1..=max_stations);
    let na = rng.random_range(1..=max_ambs);
    let n_idle = rng.random_range(0..=na);
    let nq = rng.random_range(0..=max_calls);
    let idle: Vec<IdleAmb> =
        (0..n_idle).map(|k| IdleAmb { id: 100 + k, amb_type: rng.random_range(0..2), station: rng.random_range(0..ns) }).collect();
    let ontask: Vec<OnTaskAmb> = (n_idle..na)
        .map(|k| {
            let mut permitted: Vec<usize> = (0..ns).filter(|_| rng.random_bool(0.5)).collect();
            if permitted.is_empty() {
                permitted.push(rng.random_range(0..ns));
            }
            OnTaskAmb { id: 100 + k, amb_type: rng.random_range(0..2), permitted }
        })
        .collect();
    let cost = (0..na)
        .map(|_| (0..nq).map(|_| rng.random_bool(0.8).then(|| rng.random_range(0.0..3000.0))).collect())
        .collect();
    let mut fleets = vec![FleetVector::zeros(2); ns];
    for a in &idle {
        fleets[a.station].0[a.amb_type] += 1;
    }
    DispatchProblem {
        idle,
        ontask,
        queue: (0..nq).map(|j| 10 * j + 3).collect(),
        cost,
        gamma: (0..nq).map(|_| rng.random_range(0.0..5000.0)).collect(),
        stations: (0..ns).map(|b| 7 + b).collect(),
        fleets,
        s_plus: (0..ns).map(|_| (0..2).map(|_| rng.random_range(-5.0..5.0)).collect()).collect(),
        s_minus: (0..ns).map(|_| (0..2).map(|_| rng.random_range(-5.0..5.0)).collect()).collect(),
        weight: rng.random_range(0.0..2000.0),
    }
}

fn assignment_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0_f64;
    for i in 0..1000 {
        let p = random_problem(&mut rng, 6, 4, 3);
        let d = solve_linear(&p).map_err(|e| format!("instance {i}: {e}"))?;
        let (served, st) = positional(&p, &d);
        let got = evaluate(&p, &served, &st).linear;
        let best = all_decisions(&p).iter().map(|(s, t)| evaluate(&p, s, t).linear).fold(f64::INFINITY, f64::min);
        let gap = got - best;
        worst = worst.max(gap.abs());
        ensure(gap.abs() <= 1e-9 * (1.0 + best.abs()), || format!("instance {i}: solver {got} vs enumeration {best}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("1000 instances, max gap {worst:.1e}, {secs:.2} s"))
}

fn small_table() -> PreparednessTable {
    let models = models_of(&synthetic());
    build_preparedness_table(&models[..3], &[3, 3], SolverMethod::Gmres).unwrap().0
}

fn linearization_identity() -> Outcome {
    let table = small_table();
    let ids = table.stations().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let (mut instances, mut decisions, mut worst) = (0, 0usize, 0.0_f64);
    let mut attempts = 0;
    while instances < 500 {
        attempts += 1;
        ensure(attempts < 50_000, || "could not generate enough instances".into())?;
        let mut p = random_problem(&mut rng, 5, 3, 3);
        p.stations = ids[..p.stations.len()].to_vec();
        // fleets also count ambulances already heading to each station
        for m in p.fleets.iter_mut() {
            for v in m.0.iter_mut() {
                *v += rng.random_range(0..=1);
            }
        }
        for (b, m) in p.fleets.iter().enumerate() {
            p.s_plus[b] = (0..2).map(|a| table.s_plus(p.stations[b], m, a).unwrap()).collect();
            p.s_minus[b] = (0..2).map(|a| table.s_minus(p.stations[b], m, a).unwrap()).collect();
        }
        let base: f64 = p.fleets.iter().enumerate().map(|(b, m)| table.lookup(p.stations[b], m).unwrap()).sum();
        let mut checked = 0;
        for (served, st) in all_decisions(&p) {
            let e = evaluate(&p, &served, &st);
            if e.moves.iter().any(|&n| n > 1) {
                continue;
            }
            let after: f64 = e.post.iter().enumerate().map(|(b, m)| table.lookup(p.stations[b], m).unwrap()).sum();
            let version1 = e.immediate + p.weight * after;
            let version2 = e.linear + p.weight * base;
            let gap = (version1 - version2).abs();
            worst = worst.max(gap);
            ensure(gap <= 1e-9 * (1.0 + version1.abs()), || format!("instance {instances}: {version1} vs {version2}"))?;
            let d = DispatchDecision {
                dispatches: served
                    .iter()
                    .enumerate()
                    .filter_map(|(j, k)| k.map(|k| (if k < p.idle.len() { p.idle[k].id } else { p.ontask[k - p.idle.len()].id }, p.queue[j])))
                    .collect(),
                repositions: st.iter().enumerate().filter_map(|(o, b)| b.map(|b| (p.ontask[o].id, p.stations[b]))).collect(),
            };
            let lib1 = p.nonlinear_objective(&d, &table).map_err(|e| e.to_string())?;
            let lib2 = p.linear_objective(&d).map_err(|e| e.to_string())? + p.baseline_preparedness(&table).map_err(|e| e.to_string())?;
            ensure((lib1 - version1).abs() <= 1e-9 * (1.0 + lib1.abs()), || format!("library objective {lib1} vs {version1}"))?;
            ensure((lib1 - lib2).abs() <= 1e-9 * (1.0 + lib1.abs()), || format!("library objectives {lib1} vs {lib2}"))?;
            checked += 1;
        }
        if checked > 0 {
            instances += 1;
            decisions += checked;
        }
    }
    Ok(format!("{instances} instances, {decisions} single-change decisions, max gap {worst:.1e}"))
}

fn decision_latency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (ns, nq, n_idle, n_ontask) = (16, 10, 12, 4);
    let mut problems = Vec::new();
    for _ in 0..50 {
        let idle: Vec<IdleAmb> = (0..n_idle).map(|k| IdleAmb { id: k, amb_type: k % 2, station: rng.random_range(0..ns) }).collect();
        let mut fleets = vec![FleetVector::zeros(2); ns];
        for a in &idle {
            fleets[a.station].0[a.amb_type] += 1;
        }
        problems.push(DispatchProblem {
            idle,
            ontask: (0..n_ontask).map(|o| OnTaskAmb { id: n_idle + o, amb_type: o % 2, permitted: (0..ns).collect() }).collect(),
            queue: (0..nq).collect(),
            cost: (0..n_idle + n_ontask).map(|_| (0..nq).map(|_| Some(rng.random_range(0.0..3000.0))).collect()).collect(),
            gamma: (0..nq).map(|_| rng.random_range(1000.0..6000.0)).collect(),
            stations: (0..ns).collect(),
            fleets,
            s_plus: (0..ns).map(|_| (0..2).map(|_| -rng.random_range(0.0..1.0)).collect()).collect(),
            s_minus: (0..ns).map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect()).collect(),
            weight: 1800.0,
        });
    }
    let start = Instant::now();
    for p in &problems {
        solve_linear(p).map_err(|e| e.to_string())?;
    }
    let mean_ms = start.elapsed().as_secs_f64() * 1000.0 / problems.len() as f64;
    ensure(mean_ms <= 50.0, || format!("mean {mean_ms:.2} ms"))?;
    Ok(format!("16 ambulances x 10 queued x 16 stations: mean {mean_ms:.3} ms"))
}

fn table_build_scaling() -> Outcome {
    let model = models_of(&synthetic()).remove(0);
    let mut times = Vec::new();
    for cap in [2u32, 4, 6] {
        let start = Instant::now();
        let (table, _) = build_preparedness_table(std::slice::from_ref(&model), &[cap, cap], SolverMethod::Gmres)
            .map_err(|e| e.to_string())?;
        times.push((cap, start.elapsed().as_secs_f64(), table.len()));
    }
    let line: Vec<String> = times.iter().map(|(c, t, n)| format!("caps ({c},{c}) {t:.3} s / {n} entries")).collect();
    ensure(times[0].1 < times[1].1 && times[1].1 < times[2].1, || format!("not increasing: {}", line.join(", ")))?;
    Ok(line.join(", "))
}

fn mean_cost(records: &[EmergencyRecord]) -> f64 {
    records.iter().map(|r| r.allocation_cost).sum::<f64>() / records.len() as f64
}

fn run_policy(setup: &Setup, name: &str, table: Option<Arc<PreparednessTable>>, n: usize, seeds: &[u64]) -> Vec<f64> {
    let policy = build_policy(name, &PolicyParams::default(), table).unwrap();
    let cfg = SimConfig::new(
        ONE_WEEK,
        setup.service.clone(),
        setup.cost.clone(),
        round_robin_fleet(n, setup.cost.n_amb_types(), setup.instance.stations.len()),
    );
    seeds.iter().map(|&s| mean_cost(&run_scenario(&setup.instance, policy.as_ref(), &cfg, s).unwrap().records)).collect()
}

/// 5% and 95% percentiles of bootstrapped means.
fn bootstrap_interval(diffs: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = diffs.len();
    let mut means: Vec<f64> =
        (0..resamples).map(|_| (0..n).map(|_| diffs[rng.random_range(0..n)]).sum::<f64>() / n as f64).collect();
    means.sort_by(f64::total_cmp);
    let at = |p: f64| means[((p * resamples as f64).floor() as usize).min(resamples - 1)];
    (at(0.05), at(0.95))
}

fn end_to_end_ordering() -> Outcome {
    let setup = build_setup(AmbSetup::Rj).unwrap();
    let models = models_of(&setup);
    let table = Arc::new(build_preparedness_table(&models, &[4, 4], SolverMethod::Gmres).map_err(|e| e.to_string())?.0);
    let seeds: Vec<u64> = (1..=25).collect();
    let mut notes = Vec::new();
    let mut failures = Vec::new();
    for n in [8usize, 12, 16] {
        let mp = run_policy(&setup, "markov_preparedness", Some(table.clone()), n, &seeds);
        let ca = run_policy(&setup, "dummy_queue", None, n, &seeds);
        let diffs: Vec<f64> = mp.iter().zip(&ca).map(|(a, b)| a - b).collect();
        let (lo, hi) = bootstrap_interval(&diffs, 10_000, 99 + n as u64);
        let (m_mp, m_ca) = (mp.iter().sum::<f64>() / 25.0, ca.iter().sum::<f64>() / 25.0);
        notes.push(format!("n={n}: MP {m_mp:.0} CA {m_ca:.0} diff90 [{lo:.0}, {hi:.0}]"));
        if n >= 12 && !(m_mp <= m_ca && hi < 0.0) {
            failures.push(n);
        }
    }
    ensure(failures.is_empty(), || format!("fleets {failures:?} fail; {}", notes.join("; ")))?;
    Ok(notes.join("; "))
}

fn conservation_audit() -> Outcome {
    let setup = synthetic();
    let models = models_of(&setup);
    let table = Arc::new(build_preparedness_table(&models, &[3, 3], SolverMethod::Gmres).map_err(|e| e.to_string())?.0);
    let horizon = 3.0 * 86_400.0;
    let mut cfg = SimConfig::new(
        horizon,
        setup.service.clone(),
        setup.cost.clone(),
        round_robin_fleet(6, setup.cost.n_amb_types(), setup.instance.stations.len()),
    );
    cfg.audit = true;
    let mut total = 0;
    for name in POLICY_NAMES {
        let policy = build_policy(name, &PolicyParams::default(), Some(table.clone())).map_err(|e| e.to_string())?;
        for seed in 0..100u64 {
            let run = |label: &str| {
                run_scenario(&setup.instance, policy.as_ref(), &cfg, seed).map_err(|e| format!("{name} seed {seed} {label}: {e}"))
            };
            let first = run("first run")?;
            let calls = scenario_calls(&setup.instance, horizon, seed).map_err(|e| e.to_string())?;
            ensure(first.records.len() == first.n_calls && first.n_calls == calls.len(), || {
                format!("{name} seed {seed}: {} records for {} calls", first.records.len(), calls.len())
            })?;
            let mut ids: Vec<usize> = first.records.iter().map(|r| r.call_id).collect();
            ids.sort_unstable();
            ensure(ids.iter().copied().eq(calls.iter().map(|c| c.id)), || format!("{name} seed {seed}: record ids differ from call ids"))?;
            let second = run("rerun")?;
            let bits = |o: &[EmergencyRecord]| -> Vec<(usize, usize, u64, u64, u64)> {
                o.iter()
                    .map(|r| (r.call_id, r.amb, r.response_time.to_bits(), r.allocation_cost.to_bits(), r.finish_time.to_bits()))
                    .collect()
            };
            ensure(bits(&first.records) == bits(&second.records), || format!("{name} seed {seed}: rerun differs"))?;
            total += first.n_calls;
        }
    }
    Ok(format!("{} policies x 100 scenarios, {total} calls accounted for, reruns bit-identical", POLICY_NAMES.len()))
}

/// Great-circle travel at 60 km/h, written out independently of the library.
fn haversine_seconds(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let (dp, dl) = (p2 - p1, (b.lon - a.lon).to_radians());
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    let km = 2.0 * 6371.0088 * h.sqrt().asin();
    km / 60.0 * 3600.0
}

fn closest_available_replay() -> Outcome {
    let setup = build_setup(AmbSetup::Rj).unwrap();
    let policy = build_policy("dummy_queue", &PolicyParams::default(), None).unwrap();
    let mut cfg = SimConfig::new(
        ONE_WEEK,
        setup.service.clone(),
        setup.cost.clone(),
        round_robin_fleet(10, setup.cost.n_amb_types(), setup.instance.stations.len()),
    );
    cfg.log_decisions = true;
    let (mut checked, mut worst_geo) = (0, 0.0_f64);
    for seed in 1..=10u64 {
        let out = run_scenario(&setup.instance, policy.as_ref(), &cfg, seed).map_err(|e| e.to_string())?;
        let calls = scenario_calls(&setup.instance, ONE_WEEK, seed).map_err(|e| e.to_string())?;
        for r in &out.records {
            let call = calls.iter().find(|c| c.id == r.call_id).ok_or("record for unknown call")?;
            let entry = out
                .log
                .iter()
                .find(|e| e.action == ActionKind::Dispatch && e.target == r.call_id)
                .ok_or_else(|| format!("seed {seed}: no dispatch logged for call {}", r.call_id))?;
            ensure(entry.amb == r.amb, || format!("seed {seed} call {}: logged ambulance differs", r.call_id))?;
            let travel = setup.instance.travel_time(entry.position, call.location).map_err(|e| e.to_string())?;
            let expected = (entry.time - call.time) + travel;
            ensure(expected == r.response_time, || {
                format!("seed {seed} call {}: record {} vs replay {expected}", r.call_id, r.response_time)
            })?;
            let geo = haversine_seconds(entry.position, call.location);
            worst_geo = worst_geo.max((geo - travel).abs() / (1.0 + travel));
            checked += 1;
        }
    }
    ensure(worst_geo <= 1e-3, || format!("travel provider disagrees with great-circle recomputation by {worst_geo:e}"))?;
    Ok(format!("{checked} records replayed exactly over 10 scenarios"))
}

#[test]
fn acceptance_suite() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 erlang-loss equivalence", erlang_loss_equivalence),
        ("2 solver cross-check", solver_cross_check),
        ("3 state count", state_count),
        ("4 assignment exactness", assignment_exactness),
        ("5 linearization identity", linearization_identity),
        ("6 decision-epoch latency", decision_latency),
        ("7 table-build scaling", table_build_scaling),
        ("8 end-to-end ordering", end_to_end_ordering),
        ("9 simulator conservation audit", conservation_audit),
        ("10 closest-available replay", closest_available_replay),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        match outcome {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(detail) => {
                println!("[FAIL] {name}: {detail}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
