use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use ambfleet::citymodel::CityInstance;
use ambfleet::ctmc::{load_or_build_table, station_models, FleetVector, PreparednessTable, SolverMethod};
use ambfleet::metrics::{summarize, CostModel, EmergencyRecord};
use ambfleet::policies::{build_policy, MpVersion, PolicyParams, POLICY_NAMES};
use ambfleet::reporting::{
    detail_file_name, load_instance, parse_result_file, read_detail_csv, result_file_name, write_atomic,
    write_decision_log_csv, write_detail_csv, write_extra_csv, write_result_file, write_series_csv, write_summary_csv,
    SummaryRow,
};
use ambfleet::setup::{build_setup, with_bases, AmbSetup, ONE_WEEK};
use ambfleet::simulator::{round_robin_fleet, run_scenario, ServiceParams, SimConfig};
use ambfleet::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_SOLVER: u8 = 4;
const EXIT_FAULT: u8 = 1;

#[derive(Parser)]
#[command(name = "ambfleet", version, about = "Ambulance dispatch policy sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build (or load from cache) the preparedness table and report solve times.
    BuildTable(Common),
    /// Run every policy on every fleet size and write result files.
    Simulate(SimulateArgs),
    /// Summarize a result directory into CSV tables.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Instance file (JSON); replaces the built-in city of --amb_setup.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in city, also the prefix of result files.
    #[arg(long = "amb_setup", default_value = "rj")]
    amb_setup: String,
    /// Number of stations used as bases (the first ones of the instance).
    #[arg(long = "nb_bases")]
    nb_bases: Option<usize>,
    /// Per-type caps of the preparedness table, comma separated.
    #[arg(long, default_value = "4,4", value_delimiter = ',')]
    caps: Vec<u32>,
    /// Stationary solver: cg or gmres.
    #[arg(long, default_value = "cg")]
    solver: String,
    /// Preparedness weight.
    #[arg(long = "Gamma", default_value_t = 1800.0)]
    gamma_weight: f64,
    /// Scale of the queue penalty.
    #[arg(long = "gamma-scale", default_value_t = 1.0)]
    gamma_scale: f64,
    /// Busy fraction of the coverage policy.
    #[arg(long = "busy-fraction", default_value_t = 0.4)]
    busy_fraction: f64,
    /// Coverage threshold in seconds.
    #[arg(long = "coverage-T", default_value_t = 600.0)]
    coverage_t: f64,
    /// MP objective: linear or nonlinear.
    #[arg(long = "mp-version", default_value = "linear")]
    mp_version: String,
    /// Worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long = "n_scenarios", default_value_t = 25)]
    n_scenarios: usize,
    /// Fleet sizes, comma separated.
    #[arg(long = "nb_ambulances", default_value = "8,12,16", value_delimiter = ',')]
    nb_ambulances: Vec<usize>,
    /// Policies, comma separated, or `all`.
    #[arg(long, default_value = "all", value_delimiter = ',')]
    policies: Vec<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Call horizon in seconds; service then runs to completion.
    #[arg(long, default_value_t = ONE_WEEK)]
    horizon: f64,
    /// Also write one decision log CSV per scenario.
    #[arg(long = "log-decisions")]
    log_decisions: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding result files; defaults to --out.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Solver { .. } | Error::NotGenerator { .. } => EXIT_SOLVER,
        Error::InvalidInstance(_)
        | Error::Lookup(_)
        | Error::Dimension(_)
        | Error::Config(_)
        | Error::Parse(_)
        | Error::Io(_)
        | Error::Json(_) => EXIT_CONFIG,
        _ => EXIT_FAULT,
    }
}

struct World {
    label: String,
    instance: CityInstance,
    service: ServiceParams,
    cost: CostModel,
}

fn load_world(c: &Common) -> Result<World, Failure> {
    let kind: AmbSetup = c.amb_setup.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let base = build_setup(kind)?;
    let (instance, service, cost) = match &c.config {
        Some(path) => {
            let loaded = load_instance(path)?;
            (loaded.instance, loaded.service.unwrap_or(base.service), loaded.cost.unwrap_or(base.cost))
        }
        None => (base.instance, base.service, base.cost),
    };
    let instance = match c.nb_bases {
        Some(n) => with_bases(&instance, n)?,
        None => instance,
    };
    Ok(World { label: c.amb_setup.clone(), instance, service, cost })
}

fn params(c: &Common) -> Result<PolicyParams, Failure> {
    let version: MpVersion = c.mp_version.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    Ok(PolicyParams {
        weight: c.gamma_weight,
        gamma_scale: c.gamma_scale,
        busy_fraction: c.busy_fraction,
        coverage_threshold: c.coverage_t,
        version,
        ..PolicyParams::default()
    })
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn table_path(c: &Common, w: &World) -> PathBuf {
    let caps: Vec<String> = c.caps.iter().map(u32::to_string).collect();
    c.out.join(format!("table_{}_{}_{}.csv", w.label, w.instance.stations.len(), caps.join("-")))
}

fn table(c: &Common, w: &World, p: &PolicyParams) -> Result<PreparednessTable, Failure> {
    if c.caps.len() != w.cost.n_amb_types() {
        return Err(Failure::Usage(format!("--caps needs {} values", w.cost.n_amb_types())));
    }
    let method: SolverMethod = c.solver.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let models = station_models(&w.instance, &w.cost, &w.service, p.gamma_window)?;
    let path = table_path(c, w);
    let start = Instant::now();
    let (table, cached, timings) = load_or_build_table(&models, &c.caps, method, &path)?;
    if cached {
        println!("table loaded from {} ({} entries)", path.display(), table.len());
        return Ok(table);
    }
    let mut per_fleet: Vec<(FleetVector, usize, f64)> = Vec::new();
    for t in &timings {
        match per_fleet.iter_mut().find(|(m, _, _)| *m == t.fleet) {
            Some(e) => {
                e.1 = e.1.max(t.states);
                e.2 += t.seconds;
            }
            None => per_fleet.push((t.fleet.clone(), t.states, t.seconds)),
        }
    }
    println!("fleet\tstates\tsolve_seconds");
    for (m, states, secs) in &per_fleet {
        println!("{:?}\t{states}\t{secs:.6}", m.0);
    }
    println!(
        "table built: {} entries, {} stations, {:.3} s wall, written to {}",
        table.len(),
        table.stations().len(),
        start.elapsed().as_secs_f64(),
        path.display()
    );
    Ok(table)
}

fn cmd_build_table(c: Common) -> Result<(), Failure> {
    let w = load_world(&c)?;
    let p = params(&c)?;
    thread_pool(c.jobs)?.install(|| table(&c, &w, &p)).map(|_| ())
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), Failure> {
    let c = &a.common;
    if a.n_scenarios == 0 {
        return Err(Failure::Usage("--n_scenarios must be at least 1".into()));
    }
    if a.nb_ambulances.is_empty() || a.nb_ambulances.contains(&0) {
        return Err(Failure::Usage("--nb_ambulances values must be at least 1".into()));
    }
    let policies: Vec<String> = if a.policies.iter().any(|p| p == "all") {
        POLICY_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        a.policies.clone()
    };
    for p in &policies {
        if !POLICY_NAMES.contains(&p.as_str()) {
            return Err(Failure::Usage(format!("unknown policy {p:?}; expected one of {}", POLICY_NAMES.join(", "))));
        }
    }
    let w = load_world(c)?;
    let p = params(c)?;
    let pool = thread_pool(c.jobs)?;
    let table = if policies.iter().any(|p| p == "markov_preparedness") {
        Some(Arc::new(pool.install(|| table(c, &w, &p))?))
    } else {
        None
    };
    std::fs::create_dir_all(&c.out)?;
    for &n in &a.nb_ambulances {
        let mut cfg = SimConfig::new(
            a.horizon,
            w.service.clone(),
            w.cost.clone(),
            round_robin_fleet(n, w.cost.n_amb_types(), w.instance.stations.len()),
        );
        cfg.log_decisions = a.log_decisions;
        for name in &policies {
            let policy = build_policy(name, &p, table.clone())?;
            let start = Instant::now();
            let outcomes = pool.install(|| {
                (0..a.n_scenarios)
                    .into_par_iter()
                    .map(|s| run_scenario(&w.instance, policy.as_ref(), &cfg, a.seed.wrapping_add(s as u64)))
                    .collect::<ambfleet::Result<Vec<_>>>()
            })?;
            let records: Vec<Vec<EmergencyRecord>> = outcomes.iter().map(|o| o.records.clone()).collect();
            let file = result_file_name(&w.label, name, n, a.n_scenarios);
            write_atomic(&c.out.join(&file), write_result_file(&records).as_bytes())?;
            write_atomic(&c.out.join(detail_file_name(&file)), write_detail_csv(&records)?.as_bytes())?;
            if a.log_decisions {
                for (s, o) in outcomes.iter().enumerate() {
                    let log = c.out.join("logs").join(format!("{}_{name}_{n}_{s}.csv", w.label));
                    write_atomic(&log, write_decision_log_csv(&o.log)?.as_bytes())?;
                }
            }
            let s = summarize(&records, &w.cost);
            println!(
                "{file}: {} emergencies, mean cost {:.1}, mean response {:.1} s, {:.2} s",
                s.n_records,
                s.mean_cost,
                s.mean_rt,
                start.elapsed().as_secs_f64()
            );
        }
    }
    Ok(())
}

/// `(setup, policy, n_ambulances, n_scenarios)` from a result file name.
fn parse_result_name(name: &str) -> Option<(String, String, usize, usize)> {
    let stem = name.strip_suffix(".txt")?;
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() < 4 {
        return None;
    }
    let k = parts.len();
    let n = parts[k - 2].parse().ok()?;
    let scen = parts[k - 1].parse().ok()?;
    let policy = parts[1..k - 2].join("_");
    POLICY_NAMES.contains(&policy.as_str()).then(|| (parts[0].to_string(), policy, n, scen))
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let dir = a.results.clone().unwrap_or_else(|| a.out.clone());
    let cost = match &a.config {
        Some(p) => load_instance(p)?.cost.unwrap_or_default(),
        None => CostModel::default(),
    };
    let mut found = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(parsed) = parse_result_name(&name) {
            found.push((name, parsed));
        }
    }
    if found.is_empty() {
        return Err(Failure::Lib(Error::Config(format!("no result files in {}", dir.display()))));
    }
    let order = |p: &str| POLICY_NAMES.iter().position(|&q| q == p).unwrap_or(usize::MAX);
    found.sort_by(|x, y| (order(&x.1 .1), x.1 .2, &x.1 .0).cmp(&(order(&y.1 .1), y.1 .2, &y.1 .0)));
    let mut rows = Vec::new();
    for (name, (_, policy, n, n_scen)) in &found {
        let plain = parse_result_file(&std::fs::read_to_string(dir.join(name))?)?;
        let detail_path = dir.join(detail_file_name(name));
        let records = read_detail_csv(&std::fs::read_to_string(&detail_path)?, *n_scen)?;
        check_consistent(name, &plain, &records)?;
        rows.push(SummaryRow::new(policy, *n, &summarize(&records, &cost)));
    }
    write_report(&a.out, &rows)?;
    println!("{} result files summarized into {}", rows.len(), a.out.display());
    Ok(())
}

fn check_consistent(name: &str, plain: &ambfleet::reporting::ResultRows, detail: &[Vec<EmergencyRecord>]) -> Result<(), Failure> {
    let same = plain.len() == detail.len()
        && plain.iter().zip(detail).all(|(p, d)| {
            p.len() == d.len()
                && p.iter().zip(d).all(|(x, r)| x.0 == r.amb && x.1 == r.response_time && x.2 == r.allocation_cost)
        });
    if same {
        Ok(())
    } else {
        Err(Failure::Lib(Error::Parse(format!("{name} disagrees with its detail file"))))
    }
}

fn write_report(out: &Path, rows: &[SummaryRow]) -> Result<(), Failure> {
    write_atomic(&out.join("summary.csv"), write_summary_csv(rows)?.as_bytes())?;
    write_atomic(&out.join("fig_mean_cost.csv"), write_series_csv(rows, |r| r.mean_cost).as_bytes())?;
    write_atomic(&out.join("fig_mean_response.csv"), write_series_csv(rows, |r| r.mean_rt).as_bytes())?;
    write_atomic(&out.join("fig_q90_response.csv"), write_series_csv(rows, |r| r.q90_rt).as_bytes())?;
    write_atomic(&out.join("fig_extra_time.csv"), write_extra_csv(rows).as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::BuildTable(c) => cmd_build_table(c),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
