//! Instance files, result files and plot-ready CSVs.
//!
//! # Instance file
//!
//! A JSON object:
//!
//! ```json
//! {
//!   "grid": {"rect": {"bbox": {"sw": {"lat": 0, "lon": 0}, "ne": {"lat": 1, "lon": 1}}, "nx": 10, "ny": 10}},
//!   "stations": [{"id": 0, "location": {"lat": 0.5, "lon": 0.5}}],
//!   "hospitals": [{"id": 0, "location": {"lat": 0.2, "lon": 0.2}}],
//!   "travel": {"great_circle": {"speed_kmh": 60}},
//!   "rates": {"csv": {"path": "rates.csv", "n_types": 4}},
//!   "service": {...},
//!   "cost": {...}
//! }
//! ```
//!
//! `grid` is `{"rect": {bbox, nx, ny}}` or `{"hex": {bbox, edge_len}}`; a
//! `zones` array of explicit zones may replace it. `travel` is
//! `{"great_circle": {"speed_kmh"}}` or `{"matrix": {"path"}}`. `rates` is
//! `{"csv": {"path", "n_types", "bin_length"?}}`, `{"constant": [[rate per type] per zone]}`
//! or `{"entries": {"n_types", "bin_length"?, "rows": [[zone, etype, bin, rate], ...]}}`.
//! `service`, `cost` and `rates.*.bin_length` are optional. Relative paths
//! resolve against the instance file's directory.
//!
//! The rate CSV has columns `zone_id,etype,bin_index,rate_per_sec`. The travel
//! matrix CSV has a header `id,<id>,...` and one row per id; ids are `s<k>`
//! for stations, `h<k>` for hospitals and `z<k>` for zone centroids.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arrivals::{ArrivalRateTable, DEFAULT_BIN_SECONDS};
use crate::citymodel::{build_hex_grid, build_rect_grid, BBox, CityInstance, GeoPoint, Site, TravelMatrix, TravelProvider, Zone};
use crate::error::{Error, Result};
use crate::metrics::{CostModel, EmergencyRecord, Summary};
use crate::simulator::{DecisionLogEntry, ServiceParams};

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSpec {
    Rect { bbox: BBox, nx: usize, ny: usize },
    Hex { bbox: BBox, edge_len: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelSpec {
    GreatCircle { speed_kmh: f64 },
    Matrix { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatesSpec {
    Csv {
        path: PathBuf,
        n_types: usize,
        #[serde(default)]
        bin_length: Option<f64>,
    },
    Constant(Vec<Vec<f64>>),
    Entries {
        n_types: usize,
        #[serde(default)]
        bin_length: Option<f64>,
        rows: Vec<(usize, usize, usize, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zones: Option<Vec<Zone>>,
    pub stations: Vec<Site>,
    pub hospitals: Vec<Site>,
    pub travel: TravelSpec,
    pub rates: RatesSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub service: Option<ServiceParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostModel>,
}

/// An instance together with the service and cost parameters it ships with.
#[derive(Debug, Clone)]
pub struct LoadedInstance {
    pub instance: CityInstance,
    pub service: Option<ServiceParams>,
    pub cost: Option<CostModel>,
}

pub fn load_instance(path: &Path) -> Result<LoadedInstance> {
    let text = std::fs::read_to_string(path)?;
    let file: InstanceFile = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    build_instance(file, base)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Builds an instance from a parsed file; `base` resolves relative paths.
pub fn build_instance(file: InstanceFile, base: &Path) -> Result<LoadedInstance> {
    let zones = match (file.grid, file.zones) {
        (Some(GridSpec::Rect { bbox, nx, ny }), None) => build_rect_grid(bbox, nx, ny)?,
        (Some(GridSpec::Hex { bbox, edge_len }), None) => build_hex_grid(bbox, edge_len)?,
        (None, Some(z)) => z,
        _ => return Err(Error::Config("instance needs exactly one of `grid` and `zones`".into())),
    };
    let rates = match file.rates {
        RatesSpec::Csv { path, n_types, bin_length } => {
            let text = std::fs::read_to_string(resolve(base, &path))?;
            read_rates_csv(&text, zones.len(), n_types, bin_length.unwrap_or(DEFAULT_BIN_SECONDS))?
        }
        RatesSpec::Constant(per_zone) => {
            if per_zone.len() != zones.len() {
                return Err(Error::Config(format!("{} rate rows for {} zones", per_zone.len(), zones.len())));
            }
            let n_types = per_zone.first().map_or(0, Vec::len);
            let mut t = ArrivalRateTable::new(zones.len(), n_types, DEFAULT_BIN_SECONDS)?;
            for (z, row) in per_zone.iter().enumerate() {
                if row.len() != n_types {
                    return Err(Error::Config(format!("rate row {z} has {} types, expected {n_types}", row.len())));
                }
                for (c, &r) in row.iter().enumerate() {
                    t.set_constant(z, c, r)?;
                }
            }
            t
        }
        RatesSpec::Entries { n_types, bin_length, rows } => {
            let mut t = ArrivalRateTable::new(zones.len(), n_types, bin_length.unwrap_or(DEFAULT_BIN_SECONDS))?;
            for (z, c, b, r) in rows {
                t.set(z, c, b, r)?;
            }
            t
        }
    };
    let travel = match file.travel {
        TravelSpec::GreatCircle { speed_kmh } => TravelProvider::great_circle(speed_kmh)?,
        TravelSpec::Matrix { path } => {
            let text = std::fs::read_to_string(resolve(base, &path))?;
            let points = matrix_points(&zones, &file.stations, &file.hospitals);
            TravelProvider::Matrix(read_travel_matrix_csv(&text, &points)?)
        }
    };
    let instance = CityInstance::new(zones, file.stations, file.hospitals, travel, rates)?;
    Ok(LoadedInstance { instance, service: file.service, cost: file.cost })
}

/// Serializes an instance with inline rate entries. Matrix-mode instances
/// reference `matrix_path`, which the caller writes with [`write_travel_matrix_csv`].
pub fn instance_file(
    instance: &CityInstance,
    service: Option<&ServiceParams>,
    cost: Option<&CostModel>,
    matrix_path: Option<&Path>,
) -> Result<InstanceFile> {
    let travel = match (&instance.travel, matrix_path) {
        (TravelProvider::GreatCircle { speed_kmh }, _) => TravelSpec::GreatCircle { speed_kmh: *speed_kmh },
        (TravelProvider::Matrix(_), Some(p)) => TravelSpec::Matrix { path: p.to_path_buf() },
        (TravelProvider::Matrix(_), None) => {
            return Err(Error::Config("matrix-mode instance needs a matrix path".into()))
        }
    };
    let r = &instance.rates;
    Ok(InstanceFile {
        grid: None,
        zones: Some(instance.zones.clone()),
        stations: instance.stations.clone(),
        hospitals: instance.hospitals.clone(),
        travel,
        rates: RatesSpec::Entries { n_types: r.n_types(), bin_length: Some(r.bin_length()), rows: r.iter_nonzero().collect() },
        service: service.cloned(),
        cost: cost.cloned(),
    })
}

pub fn save_instance(
    path: &Path,
    instance: &CityInstance,
    service: Option<&ServiceParams>,
    cost: Option<&CostModel>,
) -> Result<()> {
    let matrix_path = if instance.travel.is_matrix() {
        let name = format!("{}.matrix.csv", path.file_stem().and_then(|s| s.to_str()).unwrap_or("instance"));
        write_atomic(&path.with_file_name(&name), write_travel_matrix_csv(instance)?.as_bytes())?;
        Some(PathBuf::from(name))
    } else {
        None
    };
    let file = instance_file(instance, service, cost, matrix_path.as_deref())?;
    write_atomic(path, serde_json::to_string_pretty(&file)?.as_bytes())
}

pub fn read_rates_csv(text: &str, n_zones: usize, n_types: usize, bin_length: f64) -> Result<ArrivalRateTable> {
    let mut table = ArrivalRateTable::new(n_zones, n_types, bin_length)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    for (line, row) in rdr.deserialize::<(usize, usize, usize, f64)>().enumerate() {
        let (z, c, b, r) = row.map_err(|e| Error::Parse(format!("rates row {}: {e}", line + 2)))?;
        table.set(z, c, b, r)?;
    }
    Ok(table)
}

pub fn write_rates_csv(rates: &ArrivalRateTable) -> String {
    let mut out = String::from("zone_id,etype,bin_index,rate_per_sec\n");
    for (z, c, b, r) in rates.iter_nonzero() {
        writeln!(out, "{z},{c},{b},{r:e}").expect("string write");
    }
    out
}

/// Registered matrix ids and their points: stations, hospitals, zone centroids.
pub fn matrix_points(zones: &[Zone], stations: &[Site], hospitals: &[Site]) -> Vec<(String, GeoPoint)> {
    stations
        .iter()
        .map(|s| (format!("s{}", s.id), s.location))
        .chain(hospitals.iter().map(|h| (format!("h{}", h.id), h.location)))
        .chain(zones.iter().map(|z| (format!("z{}", z.id), z.centroid)))
        .collect()
}

/// Parses a travel matrix; `points` maps every id used in the file to its location.
pub fn read_travel_matrix_csv(text: &str, points: &[(String, GeoPoint)]) -> Result<TravelMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse(format!("matrix header: {e}")))?.clone();
    let ids: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    let locate = |id: &str| {
        points
            .iter()
            .find(|(k, _)| k == id)
            .map(|(_, p)| *p)
            .ok_or_else(|| Error::InvalidInstance(format!("matrix id {id:?} is not a registered location")))
    };
    let mut locations = Vec::with_capacity(ids.len());
    for id in &ids {
        locations.push((id.clone(), locate(id)?));
    }
    let mut rows = Vec::with_capacity(ids.len());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("matrix row {}: {e}", i + 2)))?;
        if rec.get(0) != ids.get(i).map(String::as_str) {
            return Err(Error::Parse(format!("matrix row {} is labelled {:?}, expected {:?}", i + 2, rec.get(0), ids.get(i))));
        }
        let row = rec
            .iter()
            .skip(1)
            .map(|v| v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("matrix row {}: {v:?}: {e}", i + 2))))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    TravelMatrix::new(locations, rows)
}

/// Travel matrix over all registered points of `instance`.
pub fn write_travel_matrix_csv(instance: &CityInstance) -> Result<String> {
    let points = matrix_points(&instance.zones, &instance.stations, &instance.hospitals);
    let mut out = String::from("id");
    for (id, _) in &points {
        write!(out, ",{id}").expect("string write");
    }
    out.push('\n');
    for (id, p) in &points {
        out.push_str(id);
        for (_, q) in &points {
            write!(out, ",{}", instance.travel_time(*p, *q)?).expect("string write");
        }
        out.push('\n');
    }
    Ok(out)
}

/// `setup_policy_nambulances_nscenarios.txt`.
pub fn result_file_name(setup: &str, policy: &str, n_ambulances: usize, n_scenarios: usize) -> String {
    format!("{setup}_{policy}_{n_ambulances}_{n_scenarios}.txt")
}

/// Per scenario: the number of emergencies N, then N lines
/// `amb_index response_time allocation_cost finish_instant`.
pub fn write_result_file(scenarios: &[Vec<EmergencyRecord>]) -> String {
    let mut out = String::new();
    for recs in scenarios {
        writeln!(out, "{}", recs.len()).expect("string write");
        for r in recs {
            writeln!(out, "{} {} {} {}", r.amb, r.response_time, r.allocation_cost, r.finish_time).expect("string write");
        }
    }
    out
}

/// `(amb, response time, allocation cost, finish)` per emergency, per scenario.
pub type ResultRows = Vec<Vec<(usize, f64, f64, f64)>>;

pub fn parse_result_file(text: &str) -> Result<ResultRows> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let mut out = Vec::new();
    while let Some((i, l)) = lines.next() {
        let n: usize = l.trim().parse().map_err(|e| Error::Parse(format!("line {}: count {l:?}: {e}", i + 1)))?;
        let mut recs = Vec::with_capacity(n);
        for _ in 0..n {
            let (j, l) = lines.next().ok_or_else(|| Error::Parse("result file ends inside a scenario".into()))?;
            let f: Vec<&str> = l.split_whitespace().collect();
            let bad = |what: &str| Error::Parse(format!("line {}: bad {what} in {l:?}", j + 1));
            if f.len() != 4 {
                return Err(bad("field count"));
            }
            recs.push((
                f[0].parse().map_err(|_| bad("ambulance"))?,
                f[1].parse().map_err(|_| bad("response time"))?,
                f[2].parse().map_err(|_| bad("cost"))?,
                f[3].parse().map_err(|_| bad("finish time"))?,
            ));
        }
        out.push(recs);
    }
    Ok(out)
}

/// Sidecar of a result file holding the full records, emergency types included.
pub fn detail_file_name(result_file: &str) -> String {
    format!("{}.detail.csv", result_file.trim_end_matches(".txt"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct DetailRow {
    scenario: usize,
    call_id: usize,
    etype: usize,
    amb: usize,
    response_time: f64,
    allocation_cost: f64,
    finish_time: f64,
}

pub fn write_detail_csv(scenarios: &[Vec<EmergencyRecord>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for (s, recs) in scenarios.iter().enumerate() {
        for r in recs {
            w.serialize(DetailRow {
                scenario: s,
                call_id: r.call_id,
                etype: r.etype,
                amb: r.amb,
                response_time: r.response_time,
                allocation_cost: r.allocation_cost,
                finish_time: r.finish_time,
            })
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    finish_csv(w)
}

/// Records per scenario; `n_scenarios` keeps trailing empty scenarios.
pub fn read_detail_csv(text: &str, n_scenarios: usize) -> Result<Vec<Vec<EmergencyRecord>>> {
    let mut out = vec![Vec::new(); n_scenarios];
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    for row in rdr.deserialize::<DetailRow>() {
        let r = row.map_err(|e| Error::Parse(format!("detail file: {e}")))?;
        if r.scenario >= out.len() {
            out.resize(r.scenario + 1, Vec::new());
        }
        out[r.scenario].push(EmergencyRecord {
            call_id: r.call_id,
            etype: r.etype,
            amb: r.amb,
            response_time: r.response_time,
            allocation_cost: r.allocation_cost,
            finish_time: r.finish_time,
        });
    }
    Ok(out)
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_decision_log_csv(log: &[DecisionLogEntry]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["time", "epoch", "policy", "action", "amb", "target", "lat", "lon"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for e in log {
        w.write_record([
            e.time.to_string(),
            e.epoch.as_str().to_string(),
            e.policy.clone(),
            e.action.as_str().to_string(),
            e.amb.to_string(),
            e.target.to_string(),
            e.position.lat.to_string(),
            e.position.lon.to_string(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    finish_csv(w)
}

/// One row of the summary CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub n_ambulances: usize,
    pub n_scenarios: usize,
    pub mean_rt: f64,
    pub q90_rt: f64,
    pub mean_cost: f64,
    pub mean_extra_high: f64,
    pub mean_extra_low: f64,
}

impl SummaryRow {
    pub fn new(policy: &str, n_ambulances: usize, s: &Summary) -> Self {
        Self {
            policy: policy.to_owned(),
            n_ambulances,
            n_scenarios: s.n_scenarios,
            mean_rt: s.mean_rt,
            q90_rt: s.q90_rt,
            mean_cost: s.mean_cost,
            mean_extra_high: s.mean_extra_high,
            mean_extra_low: s.mean_extra_low,
        }
    }
}

pub fn write_summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    finish_csv(w)
}

pub fn read_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Parse(format!("summary: {e}")))
}

/// Fleet sizes down, policies across: `n_ambulances,<policy>,...`. Policies keep
/// the order of their first appearance in `rows`; missing points are empty.
pub fn write_series_csv(rows: &[SummaryRow], value: impl Fn(&SummaryRow) -> f64) -> String {
    let mut policies: Vec<&str> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
        if !sizes.contains(&r.n_ambulances) {
            sizes.push(r.n_ambulances);
        }
    }
    sizes.sort_unstable();
    let mut out = String::from("n_ambulances");
    for p in &policies {
        write!(out, ",{p}").expect("string write");
    }
    out.push('\n');
    for n in sizes {
        write!(out, "{n}").expect("string write");
        for p in &policies {
            match rows.iter().find(|r| r.policy == *p && r.n_ambulances == n) {
                Some(r) => write!(out, ",{}", value(r)).expect("string write"),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Extra response time per priority class: `policy,n_ambulances,mean_extra_high,mean_extra_low`.
pub fn write_extra_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("policy,n_ambulances,mean_extra_high,mean_extra_low\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.policy, r.n_ambulances, r.mean_extra_high, r.mean_extra_low).expect("string write");
    }
    out
}
