//! Zone-level preparedness scores and queue centrality measures.

use crate::citymodel::GeoPoint;
use crate::error::Result;
use crate::simulator::SystemState;

/// Travel-time floor in ratio rules, seconds.
pub const MIN_TRAVEL: f64 = 1.0;

/// `(1/λ) Σ_k γ_k / t_k` with the times ranked ascending. Missing rank weights are 1.
pub fn zone_psi(lambda: f64, times: &[f64], gammas: &[f64]) -> f64 {
    let mut t: Vec<f64> = times.iter().map(|&t| t.max(MIN_TRAVEL)).collect();
    t.sort_by(f64::total_cmp);
    let avail: f64 = t.iter().enumerate().map(|(k, &t)| gammas.get(k).copied().unwrap_or(1.0) / t).sum();
    avail / lambda
}

/// Per-zone scores; zones without demand are `None` and ignored by aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ZonePreparedness {
    pub psi: Vec<Option<f64>>,
}

impl ZonePreparedness {
    pub fn min(&self) -> f64 {
        self.psi.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Travel times from a set of ambulance positions to every zone centroid.
#[derive(Debug, Clone)]
pub struct ZoneTimes {
    pub demand: Vec<f64>,
    pub gammas: Vec<f64>,
    /// `(ambulance id, times per zone)`.
    pub rows: Vec<(usize, Vec<f64>)>,
    centroids: Vec<GeoPoint>,
}

impl ZoneTimes {
    /// Rows for the available ambulances at their current positions.
    pub fn available(state: &SystemState, demand: Vec<f64>, gammas: Vec<f64>) -> Result<Self> {
        let centroids: Vec<GeoPoint> = state.instance.zones.iter().map(|z| z.centroid).collect();
        let mut rows = Vec::new();
        for a in state.available() {
            rows.push((a.id, times_from(state, state.position(a.id), &centroids)?));
        }
        Ok(Self { demand, gammas, rows, centroids })
    }

    pub fn times_from(&self, state: &SystemState, p: GeoPoint) -> Result<Vec<f64>> {
        times_from(state, p, &self.centroids)
    }

    /// Scores without ambulance `removed` and with an extra ambulance whose
    /// zone times are `added`.
    pub fn scores(&self, removed: Option<usize>, added: Option<&[f64]>) -> ZonePreparedness {
        let psi = (0..self.demand.len())
            .map(|z| {
                if self.demand[z] <= 0.0 {
                    return None;
                }
                let mut t: Vec<f64> =
                    self.rows.iter().filter(|(id, _)| Some(*id) != removed).map(|(_, row)| row[z]).collect();
                if let Some(extra) = added {
                    t.push(extra[z]);
                }
                Some(zone_psi(self.demand[z], &t, &self.gammas))
            })
            .collect();
        ZonePreparedness { psi }
    }
}

fn times_from(state: &SystemState, p: GeoPoint, centroids: &[GeoPoint]) -> Result<Vec<f64>> {
    centroids.iter().map(|&c| state.travel(p, c)).collect()
}

/// Scores with every available ambulance counted.
pub fn zone_preparedness(state: &SystemState, demand: Vec<f64>, gammas: Vec<f64>) -> Result<ZonePreparedness> {
    Ok(ZoneTimes::available(state, demand, gammas)?.scores(None, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Centrality {
    WeightedDegree,
    Distance,
    Betweenness,
}

/// Centrality of each queued emergency from pairwise travel times `t[e][e']`.
pub fn centrality(t: &[Vec<f64>], measure: Centrality) -> Vec<f64> {
    let n = t.len();
    match measure {
        Centrality::WeightedDegree => {
            (0..n).map(|e| (0..n).filter(|&f| f != e).map(|f| 1.0 / (1.0 + t[e][f])).sum()).collect()
        }
        Centrality::Distance => {
            (0..n).map(|e| 1.0 / (1.0 + (0..n).filter(|&f| f != e).map(|f| t[e][f]).sum::<f64>())).collect()
        }
        Centrality::Betweenness => betweenness(t),
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

/// Shortest-path counts over the complete directed graph with weights `t`.
fn path_counts(t: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = t.len();
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    let mut sigma = vec![vec![0.0; n]; n];
    for s in 0..n {
        let d = &mut dist[s];
        d[s] = 0.0;
        let mut done = vec![false; n];
        // O(n²) Dijkstra; queues are short
        for _ in 0..n {
            let u = (0..n).filter(|&v| !done[v]).min_by(|&a, &b| d[a].total_cmp(&d[b])).expect("vertex left");
            done[u] = true;
            for v in 0..n {
                if v != u && !done[v] && d[u] + t[u][v] < d[v] {
                    d[v] = d[u] + t[u][v];
                }
            }
        }
        // count in order of distance
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        let sg = &mut sigma[s];
        sg[s] = 1.0;
        for &v in order.iter().skip(1) {
            sg[v] = order
                .iter()
                .take_while(|&&u| u != v)
                .filter(|&&u| u != v && d[u] < d[v] && close(d[u] + t[u][v], d[v]))
                .map(|&u| sg[u])
                .sum();
        }
    }
    (dist, sigma)
}

fn betweenness(t: &[Vec<f64>]) -> Vec<f64> {
    let n = t.len();
    let (dist, sigma) = path_counts(t);
    (0..n)
        .map(|e| {
            let mut c = 0.0;
            for s in 0..n {
                for u in s + 1..n {
                    if s == e || u == e || sigma[s][u] == 0.0 {
                        continue;
                    }
                    if dist[s][e] < dist[s][u] && close(dist[s][e] + dist[e][u], dist[s][u]) {
                        c += sigma[s][e] * sigma[e][u] / sigma[s][u];
                    }
                }
            }
            c
        })
        .collect()
}
