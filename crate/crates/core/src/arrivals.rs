//! Emergency arrivals: nonhomogeneous Poisson streams with weekly
//! piecewise-constant intensity, one independent stream per (zone, type).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::citymodel::{GeoPoint, Zone};
use crate::error::{Error, Result};

pub const WEEK_SECONDS: f64 = 7.0 * 24.0 * 3600.0;
pub const DEFAULT_BIN_SECONDS: f64 = 1800.0;

/// Arrival intensities (events per second) per zone, emergency type and
/// time-of-week bin. Emergency types are 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRateTable {
    n_zones: usize,
    n_types: usize,
    bin_length: f64,
    n_bins: usize,
    /// Offset into the weekly cycle at which scenario time 0 falls.
    pub start_offset: f64,
    rates: Vec<f64>,
}

impl ArrivalRateTable {
    pub fn new(n_zones: usize, n_types: usize, bin_length: f64) -> Result<Self> {
        if !(bin_length > 0.0) || bin_length > WEEK_SECONDS {
            return Err(Error::Config(format!("bin length {bin_length} outside (0, one week]")));
        }
        if n_types == 0 {
            return Err(Error::Config("at least one emergency type is required".into()));
        }
        let n_bins = (WEEK_SECONDS / bin_length).ceil() as usize;
        Ok(Self {
            n_zones,
            n_types,
            bin_length,
            n_bins,
            start_offset: 0.0,
            rates: vec![0.0; n_zones * n_types * n_bins],
        })
    }

    pub fn n_zones(&self) -> usize {
        self.n_zones
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn bin_length(&self) -> f64 {
        self.bin_length
    }

    fn slot(&self, zone: usize, etype: usize, bin: usize) -> Result<usize> {
        if zone >= self.n_zones || etype >= self.n_types || bin >= self.n_bins {
            return Err(Error::Config(format!(
                "rate index (zone {zone}, type {etype}, bin {bin}) outside {}x{}x{}",
                self.n_zones, self.n_types, self.n_bins
            )));
        }
        Ok((zone * self.n_types + etype) * self.n_bins + bin)
    }

    pub fn set(&mut self, zone: usize, etype: usize, bin: usize, rate: f64) -> Result<()> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::Config(format!("rate must be finite and >= 0, got {rate}")));
        }
        let k = self.slot(zone, etype, bin)?;
        self.rates[k] = rate;
        Ok(())
    }

    /// Same rate in every bin.
    pub fn set_constant(&mut self, zone: usize, etype: usize, rate: f64) -> Result<()> {
        for bin in 0..self.n_bins {
            self.set(zone, etype, bin, rate)?;
        }
        Ok(())
    }

    pub fn rate(&self, zone: usize, etype: usize, bin: usize) -> f64 {
        self.rates[(zone * self.n_types + etype) * self.n_bins + bin]
    }

    fn bin_rates(&self, zone: usize, etype: usize) -> &[f64] {
        let start = (zone * self.n_types + etype) * self.n_bins;
        &self.rates[start..start + self.n_bins]
    }

    /// Time-weighted mean intensity over the weekly cycle.
    pub fn weekly_mean(&self, zone: usize, etype: usize) -> f64 {
        let mut acc = 0.0;
        for (bin, r) in self.bin_rates(zone, etype).iter().enumerate() {
            acc += r * self.bin_span(bin);
        }
        acc / WEEK_SECONDS
    }

    /// Weekly mean summed over emergency types.
    pub fn weekly_mean_total(&self, zone: usize) -> f64 {
        (0..self.n_types).map(|c| self.weekly_mean(zone, c)).sum()
    }

    fn bin_span(&self, bin: usize) -> f64 {
        let start = bin as f64 * self.bin_length;
        (start + self.bin_length).min(WEEK_SECONDS) - start
    }

    pub fn iter_nonzero(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        (0..self.n_zones).flat_map(move |z| {
            (0..self.n_types).flat_map(move |c| {
                (0..self.n_bins).filter_map(move |b| {
                    let r = self.rate(z, c, b);
                    (r > 0.0).then_some((z, c, b, r))
                })
            })
        })
    }

    /// Piecewise-constant segments `(start, end, bin)` covering `[0, horizon)` in scenario time.
    fn segments(&self, horizon: f64) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        let mut t = 0.0;
        while t < horizon {
            let w = (self.start_offset + t).rem_euclid(WEEK_SECONDS);
            let bin = ((w / self.bin_length).floor() as usize).min(self.n_bins - 1);
            let bin_end = ((bin + 1) as f64 * self.bin_length).min(WEEK_SECONDS);
            let mut end = (t + (bin_end - w)).min(horizon);
            if end <= t {
                end = (t + self.bin_length).min(horizon);
            }
            out.push((t, end, bin));
            t = end;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmergencyCall {
    pub id: usize,
    pub time: f64,
    pub zone: usize,
    pub location: GeoPoint,
    pub etype: usize,
}

/// Uniform point in a zone polygon by rejection from its bounding box.
pub fn sample_in_zone<R: Rng>(zone: &Zone, rng: &mut R) -> GeoPoint {
    let (lo, hi) = zone.bounds();
    for _ in 0..10_000 {
        let p = GeoPoint {
            lat: lo.lat + rng.random::<f64>() * (hi.lat - lo.lat),
            lon: lo.lon + rng.random::<f64>() * (hi.lon - lo.lon),
        };
        if zone.contains(p) {
            return p;
        }
    }
    zone.centroid
}

/// Draws one scenario of emergency calls over `[0, horizon)`.
///
/// Each (zone, type) pair gets its own ChaCha stream. Within every constant-rate
/// segment the count is Poisson(rate · length) and the times are uniform.
pub fn sample_scenario(zones: &[Zone], rates: &ArrivalRateTable, horizon: f64, seed: u64) -> Result<Vec<EmergencyCall>> {
    if !(horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be > 0, got {horizon}")));
    }
    if zones.len() != rates.n_zones() {
        return Err(Error::Dimension(format!(
            "{} zones but rate table has {}",
            zones.len(),
            rates.n_zones()
        )));
    }
    let segments = rates.segments(horizon);
    let mut calls = Vec::new();
    for (z, zone) in zones.iter().enumerate() {
        for c in 0..rates.n_types() {
            let bin_rates = rates.bin_rates(z, c);
            if bin_rates.iter().all(|&r| r == 0.0) {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + (z * rates.n_types() + c) as u64);
            for &(t0, t1, bin) in &segments {
                let mean = bin_rates[bin] * (t1 - t0);
                if mean <= 0.0 {
                    continue;
                }
                let n = Poisson::new(mean)
                    .map_err(|e| Error::Config(format!("poisson mean {mean}: {e}")))?
                    .sample(&mut rng) as u64;
                for _ in 0..n {
                    let time = t0 + rng.random::<f64>() * (t1 - t0);
                    let location = sample_in_zone(zone, &mut rng);
                    calls.push(EmergencyCall { id: 0, time, zone: z, location, etype: c });
                }
            }
        }
    }
    calls.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.zone.cmp(&b.zone))
            .then(a.etype.cmp(&b.etype))
    });
    for (i, call) in calls.iter_mut().enumerate() {
        call.id = i;
    }
    Ok(calls)
}
