//! City geometry: points, zone grids, stations, hospitals and travel times.
//!
//! Zone polygons live in the planar (lon, lat) degree plane. Distances and
//! travel times use the haversine great-circle formula or an imported
//! travel-time matrix.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::arrivals::ArrivalRateTable;
use crate::error::{Error, Result};

/// Mean Earth radius in metres.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::InvalidInstance(format!(
                "coordinate out of range: lat={lat}, lon={lon}"
            )));
        }
        Ok(Self { lat, lon })
    }

    fn key(&self) -> (u64, u64) {
        // +0.0 folds -0.0 onto 0.0
        ((self.lat + 0.0).to_bits(), (self.lon + 0.0).to_bits())
    }
}

/// Axis-aligned bounding box given by its south-west and north-east corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub sw: GeoPoint,
    pub ne: GeoPoint,
}

impl BBox {
    pub fn new(sw: GeoPoint, ne: GeoPoint) -> Result<Self> {
        if !(ne.lat > sw.lat && ne.lon > sw.lon) {
            return Err(Error::InvalidInstance(format!(
                "degenerate bounding box {sw:?} .. {ne:?}"
            )));
        }
        Ok(Self { sw, ne })
    }

    pub fn width(&self) -> f64 {
        self.ne.lon - self.sw.lon
    }

    pub fn height(&self) -> f64 {
        self.ne.lat - self.sw.lat
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.sw.lat && p.lat <= self.ne.lat && p.lon >= self.sw.lon && p.lon <= self.ne.lon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZoneKind {
    Rectangular,
    Hexagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: usize,
    pub centroid: GeoPoint,
    /// Counter-clockwise ring, first vertex not repeated.
    pub polygon: Vec<GeoPoint>,
    pub kind: ZoneKind,
}

impl Zone {
    pub fn area(&self) -> f64 {
        polygon_area(&self.polygon)
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        point_in_polygon(&self.polygon, p)
    }

    pub fn bounds(&self) -> (GeoPoint, GeoPoint) {
        let mut lo = GeoPoint { lat: f64::INFINITY, lon: f64::INFINITY };
        let mut hi = GeoPoint { lat: f64::NEG_INFINITY, lon: f64::NEG_INFINITY };
        for v in &self.polygon {
            lo.lat = lo.lat.min(v.lat);
            lo.lon = lo.lon.min(v.lon);
            hi.lat = hi.lat.max(v.lat);
            hi.lon = hi.lon.max(v.lon);
        }
        (lo, hi)
    }
}

/// Signed shoelace area in squared degrees (positive for counter-clockwise rings).
pub fn polygon_area(poly: &[GeoPoint]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.lon * b.lat - b.lon * a.lat;
    }
    0.5 * acc
}

fn polygon_centroid(poly: &[GeoPoint]) -> GeoPoint {
    let n = poly.len();
    let area = polygon_area(poly);
    if area.abs() < f64::MIN_POSITIVE {
        let (sx, sy) = poly.iter().fold((0.0, 0.0), |(x, y), p| (x + p.lon, y + p.lat));
        return GeoPoint { lat: sy / n as f64, lon: sx / n as f64 };
    }
    let (mut cx, mut cy) = (0.0, 0.0);
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = a.lon * b.lat - b.lon * a.lat;
        cx += (a.lon + b.lon) * cross;
        cy += (a.lat + b.lat) * cross;
    }
    GeoPoint { lat: cy / (6.0 * area), lon: cx / (6.0 * area) }
}

/// Crossing-number test with a half-open edge rule, so a point on an edge
/// shared by two polygons of a tiling lands in exactly one of them.
pub fn point_in_polygon(poly: &[GeoPoint], p: GeoPoint) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = (poly[i].lon, poly[i].lat);
        let (xj, yj) = (poly[j].lon, poly[j].lat);
        if (yi > p.lat) != (yj > p.lat) {
            let x_cross = xi + (p.lat - yi) * (xj - xi) / (yj - yi);
            if p.lon < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Tiles `bbox` with `nx` × `ny` rectangular cells, row-major from the south-west corner.
pub fn build_rect_grid(bbox: BBox, nx: usize, ny: usize) -> Result<Vec<Zone>> {
    let bbox = BBox::new(bbox.sw, bbox.ne)?;
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidInstance(format!("grid needs nx, ny >= 1, got {nx}x{ny}")));
    }
    let dx = bbox.width() / nx as f64;
    let dy = bbox.height() / ny as f64;
    let mut zones = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let lat0 = bbox.sw.lat + dy * j as f64;
        let lat1 = if j + 1 == ny { bbox.ne.lat } else { bbox.sw.lat + dy * (j + 1) as f64 };
        for i in 0..nx {
            let lon0 = bbox.sw.lon + dx * i as f64;
            let lon1 = if i + 1 == nx { bbox.ne.lon } else { bbox.sw.lon + dx * (i + 1) as f64 };
            zones.push(Zone {
                id: zones.len(),
                centroid: GeoPoint { lat: 0.5 * (lat0 + lat1), lon: 0.5 * (lon0 + lon1) },
                polygon: vec![
                    GeoPoint { lat: lat0, lon: lon0 },
                    GeoPoint { lat: lat0, lon: lon1 },
                    GeoPoint { lat: lat1, lon: lon1 },
                    GeoPoint { lat: lat1, lon: lon0 },
                ],
                kind: ZoneKind::Rectangular,
            });
        }
    }
    Ok(zones)
}

/// Pointy-top hexagon lattice centred on the box centre, clipped to `bbox`.
///
/// `edge_len` is the hexagon side (equal to its circumradius) in degrees.
/// Cells whose clipped area vanishes are dropped; ids are dense in row-major order.
pub fn build_hex_grid(bbox: BBox, edge_len: f64) -> Result<Vec<Zone>> {
    let bbox = BBox::new(bbox.sw, bbox.ne)?;
    if !(edge_len > 0.0) || !edge_len.is_finite() {
        return Err(Error::InvalidInstance(format!("hexagon edge length must be > 0, got {edge_len}")));
    }
    let s = edge_len;
    let horiz = 3f64.sqrt() * s;
    let vert = 1.5 * s;
    let cx = 0.5 * (bbox.sw.lon + bbox.ne.lon);
    let cy = 0.5 * (bbox.sw.lat + bbox.ne.lat);
    let rows = ((0.5 * bbox.height()) / vert).ceil() as i64 + 1;
    let cols = ((0.5 * bbox.width()) / horiz).ceil() as i64 + 1;
    let min_area = 1e-14 * bbox.area();

    let mut zones = Vec::new();
    for r in -rows..=rows {
        let y = cy + vert * r as f64;
        let shift = if r.rem_euclid(2) == 1 { 0.5 * horiz } else { 0.0 };
        for c in -cols..=cols {
            let x = cx + horiz * c as f64 + shift;
            let hex: Vec<GeoPoint> = (0..6)
                .map(|k| {
                    let ang = (30.0 + 60.0 * k as f64).to_radians();
                    GeoPoint { lat: y + s * ang.sin(), lon: x + s * ang.cos() }
                })
                .collect();
            let clipped = clip_to_bbox(&hex, &bbox);
            if clipped.len() < 3 || polygon_area(&clipped) <= min_area {
                continue;
            }
            let centroid = polygon_centroid(&clipped);
            zones.push(Zone { id: zones.len(), centroid, polygon: clipped, kind: ZoneKind::Hexagonal });
        }
    }
    Ok(zones)
}

/// Sutherland–Hodgman clip of a convex ring against an axis-aligned box.
fn clip_to_bbox(poly: &[GeoPoint], bbox: &BBox) -> Vec<GeoPoint> {
    #[derive(Clone, Copy)]
    enum Edge {
        West(f64),
        East(f64),
        South(f64),
        North(f64),
    }
    impl Edge {
        fn inside(self, p: GeoPoint) -> bool {
            match self {
                Edge::West(v) => p.lon >= v,
                Edge::East(v) => p.lon <= v,
                Edge::South(v) => p.lat >= v,
                Edge::North(v) => p.lat <= v,
            }
        }
        fn intersect(self, a: GeoPoint, b: GeoPoint) -> GeoPoint {
            match self {
                Edge::West(v) | Edge::East(v) => {
                    let t = (v - a.lon) / (b.lon - a.lon);
                    GeoPoint { lat: a.lat + t * (b.lat - a.lat), lon: v }
                }
                Edge::South(v) | Edge::North(v) => {
                    let t = (v - a.lat) / (b.lat - a.lat);
                    GeoPoint { lat: v, lon: a.lon + t * (b.lon - a.lon) }
                }
            }
        }
    }

    let mut out = poly.to_vec();
    for edge in [
        Edge::West(bbox.sw.lon),
        Edge::East(bbox.ne.lon),
        Edge::South(bbox.sw.lat),
        Edge::North(bbox.ne.lat),
    ] {
        if out.is_empty() {
            break;
        }
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            match (edge.inside(prev), edge.inside(cur)) {
                (true, true) => out.push(cur),
                (true, false) => out.push(edge.intersect(prev, cur)),
                (false, true) => {
                    out.push(edge.intersect(prev, cur));
                    out.push(cur);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Index of the zone containing `p`, first match in id order.
pub fn locate_zone(zones: &[Zone], p: GeoPoint) -> Option<usize> {
    zones.iter().position(|z| {
        let (lo, hi) = z.bounds();
        p.lat >= lo.lat && p.lat <= hi.lat && p.lon >= lo.lon && p.lon <= hi.lon && z.contains(p)
    })
}

/// Great-circle distance in metres.
pub fn haversine_m(p: GeoPoint, q: GeoPoint) -> f64 {
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (q.lon - p.lon).to_radians();
    let h = (0.5 * dphi).sin().powi(2) + phi1.cos() * phi2.cos() * (0.5 * dlambda).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Point a fraction `frac` of the way along the great-circle arc from `p` to `q`.
pub fn interpolate(p: GeoPoint, q: GeoPoint, frac: f64) -> GeoPoint {
    let frac = frac.clamp(0.0, 1.0);
    if frac == 0.0 || p == q {
        return p;
    }
    if frac == 1.0 {
        return q;
    }
    let delta = haversine_m(p, q) / EARTH_RADIUS_M;
    if delta < 1e-12 {
        return p;
    }
    let to_vec = |g: GeoPoint| {
        let (la, lo) = (g.lat.to_radians(), g.lon.to_radians());
        [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
    };
    let (a, b) = (to_vec(p), to_vec(q));
    let wa = ((1.0 - frac) * delta).sin() / delta.sin();
    let wb = (frac * delta).sin() / delta.sin();
    let v = [wa * a[0] + wb * b[0], wa * a[1] + wb * b[1], wa * a[2] + wb * b[2]];
    GeoPoint {
        lat: v[2].atan2((v[0] * v[0] + v[1] * v[1]).sqrt()).to_degrees(),
        lon: v[1].atan2(v[0]).to_degrees(),
    }
}

/// Source of point-to-point travel times in seconds.
#[derive(Debug, Clone)]
pub enum TravelProvider {
    GreatCircle { speed_kmh: f64 },
    Matrix(TravelMatrix),
}

#[derive(Debug, Clone)]
pub struct TravelMatrix {
    labels: Vec<String>,
    points: Vec<GeoPoint>,
    index: HashMap<(u64, u64), usize>,
    seconds: Vec<f64>,
}

impl TravelMatrix {
    /// `locations` and the rows/columns of `seconds` share the same order.
    pub fn new(locations: Vec<(String, GeoPoint)>, seconds: Vec<Vec<f64>>) -> Result<Self> {
        let n = locations.len();
        if seconds.len() != n || seconds.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidInstance(format!(
                "travel matrix must be {n}x{n} to cover every registered location"
            )));
        }
        let mut flat = Vec::with_capacity(n * n);
        for (i, row) in seconds.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(Error::InvalidInstance(format!("travel matrix cell ({i},{j}) = {v}")));
                }
                flat.push(if i == j { 0.0 } else { v });
            }
        }
        let mut index = HashMap::with_capacity(n);
        let (mut labels, mut points) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for (i, (label, p)) in locations.into_iter().enumerate() {
            // Co-located entries resolve to the first registration.
            index.entry(p.key()).or_insert(i);
            labels.push(label);
            points.push(p);
        }
        Ok(Self { labels, points, index, seconds: flat })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn points(&self) -> &[GeoPoint] {
        &self.points
    }

    pub fn index_of(&self, p: GeoPoint) -> Option<usize> {
        self.index.get(&p.key()).copied()
    }

    fn lookup(&self, p: GeoPoint, q: GeoPoint) -> Result<f64> {
        let i = self
            .index_of(p)
            .ok_or_else(|| Error::Lookup(format!("unregistered location {p:?}")))?;
        let j = self
            .index_of(q)
            .ok_or_else(|| Error::Lookup(format!("unregistered location {q:?}")))?;
        Ok(self.seconds[i * self.points.len() + j])
    }
}

impl TravelProvider {
    pub fn great_circle(speed_kmh: f64) -> Result<Self> {
        if !(speed_kmh > 0.0) || !speed_kmh.is_finite() {
            return Err(Error::InvalidInstance(format!("speed must be > 0, got {speed_kmh}")));
        }
        Ok(TravelProvider::GreatCircle { speed_kmh })
    }

    pub fn travel_time(&self, p: GeoPoint, q: GeoPoint) -> Result<f64> {
        match self {
            TravelProvider::GreatCircle { speed_kmh } => {
                if p == q {
                    return Ok(0.0);
                }
                Ok(haversine_m(p, q) / (speed_kmh / 3.6))
            }
            TravelProvider::Matrix(m) => m.lookup(p, q),
        }
    }

    /// Whether positions must coincide with registered locations.
    pub fn is_matrix(&self) -> bool {
        matches!(self, TravelProvider::Matrix(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub id: usize,
    pub location: GeoPoint,
}

/// Zones, stations, hospitals, travel times and demand of one city.
#[derive(Debug, Clone)]
pub struct CityInstance {
    pub zones: Vec<Zone>,
    pub stations: Vec<Site>,
    pub hospitals: Vec<Site>,
    pub travel: TravelProvider,
    pub rates: ArrivalRateTable,
    /// `station_zone_map[z]` is the position in `stations` of the station nearest to zone `z`.
    pub station_zone_map: Vec<usize>,
}

impl CityInstance {
    pub fn new(
        zones: Vec<Zone>,
        stations: Vec<Site>,
        hospitals: Vec<Site>,
        travel: TravelProvider,
        rates: ArrivalRateTable,
    ) -> Result<Self> {
        if stations.is_empty() {
            return Err(Error::InvalidInstance("at least one station is required".into()));
        }
        if hospitals.is_empty() {
            return Err(Error::InvalidInstance("at least one hospital is required".into()));
        }
        check_unique(zones.iter().map(|z| z.id), "zone")?;
        check_unique(stations.iter().map(|s| s.id), "station")?;
        check_unique(hospitals.iter().map(|h| h.id), "hospital")?;
        if zones.iter().enumerate().any(|(i, z)| z.id != i) {
            return Err(Error::InvalidInstance("zone ids must be 0..n in order".into()));
        }
        if rates.n_zones() != zones.len() {
            return Err(Error::InvalidInstance(format!(
                "rate table covers {} zones, instance has {}",
                rates.n_zones(),
                zones.len()
            )));
        }
        let mut station_zone_map = Vec::with_capacity(zones.len());
        for z in &zones {
            let mut best = (f64::INFINITY, 0usize);
            for (k, s) in stations.iter().enumerate() {
                let t = travel.travel_time(s.location, z.centroid)?;
                if t < best.0 {
                    best = (t, k);
                }
            }
            station_zone_map.push(best.1);
        }
        for h in &hospitals {
            travel.travel_time(h.location, h.location)?;
        }
        Ok(Self { zones, stations, hospitals, travel, rates, station_zone_map })
    }

    pub fn travel_time(&self, p: GeoPoint, q: GeoPoint) -> Result<f64> {
        self.travel.travel_time(p, q)
    }

    /// Position in `stations` of the station nearest to `p` (lowest index on ties).
    pub fn nearest_station(&self, p: GeoPoint) -> Result<usize> {
        nearest(&self.travel, p, &self.stations)
    }

    pub fn nearest_hospital(&self, p: GeoPoint) -> Result<usize> {
        nearest(&self.travel, p, &self.hospitals)
    }

    /// Zones whose nearest station is `station` (a position in `stations`).
    pub fn district(&self, station: usize) -> impl Iterator<Item = usize> + '_ {
        self.station_zone_map
            .iter()
            .enumerate()
            .filter(move |(_, &s)| s == station)
            .map(|(z, _)| z)
    }

    /// Where a call sampled at `sampled` inside `zone` is placed. With a travel
    /// matrix only registered points have travel times, so calls snap to the zone centroid.
    pub fn call_point(&self, zone: usize, sampled: GeoPoint) -> GeoPoint {
        if self.travel.is_matrix() {
            self.zones[zone].centroid
        } else {
            sampled
        }
    }
}

fn nearest(travel: &TravelProvider, p: GeoPoint, sites: &[Site]) -> Result<usize> {
    let mut best = (f64::INFINITY, 0usize);
    for (k, s) in sites.iter().enumerate() {
        let t = travel.travel_time(p, s.location)?;
        if t < best.0 {
            best = (t, k);
        }
    }
    Ok(best.1)
}

fn check_unique(ids: impl Iterator<Item = usize>, what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(Error::InvalidInstance(format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}
