//! Brute-force reference cube. Shares no code with the library: grid
//! arithmetic, projection, overview choice and nearest-neighbour lookup are
//! all re-derived here from the fixture's closed-form value functions.

use std::collections::BTreeMap;

use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{json, Map, Value};

use crate::fixture::{FixtureSpec, ItemSpec};
use crate::projection;
use crate::tiff_writer::Dtype;

#[derive(Debug, Clone)]
pub struct OracleRequest {
    pub lat: f64,
    pub lon: f64,
    pub edge_size: u32,
    pub resolution: f64,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub bands: Vec<String>,
    pub endpoint: String,
}

#[derive(Debug, Clone)]
pub struct OracleCube {
    /// (time, band, y, x)
    pub shape: [usize; 4],
    /// Row-major; masked cells hold NaN.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub times: Vec<DateTime<Utc>>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// (y, x) row-major.
    pub distance: Vec<f64>,
    pub epsg: u32,
    pub attrs: Map<String, Value>,
}

impl OracleCube {
    pub fn index(&self, t: usize, b: usize, j: usize, k: usize) -> usize {
        ((t * self.shape[1] + b) * self.shape[2] + j) * self.shape[3] + k
    }
}

/// Index of the source pixel whose centre is nearest to `u` (in pixel units
/// from the raster edge), searching all `n` centres exhaustively. Ties go to
/// the smaller index. `None` when `u` lies outside the closed footprint.
fn nearest_centre(u: f64, n: u32) -> Option<u32> {
    if !(0.0..=n as f64).contains(&u) {
        return None;
    }
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    // Only centres within a couple of pixels can win; scan that window.
    let lo = (u.floor() as i64 - 2).max(0) as u32;
    let hi = ((u.floor() as i64 + 2).min(n as i64 - 1)).max(0) as u32;
    for i in lo..=hi {
        let d = (u - (i as f64 + 0.5)).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    Some(best)
}

fn sample(spec: &FixtureSpec, item: &ItemSpec, band_idx: usize, x: f64, y: f64, target_res: f64) -> Option<f64> {
    let band = &spec.bands[band_idx];
    // Finest level whose pixel is no larger than the target resolution.
    let mut level = 0u32;
    for k in (0..=spec.overviews).rev() {
        if spec.resolution * f64::from(1u32 << k) <= target_res {
            level = k;
            break;
        }
    }
    let f = 1u32 << level;
    let ps = spec.resolution * f as f64;
    let w = spec.width.div_ceil(f);
    let h = spec.height.div_ceil(f);
    let c = nearest_centre((x - item.origin_x) / ps, w)?;
    let r = nearest_centre((item.origin_y - y) / ps, h)?;
    let v = band.value.eval(c * f, r * f, item.t);
    let dtype = Dtype::parse(&band.dtype).ok()?;
    let v = if dtype == Dtype::Float32 { (v as f32) as f64 } else { v };
    if band.nodata == Some(v) {
        return None;
    }
    Some(v)
}

fn rfc3339(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub fn oracle_cube(spec: &FixtureSpec, req: &OracleRequest) -> OracleCube {
    let epsg = projection::utm_epsg(req.lat, req.lon);
    let (cx, cy) = projection::forward(req.lat, req.lon, epsg);
    let r = req.resolution;
    let xr = r * (cx / r + 0.5).floor();
    let yr = r * (cy / r + 0.5).floor();
    let half = (f64::from(req.edge_size) * r / 2.0 + 0.5).floor();
    let (x_min, y_max) = (xr - half, yr + half);
    let n = (2.0 * half / r).round() as usize;
    let x: Vec<f64> = (0..n).map(|k| x_min + r / 2.0 + k as f64 * r).collect();
    let y: Vec<f64> = (0..n).map(|j| y_max - r / 2.0 - j as f64 * r).collect();

    let env = projection::envelope(xr - half, yr - half, xr + half, yr + half, epsg);
    let mut by_time: BTreeMap<i64, Vec<&ItemSpec>> = BTreeMap::new();
    for item in &spec.items {
        if item.datetime < req.start || item.datetime > req.end {
            continue;
        }
        let b = spec.item_bbox(item);
        if b[0] > env[2] || b[2] < env[0] || b[1] > env[3] || b[3] < env[1] {
            continue;
        }
        by_time.entry(item.datetime.timestamp_millis()).or_default().push(item);
    }
    for items in by_time.values_mut() {
        items.sort_by(|a, b| a.id.cmp(&b.id));
    }

    let band_idx: Vec<usize> = req
        .bands
        .iter()
        .map(|name| spec.bands.iter().position(|b| &b.name == name).expect("band in fixture"))
        .collect();
    let shape = [by_time.len(), band_idx.len(), n, n];
    let total = shape.iter().product();
    let mut values = vec![f64::NAN; total];
    let mut valid = vec![false; total];
    for (t, items) in by_time.values().enumerate() {
        for (b, &bi) in band_idx.iter().enumerate() {
            for (j, &yy) in y.iter().enumerate() {
                for (k, &xx) in x.iter().enumerate() {
                    let idx = ((t * shape[1] + b) * n + j) * n + k;
                    if let Some(v) = items.iter().find_map(|it| sample(spec, it, bi, xx, yy, r)) {
                        values[idx] = v;
                        valid[idx] = true;
                    }
                }
            }
        }
    }

    let mut distance = Vec::with_capacity(n * n);
    for &yy in &y {
        for &xx in &x {
            distance.push(((xx - xr).powi(2) + (yy - yr).powi(2)).sqrt());
        }
    }

    let attrs = json!({
        "collection": spec.collection,
        "stac": req.endpoint,
        "epsg": epsg,
        "resolution": req.resolution,
        "edge_size": req.edge_size,
        "central_lat": req.lat,
        "central_lon": req.lon,
        "central_y": cy,
        "central_x": cx,
        "time_coverage_start": rfc3339(req.start),
        "time_coverage_end": rfc3339(req.end),
    });
    let times = by_time.keys().map(|&ms| DateTime::from_timestamp_millis(ms).unwrap()).collect();
    OracleCube {
        shape,
        values,
        valid,
        times,
        x,
        y,
        distance,
        epsg,
        attrs: attrs.as_object().cloned().unwrap_or_default(),
    }
}
