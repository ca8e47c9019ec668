//! Geodesy and grid arithmetic: UTM zone selection and projection, grid
//! snapping, the square bounding box, pixel-centre grids and the
//! distance-from-centre field.
//!
//! Everything here is a pure function over immutable values.

mod tmerc;

use std::sync::OnceLock;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use tmerc::{Krueger, FALSE_EASTING, FALSE_NORTHING_SOUTH, UTM_SCALE};

/// Name of the distance coordinate stored alongside the cube.
pub const DISTANCE_COORD: &str = "cubo:distance_from_center";

/// Highest absolute latitude covered by UTM.
pub const UTM_MAX_LAT: f64 = 84.0;

/// Longitude offset from the central meridian past which projection fails.
const MAX_ZONE_OFFSET_DEG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("invalid coordinate lat={lat}, lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("latitude {0} is in a polar region outside UTM coverage (|lat| > 84)")]
    PolarRegion(f64),
    #[error("EPSG:{0} is not a WGS84 UTM zone")]
    InvalidEpsg(u32),
    #[error("longitude {lon} is {offset:.3}° from the central meridian of EPSG:{epsg}")]
    OutOfZone { lon: f64, epsg: u32, offset: f64 },
    #[error("non-finite projected coordinate ({x}, {y})")]
    NonFinite { x: f64, y: f64 },
    #[error("resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("edge size must be at least 1 pixel, got {0}")]
    InvalidEdgeSize(u32),
    #[error("half edge must be positive, got {0}")]
    DegenerateBox(f64),
    #[error("box width {width} m is not a whole number of {resolution} m pixels")]
    NonDivisible { width: f64, resolution: f64 },
    #[error("bounding box crosses the antimeridian")]
    AntimeridianCrossing,
    #[error("CRS mismatch: grid is EPSG:{grid}, coordinate is EPSG:{coord}")]
    CrsMismatch { grid: u32, coord: u32 },
}

pub type Result<T> = std::result::Result<T, GeoError>;

fn krueger() -> &'static Krueger {
    static K: OnceLock<Krueger> = OnceLock::new();
    K.get_or_init(Krueger::wgs84)
}

/// Latitude/longitude in degrees on WGS84.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoCoordinate {
    pub lat: f64,
    pub lon: f64,
}

impl GeoCoordinate {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() || !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(GeoError::InvalidCoordinate { lat, lon });
        }
        Ok(GeoCoordinate { lat, lon })
    }
}

/// UTM zone decoded from an EPSG code in 32601–32660 / 32701–32760.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UtmZone {
    pub zone: u32,
    pub north: bool,
}

impl UtmZone {
    pub fn from_epsg(epsg: u32) -> Result<Self> {
        match epsg {
            32601..=32660 => Ok(UtmZone { zone: epsg - 32600, north: true }),
            32701..=32760 => Ok(UtmZone { zone: epsg - 32700, north: false }),
            _ => Err(GeoError::InvalidEpsg(epsg)),
        }
    }

    pub fn epsg(self) -> u32 {
        if self.north {
            32600 + self.zone
        } else {
            32700 + self.zone
        }
    }

    pub fn central_meridian(self) -> f64 {
        self.zone as f64 * 6.0 - 183.0
    }

    fn false_northing(self) -> f64 {
        if self.north {
            0.0
        } else {
            FALSE_NORTHING_SOUTH
        }
    }
}

/// Easting/northing in metres in a UTM zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedCoordinate {
    pub x: f64,
    pub y: f64,
    pub epsg: u32,
}

impl ProjectedCoordinate {
    pub fn new(x: f64, y: f64, epsg: u32) -> Result<Self> {
        UtmZone::from_epsg(epsg)?;
        if !x.is_finite() || !y.is_finite() {
            return Err(GeoError::NonFinite { x, y });
        }
        Ok(ProjectedCoordinate { x, y, epsg })
    }

    /// Easting in (0, 1 000 000) and northing in [0, 10 000 000].
    pub fn within_zone_limits(&self) -> bool {
        self.x > 0.0 && self.x < 1_000_000.0 && (0.0..=10_000_000.0).contains(&self.y)
    }
}

/// EPSG code of the standard 6° UTM zone containing `c`. Norway/Svalbard
/// exceptions are not applied.
pub fn select_utm_zone(c: GeoCoordinate) -> Result<u32> {
    if c.lat.abs() > UTM_MAX_LAT {
        return Err(GeoError::PolarRegion(c.lat));
    }
    let zone = (((c.lon + 180.0) / 6.0).floor() as u32 + 1).min(60);
    Ok(UtmZone { zone, north: c.lat >= 0.0 }.epsg())
}

fn wrap_degrees(d: f64) -> f64 {
    let w = (d + 180.0).rem_euclid(360.0) - 180.0;
    if w == -180.0 && d > 0.0 {
        180.0
    } else {
        w
    }
}

/// Forward UTM projection. Points more than 6° from the central meridian are
/// projected with a warning; more than 10° is an error.
pub fn project_to_utm(c: GeoCoordinate, epsg: u32) -> Result<ProjectedCoordinate> {
    let zone = UtmZone::from_epsg(epsg)?;
    let c = GeoCoordinate::new(c.lat, c.lon)?;
    let dlam = wrap_degrees(c.lon - zone.central_meridian());
    if dlam.abs() > MAX_ZONE_OFFSET_DEG {
        return Err(GeoError::OutOfZone { lon: c.lon, epsg, offset: dlam.abs() });
    }
    if dlam.abs() > 6.0 {
        log::warn!("longitude {} is {:.2}° from the central meridian of EPSG:{epsg}", c.lon, dlam.abs());
    }
    let (x, y) = krueger().forward(c.lat.to_radians(), dlam.to_radians());
    ProjectedCoordinate::new(FALSE_EASTING + UTM_SCALE * x, zone.false_northing() + UTM_SCALE * y, epsg)
}

/// Inverse UTM projection.
pub fn inverse_project(p: ProjectedCoordinate) -> Result<GeoCoordinate> {
    let zone = UtmZone::from_epsg(p.epsg)?;
    if !p.x.is_finite() || !p.y.is_finite() {
        return Err(GeoError::NonFinite { x: p.x, y: p.y });
    }
    let x = (p.x - FALSE_EASTING) / UTM_SCALE;
    let y = (p.y - zone.false_northing()) / UTM_SCALE;
    let (phi, dlam) = krueger().inverse(x, y);
    let lat = phi.to_degrees().clamp(-90.0, 90.0);
    let lon = wrap_degrees(zone.central_meridian() + dlam.to_degrees());
    GeoCoordinate::new(lat, lon)
}

/// Align a coordinate to the nearest multiple of `r`: `r·⌊i/r + 0.5⌋`.
/// Exact halves round up, including for negative values.
pub fn snap_to_grid(i: f64, r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(GeoError::InvalidResolution(r));
    }
    if !i.is_finite() {
        return Err(GeoError::NonFinite { x: i, y: i });
    }
    Ok(r * (i / r + 0.5).floor())
}

/// Half the box side in whole metres plus the pixel edge it realizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfEdge {
    pub meters: f64,
    pub requested_edge: u32,
    pub realized_edge: usize,
}

impl HalfEdge {
    pub fn is_adjusted(&self) -> bool {
        self.realized_edge != self.requested_edge as usize
    }
}

/// `s_h = ⌊s·r/2 + 0.5⌋`. The realized edge `round(2·s_h / r)` can differ
/// from `s` (e.g. `s = 3, r = 1` gives 4 px).
pub fn half_edge_size(s: u32, r: f64) -> Result<HalfEdge> {
    if s == 0 {
        return Err(GeoError::InvalidEdgeSize(s));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(GeoError::InvalidResolution(r));
    }
    let meters = (f64::from(s) * r / 2.0 + 0.5).floor();
    let realized_edge = (2.0 * meters / r).round() as usize;
    if realized_edge as u32 != s {
        log::warn!("edge size {s} px at {r} m realizes {realized_edge} px");
    }
    Ok(HalfEdge { meters, requested_edge: s, realized_edge })
}

/// Square projected box. `(x_min, y_max)` is the upper-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub epsg: u32,
    /// Some easting falls outside (0, 1 000 000).
    pub zone_overflow: bool,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)
    }
}

fn mat2_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Box of side `2·s_h` centred on the snapped pair:
///
/// ```text
/// | x_min x_max |   | x_r 1 |   |  1    1  |
/// | y_min y_max | = | y_r 1 | · | -s_h  s_h |
/// ```
pub fn bounding_box(x_r: f64, y_r: f64, s_h: f64, epsg: u32) -> Result<BoundingBox> {
    UtmZone::from_epsg(epsg)?;
    if !(s_h > 0.0 && s_h.is_finite()) {
        return Err(GeoError::DegenerateBox(s_h));
    }
    if !x_r.is_finite() || !y_r.is_finite() {
        return Err(GeoError::NonFinite { x: x_r, y: y_r });
    }
    let m = mat2_mul([[x_r, 1.0], [y_r, 1.0]], [[1.0, 1.0], [-s_h, s_h]]);
    let (x_min, x_max, y_min, y_max) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    let zone_overflow = x_min <= 0.0 || x_max >= 1_000_000.0;
    if zone_overflow {
        log::warn!("box easting [{x_min}, {x_max}] leaves the EPSG:{epsg} zone");
    }
    Ok(BoundingBox { x_min, x_max, y_min, y_max, epsg, zone_overflow })
}

/// Geographic bbox in STAC order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoEnvelope {
    pub lon_min: f64,
    pub lat_min: f64,
    pub lon_max: f64,
    pub lat_max: f64,
}

impl GeoEnvelope {
    pub fn as_array(&self) -> [f64; 4] {
        [self.lon_min, self.lat_min, self.lon_max, self.lat_max]
    }

    pub fn contains(&self, c: GeoCoordinate) -> bool {
        (self.lon_min..=self.lon_max).contains(&c.lon) && (self.lat_min..=self.lat_max).contains(&c.lat)
    }

    pub fn intersects(&self, other: &GeoEnvelope) -> bool {
        self.lon_min <= other.lon_max
            && other.lon_min <= self.lon_max
            && self.lat_min <= other.lat_max
            && other.lat_min <= self.lat_max
    }
}

const ENVELOPE_SEGMENT_M: f64 = 250.0;
const ENVELOPE_PAD_DEG: f64 = 1e-6;

/// Geographic envelope of a projected box.
///
/// Box edges are curves in geographic space, so corners alone can
/// under-cover; the boundary is sampled every 250 m (extremes of a conformal
/// map lie on the boundary) and padded by 1e-6°.
pub fn geographic_envelope(b: &BoundingBox) -> Result<GeoEnvelope> {
    let steps = ((b.width().max(b.height()) / ENVELOPE_SEGMENT_M).ceil() as usize).clamp(4, 8192);
    let mut env = GeoEnvelope {
        lon_min: f64::INFINITY,
        lat_min: f64::INFINITY,
        lon_max: f64::NEG_INFINITY,
        lat_max: f64::NEG_INFINITY,
    };
    for i in 0..=steps {
        let f = i as f64 / steps as f64;
        let xs = b.x_min + b.width() * f;
        let ys = b.y_min + b.height() * f;
        for (x, y) in [(xs, b.y_min), (xs, b.y_max), (b.x_min, ys), (b.x_max, ys)] {
            let g = inverse_project(ProjectedCoordinate { x, y, epsg: b.epsg })?;
            env.lon_min = env.lon_min.min(g.lon);
            env.lon_max = env.lon_max.max(g.lon);
            env.lat_min = env.lat_min.min(g.lat);
            env.lat_max = env.lat_max.max(g.lat);
        }
    }
    if env.lon_max - env.lon_min > 180.0 {
        return Err(GeoError::AntimeridianCrossing);
    }
    Ok(GeoEnvelope {
        lon_min: env.lon_min - ENVELOPE_PAD_DEG,
        lat_min: (env.lat_min - ENVELOPE_PAD_DEG).max(-90.0),
        lon_max: env.lon_max + ENVELOPE_PAD_DEG,
        lat_max: (env.lat_max + ENVELOPE_PAD_DEG).min(90.0),
    })
}

/// Pixel-centre coordinates of the cube's spatial grid. `y_coords` descend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PixelGrid {
    pub x_coords: Vec<f64>,
    pub y_coords: Vec<f64>,
    pub resolution: f64,
    pub epsg: u32,
}

impl PixelGrid {
    /// (rows, cols)
    pub fn shape(&self) -> (usize, usize) {
        (self.y_coords.len(), self.x_coords.len())
    }

    /// Sub-grid covering rows `ys` and columns `xs`.
    pub fn window(&self, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>) -> PixelGrid {
        PixelGrid {
            x_coords: self.x_coords[xs].to_vec(),
            y_coords: self.y_coords[ys].to_vec(),
            resolution: self.resolution,
            epsg: self.epsg,
        }
    }
}

/// Pixel centres at `x_min + r/2 + k·r` and `y_max − r/2 − j·r`.
pub fn build_pixel_grid(b: &BoundingBox, r: f64) -> Result<PixelGrid> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(GeoError::InvalidResolution(r));
    }
    let nf = b.width() / r;
    let n = nf.round();
    if n < 1.0 || (nf - n).abs() > 1e-9 * n.max(1.0) || (b.height() - b.width()).abs() > 1e-9 * b.width() {
        return Err(GeoError::NonDivisible { width: b.width(), resolution: r });
    }
    let n = n as usize;
    Ok(PixelGrid {
        x_coords: (0..n).map(|k| b.x_min + r / 2.0 + k as f64 * r).collect(),
        y_coords: (0..n).map(|j| b.y_max - r / 2.0 - j as f64 * r).collect(),
        resolution: r,
        epsg: b.epsg,
    })
}

/// Euclidean distance in projected metres from each pixel centre to `center`,
/// shaped (y, x).
pub fn distance_from_center_grid(g: &PixelGrid, center: &ProjectedCoordinate) -> Result<Array2<f64>> {
    if g.epsg != center.epsg {
        return Err(GeoError::CrsMismatch { grid: g.epsg, coord: center.epsg });
    }
    let (rows, cols) = g.shape();
    Ok(Array2::from_shape_fn((rows, cols), |(j, k)| (g.x_coords[k] - center.x).hypot(g.y_coords[j] - center.y)))
}
