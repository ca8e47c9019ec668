//! Cube planning and lazy assembly.
//!
//! A [`CubePlan`] fixes the grid, the time axis and, per (time, band) slice,
//! the ordered assets to mosaic. [`assemble`] opens every asset header and
//! returns a [`DataCube`] whose chunks are read on demand.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, SecondsFormat, Utc};
use ndarray::{s, Array2, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::cog::{CogError, CogHeader, CogReader, SampleType};
use crate::error::{Error, Result};
use crate::geomath::{self, BoundingBox, GeoEnvelope, HalfEdge, PixelGrid, ProjectedCoordinate};
use crate::request::CubeRequest;
use crate::stac::{AssetRef, SearchQuery, StacItem};

/// Largest default spatial chunk.
pub const MAX_SPATIAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub time: usize,
    pub band: usize,
    pub y: usize,
    pub x: usize,
}

impl ChunkSpec {
    pub fn default_for(edge: usize) -> Self {
        let spatial = edge.clamp(1, MAX_SPATIAL_CHUNK);
        ChunkSpec { time: 1, band: 1, y: spatial, x: spatial }
    }

    pub fn validate(&self, edge: usize) -> Result<()> {
        if self.time == 0 || self.band == 0 || self.y == 0 || self.x == 0 {
            return Err(Error::Validation(format!("chunk sizes must be positive: {self:?}")));
        }
        if self.y > edge || self.x > edge {
            return Err(Error::Validation(format!("spatial chunk exceeds the {edge}-pixel edge: {self:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.time, self.band, self.y, self.x]
    }
}

/// The geometry derived from a request: projection, snapped centre, square
/// box, grid, and the geographic envelope used for searching.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeGeometry {
    pub epsg: u32,
    /// Projected request centre before snapping.
    pub projected: ProjectedCoordinate,
    pub snapped: ProjectedCoordinate,
    pub half_edge: HalfEdge,
    pub bbox: BoundingBox,
    pub envelope: GeoEnvelope,
    pub grid: PixelGrid,
}

impl CubeGeometry {
    pub fn new(req: &CubeRequest) -> Result<Self> {
        req.validate()?;
        let epsg = geomath::select_utm_zone(req.center)?;
        let projected = geomath::project_to_utm(req.center, epsg)?;
        let x_r = geomath::snap_to_grid(projected.x, req.resolution)?;
        let y_r = geomath::snap_to_grid(projected.y, req.resolution)?;
        let half_edge = geomath::half_edge_size(req.edge_size, req.resolution)?;
        let bbox = geomath::bounding_box(x_r, y_r, half_edge.meters, epsg)?;
        let grid = geomath::build_pixel_grid(&bbox, req.resolution)?;
        let envelope = geomath::geographic_envelope(&bbox)?;
        Ok(CubeGeometry {
            epsg,
            projected,
            snapped: ProjectedCoordinate { x: x_r, y: y_r, epsg },
            half_edge,
            bbox,
            envelope,
            grid,
        })
    }

    /// Catalogue search covering this geometry.
    pub fn search_query(&self, req: &CubeRequest, limit: u32) -> SearchQuery {
        SearchQuery {
            collections: vec![req.collection.clone()],
            bbox: self.envelope,
            start: req.time_start,
            end: req.time_end,
            query: req.query.clone(),
            limit,
        }
    }

    pub fn realized_edge(&self) -> usize {
        self.grid.x_coords.len()
    }
}

/// One asset contributing to a (time, band) slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SliceAsset {
    pub item_id: String,
    pub asset: AssetRef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubePlan {
    pub request: CubeRequest,
    pub geometry: CubeGeometry,
    /// Strictly ascending, millisecond precision.
    pub timestamps: Vec<DateTime<Utc>>,
    /// `slices[t][b]`: assets in item-id order. Empty when no item of that
    /// timestamp carries the band.
    pub slices: Vec<Vec<Vec<SliceAsset>>>,
    pub chunks: ChunkSpec,
}

fn truncate_ms(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp_millis(t.timestamp_millis()).unwrap_or(t)
}

/// Lay out time and bands over `items`.
///
/// Items sharing a timestamp (at millisecond precision) form one time slice,
/// mosaicked in item-id order.
pub fn plan_cube(req: &CubeRequest, items: &[StacItem], chunks: Option<ChunkSpec>) -> Result<CubePlan> {
    let geometry = CubeGeometry::new(req)?;
    if items.is_empty() {
        let q = geometry.search_query(req, 100);
        return Err(Error::EmptySearch { query: q.to_body().to_string() });
    }
    for band in &req.bands {
        if !items.iter().any(|it| it.assets.contains_key(band)) {
            return Err(Error::BandMissing { band: band.clone() });
        }
    }
    let mut by_time: BTreeMap<DateTime<Utc>, Vec<&StacItem>> = BTreeMap::new();
    for it in items {
        by_time.entry(truncate_ms(it.datetime)).or_default().push(it);
    }
    let mut timestamps = Vec::with_capacity(by_time.len());
    let mut slices = Vec::with_capacity(by_time.len());
    for (t, mut group) in by_time {
        group.sort_by(|a, b| a.id.cmp(&b.id));
        let per_band = req
            .bands
            .iter()
            .map(|band| {
                group
                    .iter()
                    .filter_map(|it| {
                        it.assets.get(band).map(|a| SliceAsset { item_id: it.id.clone(), asset: a.clone() })
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>();
        for (band, assets) in req.bands.iter().zip(&per_band) {
            if assets.is_empty() {
                log::warn!("no item at {t} has band {band}; that slice stays empty");
            }
        }
        timestamps.push(t);
        slices.push(per_band);
    }
    let edge = geometry.realized_edge();
    let chunks = chunks.unwrap_or_else(|| ChunkSpec::default_for(edge));
    chunks.validate(edge)?;
    Ok(CubePlan { request: req.clone(), geometry, timestamps, slices, chunks })
}

impl CubePlan {
    pub fn shape(&self) -> [usize; 4] {
        let n = self.geometry.realized_edge();
        [self.timestamps.len(), self.request.bands.len(), n, n]
    }

    /// Number of chunks along each dimension.
    pub fn chunk_grid(&self) -> [usize; 4] {
        let shape = self.shape();
        let c = self.chunks.as_array();
        [0, 1, 2, 3].map(|i| shape[i].div_ceil(c[i]))
    }

    /// All chunk indices in row-major order.
    pub fn chunk_indices(&self) -> Vec<[usize; 4]> {
        let g = self.chunk_grid();
        let mut out = Vec::with_capacity(g.iter().product());
        for t in 0..g[0] {
            for b in 0..g[1] {
                for y in 0..g[2] {
                    for x in 0..g[3] {
                        out.push([t, b, y, x]);
                    }
                }
            }
        }
        out
    }

    /// Element ranges covered by chunk `idx`.
    pub fn chunk_ranges(&self, idx: [usize; 4]) -> Result<[std::ops::Range<usize>; 4]> {
        let g = self.chunk_grid();
        if idx.iter().zip(&g).any(|(i, n)| i >= n) {
            return Err(Error::Validation(format!("chunk index {idx:?} outside chunk grid {g:?}")));
        }
        let shape = self.shape();
        let c = self.chunks.as_array();
        Ok([0, 1, 2, 3].map(|i| idx[i] * c[i]..((idx[i] + 1) * c[i]).min(shape[i])))
    }

    /// Distinct asset hrefs in plan order.
    pub fn hrefs(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for a in self.slices.iter().flatten().flatten() {
            if seen.insert(a.asset.href.clone()) {
                out.push(a.asset.href.clone());
            }
        }
        out
    }
}

/// Global attributes stored with every cube. Names are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSet {
    pub collection: String,
    pub stac: String,
    pub epsg: u32,
    pub resolution: f64,
    pub edge_size: u32,
    pub central_lat: f64,
    pub central_lon: f64,
    pub central_y: f64,
    pub central_x: f64,
    pub time_coverage_start: String,
    pub time_coverage_end: String,
}

/// Attribute keys in their canonical order.
pub const ATTRIBUTE_KEYS: [&str; 11] = [
    "collection",
    "stac",
    "epsg",
    "resolution",
    "edge_size",
    "central_lat",
    "central_lon",
    "central_y",
    "central_x",
    "time_coverage_start",
    "time_coverage_end",
];

impl AttributeSet {
    pub fn new(req: &CubeRequest, epsg: u32, projected: &ProjectedCoordinate) -> Self {
        let ts = |t: &DateTime<Utc>| t.to_rfc3339_opts(SecondsFormat::AutoSi, true);
        AttributeSet {
            collection: req.collection.clone(),
            stac: req.stac_endpoint.clone(),
            epsg,
            resolution: req.resolution,
            edge_size: req.edge_size,
            central_lat: req.center.lat,
            central_lon: req.center.lon,
            central_y: projected.y,
            central_x: projected.x,
            time_coverage_start: ts(&req.time_start),
            time_coverage_end: ts(&req.time_end),
        }
    }

    pub fn to_map(&self) -> Map<String, Value> {
        match serde_json::to_value(self) {
            Ok(Value::Object(m)) => m,
            _ => Map::new(),
        }
    }
}

/// Smallest type in `U8 < I8 < U16 < I16 < U32 < I32 < F32 < F64` that holds
/// every input type exactly.
pub fn promote(types: &[SampleType]) -> SampleType {
    const ORDER: [SampleType; 8] = [
        SampleType::U8,
        SampleType::I8,
        SampleType::U16,
        SampleType::I16,
        SampleType::U32,
        SampleType::I32,
        SampleType::F32,
        SampleType::F64,
    ];
    ORDER.into_iter().find(|&cand| types.iter().all(|t| t.fits_in(cand))).unwrap_or(SampleType::F64)
}

/// Fill value for masked cells: NaN for float cubes, 0 otherwise.
pub fn fill_value(dtype: SampleType) -> f64 {
    if dtype.is_float() {
        f64::NAN
    } else {
        0.0
    }
}

/// One materialized block. `values` holds the fill value where `mask` is false.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub index: [usize; 4],
    /// Element offset of the block within the cube.
    pub origin: [usize; 4],
    pub values: Array4<f64>,
    pub mask: Array4<bool>,
}

/// The distance coordinate: values plus the centre it is measured from.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCoordinate {
    pub name: &'static str,
    pub values: Array2<f64>,
    pub center: ProjectedCoordinate,
}

pub struct DataCube {
    plan: CubePlan,
    reader: Arc<CogReader>,
    headers: HashMap<String, Arc<CogHeader>>,
    dtype: SampleType,
    fill: f64,
    attrs: Option<AttributeSet>,
    distance: Option<DistanceCoordinate>,
    cache: Option<Mutex<HashMap<[usize; 4], Arc<Chunk>>>>,
}

impl std::fmt::Debug for DataCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DataCube")
            .field("shape", &self.shape())
            .field("dtype", &self.dtype)
            .field("chunks", &self.plan.chunks)
            .finish()
    }
}

/// Open every asset header of `plan` and build a lazy cube with attributes
/// and the distance coordinate attached. No tile data is read.
pub fn assemble(plan: CubePlan, reader: Arc<CogReader>) -> Result<DataCube> {
    let hrefs = plan.hrefs();
    let opened: Vec<(String, std::result::Result<CogHeader, CogError>)> =
        hrefs.par_iter().map(|h| (h.clone(), reader.open_remote(h))).collect();
    let mut headers = HashMap::new();
    for (href, h) in opened {
        headers.insert(href, Arc::new(h?));
    }
    let mut types: Vec<SampleType> = headers.values().map(|h| h.sample_type()).collect();
    types.sort();
    types.dedup();
    let dtype = promote(&types);
    let req = plan.request.clone();
    let geometry = plan.geometry.clone();
    let cube = DataCube {
        plan,
        reader,
        headers,
        dtype,
        fill: fill_value(dtype),
        attrs: None,
        distance: None,
        cache: Some(Mutex::new(HashMap::new())),
    };
    let cube = write_attributes(cube, &req, &geometry.projected);
    attach_distance_coordinate(cube, &geometry.grid, &geometry.snapped)
}

pub fn write_attributes(mut cube: DataCube, req: &CubeRequest, proj: &ProjectedCoordinate) -> DataCube {
    cube.attrs = Some(AttributeSet::new(req, cube.plan.geometry.epsg, proj));
    cube
}

pub fn attach_distance_coordinate(
    mut cube: DataCube,
    grid: &PixelGrid,
    center: &ProjectedCoordinate,
) -> Result<DataCube> {
    let [_, _, ny, nx] = cube.shape();
    if grid.shape() != (ny, nx) {
        return Err(Error::Validation(format!(
            "distance grid {:?} does not match cube spatial shape ({ny}, {nx})",
            grid.shape()
        )));
    }
    let values = geomath::distance_from_center_grid(grid, center)?;
    cube.distance = Some(DistanceCoordinate { name: geomath::DISTANCE_COORD, values, center: *center });
    Ok(cube)
}

impl DataCube {
    pub fn plan(&self) -> &CubePlan {
        &self.plan
    }

    pub fn shape(&self) -> [usize; 4] {
        self.plan.shape()
    }

    pub fn dims(&self) -> [&'static str; 4] {
        ["time", "band", "y", "x"]
    }

    pub fn dtype(&self) -> SampleType {
        self.dtype
    }

    pub fn fill_value(&self) -> f64 {
        self.fill
    }

    pub fn times(&self) -> &[DateTime<Utc>] {
        &self.plan.timestamps
    }

    pub fn bands(&self) -> &[String] {
        &self.plan.request.bands
    }

    pub fn x(&self) -> &[f64] {
        &self.plan.geometry.grid.x_coords
    }

    pub fn y(&self) -> &[f64] {
        &self.plan.geometry.grid.y_coords
    }

    pub fn attrs(&self) -> &AttributeSet {
        self.attrs.as_ref().expect("attributes are attached by assemble")
    }

    pub fn distance(&self) -> &DistanceCoordinate {
        self.distance.as_ref().expect("distance is attached by assemble")
    }

    pub fn header(&self, href: &str) -> Option<&Arc<CogHeader>> {
        self.headers.get(href)
    }

    /// Disable the chunk cache, e.g. when streaming a large cube to disk.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    /// Compressed tile bytes a full materialization would fetch.
    pub fn estimated_tile_bytes(&self) -> Result<u64> {
        let grid = &self.plan.geometry.grid;
        let mut total = 0;
        for href in self.plan.hrefs() {
            let h = &self.headers[&href];
            total += crate::cog::plan_window(h, &href, grid)?.tile_bytes(h);
        }
        Ok(total)
    }

    /// Mosaic one (time, band) slice over a sub-grid, first valid value wins.
    fn read_slice(&self, t: usize, b: usize, grid: &PixelGrid) -> Result<(Array2<f64>, Array2<bool>)> {
        let shape = grid.shape();
        let mut values = Array2::from_elem(shape, self.fill);
        let mut mask = Array2::from_elem(shape, false);
        let assets = &self.plan.slices[t][b];
        let mut failures = Vec::new();
        let mut attempted = 0;
        for sa in assets {
            if mask.iter().all(|&m| m) {
                break;
            }
            attempted += 1;
            let header = &self.headers[&sa.asset.href];
            match self.reader.read_window(header, &sa.asset.href, &sa.asset.band, grid, self.fill) {
                Ok(w) => {
                    ndarray::Zip::from(&mut values).and(&mut mask).and(&w.values).and(&w.mask).for_each(
                        |v, m, &wv, &wm| {
                            if !*m && wm {
                                *v = wv;
                                *m = true;
                            }
                        },
                    );
                }
                Err(e @ CogError::Transport(_)) => {
                    log::warn!("{} ({}): {e}", sa.item_id, sa.asset.band);
                    failures.push(e);
                }
                Err(e) => return Err(e.into()),
            }
        }
        if attempted > 0 && failures.len() == attempted {
            let first = failures.swap_remove(0);
            return Err(Error::Chunk {
                time: t,
                band: self.plan.request.bands[b].clone(),
                source: Box::new(first.into()),
            });
        }
        Ok((values, mask))
    }

    /// Read chunk `idx`. Pure in (plan, idx); cached when the cache is on.
    pub fn chunk(&self, idx: [usize; 4]) -> Result<Arc<Chunk>> {
        if let Some(cache) = &self.cache {
            if let Some(c) = cache.lock().expect("chunk cache poisoned").get(&idx) {
                return Ok(Arc::clone(c));
            }
        }
        let chunk = Arc::new(self.materialize_chunk(idx)?);
        if let Some(cache) = &self.cache {
            cache.lock().expect("chunk cache poisoned").insert(idx, Arc::clone(&chunk));
        }
        Ok(chunk)
    }

    /// Read chunk `idx`, bypassing the cache.
    pub fn materialize_chunk(&self, idx: [usize; 4]) -> Result<Chunk> {
        let [tr, br, yr, xr] = self.plan.chunk_ranges(idx)?;
        let grid = self.plan.geometry.grid.window(yr.clone(), xr.clone());
        let shape = (tr.len(), br.len(), yr.len(), xr.len());
        let mut values = Array4::from_elem(shape, self.fill);
        let mut mask = Array4::from_elem(shape, false);
        for (ti, t) in tr.clone().enumerate() {
            for (bi, b) in br.clone().enumerate() {
                let (v, m) = self.read_slice(t, b, &grid)?;
                values.slice_mut(s![ti, bi, .., ..]).assign(&v);
                mask.slice_mut(s![ti, bi, .., ..]).assign(&m);
            }
        }
        Ok(Chunk { index: idx, origin: [tr.start, br.start, yr.start, xr.start], values, mask })
    }

    /// Read every chunk (in parallel) into full arrays.
    pub fn materialize(&self) -> Result<(Array4<f64>, Array4<bool>)> {
        let shape = self.shape();
        let shape = (shape[0], shape[1], shape[2], shape[3]);
        let chunks: Vec<Arc<Chunk>> =
            self.plan.chunk_indices().into_par_iter().map(|i| self.chunk(i)).collect::<Result<_>>()?;
        let mut values = Array4::from_elem(shape, self.fill);
        let mut mask = Array4::from_elem(shape, false);
        for c in chunks {
            let [t, b, y, x] = c.origin;
            let (nt, nb, ny, nx) = c.values.dim();
            values.slice_mut(s![t..t + nt, b..b + nb, y..y + ny, x..x + nx]).assign(&c.values);
            mask.slice_mut(s![t..t + nt, b..b + nb, y..y + ny, x..x + nx]).assign(&c.mask);
        }
        Ok((values, mask))
    }

    /// Full spatial slice for one time step and band.
    pub fn slice(&self, t: usize, b: usize) -> Result<(Array2<f64>, Array2<bool>)> {
        let [nt, nb, _, _] = self.shape();
        if t >= nt || b >= nb {
            return Err(Error::Validation(format!("slice ({t}, {b}) outside cube of {nt} times × {nb} bands")));
        }
        self.read_slice(t, b, &self.plan.geometry.grid)
    }
}
