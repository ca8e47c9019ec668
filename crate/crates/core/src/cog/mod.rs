//! Cloud Optimized GeoTIFF access over HTTP range requests.
//!
//! A header is read from the first 64 KiB of the file (extended when the
//! directories run longer). A window read maps every target pixel centre to
//! a source pixel at the chosen overview, fetches only the tiles those pixels
//! fall in, and samples them by nearest neighbour.

pub mod codec;
pub mod tiff;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};

use ndarray::Array2;

use crate::geomath::{self, GeoCoordinate, GeoError, PixelGrid, ProjectedCoordinate};
use crate::http::{HttpClient, HttpError, TransferKind};

pub use tiff::{ByteOrder, CogHeader, GeoTransform, Ifd, SampleType, TiffError};

/// EPSG code of WGS84 geographic coordinates.
pub const EPSG_WGS84: u32 = 4326;
/// Metres per degree used to compare a metric target resolution with a
/// geographic source.
const METERS_PER_DEGREE: f64 = 111_320.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CogError {
    #[error(transparent)]
    Transport(#[from] HttpError),
    #[error("{href}: {source}")]
    Header { href: String, source: TiffError },
    #[error("{href}: tile {tile} of level {level}: {source}")]
    Codec { href: String, level: usize, tile: usize, source: codec::CodecError },
    #[error("{href}: source CRS EPSG:{epsg} is not supported")]
    UnsupportedCrs { href: String, epsg: u32 },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

pub type Result<T> = std::result::Result<T, CogError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReaderOptions {
    /// Bytes requested for the first header read.
    pub header_bytes: u64,
    /// Byte ranges separated by less than this are fetched together.
    pub coalesce_gap: u64,
    /// Concurrent range requests across all reads through one reader.
    pub max_in_flight: usize,
}

impl Default for ReaderOptions {
    fn default() -> Self {
        ReaderOptions { header_bytes: 64 * 1024, coalesce_gap: 8 * 1024, max_in_flight: 8 }
    }
}

/// One band sampled onto a target grid. `mask` is true where `values` holds
/// source data; elsewhere `values` holds the fill value.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterWindow {
    pub values: Array2<f64>,
    pub mask: Array2<bool>,
    pub grid: PixelGrid,
    pub band: String,
    pub source_epsg: u32,
}

/// Source pixel index whose centre is nearest to `u`, a coordinate in pixel
/// units from the raster edge. Ties go to the smaller index. `None` outside
/// the closed footprint `[0, n]`.
pub fn nearest_index(u: f64, n: u32) -> Option<u32> {
    if n == 0 || !(0.0..=f64::from(n)).contains(&u) {
        return None;
    }
    Some((u.ceil() - 1.0).clamp(0.0, f64::from(n - 1)) as u32)
}

impl GeoTransform {
    /// (column, row) of the pixel nearest to `(x, y)` in a `width × height`
    /// raster.
    pub fn pixel_at(&self, x: f64, y: f64, width: u32, height: u32) -> Option<(u32, u32)> {
        let c = nearest_index((x - self.origin_x) / self.pixel_width, width)?;
        let r = nearest_index((self.origin_y - y) / self.pixel_height, height)?;
        Some((c, r))
    }
}

fn is_utm(epsg: u32) -> bool {
    geomath::UtmZone::from_epsg(epsg).is_ok()
}

/// Target pixel centres expressed in the source CRS, row-major over `grid`.
/// Points that cannot be transformed are `None`.
fn source_points(grid: &PixelGrid, src_epsg: u32, href: &str) -> Result<Vec<Option<(f64, f64)>>> {
    let mut pts = Vec::with_capacity(grid.y_coords.len() * grid.x_coords.len());
    if src_epsg == grid.epsg {
        for &y in &grid.y_coords {
            pts.extend(grid.x_coords.iter().map(|&x| Some((x, y))));
        }
        return Ok(pts);
    }
    if !is_utm(src_epsg) && src_epsg != EPSG_WGS84 {
        return Err(CogError::UnsupportedCrs { href: href.to_string(), epsg: src_epsg });
    }
    for &y in &grid.y_coords {
        for &x in &grid.x_coords {
            let geo = geomath::inverse_project(ProjectedCoordinate { x, y, epsg: grid.epsg })?;
            pts.push(if src_epsg == EPSG_WGS84 {
                Some((geo.lon, geo.lat))
            } else {
                let c = GeoCoordinate { lat: geo.lat, lon: geo.lon };
                geomath::project_to_utm(c, src_epsg).ok().map(|p| (p.x, p.y))
            });
        }
    }
    Ok(pts)
}

/// Target resolution in source CRS units.
fn target_resolution(grid: &PixelGrid, src_epsg: u32) -> f64 {
    if src_epsg == EPSG_WGS84 && grid.epsg != EPSG_WGS84 {
        grid.resolution / METERS_PER_DEGREE
    } else {
        grid.resolution
    }
}

/// Which tiles a window needs and where each target pixel reads from.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPlan {
    pub level: usize,
    /// Per target pixel (row-major): tile index and sample offset in it.
    pub lookups: Vec<Option<(usize, usize)>>,
    /// Sorted distinct tile indices.
    pub tiles: Vec<usize>,
}

impl WindowPlan {
    /// Compressed bytes of the needed tiles.
    pub fn tile_bytes(&self, header: &CogHeader) -> u64 {
        let ifd = &header.ifds[self.level];
        self.tiles.iter().map(|&t| ifd.tile_byte_counts[t]).sum()
    }
}

pub fn plan_window(header: &CogHeader, href: &str, grid: &PixelGrid) -> Result<WindowPlan> {
    let level = header.select_overview(target_resolution(grid, header.epsg));
    let ifd = &header.ifds[level];
    let gt = ifd.geo_transform;
    let across = ifd.tiles_across() as usize;
    let mut tiles = BTreeSet::new();
    let lookups = source_points(grid, header.epsg, href)?
        .into_iter()
        .map(|p| {
            let (c, r) = p.and_then(|(x, y)| gt.pixel_at(x, y, ifd.width, ifd.height))?;
            let (tw, th) = (ifd.tile_width, ifd.tile_height);
            let tile = (r / th) as usize * across + (c / tw) as usize;
            tiles.insert(tile);
            Some((tile, ((r % th) * tw + c % tw) as usize))
        })
        .collect();
    Ok(WindowPlan { level, lookups, tiles: tiles.into_iter().collect() })
}

/// Merge `(offset, len)` ranges whose gap is below `gap`. Input need not be
/// sorted; output is sorted and non-overlapping.
pub fn coalesce_ranges(ranges: &[(u64, u64)], gap: u64) -> Vec<(u64, u64)> {
    let mut sorted: Vec<(u64, u64)> = ranges.iter().copied().filter(|&(_, l)| l > 0).collect();
    sorted.sort_unstable();
    let mut out: Vec<(u64, u64)> = Vec::new();
    for (off, len) in sorted {
        match out.last_mut() {
            Some((o, l)) if off < (*o + *l).saturating_add(gap) => {
                let end = (*o + *l).max(off + len);
                *l = end - *o;
            }
            _ => out.push((off, len)),
        }
    }
    out
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Permits {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Permits {
    fn acquire(&self) -> PermitGuard<'_> {
        let mut free = self.free.lock().expect("permits poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("permits poisoned");
        }
        *free -= 1;
        PermitGuard(self)
    }
}

struct PermitGuard<'a>(&'a Permits);

impl Drop for PermitGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("permits poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct CogReader {
    http: Arc<HttpClient>,
    opts: ReaderOptions,
    permits: Permits,
}

impl CogReader {
    pub fn new(http: Arc<HttpClient>, opts: ReaderOptions) -> Self {
        let n = opts.max_in_flight.max(1);
        CogReader { http, opts, permits: Permits { free: Mutex::new(n), cv: Condvar::new() } }
    }

    pub fn http(&self) -> &Arc<HttpClient> {
        &self.http
    }

    fn fetch(&self, kind: TransferKind, href: &str, offset: u64, len: u64) -> Result<Vec<u8>> {
        let _permit = self.permits.acquire();
        Ok(self.http.get_range(kind, href, offset, offset + len - 1)?)
    }

    /// Read and parse the header, extending the read until every directory
    /// and tag value is covered.
    pub fn open_remote(&self, href: &str) -> Result<CogHeader> {
        let header_err = |source| CogError::Header { href: href.to_string(), source };
        let mut want = self.opts.header_bytes.max(16);
        let mut buf = self.fetch(TransferKind::Header, href, 0, want)?;
        loop {
            match CogHeader::parse(&buf) {
                Ok(h) => return Ok(h),
                Err(TiffError::NeedMore { needed }) => {
                    if (buf.len() as u64) < want {
                        return Err(header_err(TiffError::Format(format!(
                            "file ends at {} bytes, header needs {needed}",
                            buf.len()
                        ))));
                    }
                    let next = needed.max(want * 2).min(tiff::MAX_HEADER_BYTES);
                    let more = self.fetch(TransferKind::Header, href, want, next - want)?;
                    buf.extend_from_slice(&more);
                    want = next;
                }
                Err(e) => return Err(header_err(e)),
            }
        }
    }

    /// Decoded samples of `tiles` at `level`, keyed by tile index. Sparse
    /// tiles (zero byte count) are absent.
    fn fetch_tiles(
        &self,
        header: &CogHeader,
        href: &str,
        level: usize,
        tiles: &[usize],
    ) -> Result<BTreeMap<usize, Vec<f64>>> {
        let ifd = &header.ifds[level];
        if !codec::supported(ifd.compression) {
            return Err(CogError::Codec {
                href: href.to_string(),
                level,
                tile: tiles.first().copied().unwrap_or(0),
                source: codec::CodecError::Unsupported(ifd.compression),
            });
        }
        let wanted: Vec<(usize, u64, u64)> = tiles
            .iter()
            .map(|&t| (t, ifd.tile_offsets[t], ifd.tile_byte_counts[t]))
            .filter(|&(_, _, len)| len > 0)
            .collect();
        let ranges: Vec<(u64, u64)> = wanted.iter().map(|&(_, o, l)| (o, l)).collect();
        let groups = coalesce_ranges(&ranges, self.opts.coalesce_gap);

        let fetched: Mutex<Vec<Option<Result<Vec<u8>>>>> = Mutex::new(vec![None; groups.len()]);
        let next = AtomicUsize::new(0);
        let workers = self.opts.max_in_flight.clamp(1, groups.len().max(1));
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(&(off, len)) = groups.get(i) else { break };
                    let r = self.fetch(TransferKind::Tile, href, off, len);
                    let failed = r.is_err();
                    fetched.lock().expect("fetch results poisoned")[i] = Some(r);
                    if failed {
                        break;
                    }
                });
            }
        });
        let mut bodies = Vec::with_capacity(groups.len());
        for r in fetched.into_inner().expect("fetch results poisoned") {
            match r {
                Some(r) => bodies.push(r?),
                None => {
                    return Err(HttpError::Transport { url: href.to_string(), message: "fetch aborted".into() }.into())
                }
            }
        }

        let mut out = BTreeMap::new();
        for (tile, off, len) in wanted {
            let g = groups.partition_point(|&(o, l)| o + l <= off);
            let (g_off, _) = groups[g];
            let body = &bodies[g];
            let start = (off - g_off) as usize;
            let end = start + len as usize;
            let codec_err = |source| CogError::Codec { href: href.to_string(), level, tile, source };
            let raw = body
                .get(start..end)
                .ok_or_else(|| codec_err(codec::CodecError::Corrupt("tile extends past end of file".into())))?;
            let bytes = codec::decompress(ifd.compression, raw, ifd.tile_len()).map_err(codec_err)?;
            let samples = codec::decode_samples(
                &bytes,
                ifd.sample_type,
                header.byte_order,
                ifd.predictor,
                ifd.tile_width as usize,
            )
            .map_err(codec_err)?;
            out.insert(tile, samples);
        }
        Ok(out)
    }

    /// Sample one band onto `grid` by nearest neighbour. Cells outside the
    /// source footprint, in sparse tiles, equal to nodata or NaN are masked
    /// and set to `fill`.
    pub fn read_window(
        &self,
        header: &CogHeader,
        href: &str,
        band: &str,
        grid: &PixelGrid,
        fill: f64,
    ) -> Result<RasterWindow> {
        let plan = plan_window(header, href, grid)?;
        let tiles = self.fetch_tiles(header, href, plan.level, &plan.tiles)?;
        let (rows, cols) = grid.shape();
        let mut values = Array2::from_elem((rows, cols), fill);
        let mut mask = Array2::from_elem((rows, cols), false);
        for (i, lookup) in plan.lookups.iter().enumerate() {
            let Some((tile, at)) = lookup else { continue };
            let Some(v) = tiles.get(tile).map(|t| t[*at]) else { continue };
            if v.is_nan() || header.nodata == Some(v) {
                continue;
            }
            values[(i / cols, i % cols)] = v;
            mask[(i / cols, i % cols)] = true;
        }
        Ok(RasterWindow { values, mask, grid: grid.clone(), band: band.to_string(), source_epsg: header.epsg })
    }
}

/// Nearest-neighbour resampling of an in-memory raster onto `grid`, both in
/// the same CRS. `src_valid` marks usable source cells (all when `None`).
/// Returns values (NaN where masked) and the validity mask.
pub fn resample_nearest(
    src: &Array2<f64>,
    src_valid: Option<&Array2<bool>>,
    transform: &GeoTransform,
    grid: &PixelGrid,
) -> (Array2<f64>, Array2<bool>) {
    let (h, w) = src.dim();
    let (rows, cols) = grid.shape();
    let mut values = Array2::from_elem((rows, cols), f64::NAN);
    let mut mask = Array2::from_elem((rows, cols), false);
    let (Ok(w), Ok(h)) = (u32::try_from(w), u32::try_from(h)) else { return (values, mask) };
    for (j, &y) in grid.y_coords.iter().enumerate() {
        for (k, &x) in grid.x_coords.iter().enumerate() {
            if let Some((c, r)) = transform.pixel_at(x, y, w, h) {
                let idx = (r as usize, c as usize);
                if src_valid.is_none_or(|m| m[idx]) {
                    values[(j, k)] = src[idx];
                    mask[(j, k)] = true;
                }
            }
        }
    }
    (values, mask)
}
