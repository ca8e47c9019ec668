//! Zarr v2 directory store: writer for [`DataCube`] and a reader for the
//! subset of the format the writer produces.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::cog::SampleType;
use crate::cube::DataCube;
use crate::error::{Error, Result};
use crate::geomath::DISTANCE_COORD;

pub const CUBE_ARRAY: &str = "cube";
pub const MASK_ARRAY: &str = "mask";
pub const TIME_UNITS: &str = "milliseconds since 1970-01-01T00:00:00Z";

const MAX_ELEMENTS: u64 = 1 << 34;

/// Compressor entry of `.zarray`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compressor {
    pub id: String,
    #[serde(default)]
    pub level: Option<u32>,
}

/// `.zarray` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub zarr_format: u32,
    pub shape: Vec<u64>,
    pub chunks: Vec<u64>,
    pub dtype: String,
    pub compressor: Option<Compressor>,
    pub fill_value: Value,
    pub order: String,
    pub filters: Option<Vec<Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension_separator: Option<String>,
}

/// Element type of a stored array.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZarrType {
    Bool,
    Num(SampleType),
    I64,
    /// Fixed-width UTF-32 string of this many code points.
    Str(usize),
}

impl ZarrType {
    pub fn parse(s: &str) -> Result<Self> {
        let t = match s {
            "|b1" => ZarrType::Bool,
            "|u1" => ZarrType::Num(SampleType::U8),
            "|i1" => ZarrType::Num(SampleType::I8),
            "<u2" => ZarrType::Num(SampleType::U16),
            "<i2" => ZarrType::Num(SampleType::I16),
            "<u4" => ZarrType::Num(SampleType::U32),
            "<i4" => ZarrType::Num(SampleType::I32),
            "<f4" => ZarrType::Num(SampleType::F32),
            "<f8" => ZarrType::Num(SampleType::F64),
            "<i8" => ZarrType::I64,
            _ => match s.strip_prefix("<U").and_then(|n| n.parse::<usize>().ok()) {
                Some(n) if (1..=4096).contains(&n) => ZarrType::Str(n),
                _ => return Err(Error::Format(format!("unsupported zarr dtype {s:?}"))),
            },
        };
        Ok(t)
    }

    pub fn name(self) -> String {
        match self {
            ZarrType::Bool => "|b1".into(),
            ZarrType::I64 => "<i8".into(),
            ZarrType::Str(n) => format!("<U{n}"),
            ZarrType::Num(t) => match t {
                SampleType::U8 => "|u1",
                SampleType::I8 => "|i1",
                SampleType::U16 => "<u2",
                SampleType::I16 => "<i2",
                SampleType::U32 => "<u4",
                SampleType::I32 => "<i4",
                SampleType::F32 => "<f4",
                SampleType::F64 => "<f8",
            }
            .into(),
        }
    }

    pub fn size(self) -> usize {
        match self {
            ZarrType::Bool => 1,
            ZarrType::I64 => 8,
            ZarrType::Str(n) => 4 * n,
            ZarrType::Num(t) => t.size(),
        }
    }
}

impl ArrayMeta {
    /// Parse and validate a `.zarray` document.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let meta: ArrayMeta =
            serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("invalid .zarray: {e}")))?;
        if meta.zarr_format != 2 {
            return Err(Error::Format(format!("zarr_format {} is not 2", meta.zarr_format)));
        }
        if meta.shape.len() != meta.chunks.len() || meta.chunks.contains(&0) {
            return Err(Error::Format(format!("chunks {:?} do not fit shape {:?}", meta.chunks, meta.shape)));
        }
        if meta.order != "C" {
            return Err(Error::Format(format!("order {:?} is not supported", meta.order)));
        }
        if meta.filters.as_ref().is_some_and(|f| !f.is_empty()) {
            return Err(Error::Format("filters are not supported".into()));
        }
        if let Some(c) = &meta.compressor {
            if c.id != "zlib" {
                return Err(Error::Format(format!("compressor {:?} is not supported", c.id)));
            }
        }
        let dtype = ZarrType::parse(&meta.dtype)?;
        let elems = meta.shape.iter().try_fold(1u64, |a, &n| a.checked_mul(n));
        let chunk_bytes = meta.chunks.iter().try_fold(dtype.size() as u64, |a, &n| a.checked_mul(n));
        match (elems, chunk_bytes) {
            (Some(e), Some(c)) if e <= MAX_ELEMENTS && c <= MAX_ELEMENTS => Ok(meta),
            _ => Err(Error::Format("array too large".into())),
        }
    }

    pub fn dtype(&self) -> Result<ZarrType> {
        ZarrType::parse(&self.dtype)
    }

    fn separator(&self) -> &str {
        self.dimension_separator.as_deref().unwrap_or(".")
    }

    fn chunk_grid(&self) -> Vec<u64> {
        self.shape.iter().zip(&self.chunks).map(|(s, c)| s.div_ceil(*c)).collect()
    }
}

fn chunk_key(idx: &[u64], sep: &str) -> String {
    if idx.is_empty() {
        return "0".into();
    }
    idx.iter().map(u64::to_string).collect::<Vec<_>>().join(sep)
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("JSON values serialize");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn encode_value(t: ZarrType, v: f64, out: &mut Vec<u8>) {
    match t {
        ZarrType::Bool => out.push(u8::from(v != 0.0)),
        ZarrType::I64 => out.extend((v as i64).to_le_bytes()),
        ZarrType::Str(_) => unreachable!("strings are encoded separately"),
        ZarrType::Num(s) => match s {
            SampleType::U8 => out.push(v as u8),
            SampleType::I8 => out.extend((v as i8).to_le_bytes()),
            SampleType::U16 => out.extend((v as u16).to_le_bytes()),
            SampleType::I16 => out.extend((v as i16).to_le_bytes()),
            SampleType::U32 => out.extend((v as u32).to_le_bytes()),
            SampleType::I32 => out.extend((v as i32).to_le_bytes()),
            SampleType::F32 => out.extend((v as f32).to_le_bytes()),
            SampleType::F64 => out.extend(v.to_le_bytes()),
        },
    }
}

fn fill_json(t: ZarrType, fill: f64) -> Value {
    match t {
        ZarrType::Bool => json!(false),
        ZarrType::Str(_) => json!(""),
        _ if fill.is_nan() => json!("NaN"),
        ZarrType::Num(s) if s.is_float() => json!(fill),
        _ => json!(fill as i64),
    }
}

struct ArrayWriter {
    dir: PathBuf,
    meta: ArrayMeta,
    dtype: ZarrType,
    level: u32,
}

/// Creates arrays under one store root with a shared compression level.
struct StoreWriter<'a> {
    root: &'a Path,
    level: u32,
}

impl StoreWriter<'_> {
    fn array(
        &self,
        name: &str,
        shape: &[usize],
        chunks: &[usize],
        dtype: ZarrType,
        fill: f64,
        attrs: Value,
    ) -> Result<ArrayWriter> {
        let level = self.level;
        let dir = self.root.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let meta = ArrayMeta {
            zarr_format: 2,
            shape: shape.iter().map(|&n| n as u64).collect(),
            chunks: chunks.iter().map(|&n| n.max(1) as u64).collect(),
            dtype: dtype.name(),
            compressor: Some(Compressor { id: "zlib".into(), level: Some(level) }),
            fill_value: fill_json(dtype, fill),
            order: "C".into(),
            filters: None,
            dimension_separator: Some(".".into()),
        };
        write_json(&dir.join(".zarray"), &serde_json::to_value(&meta).expect("meta serializes"))?;
        write_json(&dir.join(".zattrs"), &attrs)?;
        Ok(ArrayWriter { dir, meta, dtype, level })
    }
}

impl ArrayWriter {
    fn write_chunk(&self, idx: &[u64], raw: &[u8]) -> Result<()> {
        let path = self.dir.join(chunk_key(idx, self.meta.separator()));
        fs::write(&path, crate::cog::codec::deflate(raw, self.level)).map_err(|e| Error::io(&path, e))
    }

    /// Write a whole 1-D array as chunks.
    fn write_all_1d(&self, values: &[f64]) -> Result<()> {
        let c = self.meta.chunks[0] as usize;
        for (i, part) in values.chunks(c).enumerate() {
            let mut raw = Vec::with_capacity(c * self.dtype.size());
            for &v in part {
                encode_value(self.dtype, v, &mut raw);
            }
            raw.resize(c * self.dtype.size(), 0);
            self.write_chunk(&[i as u64], &raw)?;
        }
        Ok(())
    }
}

fn encode_str(s: &str, width: usize, out: &mut Vec<u8>) {
    let mut n = 0;
    for ch in s.chars().take(width) {
        out.extend((ch as u32).to_le_bytes());
        n += 1;
    }
    out.resize(out.len() + 4 * (width - n), 0);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZarrOptions {
    pub compression_level: u32,
    pub overwrite: bool,
}

impl Default for ZarrOptions {
    fn default() -> Self {
        ZarrOptions { compression_level: 5, overwrite: false }
    }
}

/// Remove `path` if `overwrite`, else fail when it exists.
pub fn prepare_output(path: &Path, overwrite: bool) -> Result<()> {
    if path.exists() || path.is_symlink() {
        if !overwrite {
            return Err(Error::OutputExists(path.to_path_buf()));
        }
        let r = if path.is_dir() { fs::remove_dir_all(path) } else { fs::remove_file(path) };
        r.map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Write `cube` as a Zarr v2 group at `path`. Chunks are read and written
/// in parallel; on failure the partial store is removed.
pub fn write_zarr(cube: &DataCube, path: &Path, opts: ZarrOptions) -> Result<()> {
    prepare_output(path, opts.overwrite)?;
    let r = write_store(cube, path, opts.compression_level);
    if r.is_err() {
        let _ = fs::remove_dir_all(path);
    }
    r
}

fn write_store(cube: &DataCube, root: &Path, level: u32) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let store = StoreWriter { root, level };
    write_json(&root.join(".zgroup"), &json!({"zarr_format": 2}))?;
    write_json(&root.join(".zattrs"), &Value::Object(cube.attrs().to_map()))?;

    let shape = cube.shape();
    let plan = cube.plan();
    let chunks = plan.chunks.as_array();
    let dims = |d: &[&str]| json!({ "_ARRAY_DIMENSIONS": d });

    let dtype = ZarrType::Num(cube.dtype());
    let mut cube_attrs = dims(&["time", "band", "y", "x"]);
    cube_attrs["coordinates"] = json!(DISTANCE_COORD);
    let values = store.array(CUBE_ARRAY, &shape, &chunks, dtype, cube.fill_value(), cube_attrs)?;
    let mut mask_attrs = dims(&["time", "band", "y", "x"]);
    mask_attrs["description"] = json!("true where the cube holds source data");
    let mask = store.array(MASK_ARRAY, &shape, &chunks, ZarrType::Bool, 0.0, mask_attrs)?;

    let mut time_attrs = dims(&["time"]);
    time_attrs["units"] = json!(TIME_UNITS);
    time_attrs["calendar"] = json!("proleptic_gregorian");
    let times: Vec<f64> = cube.times().iter().map(|t| t.timestamp_millis() as f64).collect();
    let time = store.array("time", &[shape[0]], &[shape[0].max(1)], ZarrType::I64, 0.0, time_attrs)?;
    time.write_all_1d(&times)?;

    let width = cube.bands().iter().map(|b| b.chars().count()).max().unwrap_or(1).max(1);
    let band = store.array("band", &[shape[1]], &[shape[1].max(1)], ZarrType::Str(width), 0.0, dims(&["band"]))?;
    let mut raw = Vec::new();
    for b in cube.bands() {
        encode_str(b, width, &mut raw);
    }
    band.write_chunk(&[0], &raw)?;

    let crs = json!(format!("EPSG:{}", plan.geometry.epsg));
    for (name, coords) in [("y", cube.y()), ("x", cube.x())] {
        let mut attrs = dims(&[name]);
        attrs["units"] = json!("m");
        attrs["crs"] = crs.clone();
        let n = coords.len();
        let w = store.array(name, &[n], &[n.max(1)], ZarrType::Num(SampleType::F64), f64::NAN, attrs)?;
        w.write_all_1d(coords)?;
    }

    let dist = cube.distance();
    let mut attrs = dims(&["y", "x"]);
    attrs["units"] = json!("m");
    attrs["center_x"] = json!(dist.center.x);
    attrs["center_y"] = json!(dist.center.y);
    attrs["projected_x"] = json!(plan.geometry.projected.x);
    attrs["projected_y"] = json!(plan.geometry.projected.y);
    let (ny, nx) = dist.values.dim();
    let dw = store.array(
        DISTANCE_COORD,
        &[ny, nx],
        &[ny.max(1), nx.max(1)],
        ZarrType::Num(SampleType::F64),
        f64::NAN,
        attrs,
    )?;
    let raw: Vec<u8> = dist.values.iter().flat_map(|v| v.to_le_bytes()).collect();
    dw.write_chunk(&[0, 0], &raw)?;

    plan.chunk_indices().into_par_iter().try_for_each(|idx| -> Result<()> {
        let c = cube.materialize_chunk(idx)?;
        let full: Vec<usize> = chunks.to_vec();
        let mut vraw = Vec::with_capacity(full.iter().product::<usize>() * dtype.size());
        let mut mraw = Vec::with_capacity(full.iter().product::<usize>());
        let (nt, nb, ny, nx) = c.values.dim();
        // Edge chunks are padded to the full chunk shape with the fill value.
        for t in 0..full[0] {
            for b in 0..full[1] {
                for y in 0..full[2] {
                    for x in 0..full[3] {
                        let inside = t < nt && b < nb && y < ny && x < nx;
                        let (v, m) = if inside {
                            (c.values[(t, b, y, x)], c.mask[(t, b, y, x)])
                        } else {
                            (cube.fill_value(), false)
                        };
                        encode_value(dtype, v, &mut vraw);
                        mraw.push(u8::from(m));
                    }
                }
            }
        }
        let key: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
        values.write_chunk(&key, &vraw)?;
        mask.write_chunk(&key, &mraw)
    })
}

/// Decoded contents of one stored array.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    Num(Vec<f64>),
    Bool(Vec<bool>),
    I64(Vec<i64>),
    Str(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZarrArray {
    pub meta: ArrayMeta,
    pub attrs: Map<String, Value>,
    pub data: ArrayData,
}

impl ZarrArray {
    pub fn numbers(&self) -> Option<&[f64]> {
        match &self.data {
            ArrayData::Num(v) => Some(v),
            _ => None,
        }
    }
}

fn decode_elem(t: ZarrType, b: &[u8]) -> f64 {
    let arr = |n: usize| -> [u8; 8] {
        let mut a = [0u8; 8];
        a[..n].copy_from_slice(&b[..n]);
        a
    };
    match t {
        ZarrType::Num(s) => match s {
            SampleType::U8 => f64::from(b[0]),
            SampleType::I8 => f64::from(b[0] as i8),
            SampleType::U16 => f64::from(u16::from_le_bytes([b[0], b[1]])),
            SampleType::I16 => f64::from(i16::from_le_bytes([b[0], b[1]])),
            SampleType::U32 => f64::from(u32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            SampleType::I32 => f64::from(i32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            SampleType::F32 => f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
            SampleType::F64 => f64::from_le_bytes(arr(8)),
        },
        _ => unreachable!("numeric element"),
    }
}

/// Read one array directory.
pub fn read_array(dir: &Path) -> Result<ZarrArray> {
    let meta_path = dir.join(".zarray");
    let meta = ArrayMeta::parse(&fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?)?;
    let attrs = match fs::read(dir.join(".zattrs")) {
        Ok(b) => serde_json::from_slice(&b).map_err(|e| Error::Format(format!("invalid .zattrs: {e}")))?,
        Err(_) => Map::new(),
    };
    let dtype = meta.dtype()?;
    let size = dtype.size();
    let shape: Vec<usize> = meta.shape.iter().map(|&n| n as usize).collect();
    let chunks: Vec<usize> = meta.chunks.iter().map(|&n| n as usize).collect();
    let total: usize = shape.iter().product();
    let mut bytes = vec![0u8; total * size];
    let fill_raw: Vec<u8> = match (&meta.fill_value, dtype) {
        (Value::String(s), ZarrType::Num(t)) if s == "NaN" => {
            let mut v = Vec::new();
            encode_value(ZarrType::Num(t), f64::NAN, &mut v);
            v
        }
        (Value::Number(n), t @ (ZarrType::Num(_) | ZarrType::I64)) => {
            let mut v = Vec::new();
            encode_value(t, n.as_f64().unwrap_or(0.0), &mut v);
            v
        }
        _ => vec![0u8; size],
    };
    for e in bytes.chunks_exact_mut(size) {
        e.copy_from_slice(&fill_raw);
    }

    let grid = meta.chunk_grid();
    let n_chunks: u64 = grid.iter().product();
    let chunk_elems: usize = chunks.iter().product();
    let nd = shape.len();
    for flat in 0..n_chunks {
        let mut idx = vec![0u64; nd];
        let mut rem = flat;
        for d in (0..nd).rev() {
            idx[d] = rem % grid[d];
            rem /= grid[d];
        }
        let path = dir.join(chunk_key(&idx, meta.separator()));
        let Ok(compressed) = fs::read(&path) else { continue };
        let raw = match &meta.compressor {
            Some(_) => {
                crate::cog::codec::decompress(crate::cog::codec::COMPRESSION_DEFLATE, &compressed, chunk_elems * size)
                    .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
            }
            None if compressed.len() >= chunk_elems * size => compressed,
            None => return Err(Error::Format(format!("{}: short chunk", path.display()))),
        };
        // Copy each element of the chunk that lies inside the array.
        for (ci, elem) in raw.chunks_exact(size).enumerate() {
            let mut rem = ci;
            let mut flat_out = 0usize;
            let mut inside = true;
            let mut coords = vec![0usize; nd];
            for d in (0..nd).rev() {
                coords[d] = rem % chunks[d];
                rem /= chunks[d];
            }
            for d in 0..nd {
                let g = idx[d] as usize * chunks[d] + coords[d];
                if g >= shape[d] {
                    inside = false;
                    break;
                }
                flat_out = flat_out * shape[d] + g;
            }
            if inside {
                bytes[flat_out * size..(flat_out + 1) * size].copy_from_slice(elem);
            }
        }
    }

    let data = match dtype {
        ZarrType::Bool => ArrayData::Bool(bytes.iter().map(|&b| b != 0).collect()),
        ZarrType::I64 => {
            ArrayData::I64(bytes.chunks_exact(8).map(|b| i64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
        }
        ZarrType::Str(_) => ArrayData::Str(
            bytes
                .chunks_exact(size)
                .map(|b| {
                    b.chunks_exact(4)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .take_while(|&c| c != 0)
                        .filter_map(char::from_u32)
                        .collect()
                })
                .collect(),
        ),
        ZarrType::Num(_) => ArrayData::Num(bytes.chunks_exact(size).map(|b| decode_elem(dtype, b)).collect()),
    };
    Ok(ZarrArray { meta, attrs, data })
}

/// A cube store read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ZarrStore {
    pub attrs: Map<String, Value>,
    pub cube: ZarrArray,
    pub mask: ZarrArray,
    pub time: Vec<i64>,
    pub band: Vec<String>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub distance: ZarrArray,
}

impl ZarrStore {
    pub fn shape(&self) -> Vec<usize> {
        self.cube.meta.shape.iter().map(|&n| n as usize).collect()
    }
}

pub fn read_zarr(root: &Path) -> Result<ZarrStore> {
    let attrs_path = root.join(".zattrs");
    let attrs = serde_json::from_slice(&fs::read(&attrs_path).map_err(|e| Error::io(&attrs_path, e))?)
        .map_err(|e| Error::Format(format!("invalid root .zattrs: {e}")))?;
    let num = |name: &str| -> Result<Vec<f64>> {
        read_array(&root.join(name))?
            .numbers()
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::Format(format!("{name} is not numeric")))
    };
    let time = match read_array(&root.join("time"))?.data {
        ArrayData::I64(v) => v,
        _ => return Err(Error::Format("time is not <i8".into())),
    };
    let band = match read_array(&root.join("band"))?.data {
        ArrayData::Str(v) => v,
        _ => return Err(Error::Format("band is not a string array".into())),
    };
    Ok(ZarrStore {
        attrs,
        cube: read_array(&root.join(CUBE_ARRAY))?,
        mask: read_array(&root.join(MASK_ARRAY))?,
        time,
        band,
        y: num("y")?,
        x: num("x")?,
        distance: read_array(&root.join(DISTANCE_COORD))?,
    })
}
