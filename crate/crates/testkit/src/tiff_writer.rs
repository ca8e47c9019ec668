//! Minimal tiled GeoTIFF writer laid out the way COG producers do it: all IFDs
//! up front, followed by tile data from the coarsest overview to full
//! resolution.

use std::io::Write;

use flate2::write::ZlibEncoder;
use serde::{Deserialize, Serialize};

use crate::FixtureError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endian {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Codec {
    None,
    Deflate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    Uint8,
    Uint16,
    Uint32,
    Int16,
    Float32,
    Float64,
}

impl Dtype {
    pub fn parse(name: &str) -> Result<Self, FixtureError> {
        Ok(match name {
            "uint8" => Dtype::Uint8,
            "uint16" => Dtype::Uint16,
            "uint32" => Dtype::Uint32,
            "int16" => Dtype::Int16,
            "float32" => Dtype::Float32,
            "float64" => Dtype::Float64,
            other => return Err(FixtureError::UnsupportedDtype(other.to_string())),
        })
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::Uint8 => 1,
            Dtype::Uint16 | Dtype::Int16 => 2,
            Dtype::Uint32 | Dtype::Float32 => 4,
            Dtype::Float64 => 8,
        }
    }

    fn sample_format(self) -> u16 {
        match self {
            Dtype::Uint8 | Dtype::Uint16 | Dtype::Uint32 => 1,
            Dtype::Int16 => 2,
            Dtype::Float32 | Dtype::Float64 => 3,
        }
    }

    /// Whether `v` is representable without loss.
    pub fn holds(self, v: f64) -> bool {
        match self {
            Dtype::Uint8 => v.fract() == 0.0 && (0.0..=255.0).contains(&v),
            Dtype::Uint16 => v.fract() == 0.0 && (0.0..=65535.0).contains(&v),
            Dtype::Uint32 => v.fract() == 0.0 && (0.0..=4_294_967_295.0).contains(&v),
            Dtype::Int16 => v.fract() == 0.0 && (-32768.0..=32767.0).contains(&v),
            Dtype::Float32 => (v as f32) as f64 == v,
            Dtype::Float64 => true,
        }
    }

    fn encode(self, v: f64, endian: Endian, out: &mut Vec<u8>) {
        macro_rules! put {
            ($x:expr) => {
                match endian {
                    Endian::Little => out.extend_from_slice(&$x.to_le_bytes()),
                    Endian::Big => out.extend_from_slice(&$x.to_be_bytes()),
                }
            };
        }
        match self {
            Dtype::Uint8 => out.push(v as u8),
            Dtype::Uint16 => put!(v as u16),
            Dtype::Uint32 => put!(v as u32),
            Dtype::Int16 => put!(v as i16),
            Dtype::Float32 => put!(v as f32),
            Dtype::Float64 => put!(v),
        }
    }
}

/// One resolution level, row-major values.
pub struct Level {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

pub struct Georef {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub epsg: u32,
}

pub struct TiffOptions {
    pub dtype: Dtype,
    pub codec: Codec,
    pub endian: Endian,
    pub bigtiff: bool,
    pub tile_size: u32,
    pub nodata: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRange {
    pub offset: u64,
    pub len: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelLayout {
    pub width: u32,
    pub height: u32,
    pub pixel_size: f64,
    pub tiles_across: u32,
    pub tiles_down: u32,
    pub tiles: Vec<TileRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiffLayout {
    /// Bytes before the first tile: header, IFDs and their out-of-line data.
    pub header_bytes: u64,
    pub levels: Vec<LevelLayout>,
}

enum Value {
    Short(Vec<u16>),
    Long(Vec<u32>),
    Long8(Vec<u64>),
    Double(Vec<f64>),
    Ascii(String),
}

impl Value {
    fn type_code(&self) -> u16 {
        match self {
            Value::Short(_) => 3,
            Value::Long(_) => 4,
            Value::Long8(_) => 16,
            Value::Double(_) => 12,
            Value::Ascii(_) => 2,
        }
    }

    fn count(&self) -> u64 {
        match self {
            Value::Short(v) => v.len() as u64,
            Value::Long(v) => v.len() as u64,
            Value::Long8(v) => v.len() as u64,
            Value::Double(v) => v.len() as u64,
            Value::Ascii(s) => s.len() as u64 + 1,
        }
    }

    fn bytes(&self, endian: Endian) -> Vec<u8> {
        let mut out = Vec::new();
        macro_rules! put_all {
            ($v:expr) => {
                for x in $v {
                    match endian {
                        Endian::Little => out.extend_from_slice(&x.to_le_bytes()),
                        Endian::Big => out.extend_from_slice(&x.to_be_bytes()),
                    }
                }
            };
        }
        match self {
            Value::Short(v) => put_all!(v),
            Value::Long(v) => put_all!(v),
            Value::Long8(v) => put_all!(v),
            Value::Double(v) => put_all!(v),
            Value::Ascii(s) => {
                out.extend_from_slice(s.as_bytes());
                out.push(0);
            }
        }
        out
    }
}

struct Writer {
    endian: Endian,
    buf: Vec<u8>,
}

impl Writer {
    fn u16(&mut self, v: u16) {
        match self.endian {
            Endian::Little => self.buf.extend_from_slice(&v.to_le_bytes()),
            Endian::Big => self.buf.extend_from_slice(&v.to_be_bytes()),
        }
    }
    fn u32(&mut self, v: u32) {
        match self.endian {
            Endian::Little => self.buf.extend_from_slice(&v.to_le_bytes()),
            Endian::Big => self.buf.extend_from_slice(&v.to_be_bytes()),
        }
    }
    fn u64(&mut self, v: u64) {
        match self.endian {
            Endian::Little => self.buf.extend_from_slice(&v.to_le_bytes()),
            Endian::Big => self.buf.extend_from_slice(&v.to_be_bytes()),
        }
    }
}

fn encode_tile(level: &Level, tx: u32, ty: u32, opts: &TiffOptions) -> Vec<u8> {
    let ts = opts.tile_size;
    let mut raw = Vec::with_capacity((ts * ts) as usize * opts.dtype.size());
    for r in 0..ts {
        for c in 0..ts {
            let row = ty * ts + r;
            let col = tx * ts + c;
            let v = if row < level.height && col < level.width {
                level.values[(row * level.width + col) as usize]
            } else {
                0.0
            };
            opts.dtype.encode(v, opts.endian, &mut raw);
        }
    }
    match opts.codec {
        Codec::None => raw,
        Codec::Deflate => {
            let mut enc = ZlibEncoder::new(Vec::new(), flate2::Compression::new(6));
            enc.write_all(&raw).expect("in-memory write");
            enc.finish().expect("in-memory write")
        }
    }
}

fn ifd_entries(
    idx: usize,
    level: &Level,
    offsets: &[u64],
    counts: &[u64],
    georef: &Georef,
    opts: &TiffOptions,
) -> Vec<(u16, Value)> {
    let mut e = vec![
        (254, Value::Long(vec![if idx == 0 { 0 } else { 1 }])),
        (256, Value::Long(vec![level.width])),
        (257, Value::Long(vec![level.height])),
        (258, Value::Short(vec![(opts.dtype.size() * 8) as u16])),
        (259, Value::Short(vec![if opts.codec == Codec::Deflate { 8 } else { 1 }])),
        (262, Value::Short(vec![1])),
        (277, Value::Short(vec![1])),
        (284, Value::Short(vec![1])),
        (322, Value::Short(vec![opts.tile_size as u16])),
        (323, Value::Short(vec![opts.tile_size as u16])),
    ];
    if opts.bigtiff {
        e.push((324, Value::Long8(offsets.to_vec())));
        e.push((325, Value::Long8(counts.to_vec())));
    } else {
        e.push((324, Value::Long(offsets.iter().map(|&o| o as u32).collect())));
        e.push((325, Value::Long(counts.iter().map(|&o| o as u32).collect())));
    }
    e.push((339, Value::Short(vec![opts.dtype.sample_format()])));
    if idx == 0 {
        e.push((33550, Value::Double(vec![georef.pixel_size, georef.pixel_size, 0.0])));
        e.push((33922, Value::Double(vec![0.0, 0.0, 0.0, georef.origin_x, georef.origin_y, 0.0])));
        e.push((
            34735,
            Value::Short(vec![
                1,
                1,
                0,
                3, //
                1024,
                0,
                1,
                1, // projected model
                1025,
                0,
                1,
                1, // pixel is area
                3072,
                0,
                1,
                georef.epsg as u16,
            ]),
        ));
    }
    if let Some(nd) = opts.nodata {
        e.push((42113, Value::Ascii(format!("{nd}"))));
    }
    e
}

/// Serialize one IFD plus its out-of-line values at `at`. Returns the bytes.
fn serialize_ifd(entries: &[(u16, Value)], at: u64, next: u64, opts: &TiffOptions) -> Vec<u8> {
    let (entry_size, inline_cap, head, tail) = if opts.bigtiff { (20, 8, 8, 8) } else { (12, 4, 2, 4) };
    let ifd_len = head + entries.len() as u64 * entry_size + tail;
    let mut data_at = at + ifd_len;
    let mut w = Writer { endian: opts.endian, buf: Vec::new() };
    let mut extra = Vec::new();
    if opts.bigtiff {
        w.u64(entries.len() as u64);
    } else {
        w.u16(entries.len() as u16);
    }
    for (tag, value) in entries {
        w.u16(*tag);
        w.u16(value.type_code());
        if opts.bigtiff {
            w.u64(value.count());
        } else {
            w.u32(value.count() as u32);
        }
        let bytes = value.bytes(opts.endian);
        if bytes.len() as u64 <= inline_cap {
            let mut padded = bytes.clone();
            padded.resize(inline_cap as usize, 0);
            w.buf.extend_from_slice(&padded);
        } else {
            if opts.bigtiff {
                w.u64(data_at);
            } else {
                w.u32(data_at as u32);
            }
            data_at += bytes.len() as u64;
            extra.extend_from_slice(&bytes);
            if data_at % 2 == 1 {
                extra.push(0);
                data_at += 1;
            }
        }
    }
    if opts.bigtiff {
        w.u64(next);
    } else {
        w.u32(next as u32);
    }
    w.buf.extend_from_slice(&extra);
    w.buf
}

/// Write a tiled GeoTIFF with `levels[0]` as full resolution and the rest as
/// reduced-resolution overviews.
pub fn write_cog(levels: &[Level], georef: &Georef, opts: &TiffOptions) -> (Vec<u8>, TiffLayout) {
    let ts = opts.tile_size;
    let mut tiles: Vec<Vec<Vec<u8>>> = Vec::new();
    for level in levels {
        let across = level.width.div_ceil(ts);
        let down = level.height.div_ceil(ts);
        let mut lt = Vec::new();
        for ty in 0..down {
            for tx in 0..across {
                lt.push(encode_tile(level, tx, ty, opts));
            }
        }
        tiles.push(lt);
    }

    let header_len: u64 = if opts.bigtiff { 16 } else { 8 };
    // Pass 1 sizes the IFD block with placeholder offsets.
    let mut pos = header_len;
    for (i, level) in levels.iter().enumerate() {
        let n = tiles[i].len();
        let e = ifd_entries(i, level, &vec![0; n], &vec![0; n], georef, opts);
        pos += serialize_ifd(&e, pos, 0, opts).len() as u64;
    }
    let header_bytes = pos;

    // Tile data: coarsest level first.
    let mut offsets: Vec<Vec<u64>> = vec![Vec::new(); levels.len()];
    let mut data_pos = header_bytes;
    for i in (0..levels.len()).rev() {
        for t in &tiles[i] {
            offsets[i].push(data_pos);
            data_pos += t.len() as u64;
        }
    }

    let mut w = Writer { endian: opts.endian, buf: Vec::new() };
    match opts.endian {
        Endian::Little => w.buf.extend_from_slice(b"II"),
        Endian::Big => w.buf.extend_from_slice(b"MM"),
    }
    if opts.bigtiff {
        w.u16(43);
        w.u16(8);
        w.u16(0);
        w.u64(header_len);
    } else {
        w.u16(42);
        w.u32(header_len as u32);
    }
    let mut layout_levels = Vec::new();
    for (i, level) in levels.iter().enumerate() {
        let counts: Vec<u64> = tiles[i].iter().map(|t| t.len() as u64).collect();
        let e = ifd_entries(i, level, &offsets[i], &counts, georef, opts);
        let at = w.buf.len() as u64;
        let probe = serialize_ifd(&e, at, 0, opts).len() as u64;
        let next = if i + 1 < levels.len() { at + probe } else { 0 };
        let bytes = serialize_ifd(&e, at, next, opts);
        w.buf.extend_from_slice(&bytes);
        let scale = levels[0].width as f64 / level.width as f64;
        layout_levels.push(LevelLayout {
            width: level.width,
            height: level.height,
            pixel_size: georef.pixel_size * scale,
            tiles_across: level.width.div_ceil(ts),
            tiles_down: level.height.div_ceil(ts),
            tiles: offsets[i].iter().zip(&counts).map(|(&offset, &len)| TileRange { offset, len }).collect(),
        });
    }
    assert_eq!(w.buf.len() as u64, header_bytes);
    for i in (0..levels.len()).rev() {
        for t in &tiles[i] {
            w.buf.extend_from_slice(t);
        }
    }
    (w.buf, TiffLayout { header_bytes, levels: layout_levels })
}
