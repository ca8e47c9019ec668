//! TIFF / BigTIFF directory parsing with GeoTIFF georeferencing.
//!
//! [`CogHeader::parse`] works on a prefix of the file. When a directory or an
//! out-of-line tag value lies beyond the prefix it returns
//! [`TiffError::NeedMore`] with the byte length required, so callers can
//! extend their read and retry.

use serde::Serialize;

/// Largest header prefix the parser will ask for.
pub const MAX_HEADER_BYTES: u64 = 16 * 1024 * 1024;
const MAX_IFDS: usize = 64;
const MAX_ENTRIES: u64 = 4096;
const MAX_DIMENSION: u32 = 1 << 24;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TiffError {
    #[error("header needs {needed} bytes")]
    NeedMore { needed: u64 },
    #[error("not a TIFF: {0}")]
    Format(String),
    #[error("unsupported layout: {0}")]
    UnsupportedLayout(String),
    #[error("unsupported sample type: {0}")]
    UnsupportedType(String),
    #[error("georeference: {0}")]
    Georeference(String),
}

type Result<T> = std::result::Result<T, TiffError>;

fn format_err(msg: impl Into<String>) -> TiffError {
    TiffError::Format(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ByteOrder {
    Little,
    Big,
}

/// Pixel sample types the reader decodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    U8,
    I8,
    U16,
    I16,
    U32,
    I32,
    F32,
    F64,
}

impl SampleType {
    pub fn from_tiff(bits: u16, format: u16) -> Result<Self> {
        Ok(match (format, bits) {
            (1, 8) => SampleType::U8,
            (1, 16) => SampleType::U16,
            (1, 32) => SampleType::U32,
            (2, 8) => SampleType::I8,
            (2, 16) => SampleType::I16,
            (2, 32) => SampleType::I32,
            (3, 32) => SampleType::F32,
            (3, 64) => SampleType::F64,
            _ => return Err(TiffError::UnsupportedType(format!("{bits}-bit sample format {format}"))),
        })
    }

    pub fn size(self) -> usize {
        match self {
            SampleType::U8 | SampleType::I8 => 1,
            SampleType::U16 | SampleType::I16 => 2,
            SampleType::U32 | SampleType::I32 | SampleType::F32 => 4,
            SampleType::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, SampleType::F32 | SampleType::F64)
    }

    /// Inclusive value range for integer types.
    pub fn int_range(self) -> Option<(f64, f64)> {
        Some(match self {
            SampleType::U8 => (0.0, 255.0),
            SampleType::I8 => (-128.0, 127.0),
            SampleType::U16 => (0.0, 65535.0),
            SampleType::I16 => (-32768.0, 32767.0),
            SampleType::U32 => (0.0, 4_294_967_295.0),
            SampleType::I32 => (-2_147_483_648.0, 2_147_483_647.0),
            SampleType::F32 | SampleType::F64 => return None,
        })
    }

    /// Whether every value of `self` is exactly representable in `other`.
    pub fn fits_in(self, other: SampleType) -> bool {
        match (self.int_range(), other.int_range()) {
            (Some((lo, hi)), Some((olo, ohi))) => olo <= lo && hi <= ohi,
            (Some((lo, hi)), None) => {
                let mantissa = if other == SampleType::F32 { 24 } else { 53 };
                let limit = 2f64.powi(mantissa);
                lo >= -limit && hi <= limit
            }
            (None, Some(_)) => false,
            (None, None) => self.size() <= other.size(),
        }
    }
}

/// Affine georeference without rotation. `pixel_height` is positive; rows
/// run from `origin_y` downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeoTransform {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_width: f64,
    pub pixel_height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ifd {
    pub width: u32,
    pub height: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    pub sample_type: SampleType,
    pub compression: u16,
    pub predictor: u16,
    pub tile_offsets: Vec<u64>,
    pub tile_byte_counts: Vec<u64>,
    pub geo_transform: GeoTransform,
}

impl Ifd {
    pub fn tiles_across(&self) -> u32 {
        self.width.div_ceil(self.tile_width)
    }

    pub fn tiles_down(&self) -> u32 {
        self.height.div_ceil(self.tile_height)
    }

    /// Byte length of one decoded tile.
    pub fn tile_len(&self) -> usize {
        self.tile_width as usize * self.tile_height as usize * self.sample_type.size()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CogHeader {
    pub byte_order: ByteOrder,
    pub bigtiff: bool,
    /// Full resolution first, then overviews by decreasing resolution.
    pub ifds: Vec<Ifd>,
    pub epsg: u32,
    pub nodata: Option<f64>,
    /// Prefix length that held all directories and tag values.
    pub header_bytes: u64,
}

struct Cursor<'a> {
    data: &'a [u8],
    order: ByteOrder,
    max_end: u64,
}

impl<'a> Cursor<'a> {
    fn bytes(&mut self, offset: u64, len: u64) -> Result<&'a [u8]> {
        let end = offset.checked_add(len).ok_or_else(|| format_err("offset overflow"))?;
        if end > MAX_HEADER_BYTES {
            return Err(format_err(format!("header structure extends to byte {end}")));
        }
        self.max_end = self.max_end.max(end);
        if end > self.data.len() as u64 {
            return Err(TiffError::NeedMore { needed: end });
        }
        Ok(&self.data[offset as usize..end as usize])
    }

    fn u16(&mut self, offset: u64) -> Result<u16> {
        let b: [u8; 2] = self.bytes(offset, 2)?.try_into().expect("2 bytes");
        Ok(match self.order {
            ByteOrder::Little => u16::from_le_bytes(b),
            ByteOrder::Big => u16::from_be_bytes(b),
        })
    }

    fn u32(&mut self, offset: u64) -> Result<u32> {
        let b: [u8; 4] = self.bytes(offset, 4)?.try_into().expect("4 bytes");
        Ok(match self.order {
            ByteOrder::Little => u32::from_le_bytes(b),
            ByteOrder::Big => u32::from_be_bytes(b),
        })
    }

    fn u64(&mut self, offset: u64) -> Result<u64> {
        let b: [u8; 8] = self.bytes(offset, 8)?.try_into().expect("8 bytes");
        Ok(match self.order {
            ByteOrder::Little => u64::from_le_bytes(b),
            ByteOrder::Big => u64::from_be_bytes(b),
        })
    }
}

#[derive(Debug, Clone)]
struct Entry {
    tag: u16,
    typ: u16,
    count: u64,
    /// Absolute offset of the value bytes.
    value_at: u64,
}

fn type_size(typ: u16) -> Option<u64> {
    Some(match typ {
        1 | 2 | 6 | 7 => 1,
        3 | 8 => 2,
        4 | 9 | 11 | 13 => 4,
        5 | 10 | 12 | 16 | 17 | 18 => 8,
        _ => return None,
    })
}

#[derive(Debug, Clone)]
enum Value {
    Ints(Vec<u64>),
    Floats(Vec<f64>),
    Ascii(String),
    Other,
}

impl Value {
    fn ints(&self) -> Option<&[u64]> {
        match self {
            Value::Ints(v) => Some(v),
            _ => None,
        }
    }

    fn floats(&self) -> Option<Vec<f64>> {
        match self {
            Value::Floats(v) => Some(v.clone()),
            Value::Ints(v) => Some(v.iter().map(|&i| i as f64).collect()),
            _ => None,
        }
    }

    fn first_int(&self) -> Option<u64> {
        self.ints().and_then(|v| v.first().copied())
    }
}

fn read_value(c: &mut Cursor<'_>, e: &Entry) -> Result<Value> {
    let Some(size) = type_size(e.typ) else { return Ok(Value::Other) };
    let total = e.count.checked_mul(size).ok_or_else(|| format_err("tag size overflow"))?;
    let raw = c.bytes(e.value_at, total)?;
    let n = e.count as usize;
    Ok(match e.typ {
        1 | 7 => Value::Ints(raw.iter().map(|&b| u64::from(b)).collect()),
        2 => Value::Ascii(String::from_utf8_lossy(raw).trim_end_matches('\0').to_string()),
        3 => Value::Ints((0..n).map(|i| c.u16(e.value_at + 2 * i as u64).map(u64::from)).collect::<Result<_>>()?),
        4 | 13 => Value::Ints((0..n).map(|i| c.u32(e.value_at + 4 * i as u64).map(u64::from)).collect::<Result<_>>()?),
        16 | 18 => Value::Ints((0..n).map(|i| c.u64(e.value_at + 8 * i as u64)).collect::<Result<_>>()?),
        8 => Value::Floats(
            (0..n).map(|i| c.u16(e.value_at + 2 * i as u64).map(|v| f64::from(v as i16))).collect::<Result<_>>()?,
        ),
        9 => Value::Floats(
            (0..n).map(|i| c.u32(e.value_at + 4 * i as u64).map(|v| f64::from(v as i32))).collect::<Result<_>>()?,
        ),
        11 => Value::Floats(
            (0..n)
                .map(|i| c.u32(e.value_at + 4 * i as u64).map(|v| f64::from(f32::from_bits(v))))
                .collect::<Result<_>>()?,
        ),
        12 => {
            Value::Floats((0..n).map(|i| c.u64(e.value_at + 8 * i as u64).map(f64::from_bits)).collect::<Result<_>>()?)
        }
        5 | 10 => Value::Floats(
            (0..n)
                .map(|i| {
                    let num = c.u32(e.value_at + 8 * i as u64)?;
                    let den = c.u32(e.value_at + 8 * i as u64 + 4)?;
                    Ok(if e.typ == 5 {
                        f64::from(num) / f64::from(den)
                    } else {
                        f64::from(num as i32) / f64::from(den as i32)
                    })
                })
                .collect::<Result<_>>()?,
        ),
        _ => Value::Other,
    })
}

struct RawIfd {
    entries: Vec<Entry>,
}

impl RawIfd {
    fn get(&self, tag: u16) -> Option<&Entry> {
        self.entries.iter().find(|e| e.tag == tag)
    }
}

fn read_ifd(c: &mut Cursor<'_>, offset: u64, bigtiff: bool) -> Result<(RawIfd, u64)> {
    let (count, entry_size, first) =
        if bigtiff { (c.u64(offset)?, 20u64, offset + 8) } else { (u64::from(c.u16(offset)?), 12u64, offset + 2) };
    if count == 0 || count > MAX_ENTRIES {
        return Err(format_err(format!("IFD at {offset} has {count} entries")));
    }
    // Touch the whole table first so a short prefix yields one NeedMore.
    c.bytes(first, count * entry_size + if bigtiff { 8 } else { 4 })?;
    let mut entries = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = first + i * entry_size;
        let tag = c.u16(at)?;
        let typ = c.u16(at + 2)?;
        let (count, inline_at, inline_cap) =
            if bigtiff { (c.u64(at + 4)?, at + 12, 8) } else { (u64::from(c.u32(at + 4)?), at + 8, 4) };
        let size = type_size(typ).unwrap_or(1).saturating_mul(count);
        let value_at = if size <= inline_cap {
            inline_at
        } else if bigtiff {
            c.u64(inline_at)?
        } else {
            u64::from(c.u32(inline_at)?)
        };
        entries.push(Entry { tag, typ, count, value_at });
    }
    let next_at = first + count * entry_size;
    let next = if bigtiff { c.u64(next_at)? } else { u64::from(c.u32(next_at)?) };
    Ok((RawIfd { entries }, next))
}

const TAG_SUBFILE: u16 = 254;
const TAG_WIDTH: u16 = 256;
const TAG_HEIGHT: u16 = 257;
const TAG_BITS: u16 = 258;
const TAG_COMPRESSION: u16 = 259;
const TAG_STRIP_OFFSETS: u16 = 273;
const TAG_SAMPLES: u16 = 277;
const TAG_PLANAR: u16 = 284;
const TAG_PREDICTOR: u16 = 317;
const TAG_TILE_WIDTH: u16 = 322;
const TAG_TILE_HEIGHT: u16 = 323;
const TAG_TILE_OFFSETS: u16 = 324;
const TAG_TILE_COUNTS: u16 = 325;
const TAG_SAMPLE_FORMAT: u16 = 339;
const TAG_PIXEL_SCALE: u16 = 33550;
const TAG_TIEPOINT: u16 = 33922;
const TAG_TRANSFORM: u16 = 34264;
const TAG_GEOKEYS: u16 = 34735;
const TAG_NODATA: u16 = 42113;

const KEY_MODEL_TYPE: u64 = 1024;
const KEY_RASTER_TYPE: u64 = 1025;
const KEY_GEOGRAPHIC: u64 = 2048;
const KEY_PROJECTED: u64 = 3072;

fn value(c: &mut Cursor<'_>, ifd: &RawIfd, tag: u16) -> Result<Option<Value>> {
    ifd.get(tag).map(|e| read_value(c, e)).transpose()
}

fn int_tag(c: &mut Cursor<'_>, ifd: &RawIfd, tag: u16) -> Result<Option<u64>> {
    Ok(value(c, ifd, tag)?.and_then(|v| v.first_int()))
}

fn required_u32(c: &mut Cursor<'_>, ifd: &RawIfd, tag: u16, name: &str) -> Result<u32> {
    let v = int_tag(c, ifd, tag)?.ok_or_else(|| format_err(format!("missing {name}")))?;
    u32::try_from(v)
        .ok()
        .filter(|&v| v > 0 && v <= MAX_DIMENSION)
        .ok_or_else(|| format_err(format!("{name} = {v} out of range")))
}

fn parse_level(c: &mut Cursor<'_>, ifd: &RawIfd) -> Result<Ifd> {
    let width = required_u32(c, ifd, TAG_WIDTH, "ImageWidth")?;
    let height = required_u32(c, ifd, TAG_HEIGHT, "ImageLength")?;
    if ifd.get(TAG_TILE_WIDTH).is_none() || ifd.get(TAG_TILE_OFFSETS).is_none() {
        return Err(TiffError::UnsupportedLayout(if ifd.get(TAG_STRIP_OFFSETS).is_some() {
            "striped TIFF; only tiled layouts are read".into()
        } else {
            "missing tile tags".into()
        }));
    }
    let tile_width = required_u32(c, ifd, TAG_TILE_WIDTH, "TileWidth")?;
    let tile_height = required_u32(c, ifd, TAG_TILE_HEIGHT, "TileLength")?;
    if u64::from(tile_width) * u64::from(tile_height) > 1 << 26 {
        return Err(TiffError::UnsupportedLayout(format!("tile {tile_width}x{tile_height} too large")));
    }
    let samples = int_tag(c, ifd, TAG_SAMPLES)?.unwrap_or(1);
    if samples != 1 {
        return Err(TiffError::UnsupportedLayout(format!("{samples} samples per pixel")));
    }
    let planar = int_tag(c, ifd, TAG_PLANAR)?.unwrap_or(1);
    if planar != 1 && planar != 2 {
        return Err(format_err(format!("PlanarConfiguration {planar}")));
    }
    let bits = int_tag(c, ifd, TAG_BITS)?.unwrap_or(1);
    let format = int_tag(c, ifd, TAG_SAMPLE_FORMAT)?.unwrap_or(1);
    let sample_type =
        SampleType::from_tiff(u16::try_from(bits).unwrap_or(u16::MAX), u16::try_from(format).unwrap_or(u16::MAX))?;
    let compression = u16::try_from(int_tag(c, ifd, TAG_COMPRESSION)?.unwrap_or(1)).unwrap_or(u16::MAX);
    let predictor = u16::try_from(int_tag(c, ifd, TAG_PREDICTOR)?.unwrap_or(1)).unwrap_or(u16::MAX);
    let tile_offsets = value(c, ifd, TAG_TILE_OFFSETS)?
        .and_then(|v| v.ints().map(<[u64]>::to_vec))
        .ok_or_else(|| format_err("TileOffsets not integer"))?;
    let tile_byte_counts = value(c, ifd, TAG_TILE_COUNTS)?
        .and_then(|v| v.ints().map(<[u64]>::to_vec))
        .ok_or_else(|| format_err("missing TileByteCounts"))?;
    if tile_offsets.len() != tile_byte_counts.len() {
        return Err(format_err(format!(
            "{} tile offsets but {} byte counts",
            tile_offsets.len(),
            tile_byte_counts.len()
        )));
    }
    let expected = u64::from(width.div_ceil(tile_width)) * u64::from(height.div_ceil(tile_height));
    if tile_offsets.len() as u64 != expected {
        return Err(format_err(format!("{} tiles, expected {expected}", tile_offsets.len())));
    }
    Ok(Ifd {
        width,
        height,
        tile_width,
        tile_height,
        sample_type,
        compression,
        predictor,
        tile_offsets,
        tile_byte_counts,
        geo_transform: GeoTransform { origin_x: 0.0, origin_y: 0.0, pixel_width: 1.0, pixel_height: 1.0 },
    })
}

fn geo_transform(c: &mut Cursor<'_>, ifd: &RawIfd, pixel_is_point: bool) -> Result<GeoTransform> {
    let gt = if let Some(m) = value(c, ifd, TAG_TRANSFORM)?.and_then(|v| v.floats()) {
        if m.len() < 16 {
            return Err(TiffError::Georeference("ModelTransformation needs 16 values".into()));
        }
        if m[1] != 0.0 || m[4] != 0.0 {
            return Err(TiffError::Georeference("rotated rasters are not supported".into()));
        }
        GeoTransform { origin_x: m[3], origin_y: m[7], pixel_width: m[0], pixel_height: -m[5] }
    } else {
        let scale = value(c, ifd, TAG_PIXEL_SCALE)?.and_then(|v| v.floats());
        let tie = value(c, ifd, TAG_TIEPOINT)?.and_then(|v| v.floats());
        match (scale, tie) {
            (Some(s), Some(t)) if s.len() >= 2 && t.len() >= 6 => GeoTransform {
                origin_x: t[3] - t[0] * s[0],
                origin_y: t[4] + t[1] * s[1],
                pixel_width: s[0],
                pixel_height: s[1],
            },
            _ => return Err(TiffError::Georeference("no ModelPixelScale/ModelTiepoint or ModelTransformation".into())),
        }
    };
    let ok = [gt.origin_x, gt.origin_y, gt.pixel_width, gt.pixel_height].iter().all(|v| v.is_finite())
        && gt.pixel_width > 0.0
        && gt.pixel_height > 0.0;
    if !ok {
        return Err(TiffError::Georeference(format!("degenerate geotransform {gt:?}")));
    }
    Ok(if pixel_is_point {
        GeoTransform {
            origin_x: gt.origin_x - gt.pixel_width / 2.0,
            origin_y: gt.origin_y + gt.pixel_height / 2.0,
            ..gt
        }
    } else {
        gt
    })
}

fn geo_keys(c: &mut Cursor<'_>, ifd: &RawIfd) -> Result<Vec<(u64, u64)>> {
    let Some(dir) = value(c, ifd, TAG_GEOKEYS)? else {
        return Err(TiffError::Georeference("missing GeoKeyDirectory".into()));
    };
    let v = dir.ints().ok_or_else(|| TiffError::Georeference("GeoKeyDirectory not SHORT".into()))?;
    if v.len() < 4 {
        return Err(TiffError::Georeference("GeoKeyDirectory too short".into()));
    }
    let n = v[3] as usize;
    let mut keys = Vec::new();
    for k in 0..n {
        let Some(e) = v.get(4 + 4 * k..8 + 4 * k) else {
            return Err(TiffError::Georeference("GeoKeyDirectory truncated".into()));
        };
        // Location 0: the value is stored inline.
        if e[1] == 0 {
            keys.push((e[0], e[3]));
        }
    }
    Ok(keys)
}

fn parse_nodata(c: &mut Cursor<'_>, ifd: &RawIfd) -> Result<Option<f64>> {
    Ok(match value(c, ifd, TAG_NODATA)? {
        Some(Value::Ascii(s)) => {
            let s = s.trim();
            match s.to_ascii_lowercase().as_str() {
                "nan" | "-nan" => Some(f64::NAN),
                _ => s.parse::<f64>().ok(),
            }
        }
        _ => None,
    })
}

impl CogHeader {
    /// Parse a TIFF header from a file prefix.
    pub fn parse(data: &[u8]) -> Result<Self> {
        let mut c = Cursor { data, order: ByteOrder::Little, max_end: 0 };
        let magic = c.bytes(0, 4)?;
        c.order = match &magic[..2] {
            b"II" => ByteOrder::Little,
            b"MM" => ByteOrder::Big,
            _ => return Err(format_err("bad byte-order mark")),
        };
        let version = c.u16(2)?;
        let (bigtiff, mut next) = match version {
            42 => (false, u64::from(c.u32(4)?)),
            43 => {
                if c.u16(4)? != 8 || c.u16(6)? != 0 {
                    return Err(format_err("unsupported BigTIFF offset size"));
                }
                (true, c.u64(8)?)
            }
            v => return Err(format_err(format!("version {v}"))),
        };

        let mut raws = Vec::new();
        let mut seen = Vec::new();
        while next != 0 {
            if seen.contains(&next) {
                return Err(format_err("IFD chain loops"));
            }
            if raws.len() == MAX_IFDS {
                return Err(format_err("too many IFDs"));
            }
            seen.push(next);
            let (ifd, n) = read_ifd(&mut c, next, bigtiff)?;
            raws.push(ifd);
            next = n;
        }
        let Some(first) = raws.first() else {
            return Err(format_err("no image directory"));
        };

        let keys = geo_keys(&mut c, first)?;
        let key = |id: u64| keys.iter().find(|(k, _)| *k == id).map(|(_, v)| *v);
        let model = key(KEY_MODEL_TYPE);
        let epsg = match model {
            Some(2) => key(KEY_GEOGRAPHIC),
            _ => key(KEY_PROJECTED).or_else(|| key(KEY_GEOGRAPHIC)),
        }
        .filter(|&e| e > 0 && e < 32767)
        .ok_or_else(|| TiffError::Georeference("no EPSG code in GeoKeys".into()))? as u32;
        let pixel_is_point = key(KEY_RASTER_TYPE) == Some(2);
        let base_gt = geo_transform(&mut c, first, pixel_is_point)?;
        let nodata = parse_nodata(&mut c, first)?;

        let mut ifds: Vec<Ifd> = Vec::new();
        for (i, raw) in raws.iter().enumerate() {
            let subfile = int_tag(&mut c, raw, TAG_SUBFILE)?.unwrap_or(0);
            if subfile & 4 != 0 {
                continue;
            }
            if i > 0 && subfile & 1 == 0 {
                continue;
            }
            let mut level = parse_level(&mut c, raw)?;
            let gt = match ifds.first() {
                None => base_gt,
                Some(full) => GeoTransform {
                    pixel_width: base_gt.pixel_width * f64::from(full.width) / f64::from(level.width),
                    pixel_height: base_gt.pixel_height * f64::from(full.height) / f64::from(level.height),
                    ..base_gt
                },
            };
            level.geo_transform = gt;
            if let Some(prev) = ifds.last() {
                if level.width >= prev.width {
                    return Err(format_err("overviews not ordered by decreasing size"));
                }
            }
            ifds.push(level);
        }
        if ifds.is_empty() {
            return Err(format_err("no image directory"));
        }
        let sample_type = ifds[0].sample_type;
        if ifds.iter().any(|l| l.sample_type != sample_type) {
            return Err(format_err("overviews differ in sample type"));
        }
        Ok(CogHeader { byte_order: c.order, bigtiff, ifds, epsg, nodata, header_bytes: c.max_end })
    }

    pub fn sample_type(&self) -> SampleType {
        self.ifds[0].sample_type
    }

    /// Coarsest level whose pixel size does not exceed `target` (in source CRS
    /// units), i.e. the cheapest level that does not upsample; the
    /// full-resolution level when every level is coarser than `target`.
    pub fn select_overview(&self, target: f64) -> usize {
        let eps = 1e-9 * target.abs();
        self.ifds
            .iter()
            .enumerate()
            .rev()
            .find(|(_, l)| l.geo_transform.pixel_width <= target + eps)
            .map_or(0, |(i, _)| i)
    }
}
