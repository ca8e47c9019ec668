//! PNG previews of one time step with a per-band 2–98 percentile stretch.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use ndarray::Array2;

use crate::cube::DataCube;
use crate::error::{Error, Result};

/// Band selection for a quicklook.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QuicklookBands {
    Rgb([String; 3]),
    Gray(String),
}

impl QuicklookBands {
    /// Parse `R,G,B` or a single band name.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        match parts.as_slice() {
            [g] if !g.is_empty() => Ok(QuicklookBands::Gray(g.to_string())),
            [r, g, b] if !r.is_empty() && !g.is_empty() && !b.is_empty() => {
                Ok(QuicklookBands::Rgb([r.to_string(), g.to_string(), b.to_string()]))
            }
            _ => Err(Error::Validation(format!("quicklook bands {s:?}: expected R,G,B or a single band"))),
        }
    }

    /// The first three cube bands; an error for cubes with fewer.
    pub fn default_for(bands: &[String]) -> Result<Self> {
        match bands {
            [r, g, b, ..] => Ok(QuicklookBands::Rgb([r.clone(), g.clone(), b.clone()])),
            [only] => Err(Error::Validation(format!(
                "cube has a single band; an RGB quicklook needs three (use --quicklook-bands {only} for grayscale)"
            ))),
            _ => Err(Error::Validation(format!(
                "cube has {} bands; an RGB quicklook needs three (pass one band for grayscale)",
                bands.len()
            ))),
        }
    }

    fn names(&self) -> Vec<&str> {
        match self {
            QuicklookBands::Rgb(b) => b.iter().map(String::as_str).collect(),
            QuicklookBands::Gray(b) => vec![b.as_str()],
        }
    }
}

/// Percentile `p` (0–100) of sorted data by linear interpolation.
pub fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Map valid values to 0–255 between the 2nd and 98th percentiles. A
/// constant band maps to mid-gray.
pub fn stretch(values: &Array2<f64>, mask: &Array2<bool>) -> Array2<u8> {
    let mut valid: Vec<f64> =
        values.iter().zip(mask.iter()).filter(|(v, &m)| m && v.is_finite()).map(|(v, _)| *v).collect();
    valid.sort_by(f64::total_cmp);
    let (Some(lo), Some(hi)) = (percentile(&valid, 2.0), percentile(&valid, 98.0)) else {
        return Array2::zeros(values.dim());
    };
    ndarray::Zip::from(values).and(mask).map_collect(|&v, &m| {
        if !m || !v.is_finite() {
            0
        } else if hi <= lo {
            128
        } else {
            (((v - lo) / (hi - lo)).clamp(0.0, 1.0) * 255.0).round() as u8
        }
    })
}

/// Render time step `t` to an RGBA PNG; masked pixels are transparent.
pub fn write_quicklook(cube: &DataCube, t: usize, bands: &QuicklookBands, path: &Path) -> Result<()> {
    let names = bands.names();
    if names.len() == 3 && cube.bands().len() < 3 {
        return Err(Error::Validation(format!(
            "cube has {} band(s); request a single band for a grayscale quicklook",
            cube.bands().len()
        )));
    }
    if t >= cube.times().len() {
        return Err(Error::Validation(format!("quicklook time index {t} outside {} steps", cube.times().len())));
    }
    let mut channels = Vec::with_capacity(names.len());
    let mut alpha: Option<Array2<bool>> = None;
    for name in names {
        let b = cube
            .bands()
            .iter()
            .position(|x| x == name)
            .ok_or_else(|| Error::Validation(format!("quicklook band {name:?} is not in the cube")))?;
        let (v, m) = cube.slice(t, b)?;
        channels.push(stretch(&v, &m));
        alpha = Some(match alpha {
            None => m,
            Some(a) => ndarray::Zip::from(&a).and(&m).map_collect(|&x, &y| x && y),
        });
    }
    let alpha = alpha.expect("at least one band");
    let (h, w) = alpha.dim();
    let mut rgba = Vec::with_capacity(w * h * 4);
    for j in 0..h {
        for k in 0..w {
            let px = |c: usize| channels[c.min(channels.len() - 1)][(j, k)];
            let a = alpha[(j, k)];
            let (r, g, b) = if a { (px(0), px(1), px(2)) } else { (0, 0, 0) };
            rgba.extend([r, g, b, if a { 255 } else { 0 }]);
        }
    }
    encode_png(path, w as u32, h as u32, &rgba)
}

pub fn encode_png(path: &Path, width: u32, height: u32, rgba: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(rgba).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
