//! Fixture specifications and the on-disk generator.
//!
//! Tree layout under the fixture root:
//!
//! ```text
//! catalog/<collection>/items/<id>.json
//! assets/<id>_<band>.tif
//! manifest.json
//! ```
//!
//! Item asset hrefs are written relative to the root (`assets/...`); the mock
//! server rewrites them to absolute URLs.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::projection;
use crate::tiff_writer::{write_cog, Codec, Dtype, Endian, Georef, Level, TiffLayout, TiffOptions};
use crate::FixtureError;

/// `v(col, row, t) = offset + col·c_col + row·c_row + t·c_t`, optionally
/// reduced modulo `modulus`. `col`/`row` index the full-resolution image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueFn {
    pub offset: i64,
    pub c_col: i64,
    pub c_row: i64,
    pub c_t: i64,
    pub modulus: Option<i64>,
}

impl ValueFn {
    pub const fn linear(c_col: i64, c_row: i64, c_t: i64) -> Self {
        ValueFn { offset: 0, c_col, c_row, c_t, modulus: None }
    }

    pub fn eval(&self, col: u32, row: u32, t: u32) -> f64 {
        let v = self.offset + col as i64 * self.c_col + row as i64 * self.c_row + t as i64 * self.c_t;
        match self.modulus {
            Some(m) => v.rem_euclid(m) as f64,
            None => v as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub name: String,
    /// One of uint8, uint16, uint32, int16, float32, float64.
    pub dtype: String,
    pub compression: Codec,
    pub value: ValueFn,
    pub nodata: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemSpec {
    pub id: String,
    pub datetime: DateTime<Utc>,
    pub epsg: u32,
    /// Upper-left corner of the full-resolution raster in the item CRS.
    pub origin_x: f64,
    pub origin_y: f64,
    /// Value-function time index.
    pub t: u32,
    pub cloud_cover: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub collection: String,
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    pub tile_size: u32,
    pub overviews: u32,
    /// Native full-resolution pixel size in metres.
    pub resolution: f64,
    pub endian: Endian,
    pub bigtiff: bool,
    /// When false only STAC items are written (search-only catalogs).
    pub write_assets: bool,
    pub items: Vec<ItemSpec>,
    pub bands: Vec<BandSpec>,
}

/// Centre of the default fixture: DE-Hai, Hainich National Park.
pub const DEFAULT_CENTER: (f64, f64) = (51.0795, 10.4522);

impl FixtureSpec {
    /// Four items × three bands of 1024² deflate COGs at 100 m in 32632 with
    /// two overviews. Item `hainich-2` covers only the eastern part of the
    /// default cube so masks are exercised.
    pub fn default_acceptance() -> Self {
        let t0 = Utc.with_ymd_and_hms(2022, 8, 1, 10, 30, 0).unwrap();
        let origins =
            [(550_000.0, 5_700_000.0), (560_100.0, 5_690_300.0), (601_050.0, 5_710_000.0), (545_000.0, 5_705_000.0)];
        let items = origins
            .iter()
            .enumerate()
            .map(|(i, &(ox, oy))| ItemSpec {
                id: format!("hainich-{i}"),
                datetime: t0 + Duration::days(8 * i as i64),
                epsg: 32632,
                origin_x: ox,
                origin_y: oy,
                t: i as u32,
                cloud_cover: 5.0 + 10.0 * i as f64,
            })
            .collect();
        FixtureSpec {
            collection: "synthetic-l2a".into(),
            seed: 7,
            width: 1024,
            height: 1024,
            tile_size: 256,
            overviews: 2,
            resolution: 100.0,
            endian: Endian::Little,
            bigtiff: false,
            write_assets: true,
            items,
            bands: vec![
                BandSpec {
                    name: "B02".into(),
                    dtype: "uint32".into(),
                    compression: Codec::Deflate,
                    value: ValueFn::linear(1, 1000, 1_000_000),
                    nodata: None,
                },
                BandSpec {
                    name: "B03".into(),
                    dtype: "float32".into(),
                    compression: Codec::Deflate,
                    value: ValueFn { offset: 7, c_col: 3, c_row: 2000, c_t: 500_000, modulus: None },
                    nodata: None,
                },
                BandSpec {
                    name: "B04".into(),
                    dtype: "uint16".into(),
                    compression: Codec::Deflate,
                    value: ValueFn { offset: 0, c_col: 1, c_row: 1000, c_t: 1_000_000, modulus: Some(65536) },
                    nodata: Some(0.0),
                },
            ],
        }
    }

    /// A search-only catalog of `n` items with footprints, datetimes and cloud
    /// cover drawn from `seed`, scattered around the default centre.
    pub fn random_catalog(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t0 = Utc.with_ymd_and_hms(2022, 1, 1, 0, 0, 0).unwrap();
        let (cx, cy) = projection::forward(DEFAULT_CENTER.0, DEFAULT_CENTER.1, 32632);
        let items = (0..n)
            .map(|i| {
                let dx: f64 = rng.random_range(-150_000.0..150_000.0);
                let dy: f64 = rng.random_range(-150_000.0..150_000.0);
                let days: i64 = rng.random_range(0..365);
                let secs: i64 = rng.random_range(0..86_400);
                let cover: f64 = (rng.random_range(0.0..100.0f64) * 10.0).round() / 10.0;
                ItemSpec {
                    id: format!("scene-{i:03}"),
                    datetime: t0 + Duration::days(days) + Duration::seconds(secs),
                    epsg: 32632,
                    origin_x: (cx + dx).round(),
                    origin_y: (cy + dy).round(),
                    t: i as u32,
                    cloud_cover: cover,
                }
            })
            .collect();
        FixtureSpec {
            collection: "synthetic-search".into(),
            seed,
            width: 1000,
            height: 1000,
            tile_size: 256,
            overviews: 0,
            resolution: 60.0,
            endian: Endian::Little,
            bigtiff: false,
            write_assets: false,
            items,
            bands: vec![BandSpec {
                name: "B01".into(),
                dtype: "uint16".into(),
                compression: Codec::None,
                value: ValueFn::linear(1, 1, 0),
                nodata: None,
            }],
        }
    }

    pub fn item_footprint(&self, item: &ItemSpec) -> [f64; 4] {
        [
            item.origin_x,
            item.origin_y - self.height as f64 * self.resolution,
            item.origin_x + self.width as f64 * self.resolution,
            item.origin_y,
        ]
    }

    /// Geographic bbox `[lon_min, lat_min, lon_max, lat_max]` of an item.
    pub fn item_bbox(&self, item: &ItemSpec) -> [f64; 4] {
        let f = self.item_footprint(item);
        projection::envelope(f[0], f[1], f[2], f[3], item.epsg)
    }

    pub fn asset_name(item: &ItemSpec, band: &BandSpec) -> String {
        format!("{}_{}.tif", item.id, band.name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetManifest {
    pub path: String,
    pub size: u64,
    #[serde(flatten)]
    pub layout: TiffLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemManifest {
    pub id: String,
    pub datetime: String,
    pub bbox: [f64; 4],
    pub assets: Vec<(String, AssetManifest)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub collection: String,
    pub items: Vec<ItemManifest>,
    pub total_asset_bytes: u64,
}

impl Manifest {
    pub fn load(root: &Path) -> Result<Self, FixtureError> {
        let text = fs::read_to_string(root.join("manifest.json"))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn asset(&self, file_name: &str) -> Option<&AssetManifest> {
        self.items.iter().flat_map(|i| i.assets.iter()).map(|(_, a)| a).find(|a| a.path.ends_with(file_name))
    }
}

/// A generated fixture on disk.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub root: PathBuf,
    pub spec: FixtureSpec,
    pub manifest: Manifest,
}

fn levels_for(spec: &FixtureSpec, band: &BandSpec, item: &ItemSpec, dtype: Dtype) -> Result<Vec<Level>, FixtureError> {
    let mut base = Vec::with_capacity((spec.width * spec.height) as usize);
    for row in 0..spec.height {
        for col in 0..spec.width {
            let v = band.value.eval(col, row, item.t);
            if !dtype.holds(v) {
                return Err(FixtureError::ValueOutOfRange { band: band.name.clone(), value: v });
            }
            base.push(v);
        }
    }
    let mut levels = vec![Level { width: spec.width, height: spec.height, values: base }];
    // Factor-2 nearest neighbour: overview pixel (r, c) takes base (r·2^k, c·2^k).
    for k in 1..=spec.overviews {
        let f = 1u32 << k;
        let w = spec.width.div_ceil(f);
        let h = spec.height.div_ceil(f);
        let base = &levels[0];
        let mut values = Vec::with_capacity((w * h) as usize);
        for r in 0..h {
            for c in 0..w {
                values.push(base.values[((r * f) * spec.width + c * f) as usize]);
            }
        }
        levels.push(Level { width: w, height: h, values });
    }
    Ok(levels)
}

fn item_json(spec: &FixtureSpec, item: &ItemSpec) -> Value {
    let bbox = spec.item_bbox(item);
    let mut assets = serde_json::Map::new();
    for band in &spec.bands {
        assets.insert(
            band.name.clone(),
            json!({
                "href": format!("assets/{}", FixtureSpec::asset_name(item, band)),
                "type": "image/tiff; application=geotiff; profile=cloud-optimized",
                "roles": ["data"],
            }),
        );
    }
    json!({
        "type": "Feature",
        "stac_version": "1.0.0",
        "stac_extensions": ["https://stac-extensions.github.io/projection/v1.1.0/schema.json"],
        "id": item.id,
        "collection": spec.collection,
        "bbox": bbox,
        "geometry": {
            "type": "Polygon",
            "coordinates": [[
                [bbox[0], bbox[1]], [bbox[2], bbox[1]], [bbox[2], bbox[3]], [bbox[0], bbox[3]], [bbox[0], bbox[1]]
            ]]
        },
        "properties": {
            "datetime": item.datetime.to_rfc3339_opts(SecondsFormat::Millis, true),
            "eo:cloud_cover": item.cloud_cover,
            "proj:epsg": item.epsg,
            "platform": "synthetic",
        },
        "assets": assets,
        "links": [],
    })
}

/// Write the fixture tree for `spec` under `root`. Output is a pure function
/// of the spec (including its seed).
pub fn generate_fixture(spec: &FixtureSpec, root: &Path) -> Result<Fixture, FixtureError> {
    let dtypes = spec.bands.iter().map(|b| Dtype::parse(&b.dtype)).collect::<Result<Vec<_>, _>>()?;
    let items_dir = root.join("catalog").join(&spec.collection).join("items");
    let assets_dir = root.join("assets");
    fs::create_dir_all(&items_dir)?;
    fs::create_dir_all(&assets_dir)?;

    let mut manifest_items = Vec::new();
    let mut total = 0u64;
    for item in &spec.items {
        let doc = item_json(spec, item);
        fs::write(items_dir.join(format!("{}.json", item.id)), serde_json::to_vec_pretty(&doc)?)?;
        let mut assets = Vec::new();
        if spec.write_assets {
            for (band, &dtype) in spec.bands.iter().zip(&dtypes) {
                let levels = levels_for(spec, band, item, dtype)?;
                let georef = Georef {
                    origin_x: item.origin_x,
                    origin_y: item.origin_y,
                    pixel_size: spec.resolution,
                    epsg: item.epsg,
                };
                let opts = TiffOptions {
                    dtype,
                    codec: band.compression,
                    endian: spec.endian,
                    bigtiff: spec.bigtiff,
                    tile_size: spec.tile_size,
                    nodata: band.nodata,
                };
                let (bytes, layout) = write_cog(&levels, &georef, &opts);
                let name = FixtureSpec::asset_name(item, band);
                fs::write(assets_dir.join(&name), &bytes)?;
                total += bytes.len() as u64;
                assets.push((
                    band.name.clone(),
                    AssetManifest { path: format!("assets/{name}"), size: bytes.len() as u64, layout },
                ));
            }
        }
        manifest_items.push(ItemManifest {
            id: item.id.clone(),
            datetime: item.datetime.to_rfc3339_opts(SecondsFormat::Millis, true),
            bbox: spec.item_bbox(item),
            assets,
        });
    }
    let manifest = Manifest {
        seed: spec.seed,
        collection: spec.collection.clone(),
        items: manifest_items,
        total_asset_bytes: total,
    };
    fs::write(root.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(root.join("fixture_spec.json"), serde_json::to_vec_pretty(spec)?)?;
    Ok(Fixture { root: root.to_path_buf(), spec: spec.clone(), manifest })
}
