#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use chrono::{DateTime, TimeZone, Utc};
use cube::geomath::GeoCoordinate;
use cube::http::{HttpClient, TransferLedger};
use cube::stac::QueryFilter;
use cube::CubeRequest;
use cube_testkit::{generate_fixture, CatalogServer, Fixture, FixtureSpec, OracleRequest, ServerOptions};

pub const LAT: f64 = 51.0795;
pub const LON: f64 = 10.4522;
pub const START: &str = "2022-08-01T00:00:00Z";
pub const END: &str = "2023-08-01T23:59:59Z";
pub const BANDS: [&str; 3] = ["B02", "B03", "B04"];

pub fn start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2022, 8, 1, 0, 0, 0).unwrap()
}

pub fn end() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2023, 8, 1, 23, 59, 59).unwrap()
}

/// Scratch directory under the target dir; dropped with the handle.
pub fn scratch() -> tempfile::TempDir {
    tempfile::Builder::new().prefix("cube-test-").tempdir_in(env!("CARGO_TARGET_TMPDIR")).unwrap()
}

/// A fixture generated once per test binary.
pub struct Shared {
    _dir: tempfile::TempDir,
    pub fixture: Fixture,
}

pub fn generate(spec: &FixtureSpec) -> Shared {
    let dir = scratch();
    let fixture = generate_fixture(spec, dir.path()).expect("fixture generates");
    Shared { _dir: dir, fixture }
}

pub fn default_fixture() -> &'static Fixture {
    static F: OnceLock<Shared> = OnceLock::new();
    &F.get_or_init(|| generate(&FixtureSpec::default_acceptance())).fixture
}

pub fn serve(root: &Path) -> CatalogServer {
    CatalogServer::start(root, ServerOptions::default()).expect("server starts")
}

pub fn http() -> Arc<HttpClient> {
    Arc::new(HttpClient::new(TransferLedger::new()))
}

pub fn request(endpoint: &str, edge: u32, res: f64, bands: &[&str]) -> CubeRequest {
    CubeRequest {
        center: GeoCoordinate::new(LAT, LON).unwrap(),
        edge_size: edge,
        resolution: res,
        time_start: start(),
        time_end: end(),
        collection: "synthetic-l2a".into(),
        bands: bands.iter().map(|b| b.to_string()).collect(),
        stac_endpoint: endpoint.into(),
        query: QueryFilter::default(),
    }
}

pub fn oracle_request(endpoint: &str, edge: u32, res: f64, bands: &[&str]) -> OracleRequest {
    OracleRequest {
        lat: LAT,
        lon: LON,
        edge_size: edge,
        resolution: res,
        start: start(),
        end: end(),
        bands: bands.iter().map(|b| b.to_string()).collect(),
        endpoint: endpoint.into(),
    }
}

/// CLI arguments for a request against `endpoint`.
pub fn cli_args(cmd: &str, endpoint: &str, edge: u32, res: f64) -> Vec<String> {
    [
        "cube",
        cmd,
        "--lat",
        &LAT.to_string(),
        "--lon",
        &LON.to_string(),
        "--edge-size",
        &edge.to_string(),
        "--resolution",
        &res.to_string(),
        "--start",
        START,
        "--end",
        END,
        "--collection",
        "synthetic-l2a",
        "--bands",
        &BANDS.join(","),
        "--endpoint",
        endpoint,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub struct CliRun {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn run_cli(args: &[String], env: &dyn Fn(&str) -> Option<String>) -> CliRun {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cube::io::cli::run_with(args.iter().cloned(), &mut out, &mut err, env, http());
    CliRun { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

pub fn no_env(_: &str) -> Option<String> {
    None
}

pub fn path_arg(p: &Path) -> String {
    p.to_str().unwrap().to_string()
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// A randomized search against a fixture catalog.
#[derive(Debug, Clone)]
pub struct RandomQuery {
    pub bbox: [f64; 4],
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    /// `(op, threshold)` on `eo:cloud_cover`.
    pub cloud: Option<(&'static str, f64)>,
}

pub fn random_queries(spec: &FixtureSpec, n: usize, seed: u64) -> Vec<RandomQuery> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let t0 = Utc.with_ymd_and_hms(2021, 12, 1, 0, 0, 0).unwrap();
    (0..n)
        .map(|_| {
            let lon = rng.random_range(8.0..13.0);
            let lat = rng.random_range(49.5..52.5);
            let half_lon = rng.random_range(0.02..1.5);
            let half_lat = rng.random_range(0.02..1.0);
            let a = t0 + chrono::Duration::hours(rng.random_range(0..24 * 420));
            let b = a + chrono::Duration::hours(rng.random_range(1..24 * 300));
            let cloud = if rng.random_bool(0.7) {
                let ops = ["eq", "neq", "lt", "lte", "gt", "gte"];
                let op = ops[rng.random_range(0..ops.len())];
                let v = if rng.random_bool(0.5) {
                    spec.items[rng.random_range(0..spec.items.len())].cloud_cover
                } else {
                    (rng.random_range(0.0..100.0f64) * 10.0).round() / 10.0
                };
                Some((op, v))
            } else {
                None
            };
            RandomQuery {
                bbox: [lon - half_lon, lat - half_lat, lon + half_lon, lat + half_lat],
                start: a,
                end: b,
                cloud,
            }
        })
        .collect()
}

/// Ids of items passing the geometric, temporal and property tests, ordered
/// by datetime then id.
pub fn expected_ids(spec: &FixtureSpec, q: &RandomQuery) -> Vec<String> {
    let mut hits: Vec<_> = spec
        .items
        .iter()
        .filter(|it| {
            let b = spec.item_bbox(it);
            let overlaps = b[0] <= q.bbox[2] && b[2] >= q.bbox[0] && b[1] <= q.bbox[3] && b[3] >= q.bbox[1];
            let in_time = it.datetime >= q.start && it.datetime <= q.end;
            let cloud = match q.cloud {
                None => true,
                Some((op, v)) => match op {
                    "eq" => it.cloud_cover == v,
                    "neq" => it.cloud_cover != v,
                    "lt" => it.cloud_cover < v,
                    "lte" => it.cloud_cover <= v,
                    "gt" => it.cloud_cover > v,
                    "gte" => it.cloud_cover >= v,
                    _ => unreachable!(),
                },
            };
            overlaps && in_time && cloud
        })
        .collect();
    hits.sort_by(|a, b| a.datetime.cmp(&b.datetime).then_with(|| a.id.cmp(&b.id)));
    hits.into_iter().map(|it| it.id.clone()).collect()
}

pub fn search_query(spec: &FixtureSpec, q: &RandomQuery, limit: u32) -> cube::stac::SearchQuery {
    let query = match q.cloud {
        Some((op, v)) => QueryFilter::from_predicates([format!("eo:cloud_cover:{op}:{v}").parse().unwrap()]),
        None => QueryFilter::default(),
    };
    cube::stac::SearchQuery {
        collections: vec![spec.collection.clone()],
        bbox: cube::geomath::GeoEnvelope {
            lon_min: q.bbox[0],
            lat_min: q.bbox[1],
            lon_max: q.bbox[2],
            lat_max: q.bbox[3],
        },
        start: q.start,
        end: q.end,
        query,
        limit,
    }
}

/// First mismatch between a cube (values, mask in (t, b, y, x) row-major
/// order) and the oracle.
pub fn compare_with_oracle(values: &[f64], mask: &[bool], oracle: &cube_testkit::OracleCube) -> Result<(), String> {
    if values.len() != oracle.values.len() || mask.len() != oracle.valid.len() {
        return Err(format!("length {} vs oracle {}", values.len(), oracle.values.len()));
    }
    for i in 0..values.len() {
        if mask[i] != oracle.valid[i] {
            return Err(format!("mask differs at flat index {i}: {} vs oracle {}", mask[i], oracle.valid[i]));
        }
        if mask[i] && values[i] != oracle.values[i] {
            return Err(format!("value differs at flat index {i}: {} vs oracle {}", values[i], oracle.values[i]));
        }
    }
    Ok(())
}

/// Materialize every chunk in the given order into full (values, mask).
pub fn assemble_chunks(cube: &cube::DataCube, order: &[[usize; 4]]) -> (ndarray::Array4<f64>, ndarray::Array4<bool>) {
    use ndarray::s;
    let [nt, nb, ny, nx] = cube.shape();
    let mut values = ndarray::Array4::from_elem((nt, nb, ny, nx), cube.fill_value());
    let mut mask = ndarray::Array4::from_elem((nt, nb, ny, nx), false);
    for &idx in order {
        let c = cube.materialize_chunk(idx).unwrap();
        let [t, b, y, x] = c.origin;
        let (dt, db, dy, dx) = c.values.dim();
        values.slice_mut(s![t..t + dt, b..b + db, y..y + dy, x..x + dx]).assign(&c.values);
        mask.slice_mut(s![t..t + dt, b..b + db, y..y + dy, x..x + dx]).assign(&c.mask);
    }
    (values, mask)
}

/// Single-item fixture at 500 m whose raster clips the north-west corner of
/// the default cube.
pub fn coarse_spec() -> FixtureSpec {
    let mut spec = FixtureSpec::default_acceptance();
    spec.collection = "synthetic-coarse".into();
    spec.width = 64;
    spec.height = 64;
    spec.tile_size = 16;
    spec.overviews = 0;
    spec.resolution = 500.0;
    spec.items.truncate(2);
    spec.items[0].origin_x = 601_000.0;
    spec.items[0].origin_y = 5_661_000.0;
    spec.items[1].origin_x = 580_000.0;
    spec.items[1].origin_y = 5_680_000.0;
    spec
}

pub fn copy_tree(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            std::fs::copy(entry.path(), target).unwrap();
        }
    }
}
