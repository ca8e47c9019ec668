//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use cube::geomath::{
    bounding_box, half_edge_size, inverse_project, project_to_utm, select_utm_zone, snap_to_grid, GeoCoordinate,
    ProjectedCoordinate,
};
use cube::http::{HttpClient, TransferKind, TransferLedger};
use cube::io::zarr::{read_zarr, ArrayData};
use cube::stac::StacClient;
use cube::Pipeline;
use cube_testkit::{oracle_cube, FixtureSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid_arithmetic() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    for _ in 0..n {
        let i: f64 = rng.random_range(-1.0e7..1.0e7);
        let r = f64::from(rng.random_range(1u32..=1000));
        let s = rng.random_range(1u32..=4096);
        let ir = snap_to_grid(i, r).map_err(|e| e.to_string())?;
        ensure(ir % r == 0.0, || format!("snap({i}, {r}) = {ir} is not a multiple of r"))?;
        ensure((ir - i).abs() <= r / 2.0, || format!("snap({i}, {r}) = {ir} moved more than r/2"))?;
        let sh = half_edge_size(s, r).map_err(|e| e.to_string())?.meters;
        ensure(sh == (f64::from(s) * r / 2.0 + 0.5).floor(), || format!("half edge of ({s}, {r}) = {sh}"))?;
        let yr = snap_to_grid(i.abs() * 0.7, r).map_err(|e| e.to_string())?;
        let b = bounding_box(ir + 5.0e5, yr, sh, 32632).map_err(|e| e.to_string())?;
        let (x, y) = (ir + 5.0e5, yr);
        ensure(b.x_min == x - sh && b.x_max == x + sh && b.y_min == y - sh && b.y_max == y + sh, || {
            format!("box for ({x}, {y}, {sh}) = {b:?}")
        })?;
        ensure(b.width() == 2.0 * sh && b.height() == 2.0 * sh, || format!("box not square: {b:?}"))?;
    }
    let elapsed = t.elapsed();
    ensure(elapsed < Duration::from_secs(2), || format!("took {elapsed:?}"))?;
    Ok(format!("{n} triples in {elapsed:.2?}"))
}

#[derive(serde::Deserialize)]
struct ProjPoint {
    lat: f64,
    lon: f64,
    epsg: u32,
    x: f64,
    y: f64,
}

fn projection_accuracy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_deg: f64 = 0.0;
    for _ in 0..10_000 {
        let c = GeoCoordinate::new(rng.random_range(-80.0..84.0), rng.random_range(-180.0..180.0)).unwrap();
        let epsg = select_utm_zone(c).map_err(|e| e.to_string())?;
        let p = project_to_utm(c, epsg).map_err(|e| e.to_string())?;
        let back = inverse_project(p).map_err(|e| e.to_string())?;
        worst_deg = worst_deg.max((back.lat - c.lat).abs()).max((back.lon - c.lon).abs());
    }
    ensure(worst_deg <= 1e-9, || format!("round trip off by {worst_deg}°"))?;

    let doc: Value = serde_json::from_str(include_str!("fixtures/proj_points.json")).unwrap();
    let points: Vec<ProjPoint> = serde_json::from_value(doc["points"].clone()).unwrap();
    ensure(points.len() >= 20, || format!("only {} reference points", points.len()))?;
    let mut worst_m: f64 = 0.0;
    for p in &points {
        let got = project_to_utm(GeoCoordinate::new(p.lat, p.lon).unwrap(), p.epsg).map_err(|e| e.to_string())?;
        worst_m = worst_m.max((got.x - p.x).hypot(got.y - p.y));
        let inv = inverse_project(ProjectedCoordinate::new(p.x, p.y, p.epsg).unwrap()).map_err(|e| e.to_string())?;
        worst_deg = worst_deg.max((inv.lat - p.lat).abs()).max((inv.lon - p.lon).abs());
    }
    ensure(worst_m <= 0.005, || format!("reference points off by {worst_m} m"))?;
    Ok(format!("round trip ≤ {worst_deg:.1e}°, {} reference points within {:.2e} m", points.len(), worst_m))
}

struct EndToEnd {
    elapsed: Duration,
    served: u64,
}

fn end_to_end(server: &cube_testkit::CatalogServer) -> Result<EndToEnd, String> {
    let fx = default_fixture();
    let dir = scratch();
    let out = dir.path().join("cube.zarr");
    let mut args = cli_args("create", &server.endpoint(), 32, 500.0);
    args.extend(["-o".to_string(), path_arg(&out)]);
    server.clear_log();
    let t = Instant::now();
    let run = run_cli(&args, &no_env);
    let elapsed = t.elapsed();
    ensure(run.code == 0, || format!("exit {}: {}", run.code, run.stderr))?;
    let served = server.asset_bytes_served();

    let store = read_zarr(&out).map_err(|e| e.to_string())?;
    ensure(store.shape() == [4, 3, 32, 32], || format!("shape {:?}", store.shape()))?;
    let oracle = oracle_cube(&fx.spec, &oracle_request(&server.endpoint(), 32, 500.0, &BANDS));
    let ArrayData::Bool(mask) = &store.mask.data else { return Err("mask is not boolean".into()) };
    compare_with_oracle(store.cube.numbers().unwrap(), mask, &oracle)?;
    let times: Vec<i64> = oracle.times.iter().map(|t| t.timestamp_millis()).collect();
    ensure(store.time == times, || format!("times {:?}", store.time))?;
    ensure(store.x == oracle.x && store.y == oracle.y, || "coordinates differ from the oracle".into())?;

    ensure(store.attrs.len() == 11, || format!("{} attributes", store.attrs.len()))?;
    for (k, want) in &oracle.attrs {
        let got = store.attrs.get(k).ok_or_else(|| format!("attribute {k} missing"))?;
        let ok = match (k.as_str(), got.as_f64(), want.as_f64()) {
            // The oracle's projection is an independent series good to ~1 mm.
            ("central_x" | "central_y", Some(g), Some(w)) => (g - w).abs() <= 1e-3,
            _ => got == want || got.as_f64().zip(want.as_f64()).is_some_and(|(g, w)| g == w),
        };
        ensure(ok, || format!("attribute {k}: {got} vs oracle {want}"))?;
    }
    let doc: Value = serde_json::from_str(include_str!("fixtures/proj_points.json")).unwrap();
    let reference = &doc["points"][0];
    ensure(reference["lat"] == LAT && reference["lon"] == LON, || "first reference point is not the centre".into())?;
    for axis in ["x", "y"] {
        let got = store.attrs[&format!("central_{axis}")].as_f64().unwrap_or(f64::NAN);
        let want = reference[axis].as_f64().unwrap();
        ensure((got - want).abs() <= 0.005, || format!("central_{axis} {got} vs reference {want}"))?;
    }
    let dist = store.distance.numbers().unwrap();
    for (a, b) in dist.iter().zip(&oracle.distance) {
        ensure((a - b).abs() <= 1e-9 * b.abs().max(1.0), || format!("distance {a} vs {b}"))?;
    }
    ensure(elapsed < Duration::from_secs(30), || format!("took {elapsed:?}"))?;
    Ok(EndToEnd { elapsed, served })
}

fn range_efficiency(server: &cube_testkit::CatalogServer, e2e: &EndToEnd) -> Outcome {
    let total = default_fixture().manifest.total_asset_bytes;
    let share = e2e.served as f64 / total as f64;
    ensure(share < 0.15, || format!("served {} of {total} bytes ({:.1}%)", e2e.served, share * 100.0))?;

    server.clear_log();
    let run = run_cli(&cli_args("plan", &server.endpoint(), 32, 500.0), &no_env);
    ensure(run.code == 0, || format!("plan exit {}: {}", run.code, run.stderr))?;
    let reqs = server.asset_requests();
    ensure(reqs.len() == 12, || format!("plan made {} asset requests", reqs.len()))?;
    ensure(reqs.iter().all(|r| r.range.is_some_and(|(a, b)| a == 0 && b < 64 * 1024)), || {
        format!("plan requested beyond the header probe: {:?}", reqs.iter().map(|r| r.range).collect::<Vec<_>>())
    })?;
    Ok(format!("create read {:.2}% of fixture bytes; plan read 12 header probes", share * 100.0))
}

fn stac_semantics() -> Outcome {
    let spec = FixtureSpec::random_catalog(30, 21);
    let shared = generate(&spec);
    let server = serve(&shared.fixture.root);
    let client = StacClient::new(&server.endpoint(), http());
    let queries = random_queries(&spec, 50, 8);
    let mut hits = 0;
    for (n, q) in queries.iter().enumerate() {
        let expected = expected_ids(&spec, q);
        hits += expected.len();
        for limit in [1, 3, 7, 100] {
            let got: Vec<String> = client
                .search_items(&search_query(&spec, q, limit))
                .map_err(|e| format!("query {n}: {e}"))?
                .into_iter()
                .map(|i| i.id)
                .collect();
            ensure(got == expected, || format!("query {n} limit {limit}: {got:?} vs {expected:?}"))?;
        }
    }
    Ok(format!("50 queries × 4 page sizes, {hits} matches"))
}

fn resampling() -> Outcome {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let p = Pipeline::new(http());
    let (down, _) = p.open(&request(&server.endpoint(), 32, 500.0, &BANDS), None).map_err(|e| e.to_string())?;
    let (v, m) = down.materialize().map_err(|e| e.to_string())?;
    let oracle = oracle_cube(&fx.spec, &oracle_request(&server.endpoint(), 32, 500.0, &BANDS));
    compare_with_oracle(v.as_slice().unwrap(), m.as_slice().unwrap(), &oracle).map_err(|e| format!("100→500: {e}"))?;

    let spec = coarse_spec();
    let shared = generate(&spec);
    let server = serve(&shared.fixture.root);
    let mut req = request(&server.endpoint(), 32, 100.0, &BANDS);
    req.collection = spec.collection.clone();
    let (up, _) = p.open(&req, None).map_err(|e| e.to_string())?;
    let (v, m) = up.materialize().map_err(|e| e.to_string())?;
    let oracle = oracle_cube(&spec, &oracle_request(&server.endpoint(), 32, 100.0, &BANDS));
    compare_with_oracle(v.as_slice().unwrap(), m.as_slice().unwrap(), &oracle).map_err(|e| format!("500→100: {e}"))?;
    let valid = m.iter().filter(|&&x| x).count();
    Ok(format!("100→500 and 500→100 exact; {valid} valid cells upsampled"))
}

fn laziness() -> Outcome {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let ledger = TransferLedger::new();
    let p = Pipeline::new(Arc::new(HttpClient::new(Arc::clone(&ledger))));
    let chunks = cube::ChunkSpec { time: 1, band: 2, y: 12, x: 9 };
    let (cube, _) = p.open(&request(&server.endpoint(), 32, 500.0, &BANDS), Some(chunks)).map_err(|e| e.to_string())?;
    let tile_reqs = ledger.count(TransferKind::Tile);
    let asset_reqs = server.asset_requests();
    ensure(tile_reqs == 0, || format!("{tile_reqs} tile requests before any chunk was read"))?;
    ensure(asset_reqs.iter().all(|r| r.range.is_some_and(|(a, _)| a == 0)), || "non-header asset request".into())?;

    let cube = cube.without_cache();
    let mut order = cube.plan().chunk_indices();
    let forward = assemble_chunks(&cube, &order);
    order.reverse();
    let reverse = assemble_chunks(&cube, &order);
    use rand::seq::SliceRandom;
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(3));
    let shuffled = assemble_chunks(&cube, &order);
    for other in [&reverse, &shuffled] {
        ensure(forward.1 == other.1, || "mask depends on chunk order".into())?;
        let same = forward.0.iter().zip(other.0.iter()).all(|(a, b)| a == b || (a.is_nan() && b.is_nan()));
        ensure(same, || "values depend on chunk order".into())?;
    }
    Ok(format!("0 tile requests after assembly; {} chunks in 3 orders agree", order.len()))
}

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(detail)) => {
            println!("PASS {name}: {detail}");
            true
        }
        Ok(Err(reason)) => {
            println!("FAIL {name}: {reason}");
            false
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("FAIL {name}: panicked: {msg}");
            false
        }
    }
}

fn main() {
    let mut ok = true;
    ok &= report("grid snapping, half edge and bounding box", grid_arithmetic);
    ok &= report("projection accuracy", projection_accuracy);

    let fx = default_fixture();
    let server = serve(&fx.root);
    let mut e2e = None;
    ok &= report("offline end-to-end against the oracle", || {
        let r = end_to_end(&server)?;
        let detail = format!("(4, 3, 32, 32) cube equal to the oracle in {:.2?}", r.elapsed);
        e2e = Some(r);
        Ok(detail)
    });
    ok &= report("range efficiency", || match &e2e {
        Some(r) => range_efficiency(&server, r),
        None => Err("end-to-end run failed".into()),
    });
    ok &= report("search semantics", stac_semantics);
    ok &= report("nearest-neighbour resampling", resampling);
    ok &= report("laziness and chunk-order independence", laziness);
    if !ok {
        std::process::exit(1);
    }
}
