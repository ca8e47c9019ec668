mod common;

use std::process::Command;

use common::*;
use cube::io::zarr::read_zarr;
use serde_json::Value;

fn with(mut args: Vec<String>, extra: &[&str]) -> Vec<String> {
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn create_writes_store_and_summary() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let dir = scratch();
    let out = dir.path().join("cube.zarr");
    let args = with(cli_args("create", &server.endpoint(), 16, 500.0), &["-o", &path_arg(&out)]);
    let run = run_cli(&args, &no_env);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.stdout.contains("epsg = 32632"), "{}", run.stdout);
    assert!(run.stdout.contains("shape = [4, 3, 16, 16]"), "{}", run.stdout);
    assert_eq!(read_zarr(&out).unwrap().shape(), [4, 3, 16, 16]);

    // Second run without --overwrite refuses.
    let run = run_cli(&args, &no_env);
    assert_eq!(run.code, 4, "{}", run.stderr);
    assert!(run.stderr.contains("exists"), "{}", run.stderr);
    let run = run_cli(&with(args, &["--overwrite"]), &no_env);
    assert_eq!(run.code, 0, "{}", run.stderr);
}

#[test]
fn plan_is_deterministic_and_reads_headers_only() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let args = cli_args("plan", &server.endpoint(), 32, 500.0);
    let first = run_cli(&args, &no_env);
    assert_eq!(first.code, 0, "{}", first.stderr);
    assert!(server.asset_requests().iter().all(|r| r.range.is_some_and(|(a, b)| a == 0 && b < 65536)));
    let second = run_cli(&args, &no_env);
    assert_eq!(first.stdout, second.stdout);

    let plan: Value = serde_json::from_str(&first.stdout).unwrap();
    assert_eq!(plan["shape"], serde_json::json!([4, 3, 32, 32]));
    assert_eq!(plan["attributes"]["epsg"], 32632);
    assert_eq!(plan["dtype"], "<f8");
    assert_eq!(plan["items"].as_array().unwrap().len(), 4);
    let est = plan["estimated_tile_bytes"].as_u64().unwrap();
    assert!(est > 0 && est < fx.manifest.total_asset_bytes);
    assert_eq!(plan["realized_edge"], 32);
}

#[test]
fn plan_to_file() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let dir = scratch();
    let out = dir.path().join("plan.json");
    let run = run_cli(&with(cli_args("plan", &server.endpoint(), 8, 500.0), &["-o", &path_arg(&out)]), &no_env);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let plan: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(plan["shape"], serde_json::json!([4, 3, 8, 8]));
}

#[test]
fn metadata_output_reads_no_assets() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let dir = scratch();
    let out = dir.path().join("meta.json");
    let args =
        with(cli_args("create", &server.endpoint(), 16, 500.0), &["-o", &path_arg(&out), "--format", "metadata"]);
    let run = run_cli(&args, &no_env);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(server.asset_requests().is_empty());
    let doc: Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(doc["shape"], serde_json::json!([4, 3, 16, 16]));
    assert_eq!(doc["x"].as_array().unwrap().len(), 16);
    assert_eq!(doc["attrs"].as_object().unwrap().len(), 11);
}

#[test]
fn quicklook_png() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let dir = scratch();
    let out = dir.path().join("cube.zarr");
    let args = with(
        cli_args("create", &server.endpoint(), 16, 500.0),
        &["-o", &path_arg(&out), "--quicklook", "--quicklook-bands", "B04,B03,B02", "--quicklook-time", "2"],
    );
    let run = run_cli(&args, &no_env);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let png = out.with_extension("png");
    let decoder = png::Decoder::new(std::io::BufReader::new(std::fs::File::open(&png).unwrap()));
    let mut reader = decoder.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size().unwrap()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!((info.width, info.height), (16, 16));
    assert_eq!(info.color_type, png::ColorType::Rgba);
    let alpha: Vec<u8> = buf.chunks(4).map(|p| p[3]).collect();
    // Time step 2 is only partly covered.
    assert!(alpha.contains(&0) && alpha.contains(&255));

    let bad = dir.path().join("bad.zarr");
    let args = with(
        cli_args("create", &server.endpoint(), 8, 500.0),
        &["-o", &path_arg(&bad), "--quicklook", "--quicklook-bands", "B08"],
    );
    let run = run_cli(&args, &no_env);
    assert_eq!(run.code, 2, "{}", run.stderr);
    assert!(!bad.exists());
}

#[test]
fn exit_codes() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let dir = scratch();
    let out = |n: &str| path_arg(&dir.path().join(n));

    let mut args = cli_args("create", &server.endpoint(), 8, 500.0);
    args[3] = "95".into();
    let run = run_cli(&with(args, &["-o", &out("a.zarr")]), &no_env);
    assert_eq!(run.code, 2, "{}", run.stderr);
    assert!(run.stderr.contains("geomath"), "{}", run.stderr);

    let run = run_cli(&["cube".to_string(), "create".into(), "--lat".into(), "x".into()], &no_env);
    assert_eq!(run.code, 2);

    let mut args = cli_args("create", &server.endpoint(), 8, 500.0);
    args[11] = "2030-01-01".into();
    args[13] = "2030-02-01".into();
    let run = run_cli(&with(args, &["-o", &out("b.zarr")]), &no_env);
    assert_eq!(run.code, 3, "{}", run.stderr);
    assert!(run.stderr.contains("2030-01-01"), "{}", run.stderr);

    let mut args = cli_args("plan", &server.endpoint(), 8, 500.0);
    args[17] = "B02,B77".into();
    let run = run_cli(&args, &no_env);
    assert_ne!(run.code, 0);
    assert!(run.stderr.contains("B77"), "{}", run.stderr);

    let run = run_cli(&["cube".to_string(), "--help".into()], &no_env);
    assert_eq!(run.code, 0);
    assert!(run.stdout.contains("create"));
}

#[test]
fn corrupt_asset_is_a_format_error() {
    let fx = default_fixture();
    let dir = scratch();
    copy_tree(&fx.root, dir.path());
    std::fs::write(dir.path().join("assets/hainich-1_B03.tif"), b"II*\0garbage").unwrap();
    let server = serve(dir.path());
    let run = run_cli(
        &with(cli_args("create", &server.endpoint(), 8, 500.0), &["-o", &path_arg(&dir.path().join("x.zarr"))]),
        &no_env,
    );
    assert_eq!(run.code, 6, "{}", run.stderr);
    assert!(run.stderr.contains("hainich-1_B03.tif"), "{}", run.stderr);
    assert!(!dir.path().join("x.zarr").exists());
}

#[test]
fn config_file_and_environment() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let dir = scratch();
    let config = dir.path().join("cube.toml");
    std::fs::write(
        &config,
        format!(
            "lat = {LAT}\nlon = {LON}\nedge_size = 8\nresolution = 500.0\nstart = \"{START}\"\nend = \"{END}\"\n\
             collection = \"synthetic-l2a\"\nbands = [\"B02\"]\nchunk_size = 4\n"
        ),
    )
    .unwrap();
    let endpoint = server.endpoint();
    let env = move |k: &str| (k == "CUBO_STAC_ENDPOINT").then(|| endpoint.clone());
    let args: Vec<String> =
        ["cube", "plan", "--config", &path_arg(&config), "--edge-size", "12"].map(String::from).into();
    let run = run_cli(&args, &env);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let plan: Value = serde_json::from_str(&run.stdout).unwrap();
    assert_eq!(plan["shape"], serde_json::json!([4, 1, 12, 12]));
    assert_eq!(plan["chunks"]["x"], 4);
    assert_eq!(plan["attributes"]["stac"], server.endpoint());

    std::fs::write(&config, "lat = 1.0\nunknown_key = 3\n").unwrap();
    let run = run_cli(&["cube", "plan", "--config", &path_arg(&config)].map(String::from), &no_env);
    assert_eq!(run.code, 2, "{}", run.stderr);
}

#[test]
fn binary_exit_status() {
    let bin = env!("CARGO_BIN_EXE_cube");
    let help = Command::new(bin).arg("--help").output().unwrap();
    assert!(help.status.success());
    let bad = Command::new(bin).args(["create", "--lat", "200"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    let missing = Command::new(bin).args(["plan", "--lat", "51", "--lon", "10"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2), "{}", String::from_utf8_lossy(&missing.stderr));
}
