mod common;

use std::sync::Arc;

use chrono::{TimeZone, Utc};
use common::*;
use cube::cog::{ByteOrder, CogError, CogHeader, CogReader, ReaderOptions, SampleType, TiffError};
use cube::geomath::PixelGrid;
use cube::http::{HttpClient, TransferKind, TransferLedger};
use cube_testkit::tiff_writer::{Codec, Endian};
use cube_testkit::{BandSpec, FixtureSpec, ItemSpec, ValueFn};

fn reader() -> (CogReader, Arc<TransferLedger>) {
    let ledger = TransferLedger::new();
    (CogReader::new(Arc::new(HttpClient::new(Arc::clone(&ledger))), ReaderOptions::default()), ledger)
}

fn grid(x0: f64, y0: f64, n: usize, r: f64, epsg: u32) -> PixelGrid {
    PixelGrid {
        x_coords: (0..n).map(|k| x0 + r / 2.0 + k as f64 * r).collect(),
        y_coords: (0..n).map(|j| y0 - r / 2.0 - j as f64 * r).collect(),
        resolution: r,
        epsg,
    }
}

fn asset_url(server: &cube_testkit::CatalogServer, name: &str) -> String {
    format!("{}/assets/{name}", server.url())
}

#[test]
fn header_of_default_asset() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let (reader, ledger) = reader();
    let name = "hainich-0_B02.tif";
    let header = reader.open_remote(&asset_url(&server, name)).unwrap();
    assert_eq!(header.ifds.len(), 3);
    assert_eq!(header.epsg, 32632);
    assert_eq!(header.byte_order, ByteOrder::Little);
    assert_eq!(header.sample_type(), SampleType::U32);
    let sizes: Vec<f64> = header.ifds.iter().map(|i| i.geo_transform.pixel_width).collect();
    assert_eq!(sizes, [100.0, 200.0, 400.0]);
    assert_eq!((header.ifds[1].width, header.ifds[2].width), (512, 256));
    assert_eq!(header.ifds[2].geo_transform.origin_x, 550_000.0);
    assert_eq!(header.ifds[2].geo_transform.origin_y, 5_700_000.0);

    let manifest = fx.manifest.asset(name).unwrap();
    assert!(header.header_bytes <= manifest.layout.header_bytes);
    for (ifd, level) in header.ifds.iter().zip(&manifest.layout.levels) {
        let offsets: Vec<(u64, u64)> = level.tiles.iter().map(|t| (t.offset, t.len)).collect();
        let ours: Vec<(u64, u64)> =
            ifd.tile_offsets.iter().copied().zip(ifd.tile_byte_counts.iter().copied()).collect();
        assert_eq!(ours, offsets);
    }
    assert!(ledger.bytes(TransferKind::Header) <= 128 * 1024);
    assert_eq!(ledger.count(TransferKind::Tile), 0);
}

#[test]
fn truncated_file_is_a_format_error() {
    let fx = default_fixture();
    let bytes = std::fs::read(fx.root.join("assets/hainich-0_B02.tif")).unwrap();
    assert!(matches!(CogHeader::parse(&bytes[..64]), Err(TiffError::NeedMore { .. })));

    let dir = scratch();
    std::fs::create_dir_all(dir.path().join("assets")).unwrap();
    std::fs::write(dir.path().join("assets/cut.tif"), &bytes[..200]).unwrap();
    std::fs::write(dir.path().join("assets/junk.tif"), b"GIF89a not a tiff at all").unwrap();
    let server = serve(dir.path());
    let (reader, _) = reader();
    for name in ["cut.tif", "junk.tif"] {
        let err = reader.open_remote(&asset_url(&server, name)).unwrap_err();
        assert!(matches!(err, CogError::Header { source: TiffError::Format(_), .. }), "{name}: {err}");
        assert!(err.to_string().contains(name));
    }
}

#[test]
fn missing_asset_is_a_transport_error() {
    let server = serve(&default_fixture().root);
    let (reader, _) = reader();
    let err = reader.open_remote(&asset_url(&server, "nope.tif")).unwrap_err();
    assert!(matches!(err, CogError::Transport(_)), "{err}");
}

#[test]
fn native_window_reads_exact_values() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let (reader, ledger) = reader();
    // Item hainich-1: origin (560100, 5690300); window offset by (40, 70) px.
    let href = asset_url(&server, "hainich-1_B03.tif");
    let header = reader.open_remote(&href).unwrap();
    let g = grid(560_100.0 + 40.0 * 100.0, 5_690_300.0 - 70.0 * 100.0, 32, 100.0, 32632);
    let w = reader.read_window(&header, &href, "B03", &g, f64::NAN).unwrap();
    let band = &fx.spec.bands[1];
    for j in 0..32 {
        for k in 0..32 {
            assert!(w.mask[(j, k)]);
            assert_eq!(w.values[(j, k)], band.value.eval(40 + k as u32, 70 + j as u32, 1) as f32 as f64);
        }
    }
    let tile_bytes = ledger.bytes(TransferKind::Tile);
    assert!(tile_bytes > 0 && tile_bytes < fx.manifest.asset("hainich-1_B03.tif").unwrap().size / 4);
}

#[test]
fn window_outside_footprint_is_masked() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let (reader, ledger) = reader();
    let href = asset_url(&server, "hainich-0_B02.tif");
    let header = reader.open_remote(&href).unwrap();
    let g = grid(400_000.0, 5_500_000.0, 16, 500.0, 32632);
    let w = reader.read_window(&header, &href, "B02", &g, 0.0).unwrap();
    assert!(w.mask.iter().all(|m| !m));
    assert!(w.values.iter().all(|&v| v == 0.0));
    assert_eq!(ledger.count(TransferKind::Tile), 0);
}

#[test]
fn nodata_cells_are_masked() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let (reader, _) = reader();
    // B04 = (col + 1000·row + 1e6·t) mod 65536 with nodata 0; for t = 0 that
    // is zero at (col, row) = (536, 65).
    let href = asset_url(&server, "hainich-0_B04.tif");
    let header = reader.open_remote(&href).unwrap();
    assert_eq!(header.nodata, Some(0.0));
    let g = grid(550_000.0 + 530.0 * 100.0, 5_700_000.0 - 60.0 * 100.0, 10, 100.0, 32632);
    let w = reader.read_window(&header, &href, "B04", &g, -1.0).unwrap();
    assert!(!w.mask[(5, 6)]);
    assert_eq!(w.values[(5, 6)], -1.0);
    assert_eq!(w.mask.iter().filter(|m| !**m).count(), 1);
}

#[test]
fn coarse_window_uses_overview_and_few_bytes() {
    let fx = default_fixture();
    let server = serve(&fx.root);
    let (reader, ledger) = reader();
    let name = "hainich-0_B02.tif";
    let href = asset_url(&server, name);
    let header = reader.open_remote(&href).unwrap();
    assert_eq!(header.select_overview(500.0), 2);
    assert_eq!(header.select_overview(250.0), 1);
    assert_eq!(header.select_overview(50.0), 0);
    let g = grid(580_000.0, 5_680_000.0, 32, 500.0, 32632);
    let w = reader.read_window(&header, &href, "B02", &g, 0.0).unwrap();
    assert!(w.mask.iter().all(|&m| m));
    let served = ledger.bytes(TransferKind::Tile) + ledger.bytes(TransferKind::Header);
    let size = fx.manifest.asset(name).unwrap().size;
    assert!((served as f64) < 0.15 * size as f64, "{served} of {size}");
}

fn variant_spec(endian: Endian, bigtiff: bool, compression: Codec) -> FixtureSpec {
    let band = |name: &str, dtype: &str, value: ValueFn, nodata| BandSpec {
        name: name.into(),
        dtype: dtype.into(),
        compression,
        value,
        nodata,
    };
    FixtureSpec {
        collection: "variants".into(),
        seed: 1,
        width: 200,
        height: 150,
        tile_size: 64,
        overviews: 1,
        resolution: 10.0,
        endian,
        bigtiff,
        write_assets: true,
        items: vec![ItemSpec {
            id: "v".into(),
            datetime: Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap(),
            epsg: 32633,
            origin_x: 400_000.0,
            origin_y: 6_000_000.0,
            t: 2,
            cloud_cover: 0.0,
        }],
        bands: vec![
            band("u8", "uint8", ValueFn { offset: 0, c_col: 1, c_row: 7, c_t: 0, modulus: Some(256) }, None),
            band("i16", "int16", ValueFn { offset: -20_000, c_col: 3, c_row: 200, c_t: 1, modulus: None }, None),
            band("f64", "float64", ValueFn::linear(1, 1000, 1_000_000), None),
        ],
    }
}

#[test]
fn byte_orders_bigtiff_and_codecs() {
    for (endian, bigtiff, codec) in
        [(Endian::Big, false, Codec::Deflate), (Endian::Little, true, Codec::None), (Endian::Big, true, Codec::None)]
    {
        let spec = variant_spec(endian, bigtiff, codec);
        let shared = generate(&spec);
        let server = serve(&shared.fixture.root);
        let (reader, _) = reader();
        let item = &spec.items[0];
        for band in &spec.bands {
            let href = asset_url(&server, &FixtureSpec::asset_name(item, band));
            let header = reader.open_remote(&href).unwrap();
            assert_eq!(header.bigtiff, bigtiff);
            assert_eq!(header.byte_order == ByteOrder::Big, endian == Endian::Big);
            // Full raster at native resolution.
            let g = PixelGrid {
                x_coords: (0..200).map(|k| 400_005.0 + 10.0 * k as f64).collect(),
                y_coords: (0..150).map(|j| 5_999_995.0 - 10.0 * j as f64).collect(),
                resolution: 10.0,
                epsg: 32633,
            };
            let w = reader.read_window(&header, &href, &band.name, &g, f64::NAN).unwrap();
            for j in 0..150 {
                for k in 0..200 {
                    assert_eq!(w.values[(j, k)], band.value.eval(k as u32, j as u32, 2), "{} ({j}, {k})", band.name);
                }
            }
        }
    }
}

#[test]
fn server_without_ranges_is_rejected() {
    let fx = default_fixture();
    let opts = cube_testkit::ServerOptions { support_ranges: false, ..Default::default() };
    let server = cube_testkit::CatalogServer::start(&fx.root, opts).unwrap();
    let (reader, _) = reader();
    let err = reader.open_remote(&asset_url(&server, "hainich-0_B02.tif")).unwrap_err();
    assert!(err.to_string().to_lowercase().contains("range"), "{err}");
}
