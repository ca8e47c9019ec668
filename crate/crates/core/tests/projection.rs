use cube::geomath::{inverse_project, project_to_utm, select_utm_zone, GeoCoordinate, ProjectedCoordinate};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Point {
    lat: f64,
    lon: f64,
    epsg: u32,
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
struct Points {
    points: Vec<Point>,
}

fn proj_points() -> Vec<Point> {
    let text = include_str!("fixtures/proj_points.json");
    serde_json::from_str::<Points>(text).unwrap().points
}

#[test]
fn forward_matches_proj_within_5mm() {
    let points = proj_points();
    assert!(points.len() >= 20);
    for p in points {
        let got = project_to_utm(GeoCoordinate::new(p.lat, p.lon).unwrap(), p.epsg).unwrap();
        let err = (got.x - p.x).hypot(got.y - p.y);
        assert!(err <= 0.005, "({}, {}) in {}: off by {err} m", p.lat, p.lon, p.epsg);
    }
}

#[test]
fn inverse_matches_proj_points() {
    for p in proj_points() {
        let back = inverse_project(ProjectedCoordinate::new(p.x, p.y, p.epsg).unwrap()).unwrap();
        assert!((back.lat - p.lat).abs() <= 1e-9, "{} vs {}", back.lat, p.lat);
        assert!((back.lon - p.lon).abs() <= 1e-9, "{} vs {}", back.lon, p.lon);
    }
}

#[test]
fn fixture_zones_agree_with_zone_selection() {
    for p in proj_points() {
        let own = select_utm_zone(GeoCoordinate::new(p.lat, p.lon).unwrap());
        // Points near the equator may be stored in the neighbouring hemisphere code.
        if let Ok(epsg) = own {
            assert_eq!(epsg % 100, p.epsg % 100, "zone for ({}, {})", p.lat, p.lon);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn round_trip_in_zone(lat in -80.0f64..84.0, lon in -179.999f64..179.999) {
        let c = GeoCoordinate::new(lat, lon).unwrap();
        let epsg = select_utm_zone(c).unwrap();
        let p = project_to_utm(c, epsg).unwrap();
        let back = inverse_project(p).unwrap();
        prop_assert!((back.lat - lat).abs() <= 1e-9);
        prop_assert!((back.lon - lon).abs() <= 1e-9);
    }
}
