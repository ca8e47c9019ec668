//! Series transverse Mercator (USGS Professional Paper 1395 formulation).
//!
//! Deliberately a different algorithm from the library's Krüger series so the
//! oracle never shares arithmetic with the code under test. Accurate to a few
//! millimetres within a UTM zone, which is plenty for snapping to metre grids.

const A: f64 = 6_378_137.0;
const F: f64 = 1.0 / 298.257_223_563;
const K0: f64 = 0.9996;

fn e2() -> f64 {
    F * (2.0 - F)
}

fn central_meridian(epsg: u32) -> f64 {
    let zone = epsg % 100;
    (zone as f64) * 6.0 - 183.0
}

fn false_northing(epsg: u32) -> f64 {
    if (32701..=32760).contains(&epsg) {
        10_000_000.0
    } else {
        0.0
    }
}

/// UTM EPSG code from the plain 6° zone formula.
pub fn utm_epsg(lat: f64, lon: f64) -> u32 {
    let zone = (((lon + 180.0) / 6.0).floor() as u32 + 1).min(60);
    if lat >= 0.0 {
        32600 + zone
    } else {
        32700 + zone
    }
}

fn meridian_arc(phi: f64) -> f64 {
    let e2 = e2();
    let e4 = e2 * e2;
    let e6 = e4 * e2;
    A * ((1.0 - e2 / 4.0 - 3.0 * e4 / 64.0 - 5.0 * e6 / 256.0) * phi
        - (3.0 * e2 / 8.0 + 3.0 * e4 / 32.0 + 45.0 * e6 / 1024.0) * (2.0 * phi).sin()
        + (15.0 * e4 / 256.0 + 45.0 * e6 / 1024.0) * (4.0 * phi).sin()
        - (35.0 * e6 / 3072.0) * (6.0 * phi).sin())
}

/// Geographic degrees to (easting, northing) in the given UTM zone.
pub fn forward(lat: f64, lon: f64, epsg: u32) -> (f64, f64) {
    let e2 = e2();
    let ep2 = e2 / (1.0 - e2);
    let phi = lat.to_radians();
    let dlam = (lon - central_meridian(epsg)).to_radians();
    let (s, c) = phi.sin_cos();
    let n = A / (1.0 - e2 * s * s).sqrt();
    let t = (s / c).powi(2);
    let cc = ep2 * c * c;
    let a = dlam * c;
    let m = meridian_arc(phi);
    let x = K0
        * n
        * (a + (1.0 - t + cc) * a.powi(3) / 6.0
            + (5.0 - 18.0 * t + t * t + 72.0 * cc - 58.0 * ep2) * a.powi(5) / 120.0);
    let y = K0
        * (m + n
            * (s / c)
            * (a * a / 2.0
                + (5.0 - t + 9.0 * cc + 4.0 * cc * cc) * a.powi(4) / 24.0
                + (61.0 - 58.0 * t + t * t + 600.0 * cc - 330.0 * ep2) * a.powi(6) / 720.0));
    (500_000.0 + x, false_northing(epsg) + y)
}

/// (easting, northing) in the given UTM zone to geographic degrees (lat, lon).
pub fn inverse(x: f64, y: f64, epsg: u32) -> (f64, f64) {
    let e2 = e2();
    let e4 = e2 * e2;
    let e6 = e4 * e2;
    let ep2 = e2 / (1.0 - e2);
    let m = (y - false_northing(epsg)) / K0;
    let mu = m / (A * (1.0 - e2 / 4.0 - 3.0 * e4 / 64.0 - 5.0 * e6 / 256.0));
    let e1 = (1.0 - (1.0 - e2).sqrt()) / (1.0 + (1.0 - e2).sqrt());
    let phi1 = mu
        + (3.0 * e1 / 2.0 - 27.0 * e1.powi(3) / 32.0) * (2.0 * mu).sin()
        + (21.0 * e1 * e1 / 16.0 - 55.0 * e1.powi(4) / 32.0) * (4.0 * mu).sin()
        + (151.0 * e1.powi(3) / 96.0) * (6.0 * mu).sin()
        + (1097.0 * e1.powi(4) / 512.0) * (8.0 * mu).sin();
    let (s1, c1) = phi1.sin_cos();
    let cc1 = ep2 * c1 * c1;
    let t1 = (s1 / c1).powi(2);
    let n1 = A / (1.0 - e2 * s1 * s1).sqrt();
    let r1 = A * (1.0 - e2) / (1.0 - e2 * s1 * s1).powf(1.5);
    let d = (x - 500_000.0) / (n1 * K0);
    let phi = phi1
        - (n1 * (s1 / c1) / r1)
            * (d * d / 2.0 - (5.0 + 3.0 * t1 + 10.0 * cc1 - 4.0 * cc1 * cc1 - 9.0 * ep2) * d.powi(4) / 24.0
                + (61.0 + 90.0 * t1 + 298.0 * cc1 + 45.0 * t1 * t1 - 252.0 * ep2 - 3.0 * cc1 * cc1) * d.powi(6)
                    / 720.0);
    let lam = (d - (1.0 + 2.0 * t1 + cc1) * d.powi(3) / 6.0
        + (5.0 - 2.0 * cc1 + 28.0 * t1 - 3.0 * cc1 * cc1 + 8.0 * ep2 + 24.0 * t1 * t1) * d.powi(5) / 120.0)
        / c1;
    (phi.to_degrees(), central_meridian(epsg) + lam.to_degrees())
}

/// Geographic envelope of a projected box, sampled densely along its edges.
pub fn envelope(x_min: f64, y_min: f64, x_max: f64, y_max: f64, epsg: u32) -> [f64; 4] {
    const STEPS: usize = 64;
    let mut env = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for i in 0..=STEPS {
        let f = i as f64 / STEPS as f64;
        let xs = x_min + (x_max - x_min) * f;
        let ys = y_min + (y_max - y_min) * f;
        for (x, y) in [(xs, y_min), (xs, y_max), (x_min, ys), (x_max, ys)] {
            let (lat, lon) = inverse(x, y, epsg);
            env[0] = env[0].min(lon);
            env[1] = env[1].min(lat);
            env[2] = env[2].max(lon);
            env[3] = env[3].max(lat);
        }
    }
    // Pad for the curvature missed between samples.
    let pad = 1e-6;
    [env[0] - pad, env[1] - pad, env[2] + pad, env[3] + pad]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_meridian_on_equator() {
        let (x, y) = forward(0.0, 3.0, 32631);
        assert!((x - 500_000.0).abs() < 1e-9);
        assert!(y.abs() < 1e-9);
    }

    #[test]
    fn matches_proj_at_hainich() {
        // PROJ 9.5.1 reference.
        let (x, y) = forward(51.0795, 10.4522, 32632);
        assert!((x - 601_723.770_603_364_8).abs() < 0.01, "{x}");
        assert!((y - 5_659_668.711_349_83).abs() < 0.01, "{y}");
    }

    #[test]
    fn round_trip_near_central_meridian() {
        for &(lat, lon) in &[(51.0795, 10.4522), (-33.45, -70.66), (10.0, 4.0)] {
            let epsg = utm_epsg(lat, lon);
            let (x, y) = forward(lat, lon, epsg);
            let (lat2, lon2) = inverse(x, y, epsg);
            assert!((lat - lat2).abs() < 1e-7 && (lon - lon2).abs() < 1e-7);
        }
    }
}
