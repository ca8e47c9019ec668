//! WGS84 transverse Mercator via Krüger's series to sixth order in the third
//! flattening `n`.

const A: f64 = 6_378_137.0;
const F: f64 = 1.0 / 298.257_223_563;

pub(crate) const UTM_SCALE: f64 = 0.9996;
pub(crate) const FALSE_EASTING: f64 = 500_000.0;
pub(crate) const FALSE_NORTHING_SOUTH: f64 = 10_000_000.0;

pub(crate) struct Krueger {
    e: f64,
    /// Rectifying radius.
    big_a: f64,
    alpha: [f64; 6],
    beta: [f64; 6],
}

impl Krueger {
    pub(crate) fn wgs84() -> Self {
        let n = F / (2.0 - F);
        let n2 = n * n;
        let n3 = n2 * n;
        let n4 = n3 * n;
        let n5 = n4 * n;
        let n6 = n5 * n;
        let e = (F * (2.0 - F)).sqrt();
        let big_a = A / (1.0 + n) * (1.0 + n2 / 4.0 + n4 / 64.0 + n6 / 256.0);
        let alpha = [
            n / 2.0 - 2.0 / 3.0 * n2 + 5.0 / 16.0 * n3 + 41.0 / 180.0 * n4 - 127.0 / 288.0 * n5 + 7891.0 / 37800.0 * n6,
            13.0 / 48.0 * n2 - 3.0 / 5.0 * n3 + 557.0 / 1440.0 * n4 + 281.0 / 630.0 * n5
                - 1_983_433.0 / 1_935_360.0 * n6,
            61.0 / 240.0 * n3 - 103.0 / 140.0 * n4 + 15061.0 / 26880.0 * n5 + 167_603.0 / 181_440.0 * n6,
            49561.0 / 161_280.0 * n4 - 179.0 / 168.0 * n5 + 6_601_661.0 / 7_257_600.0 * n6,
            34729.0 / 80640.0 * n5 - 3_418_889.0 / 1_995_840.0 * n6,
            212_378_941.0 / 319_334_400.0 * n6,
        ];
        let beta = [
            n / 2.0 - 2.0 / 3.0 * n2 + 37.0 / 96.0 * n3 - 1.0 / 360.0 * n4 - 81.0 / 512.0 * n5
                + 96199.0 / 604_800.0 * n6,
            n2 / 48.0 + n3 / 15.0 - 437.0 / 1440.0 * n4 + 46.0 / 105.0 * n5 - 1_118_711.0 / 3_870_720.0 * n6,
            17.0 / 480.0 * n3 - 37.0 / 840.0 * n4 - 209.0 / 4480.0 * n5 + 5569.0 / 90720.0 * n6,
            4397.0 / 161_280.0 * n4 - 11.0 / 504.0 * n5 - 830_251.0 / 7_257_600.0 * n6,
            4583.0 / 161_280.0 * n5 - 108_847.0 / 3_991_680.0 * n6,
            20_648_693.0 / 638_668_800.0 * n6,
        ];
        Krueger { e, big_a, alpha, beta }
    }

    /// Conformal-latitude tangent from the geographic latitude tangent.
    fn tau_prime(&self, tau: f64) -> f64 {
        let tau1 = tau.hypot(1.0);
        let sig = (self.e * (self.e * tau / tau1).atanh()).sinh();
        tau * sig.hypot(1.0) - sig * tau1
    }

    /// Inverse of [`Self::tau_prime`] by Newton iteration.
    fn tau(&self, taup: f64) -> f64 {
        let e2m = 1.0 - self.e * self.e;
        let mut tau = taup / e2m;
        for _ in 0..10 {
            let tp = self.tau_prime(tau);
            let dtau = (taup - tp) * (1.0 + e2m * tau * tau) / (e2m * tau.hypot(1.0) * tp.hypot(1.0));
            tau += dtau;
            if dtau.abs() < 1e-15 * tau.abs().max(1.0) {
                break;
            }
        }
        tau
    }

    /// Unscaled (ξ, η) → metres, for latitude/longitude offsets in radians.
    /// Returns (easting offset, northing) before scale and false origin.
    pub(crate) fn forward(&self, phi: f64, dlam: f64) -> (f64, f64) {
        let taup = self.tau_prime(phi.tan());
        let xi_p = taup.atan2(dlam.cos());
        let eta_p = (dlam.sin() / taup.hypot(dlam.cos())).asinh();
        let mut xi = xi_p;
        let mut eta = eta_p;
        for (j, a) in self.alpha.iter().enumerate() {
            let k = 2.0 * (j + 1) as f64;
            xi += a * (k * xi_p).sin() * (k * eta_p).cosh();
            eta += a * (k * xi_p).cos() * (k * eta_p).sinh();
        }
        (self.big_a * eta, self.big_a * xi)
    }

    /// Inverse of [`Self::forward`]; returns (φ, Δλ) in radians.
    pub(crate) fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let xi = y / self.big_a;
        let eta = x / self.big_a;
        let mut xi_p = xi;
        let mut eta_p = eta;
        for (j, b) in self.beta.iter().enumerate() {
            let k = 2.0 * (j + 1) as f64;
            xi_p -= b * (k * xi).sin() * (k * eta).cosh();
            eta_p -= b * (k * xi).cos() * (k * eta).sinh();
        }
        let taup = xi_p.sin() / eta_p.sinh().hypot(xi_p.cos());
        let dlam = eta_p.sinh().atan2(xi_p.cos());
        (self.tau(taup).atan(), dlam)
    }
}
