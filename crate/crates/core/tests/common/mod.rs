#![allow(dead_code)]

use sddelab::coeffs::{parse, profile, ScanRange};
use sddelab::ModelSpec;

pub const SCAN: ScanRange = ScanRange { lo: -10.0, hi: 10.0 };

pub fn model(sigma: &str, b: &str, eta: &str, eta0: f64, hurst: f64, horizon: f64, m: usize) -> ModelSpec {
    let s = profile(&parse(sigma).unwrap(), SCAN, 20_001).unwrap();
    let d = profile(&parse(b).unwrap(), SCAN, 20_001).unwrap();
    ModelSpec::new(hurst, horizon, 1.0, parse(eta).unwrap(), eta0, s, d, m).unwrap()
}

/// `σ ≡ 1`, `b ≡ 0`, `η ≡ η_0 = 0`: `X_t = B_t`.
pub fn gaussian(m: usize) -> ModelSpec {
    model("1", "0", "0", 0.0, 0.75, 2.0, m)
}

/// Elliptic, non-trivial coefficients with delay 1.
pub fn admissible(m: usize) -> ModelSpec {
    model("1+0.25*tanh(x)", "0.1*sin(x)", "0.5*sin(3*x)", 0.0, 0.75, 2.0, m)
}
