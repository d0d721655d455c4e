//! WebAssembly bindings for the browser demo in `www/`.
//!
//! Each export takes plain numbers and expression strings and returns a JSON
//! string, or throws a string error. The same functions are available to
//! native callers without the `_js` suffix.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use sddelab::coeffs::{parse, profile, ScanRange};
use sddelab::fbm;
use sddelab::grid::Grid;
use sddelab::khbound::{default_constants, max_c1, plan_chain, plan_with_blocks, KhError};
use sddelab::nvdensity::verify_early_bounds;
use sddelab::ModelSpec;

/// Interactive limits; the browser runs single-threaded.
pub const MAX_STEPS: usize = 256;
pub const MAX_FBM_PATHS: usize = 50;
pub const MAX_DENSITY_PATHS: usize = 20_000;

const STEPS_PER_DELAY: usize = 32;
const SCAN: (f64, f64, usize) = (-10.0, 10.0, 2001);

fn model(hurst: f64, sigma: &str, drift: &str, horizon: f64) -> Result<ModelSpec, String> {
    let scan = ScanRange::new(SCAN.0, SCAN.1);
    let expr = |name: &str, s: &str| parse(s).map_err(|e| format!("{name}: {e}"));
    let sigma = profile(&expr("sigma", sigma)?, scan, SCAN.2).map_err(|e| format!("sigma: {e}"))?;
    let drift = profile(&expr("drift", drift)?, scan, SCAN.2).map_err(|e| format!("drift: {e}"))?;
    let m = ModelSpec::new(hurst, horizon, 1.0, parse("0").expect("constant"), 0.0, sigma, drift, STEPS_PER_DELAY)
        .map_err(|e| e.to_string())?;
    m.require_elliptic().map_err(|e| e.to_string())?;
    Ok(m)
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct FbmOut {
    times: Vec<f64>,
    paths: Vec<Vec<f64>>,
}

/// Exact fBm sample paths on `steps` equal cells of `[0, 1]`.
pub fn fbm_paths(hurst: f64, steps: usize, n_paths: usize, seed: u64) -> Result<String, String> {
    if !(1..=MAX_STEPS).contains(&steps) {
        return Err(format!("steps must lie in 1..={MAX_STEPS}"));
    }
    if !(1..=MAX_FBM_PATHS).contains(&n_paths) {
        return Err(format!("paths must lie in 1..={MAX_FBM_PATHS}"));
    }
    let grid = Grid::uniform(steps, 1.0).map_err(|e| e.to_string())?;
    let batch = fbm::sample(&grid, hurst, n_paths, seed).map_err(|e| e.to_string())?;
    json(&FbmOut { times: grid.times().to_vec(), paths: batch.paths().to_vec() })
}

#[derive(Serialize)]
struct DensityOut {
    x: Vec<f64>,
    kde: Vec<f64>,
    stderr: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    sigma_min2: f64,
    sigma_max2: f64,
    pass: bool,
    violations: usize,
}

/// KDE of `X_t` for `t <= 1` against the early two-sided Gaussian bound.
pub fn early_density(
    hurst: f64,
    sigma: &str,
    drift: &str,
    t: f64,
    n_paths: usize,
    seed: u64,
) -> Result<String, String> {
    if !(100..=MAX_DENSITY_PATHS).contains(&n_paths) {
        return Err(format!("paths must lie in 100..={MAX_DENSITY_PATHS}"));
    }
    let m = model(hurst, sigma, drift, 1.0)?;
    let v = verify_early_bounds(&m, t, n_paths, seed, 101, 3.0).map_err(|e| e.to_string())?;
    json(&DensityOut {
        x: v.kde.points.clone(),
        kde: v.kde.values.clone(),
        stderr: v.kde.stderr.clone(),
        lower: v.lower,
        upper: v.upper,
        sigma_min2: v.sigma_min2,
        sigma_max2: v.sigma_max2,
        pass: v.report.pass,
        violations: v.report.violations(),
    })
}

#[derive(Serialize)]
struct ChainOut {
    n: usize,
    delta: f64,
    sigma_n: f64,
    c: f64,
    c1: f64,
    c2: f64,
    max_c1: f64,
    rho: f64,
    feasible: bool,
    failures: Vec<&'static str>,
    waypoints: Vec<f64>,
    log10_bound: f64,
}

/// Chain plan from `0` to `x` at `t in (1, 2]`; `c1 <= 0` selects the default constants.
pub fn chain_bound(hurst: f64, sigma: &str, t: f64, x: f64, c1: f64) -> Result<String, String> {
    let m = model(hurst, sigma, "0", 2.0)?;
    let (d1, d2) = default_constants(m.lambda());
    let (c1, c2) = if c1 > 0.0 { (c1, (1.0 / (c1 * c1)).ceil()) } else { (d1, d2) };
    let plan = match plan_chain(&m, t, x, c1, c2) {
        Err(KhError::BlockTooWide { min_n, .. }) => plan_with_blocks(&m, t, x, c1, c2, min_n),
        other => other,
    }
    .map_err(|e| e.to_string())?;
    let nf = plan.n as f64;
    let log10_bound =
        (nf * (plan.c * c1 / 4.0).ln() + 0.5 * nf.ln() - (c1 * t.powf(hurst)).ln()) / std::f64::consts::LN_10;
    json(&ChainOut {
        n: plan.n,
        delta: plan.delta,
        sigma_n: plan.sigma_n,
        c: plan.c,
        c1,
        c2,
        max_c1: max_c1(m.lambda()),
        rho: plan.rho,
        feasible: plan.feasible,
        failures: plan.feasibility.failures(),
        waypoints: plan.waypoints,
        log10_bound,
    })
}

#[wasm_bindgen(js_name = fbmPaths)]
pub fn fbm_paths_js(hurst: f64, steps: usize, n_paths: usize, seed: u32) -> Result<String, JsValue> {
    fbm_paths(hurst, steps, n_paths, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = earlyDensity)]
pub fn early_density_js(
    hurst: f64,
    sigma: &str,
    drift: &str,
    t: f64,
    n_paths: usize,
    seed: u32,
) -> Result<String, JsValue> {
    early_density(hurst, sigma, drift, t, n_paths, seed.into()).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = chainBound)]
pub fn chain_bound_js(hurst: f64, sigma: &str, t: f64, x: f64, c1: f64) -> Result<String, JsValue> {
    chain_bound(hurst, sigma, t, x, c1).map_err(|e| JsValue::from_str(&e))
}
