//! Density of `X_t` on `(0, r]` through the variance proxy `g_F`.
//!
//! With `F = X_t - E X_t` the density is
//! `p_F(x) = E|F| / (2 g_F(x)) exp(-∫_0^x z / g_F(z) dz)` where
//! `g_F(x) = E[⟨DF, -DL^{-1}F⟩ | F = x]`. In the early regime
//! `D_s F = Φ(B)(s) = σ(η(s - r)) exp(∫_s^t b'(X_u) du)` and
//!
//! ```text
//! ⟨DF, -DL^{-1}F⟩ = ∫_0^1 E'[⟨Φ(B), Φ(u B + √(1-u²) B')⟩] du
//! ```
//!
//! with `B'` an independent copy. The `u`-integral uses Gauss-Legendre
//! nodes and the conditional expectation a Nadaraya-Watson smoother.

use serde::Serialize;
use thiserror::Error;

use crate::csv;
use crate::hspace::cell_weights;
use crate::malliavin::early_phi;
use crate::par;
use crate::report::{BoundReport, CheckPoint};
use crate::sdde::{mean_and_centering, simulate_terminal, Centering, ModelSpec, SddeError, Solver};
use crate::stats;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DensityError {
    #[error("time {t} is outside the early regime (0, {r}]")]
    NotEarly { t: f64, r: f64 },
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("need at least 8 quadrature nodes, got {0}")]
    TooFewNodes(usize),
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
    #[error("point {x} is outside the estimated range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("mean absolute deviation must be positive, got {0}")]
    NonPositiveAbsDev(f64),
    #[error("g_F estimate is not positive at {0}")]
    NonPositiveGf(f64),
    #[error("bandwidth must be positive, got {0}")]
    BadBandwidth(f64),
    #[error(transparent)]
    Sdde(#[from] SddeError),
}

impl From<crate::coeffs::ExprError> for DensityError {
    fn from(e: crate::coeffs::ExprError) -> Self {
        DensityError::Sdde(SddeError::Coefficient(e))
    }
}

fn require_early(model: &ModelSpec, t: f64) -> Result<(), DensityError> {
    if t > 0.0 && t <= model.delay * (1.0 + 1e-12) {
        Ok(())
    } else {
        Err(DensityError::NotEarly { t, r: model.delay })
    }
}

/// Tuning for [`estimate_gf`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GfOptions {
    pub n_paths: usize,
    pub theta_nodes: usize,
    pub bins: usize,
    /// Smoother bandwidth; the Silverman rule on `F` when `None`.
    pub bandwidth: Option<f64>,
}

impl Default for GfOptions {
    fn default() -> Self {
        GfOptions { n_paths: 10_000, theta_nodes: 16, bins: 41, bandwidth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GfEstimate {
    pub t: f64,
    pub centers: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub counts: Vec<usize>,
    pub dropped_bins: usize,
    pub bandwidth: f64,
    pub n_paths: usize,
    pub theta_nodes: usize,
    pub centering: Centering,
    /// Centered samples `F_i`.
    #[serde(skip)]
    pub samples: Vec<f64>,
    /// Per-replicate `∫_0^1 ⟨Φ(B_i), Φ(mix_u)⟩ du`.
    #[serde(skip)]
    pub pairings: Vec<f64>,
}

impl GfEstimate {
    /// Piecewise-linear interpolation of the bin values.
    pub fn interpolate(&self, x: f64) -> Result<f64, DensityError> {
        let c = &self.centers;
        let (lo, hi) = (c[0], c[c.len() - 1]);
        if !(x >= lo && x <= hi) {
            return Err(DensityError::OutOfRange { x, lo, hi });
        }
        let i = c.partition_point(|&v| v <= x).clamp(1, c.len() - 1);
        let w = (x - c[i - 1]) / (c[i] - c[i - 1]);
        Ok(self.values[i - 1] + w * (self.values[i] - self.values[i - 1]))
    }

    /// Rows `(bin_center, gf_hat, stderr, n_in_bin)`.
    pub fn to_csv(&self) -> String {
        let mut s = csv::header(&["bin_center", "gf_hat", "stderr", "n_in_bin"]);
        for i in 0..self.centers.len() {
            csv::row(
                &mut s,
                [
                    csv::num(self.centers[i]),
                    csv::num(self.values[i]),
                    csv::num(self.stderr[i]),
                    self.counts[i].to_string(),
                ],
            );
        }
        s
    }

    /// Every populated bin against `[lo - n_se·se, hi + n_se·se]`, plus strict positivity.
    pub fn bracket_check(&self, lo: f64, hi: f64, n_se: f64) -> BoundReport {
        let mut r = BoundReport::new("gf-bracket")
            .constant("lower", lo)
            .constant("upper", hi)
            .constant("n_standard_errors", n_se);
        for i in 0..self.centers.len() {
            let tol = n_se * self.stderr[i] + 1e-12 * hi;
            r.push(CheckPoint::new(self.centers[i], (self.values[i] - lo).min(hi - self.values[i]), tol));
            if self.values[i] <= 0.0 {
                r.fail(format!("non-positive estimate at {}", self.centers[i]));
            }
        }
        r
    }
}

/// Monte Carlo estimate of `g_F` for `F = X_t - m̂_t`, `t <= r`.
///
/// Replicate `i` uses fBm streams `2i` (for `B`) and `2i + 1` (for `B'`), so
/// results do not depend on the worker count.
pub fn estimate_gf(model: &ModelSpec, t: f64, opts: &GfOptions, seed: u64) -> Result<GfEstimate, DensityError> {
    require_early(model, t)?;
    model.require_elliptic()?;
    if opts.theta_nodes < 8 {
        return Err(DensityError::TooFewNodes(opts.theta_nodes));
    }
    if opts.bins < 2 {
        return Err(DensityError::TooFewBins(opts.bins));
    }
    if opts.n_paths < 100 {
        return Err(DensityError::TooFewSamples { got: opts.n_paths, need: 100 });
    }
    let sampler = model.sampler_to(t)?;
    let solver = Solver::new(model, t)?;
    let grid = model.grid_to(t)?;
    let k = grid.cells();
    let h = model.step();
    let lag = model.steps_per_delay;
    let history = model.history()?;
    let sigma_eta: Vec<f64> = (0..k).map(|j| model.sigma.eval(history[j])).collect::<Result<_, _>>()?;
    let w = cell_weights(&grid, model.hurst).map_err(|e| DensityError::Sdde(SddeError::InvalidModel(e.to_string())))?;
    let alpha = crate::hspace::alpha(model.hurst);
    let (nodes, weights) = stats::gauss_legendre_unit(opts.theta_nodes);

    let per_path = par::map_indices(opts.n_paths, |i| -> Result<(f64, f64), DensityError> {
        let b = sampler.path(seed, 2 * i as u64);
        let b2 = sampler.path(seed, 2 * i as u64 + 1);
        let mut buf = Vec::with_capacity(lag + k + 1);
        let mut phi = Vec::with_capacity(k);
        solver.run(&b, &mut buf)?;
        let xt = buf[lag + k];
        early_phi(&model.drift, &buf[lag..], &sigma_eta, h, &mut phi)?;
        // v = α W Φ(B), so each node costs one dot product.
        let v: Vec<f64> =
            (0..k).map(|j| alpha * w.weights().column(j).iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>()).collect();
        let mut mixed = vec![0.0; k + 1];
        let mut total = 0.0;
        for (u, wq) in nodes.iter().zip(&weights) {
            let c = (1.0 - u * u).sqrt();
            for j in 0..=k {
                mixed[j] = u * b[j] + c * b2[j];
            }
            solver.run(&mixed, &mut buf)?;
            early_phi(&model.drift, &buf[lag..], &sigma_eta, h, &mut phi)?;
            total += wq * v.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok((xt, total))
    });
    let mut xs = Vec::with_capacity(opts.n_paths);
    let mut gs = Vec::with_capacity(opts.n_paths);
    for r in per_path {
        let (x, g) = r?;
        xs.push(x);
        gs.push(g);
    }
    let centering = mean_and_centering(&xs);
    let f: Vec<f64> = xs.iter().map(|x| x - centering.mean).collect();
    let (_, sd) = stats::mean_sd(&f);
    if !(sd > 0.0) {
        return Err(DensityError::ZeroVariance);
    }
    let bw = match opts.bandwidth {
        Some(b) if b > 0.0 => b,
        Some(b) => return Err(DensityError::BadBandwidth(b)),
        None => stats::silverman_bandwidth(&f),
    };
    let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let width = (hi - lo) / opts.bins as f64;
    let mut est = GfEstimate {
        t,
        centers: Vec::new(),
        values: Vec::new(),
        stderr: Vec::new(),
        counts: Vec::new(),
        dropped_bins: 0,
        bandwidth: bw,
        n_paths: opts.n_paths,
        theta_nodes: opts.theta_nodes,
        centering,
        samples: Vec::new(),
        pairings: Vec::new(),
    };
    let mut counts = vec![0usize; opts.bins];
    for &v in &f {
        let b = (((v - lo) / width) as usize).min(opts.bins - 1);
        counts[b] += 1;
    }
    for (b, &count) in counts.iter().enumerate() {
        if count == 0 {
            est.dropped_bins += 1;
            continue;
        }
        let center = lo + (b as f64 + 0.5) * width;
        let (g, se) = nadaraya_watson(&f, &gs, center, bw);
        est.centers.push(center);
        est.values.push(g);
        est.stderr.push(se);
        est.counts.push(count);
    }
    est.samples = f;
    est.pairings = gs;
    Ok(est)
}

/// Gaussian-kernel regression estimate at `x` and its standard error.
fn nadaraya_watson(xs: &[f64], ys: &[f64], x: f64, bw: f64) -> (f64, f64) {
    let mut sk = 0.0;
    let mut sky = 0.0;
    for (xi, yi) in xs.iter().zip(ys) {
        let z = (xi - x) / bw;
        let k = (-0.5 * z * z).exp();
        sk += k;
        sky += k * yi;
    }
    let m = sky / sk;
    let mut v = 0.0;
    for (xi, yi) in xs.iter().zip(ys) {
        let z = (xi - x) / bw;
        let k = (-0.5 * z * z).exp();
        v += (k * (yi - m)).powi(2);
    }
    (m, v.sqrt() / sk)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityMethod {
    NvFormula,
    Kde,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityEstimate {
    pub points: Vec<f64>,
    pub values: Vec<f64>,
    /// Pointwise Monte Carlo standard errors (KDE only; empty otherwise).
    pub stderr: Vec<f64>,
    pub method: DensityMethod,
    pub bandwidth: Option<f64>,
}

impl DensityEstimate {
    /// Trapezoid integral over the evaluation points.
    pub fn mass(&self) -> f64 {
        self.points.windows(2).zip(self.values.windows(2)).map(|(x, y)| 0.5 * (x[1] - x[0]) * (y[0] + y[1])).sum()
    }
}

/// `Ê|F| / (2 ĝ(x)) exp(-∫_0^x z / ĝ(z) dz)` with `ĝ` piecewise linear and
/// the exponent integrated by composite Simpson (256 panels).
pub fn density_from_gf(gf: &GfEstimate, abs_dev: f64, points: &[f64]) -> Result<DensityEstimate, DensityError> {
    if !(abs_dev > 0.0) {
        return Err(DensityError::NonPositiveAbsDev(abs_dev));
    }
    if let Some(&c) = gf.values.iter().find(|v| **v <= 0.0) {
        return Err(DensityError::NonPositiveGf(c));
    }
    let values = points
        .iter()
        .map(|&x| {
            let g = gf.interpolate(x)?;
            gf.interpolate(0.0)?;
            let exponent = simpson(|z| Ok(z / gf.interpolate(z)?), 0.0, x, 256)?;
            Ok(abs_dev / (2.0 * g) * (-exponent).exp())
        })
        .collect::<Result<Vec<_>, DensityError>>()?;
    Ok(DensityEstimate {
        points: points.to_vec(),
        values,
        stderr: Vec::new(),
        method: DensityMethod::NvFormula,
        bandwidth: None,
    })
}

fn simpson<F>(f: F, a: f64, b: f64, panels: usize) -> Result<f64, DensityError>
where
    F: Fn(f64) -> Result<f64, DensityError>,
{
    if a == b {
        return Ok(0.0);
    }
    let n = panels + panels % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a)? + f(b)?;
    for i in 1..n {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += c * f(a + i as f64 * h)?;
    }
    Ok(acc * h / 3.0)
}

/// Gaussian-kernel density estimate; Silverman bandwidth when `bandwidth` is `None`.
pub fn kde(samples: &[f64], points: &[f64], bandwidth: Option<f64>) -> Result<DensityEstimate, DensityError> {
    if samples.len() < 100 {
        return Err(DensityError::TooFewSamples { got: samples.len(), need: 100 });
    }
    let (_, sd) = stats::mean_sd(samples);
    if !(sd > 0.0) {
        return Err(DensityError::ZeroVariance);
    }
    let bw = match bandwidth {
        Some(b) if b > 0.0 => b,
        Some(b) => return Err(DensityError::BadBandwidth(b)),
        None => stats::silverman_bandwidth(samples),
    };
    let n = samples.len() as f64;
    let (values, stderr): (Vec<f64>, Vec<f64>) = par::map_indices(points.len(), |i| {
        let x = points[i];
        let (mut s1, mut s2) = (0.0, 0.0);
        for &xi in samples {
            let k = stats::normal_pdf(x, xi, bw);
            s1 += k;
            s2 += k * k;
        }
        let p = s1 / n;
        (p, ((s2 / n - p * p).max(0.0) / n).sqrt())
    })
    .into_iter()
    .unzip();
    Ok(DensityEstimate { points: points.to_vec(), values, stderr, method: DensityMethod::Kde, bandwidth: Some(bw) })
}

/// `n` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Outcome of [`verify_early_bounds`].
#[derive(Debug, Clone, Serialize)]
pub struct EarlyVerification {
    pub report: BoundReport,
    pub sigma_min2: f64,
    pub sigma_max2: f64,
    pub centering: Centering,
    pub kde: DensityEstimate,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl EarlyVerification {
    /// Rows `(x, p_kde, stderr, lower, upper)`.
    pub fn to_csv(&self) -> String {
        let rows = (0..self.kde.points.len())
            .map(|i| vec![self.kde.points[i], self.kde.values[i], self.kde.stderr[i], self.lower[i], self.upper[i]]);
        csv::table(&["x", "p_kde", "stderr", "lower", "upper"], rows)
    }
}

/// Gaussian bracket of the density of `X_t` on the early regime:
///
/// ```text
/// Ê|F|/(2σ_max²) exp(-(x-m̂)²/(2σ_min²)) <= p(x) <= Ê|F|/(2σ_min²) exp(-(x-m̂)²/(2σ_max²))
/// ```
///
/// with `σ_min² = λ² e^{-2Mr} t^{2H}` and `σ_max² = Λ² e^{2Mr} t^{2H}`, checked
/// against a KDE of `X_t` over `m̂ ± 3 t^H`. The tolerance at each point is
/// `n_se` standard errors of the KDE plus the propagated error of `Ê|F|`.
pub fn verify_early_bounds(
    model: &ModelSpec,
    t: f64,
    n_paths: usize,
    seed: u64,
    points: usize,
    n_se: f64,
) -> Result<EarlyVerification, DensityError> {
    let xs = simulate_terminal(model, t, n_paths, seed).map_err(DensityError::from)?;
    early_bounds_from_samples(model, t, &xs, points, n_se, false)
}

/// [`verify_early_bounds`] on given samples of `X_t`; `swap` exchanges
/// `σ_min` and `σ_max` (a negative control).
pub fn early_bounds_from_samples(
    model: &ModelSpec,
    t: f64,
    xs: &[f64],
    points: usize,
    n_se: f64,
    swap: bool,
) -> Result<EarlyVerification, DensityError> {
    require_early(model, t)?;
    model.require_elliptic()?;
    let c = mean_and_centering(xs);
    let m = model.drift_lipschitz();
    let r = model.delay;
    let th2 = t.powf(2.0 * model.hurst);
    let mut smin2 = model.lambda().powi(2) * (-2.0 * m * r).exp() * th2;
    let mut smax2 = model.big_lambda().powi(2) * (2.0 * m * r).exp() * th2;
    if swap {
        std::mem::swap(&mut smin2, &mut smax2);
    }
    let th = t.powf(model.hurst);
    let grid = linspace(c.mean - 3.0 * th, c.mean + 3.0 * th, points);
    let est = kde(xs, &grid, None)?;
    let mut report = BoundReport::new("early-two-sided-bound")
        .constant("t", t)
        .constant("lambda", model.lambda())
        .constant("Lambda", model.big_lambda())
        .constant("M", m)
        .constant("sigma_min2", smin2)
        .constant("sigma_max2", smax2)
        .constant("mean_hat", c.mean)
        .constant("mean_se", c.mean_se)
        .constant("mean_minus_eta0", c.mean - model.eta0)
        .constant("abs_dev_hat", c.abs_dev)
        .constant("abs_dev_se", c.abs_dev_se)
        .constant("n_paths", xs.len() as f64)
        .constant("n_standard_errors", n_se);
    let mut lower = Vec::with_capacity(points);
    let mut upper = Vec::with_capacity(points);
    let rel_ad = c.abs_dev_se / c.abs_dev;
    for (i, &x) in grid.iter().enumerate() {
        let d2 = (x - c.mean).powi(2);
        let lo = c.abs_dev / (2.0 * smax2) * (-d2 / (2.0 * smin2)).exp();
        let hi = c.abs_dev / (2.0 * smin2) * (-d2 / (2.0 * smax2)).exp();
        let p = est.values[i];
        let tol = n_se * (est.stderr[i] + rel_ad * hi);
        report.push(CheckPoint::new(x, (p - lo).min(hi - p), tol));
        lower.push(lo);
        upper.push(hi);
    }
    if swap {
        report.note("sigma_min and sigma_max swapped");
    }
    Ok(EarlyVerification { report, sigma_min2: smin2, sigma_max2: smax2, centering: c, kde: est, lower, upper })
}

/// NV-formula and KDE densities agree within `max(rel, n_se·se)` relative
/// error on the central interval holding 80% of the sample.
pub fn agreement(nv: &DensityEstimate, kde_est: &DensityEstimate, samples: &[f64], rel: f64, n_se: f64) -> BoundReport {
    let s = stats::sorted(samples);
    let (a, b) = (stats::quantile_sorted(&s, 0.1), stats::quantile_sorted(&s, 0.9));
    let mut r = BoundReport::new("nv-kde-agreement")
        .constant("central_lo", a)
        .constant("central_hi", b)
        .constant("relative_tolerance", rel);
    for i in 0..nv.points.len() {
        let x = nv.points[i];
        if x < a || x > b {
            continue;
        }
        let p = kde_est.values[i];
        let allowed = (rel * p).max(n_se * kde_est.stderr.get(i).copied().unwrap_or(0.0));
        r.push(CheckPoint::new(x, allowed - (nv.values[i] - p).abs(), 0.0));
    }
    r
}
