//! Lower bound for the density of `X_t` past the first delay, by chaining
//! conditional Gaussian floors along a time partition.
//!
//! The partition is uniform, `Δ = t / N`, with `σ_N = Δ^H`, so the block
//! H-norm of the unit function is exactly `σ_N²`. Waypoints
//! `y_n = η_0 + (n/N)(x - η_0)` lead from the start value to the target.
//! With `c = (2πΛ²)^{-1/2}` and `ρ = -log(c c₁ / 4)` the chained bound is
//!
//! ```text
//! p_t(x) >= 1/(c₁ t^H) exp(N log(c c₁/4) + log(N)/2)
//!        >= 1/(c₁ t^H) exp(-ρ c₂ (x - η_0)² / t^{2H})
//! ```
//!
//! subject to `exp(-8c₁²/λ²) >= 1/2`, `ρ > 0`, `N ρ^N >= 1`, `1/√c₂ <= c₁`
//! and `Δ < r`.

use serde::Serialize;
use thiserror::Error;

use crate::csv;
use crate::grid::Grid;
use crate::hspace::{cell_weights, CellWeightMatrix};
use crate::malliavin::{block_norms, check_nondegeneracy, Block, BlockNorms, DriftExponent, MalliavinError};
use crate::nvdensity::{kde, linspace, DensityError};
use crate::report::{BoundReport, CheckPoint};
use crate::sdde::{mean_and_centering, simulate_terminal, Centering, ModelSpec, SddeError, SolutionPath};
use crate::stats::{self, normal_pdf};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KhError {
    #[error("time {t} is not past the delay {r}")]
    NotLate { t: f64, r: f64 },
    #[error("{0}")]
    BadConstant(String),
    #[error("N = {n} gives block width {delta} >= delay {r}; need N >= {min_n}")]
    BlockTooWide { n: usize, delta: f64, r: f64, min_n: usize },
    #[error("plan is infeasible: {0}")]
    Infeasible(String),
    #[error("block width {delta} is not a multiple of the solver step {step}")]
    NonCommensurate { delta: f64, step: f64 },
    #[error("paths end before t = {0}")]
    PathsTooShort(f64),
    #[error("no paths supplied")]
    NoPaths,
    #[error("evaluation range is empty")]
    EmptyRange,
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Sdde(#[from] SddeError),
    #[error(transparent)]
    Malliavin(#[from] MalliavinError),
    #[error("coefficient evaluation failed: {0}")]
    Coefficient(#[from] crate::coeffs::ExprError),
}

/// Largest `c₁` with `exp(-8c₁²/λ²) >= 1/2`.
pub fn max_c1(lambda: f64) -> f64 {
    lambda * (std::f64::consts::LN_2 / 8.0).sqrt()
}

/// Defaults: `c₁` at 95% of its maximum and the smallest integer `c₂ >= 1/c₁²`.
pub fn default_constants(lambda: f64) -> (f64, f64) {
    let c1 = 0.95 * max_c1(lambda);
    (c1, (1.0 / (c1 * c1)).ceil())
}

/// `(2πΛ²)^{-1/2}`, the prefactor of the one-block Gaussian floor.
pub fn j1_prefactor(big_lambda: f64) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * big_lambda * big_lambda).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Feasibility {
    /// `exp(-8c₁²/λ²) >= 1/2`.
    pub c1_small: bool,
    /// `ρ > 0`.
    pub rho_positive: bool,
    /// `N ρ^N >= 1`.
    pub n_rho_power: bool,
    /// `1/√c₂ <= c₁`.
    pub waypoint_step: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.c1_small && self.rho_positive && self.n_rho_power && self.waypoint_step
    }

    pub fn failures(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if !self.c1_small {
            v.push("exp(-8 c1^2 / lambda^2) < 1/2");
        }
        if !self.rho_positive {
            v.push("rho <= 0");
        }
        if !self.n_rho_power {
            v.push("N rho^N < 1");
        }
        if !self.waypoint_step {
            v.push("1/sqrt(c2) > c1");
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainPlan {
    pub t: f64,
    pub x: f64,
    pub eta0: f64,
    pub hurst: f64,
    pub n: usize,
    pub delta: f64,
    pub sigma_n: f64,
    pub waypoints: Vec<f64>,
    /// `c₁ σ_N`.
    pub radius: f64,
    /// `|y_{n+1} - y_n|`.
    pub waypoint_step: f64,
    /// `|y_{n+1} - y_n| <= c₁ σ_N`. With `σ_N = Δ^H` this is not implied by
    /// `1/√c₂ <= c₁` once `|x - η_0|` is large.
    pub waypoint_in_radius: bool,
    /// Smallest `N` with `|x - η_0| / N <= c₁ (t/N)^H`.
    pub min_n_for_radius: usize,
    pub lambda: f64,
    pub big_lambda: f64,
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    pub rho: f64,
    pub feasibility: Feasibility,
    pub feasible: bool,
    /// Measured decay rate of the block remainder, when available.
    pub gamma: Option<f64>,
}

impl ChainPlan {
    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn sigma_n2(&self) -> f64 {
        self.sigma_n * self.sigma_n
    }

    /// Blocks as grid-index ranges for a solver step `h`.
    pub fn blocks(&self, h: f64) -> Result<Vec<Block>, KhError> {
        let per = cells_per_block(self.delta, h)?;
        Ok((0..self.n).map(|i| Block { index: i, start: i * per, end: (i + 1) * per }).collect())
    }
}

fn cells_per_block(delta: f64, h: f64) -> Result<usize, KhError> {
    let q = (delta / h).round();
    if q < 1.0 || (q * h - delta).abs() > 1e-9 * delta {
        return Err(KhError::NonCommensurate { delta, step: h });
    }
    Ok(q as usize)
}

/// `N = max(1, ⌈c₂ (x - η_0)² / t^{2H}⌉)`.
pub fn block_count(t: f64, x: f64, eta0: f64, hurst: f64, c2: f64) -> usize {
    let n = (c2 * (x - eta0).powi(2) / t.powf(2.0 * hurst)).ceil();
    if n.is_finite() && n >= 1.0 {
        n as usize
    } else {
        1
    }
}

pub fn plan_chain(model: &ModelSpec, t: f64, x: f64, c1: f64, c2: f64) -> Result<ChainPlan, KhError> {
    let n = block_count(t, x, model.eta0, model.hurst, c2);
    plan_with_blocks(model, t, x, c1, c2, n)
}

/// [`plan_chain`] with the block count fixed by the caller.
pub fn plan_with_blocks(model: &ModelSpec, t: f64, x: f64, c1: f64, c2: f64, n: usize) -> Result<ChainPlan, KhError> {
    let r = model.delay;
    if !(t > r) {
        return Err(KhError::NotLate { t, r });
    }
    if !(c1 > 0.0 && c1.is_finite() && c2 > 0.0 && c2.is_finite()) {
        return Err(KhError::BadConstant(format!("c1 = {c1} and c2 = {c2} must be positive")));
    }
    if n == 0 {
        return Err(KhError::BadConstant("N must be positive".into()));
    }
    let delta = t / n as f64;
    if delta >= r {
        return Err(KhError::BlockTooWide { n, delta, r, min_n: (t / r).floor() as usize + 1 });
    }
    let h = model.hurst;
    let sigma_n = delta.powf(h);
    let mut waypoints: Vec<f64> = (0..=n).map(|i| model.eta0 + (i as f64 / n as f64) * (x - model.eta0)).collect();
    waypoints[n] = x;
    let lambda = model.lambda();
    let big_lambda = model.big_lambda();
    let c = j1_prefactor(big_lambda);
    let rho = -(c * c1 / 4.0).ln();
    let step = (x - model.eta0).abs() / n as f64;
    let feasibility = Feasibility {
        c1_small: (-8.0 * c1 * c1 / (lambda * lambda)).exp() >= 0.5,
        rho_positive: rho > 0.0,
        n_rho_power: rho > 0.0 && (n as f64).ln() + n as f64 * rho.ln() >= 0.0,
        waypoint_step: 1.0 / c2.sqrt() <= c1,
    };
    Ok(ChainPlan {
        t,
        x,
        eta0: model.eta0,
        hurst: h,
        n,
        delta,
        sigma_n,
        waypoints,
        radius: c1 * sigma_n,
        waypoint_step: step,
        waypoint_in_radius: step <= c1 * sigma_n * (1.0 + 1e-12),
        min_n_for_radius: ((x - model.eta0).abs() / (c1 * t.powf(h))).powf(1.0 / (1.0 - h)).ceil().max(1.0) as usize,
        lambda,
        big_lambda,
        c,
        c1,
        c2,
        rho,
        feasible: feasibility.all(),
        feasibility,
        gamma: None,
    })
}

/// `1/(c₁ t^H) exp(N log(c c₁/4) + log(N)/2)`.
pub fn chain_bound_exact(n: usize, c: f64, c1: f64, t: f64, hurst: f64) -> f64 {
    let nf = n as f64;
    (nf * (c * c1 / 4.0).ln() + 0.5 * nf.ln()).exp() / (c1 * t.powf(hurst))
}

/// `1/(c₁ t^H) exp(-ρ c₂ (x - η_0)² / t^{2H})`.
pub fn chain_bound_simplified(rho: f64, c1: f64, c2: f64, dx: f64, t: f64, hurst: f64) -> f64 {
    (-rho * c2 * dx * dx / t.powf(2.0 * hurst)).exp() / (c1 * t.powf(hurst))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChainBound {
    pub exact: f64,
    pub simplified: f64,
    /// Rounding `N` up can make the simplified form exceed the exact one;
    /// this records which way it went.
    pub exact_dominates: bool,
}

pub fn chain_lower_bound(plan: &ChainPlan) -> Result<ChainBound, KhError> {
    if !plan.feasible {
        return Err(KhError::Infeasible(plan.feasibility.failures().join(", ")));
    }
    let exact = chain_bound_exact(plan.n, plan.c, plan.c1, plan.t, plan.hurst);
    let simplified = chain_bound_simplified(plan.rho, plan.c1, plan.c2, plan.x - plan.eta0, plan.t, plan.hurst);
    Ok(ChainBound { exact, simplified, exact_dominates: exact >= simplified })
}

/// Smallest `N` with `||b||_∞ Δ <= c₁ σ_N`, i.e. `N >= t (||b||_∞ / c₁)^{1/(1-H)}`.
pub fn remainder_threshold(drift_sup: f64, c1: f64, t: f64, hurst: f64) -> usize {
    if drift_sup == 0.0 {
        return 1;
    }
    (t * (drift_sup / c1).powf(1.0 / (1.0 - hurst))).ceil().max(1.0) as usize
}

fn check_paths(paths: &[SolutionPath], t: f64) -> Result<f64, KhError> {
    let first = paths.first().ok_or(KhError::NoPaths)?;
    if first.grid.index_of(t).is_none() {
        return Err(KhError::PathsTooShort(t));
    }
    Ok(first.step())
}

/// Per-block summary of `v_n = ||σ(X_{·-r})||²` over all paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BracketRow {
    pub n: usize,
    pub v_min: f64,
    pub v_max: f64,
    pub bracket_lo: f64,
    pub bracket_hi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct J1Bracket {
    pub report: BoundReport,
    pub rows: Vec<BracketRow>,
}

impl J1Bracket {
    pub fn to_csv(&self) -> String {
        let rows = self.rows.iter().map(|r| vec![r.n as f64, r.v_min, r.v_max, r.bracket_lo, r.bracket_hi]);
        csv::table(&["n", "v_n_min", "v_n_max", "bracket_lo", "bracket_hi"], rows)
    }
}

fn block_weights(plan: &ChainPlan, per: usize) -> Result<CellWeightMatrix, KhError> {
    let g = Grid::uniform(per, plan.delta).map_err(SddeError::from)?;
    cell_weights(&g, plan.hurst).map_err(|e| KhError::Sdde(SddeError::InvalidModel(e.to_string())))
}

/// `λ² σ_N² <= v_n <= Λ² σ_N²` for every path and block, the induced
/// Gaussian floor at distances `0, c₁σ_N, 2c₁σ_N, 4c₁σ_N`, and the tightness
/// ratio `max v_n / σ_N²` over `sup σ²` on visited states.
pub fn j1_variance_bracket(model: &ModelSpec, paths: &[SolutionPath], plan: &ChainPlan) -> Result<J1Bracket, KhError> {
    let h = check_paths(paths, plan.t)?;
    let per = cells_per_block(plan.delta, h)?;
    let w = block_weights(plan, per)?;
    let s2 = plan.sigma_n2();
    let lo = plan.lambda.powi(2) * s2;
    let hi = plan.big_lambda.powi(2) * s2;
    let mut report = BoundReport::new("j1-variance-bracket")
        .constant("N", plan.n as f64)
        .constant("delta", plan.delta)
        .constant("sigma_n2", s2)
        .constant("bracket_lo", lo)
        .constant("bracket_hi", hi);
    let mut rows = Vec::with_capacity(plan.n);
    let mut sup_sigma2: f64 = 0.0;
    let mut sigma = vec![0.0; per];
    let mut per_block = vec![(f64::INFINITY, f64::NEG_INFINITY); plan.n];
    for p in paths {
        for (b, slot) in per_block.iter_mut().enumerate() {
            for (j, s) in sigma.iter_mut().enumerate() {
                *s = model.sigma.eval(p.lagged(b * per + j))?;
                sup_sigma2 = sup_sigma2.max(*s * *s);
            }
            let v = w.pairing(&sigma, &sigma);
            slot.0 = slot.0.min(v);
            slot.1 = slot.1.max(v);
        }
    }
    let floor_pref = j1_prefactor(plan.big_lambda) / plan.sigma_n;
    let distances = [0.0, plan.radius, 2.0 * plan.radius, 4.0 * plan.radius];
    let mut worst_floor = f64::INFINITY;
    let mut max_ratio: f64 = 0.0;
    for (b, &(vmin, vmax)) in per_block.iter().enumerate() {
        let tol = 1e-12 * hi;
        report.push(CheckPoint::new(b as f64, (vmin - lo).min(hi - vmax), tol));
        for &v in &[vmin, vmax] {
            for &d in &distances {
                let floor = floor_pref * (-d * d / (2.0 * plan.lambda.powi(2) * s2)).exp();
                let dens = normal_pdf(d, 0.0, v.sqrt());
                worst_floor = worst_floor.min((dens - floor) / floor);
                if dens < floor * (1.0 - 1e-12) {
                    report.fail(format!("block {b}: Gaussian floor missed at distance {d}"));
                }
            }
        }
        max_ratio = max_ratio.max(vmax / s2);
        rows.push(BracketRow { n: b, v_min: vmin, v_max: vmax, bracket_lo: lo, bracket_hi: hi });
    }
    let far_floor = (-16.0 * plan.c1 * plan.c1 / (2.0 * plan.lambda.powi(2))).exp();
    if far_floor < 0.5 {
        report.fail(format!("floor at 4 c1 sigma_N is {far_floor} of the prefactor, below 1/2"));
    }
    report.set_constant("floor_ratio_at_4c1", far_floor);
    report.set_constant("worst_floor_relative_margin", worst_floor);
    report.set_constant("max_v_over_sigma_n2", max_ratio);
    report.set_constant("sup_sigma2_visited", sup_sigma2);
    report.set_constant("tightness", max_ratio / sup_sigma2);
    Ok(J1Bracket { report, rows })
}

/// `|R_n| <= ||b||_∞ Δ` with `R_n = ∫_{t_{n-1}}^{t_n} b(X_s) ds` (trapezoid).
/// Returns the report and `max |R_n|` over paths and blocks.
pub fn rn_smallness(
    model: &ModelSpec,
    paths: &[SolutionPath],
    plan: &ChainPlan,
) -> Result<(BoundReport, f64), KhError> {
    let h = check_paths(paths, plan.t)?;
    let per = cells_per_block(plan.delta, h)?;
    let bound = model.drift_sup() * plan.delta;
    let mut report = BoundReport::new("rn-smallness")
        .constant("N", plan.n as f64)
        .constant("delta", plan.delta)
        .constant("bound", bound);
    let mut per_block = vec![0.0f64; plan.n];
    for p in paths {
        let x = p.forward();
        let mut bvals = Vec::with_capacity(plan.n * per + 1);
        for v in &x[..=plan.n * per] {
            bvals.push(model.drift.eval(*v)?);
        }
        for (b, slot) in per_block.iter_mut().enumerate() {
            let s = b * per;
            let mut acc = 0.0;
            for k in s..s + per {
                acc += 0.5 * h * (bvals[k] + bvals[k + 1]);
            }
            *slot = slot.max(acc.abs());
        }
    }
    let max_r = per_block.iter().copied().fold(0.0, f64::max);
    for (b, &r) in per_block.iter().enumerate() {
        report.push(CheckPoint::new(b as f64, bound - r, 1e-12 * bound.max(f64::MIN_POSITIVE)));
    }
    report.set_constant("max_abs_rn", max_r);
    Ok((report, max_r))
}

/// Log-log slope of `max_n |R_n|` against `Δ` over the block counts `ns`;
/// passes when the slope lies in `[lo, hi]`. The slope is reported as `gamma`.
pub fn rn_refinement(
    model: &ModelSpec,
    paths: &[SolutionPath],
    t: f64,
    x: f64,
    ns: &[usize],
    slope_range: (f64, f64),
) -> Result<BoundReport, KhError> {
    let (c1, c2) = default_constants(model.lambda());
    let mut report = BoundReport::new("rn-refinement-slope");
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for &n in ns {
        let plan = plan_with_blocks(model, t, x, c1, c2, n)?;
        let (sub, max_r) = rn_smallness(model, paths, &plan)?;
        if !sub.pass {
            report.fail(format!("|R_n| bound violated at N = {n}"));
        }
        report.set_constant(&format!("max_abs_rn_N{n}"), max_r);
        lx.push(plan.delta.ln());
        ly.push(max_r.ln());
    }
    if ns.len() < 2 || ly.iter().any(|v| !v.is_finite()) {
        report.fail("slope undefined (fewer than two block counts or zero remainder)");
        return Ok(report);
    }
    let (_, slope, r2) = stats::linear_fit(&lx, &ly);
    report.set_constant("gamma", slope);
    report.set_constant("r2", r2);
    report.push(CheckPoint::new(0.0, (slope - slope_range.0).min(slope_range.1 - slope), 0.0));
    Ok(report)
}

/// Non-degeneracy scan over block counts. `N₀` is the smallest scanned `N`
/// from which every larger scanned `N` passes.
#[derive(Debug, Clone, Serialize)]
pub struct NondegeneracyScan {
    pub reports: Vec<(usize, BoundReport)>,
    pub n0: Option<usize>,
}

pub fn nondegeneracy_scan(
    model: &ModelSpec,
    paths: &[SolutionPath],
    t: f64,
    ns: &[usize],
) -> Result<NondegeneracyScan, KhError> {
    let h = check_paths(paths, t)?;
    let mut reports = Vec::new();
    let exponents: Vec<DriftExponent> =
        paths.iter().map(|p| DriftExponent::new(p, &model.drift)).collect::<Result<_, _>>()?;
    for &n in ns {
        let delta = t / n as f64;
        if delta >= model.delay {
            return Err(KhError::BlockTooWide {
                n,
                delta,
                r: model.delay,
                min_n: (t / model.delay).floor() as usize + 1,
            });
        }
        let per = cells_per_block(delta, h)?;
        let w = cell_weights(&Grid::uniform(per, delta).map_err(SddeError::from)?, model.hurst)
            .map_err(|e| KhError::Sdde(SddeError::InvalidModel(e.to_string())))?;
        let s2 = delta.powf(2.0 * model.hurst);
        let mut norms: Vec<BlockNorms> = Vec::new();
        for (p, e) in paths.iter().zip(&exponents) {
            for b in 0..n {
                let block = Block { index: b, start: b * per, end: (b + 1) * per };
                norms.push(block_norms(model, p, e, block, &w, s2)?);
            }
        }
        let mut r = check_nondegeneracy(&norms, model.lambda());
        r.set_constant("N", n as f64);
        let max_ratio = norms.iter().map(|b| b.dr_norm2 / b.di_norm2).fold(0.0, f64::max);
        r.set_constant("max_dr_over_di", max_ratio);
        reports.push((n, r));
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by_key(|&i| reports[i].0);
    let mut n0 = None;
    for &i in order.iter().rev() {
        if reports[i].1.pass {
            n0 = Some(reports[i].0);
        } else {
            break;
        }
    }
    Ok(NondegeneracyScan { reports, n0 })
}

/// Settings for [`verify_late_bound`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LateOptions {
    pub n_paths: usize,
    pub points: usize,
    pub n_se: f64,
    pub c3_range: (f64, f64),
    pub c4_range: (f64, f64),
    pub search_size: usize,
    /// Minimum R² of the shape fit, enforced only when set.
    pub min_shape_r2: Option<f64>,
}

impl Default for LateOptions {
    fn default() -> Self {
        LateOptions {
            n_paths: 100_000,
            points: 61,
            n_se: 3.0,
            c3_range: (1e-6, 1.0),
            c4_range: (1e-2, 1e3),
            search_size: 32,
            min_shape_r2: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasiblePair {
    pub c3: f64,
    pub c4: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShapeFit {
    pub intercept: f64,
    pub c4_fitted: f64,
    pub r2: f64,
    /// `t^{2H} / (2 Var X_t)`, the slope of an exact Gaussian.
    pub c4_gaussian_reference: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LateVerification {
    pub t: f64,
    pub positivity: BoundReport,
    pub feasibility: BoundReport,
    pub shape: BoundReport,
    pub feasible_pairs: usize,
    pub best: Option<FeasiblePair>,
    pub fit: ShapeFit,
    pub centering: Centering,
    pub excluded_points: Vec<f64>,
    pub plan: ChainPlan,
    pub chain_bound: Option<ChainBound>,
    #[serde(skip)]
    pub points: Vec<f64>,
    #[serde(skip)]
    pub density: Vec<f64>,
    #[serde(skip)]
    pub stderr: Vec<f64>,
}

impl LateVerification {
    pub fn pass(&self) -> bool {
        self.positivity.pass && self.feasibility.pass && self.shape.pass && self.plan.feasible
    }

    /// Rows `(x, p_kde, floor, margin)` with the floor at the best pair.
    pub fn to_csv(&self) -> String {
        let th = self.t.powf(self.plan.hurst);
        let rows = (0..self.points.len()).map(|i| {
            let x = self.points[i];
            let floor = self.best.map_or(0.0, |b| b.c3 / th * (-b.c4 * (x - self.plan.eta0).powi(2) / (th * th)).exp());
            vec![x, self.density[i], floor, self.density[i] - floor]
        });
        csv::table(&["x", "p_kde", "floor", "margin"], rows)
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    linspace(lo.ln(), hi.ln(), n).into_iter().map(f64::exp).collect()
}

/// Empirical check of `p_t(x) >= c₃/t^H exp(-c₄ (x - η_0)²/t^{2H})` on
/// `[x_lo, x_hi]` for `t > r`.
pub fn verify_late_bound(
    model: &ModelSpec,
    t: f64,
    x_lo: f64,
    x_hi: f64,
    opts: &LateOptions,
    seed: u64,
) -> Result<LateVerification, KhError> {
    if !(t > model.delay) {
        return Err(KhError::NotLate { t, r: model.delay });
    }
    if !(x_hi > x_lo) || opts.points == 0 {
        return Err(KhError::EmptyRange);
    }
    let xs = simulate_terminal(model, t, opts.n_paths, seed)?;
    late_from_samples(model, t, &xs, x_lo, x_hi, opts)
}

pub fn late_from_samples(
    model: &ModelSpec,
    t: f64,
    xs: &[f64],
    x_lo: f64,
    x_hi: f64,
    opts: &LateOptions,
) -> Result<LateVerification, KhError> {
    if !(x_hi > x_lo) || opts.points == 0 {
        return Err(KhError::EmptyRange);
    }
    let (smin, smax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let all = linspace(x_lo, x_hi, opts.points);
    let (points, excluded): (Vec<f64>, Vec<f64>) = all.into_iter().partition(|x| *x >= smin && *x <= smax);
    if points.is_empty() {
        return Err(KhError::EmptyRange);
    }
    let est = kde(xs, &points, None)?;
    let centering = mean_and_centering(xs);
    let eta0 = model.eta0;
    let th = t.powf(model.hurst);
    let th2 = th * th;
    let lower: Vec<f64> = est.values.iter().zip(&est.stderr).map(|(p, s)| p - opts.n_se * s).collect();

    let mut positivity = BoundReport::new("late-positivity")
        .constant("t", t)
        .constant("n_paths", xs.len() as f64)
        .constant("n_standard_errors", opts.n_se)
        .constant("excluded_points", excluded.len() as f64);
    for (x, l) in points.iter().zip(&lower) {
        positivity.push(CheckPoint::new(*x, *l, 0.0));
        if *l <= 0.0 {
            positivity.fail(format!("density not resolved above zero at {x}"));
        }
    }
    if !excluded.is_empty() {
        positivity.note(format!("{} points outside the sampled support were excluded", excluded.len()));
    }

    let c3s = log_grid(opts.c3_range.0, opts.c3_range.1, opts.search_size);
    let c4s = log_grid(opts.c4_range.0, opts.c4_range.1, opts.search_size);
    let holds = |c3: f64, c4: f64| {
        points.iter().zip(&lower).all(|(x, l)| c3 / th * (-c4 * (x - eta0).powi(2) / th2).exp() <= *l)
    };
    let mut count = 0;
    let mut best: Option<FeasiblePair> = None;
    for &c4 in &c4s {
        for &c3 in &c3s {
            if holds(c3, c4) {
                count += 1;
                if best.is_none_or(|b| c4 == b.c4 && c3 > b.c3) {
                    best = Some(FeasiblePair { c3, c4 });
                }
            }
        }
    }
    let mut feasibility = BoundReport::new("late-feasibility-search")
        .constant("grid_size", opts.search_size as f64)
        .constant("feasible_pairs", count as f64);
    match best {
        Some(b) => {
            feasibility.set_constant("best_c3", b.c3);
            feasibility.set_constant("best_c4", b.c4);
        }
        None => feasibility.fail("no feasible (c3, c4) on the search grid"),
    }

    let (mut fx, mut fy) = (Vec::new(), Vec::new());
    for (x, p) in points.iter().zip(&est.values) {
        if (x - eta0).abs() <= 2.0 * th && *p > 0.0 {
            fx.push((x - eta0).powi(2) / th2);
            fy.push(-p.ln());
        }
    }
    let (_, var_sd) = stats::mean_sd(xs);
    let reference = th2 / (2.0 * var_sd * var_sd);
    let mut shape = BoundReport::new("late-gaussian-shape").constant("c4_gaussian_reference", reference);
    let fit = if fx.len() >= 3 {
        let (a, b, r2) = stats::linear_fit(&fx, &fy);
        shape.set_constant("c4_fitted", b);
        shape.set_constant("r2", r2);
        if !b.is_finite() {
            shape.fail("fitted slope is not finite");
        }
        if let Some(min) = opts.min_shape_r2 {
            shape.push(CheckPoint::new(0.0, r2 - min, 0.0));
        }
        ShapeFit { intercept: a, c4_fitted: b, r2, c4_gaussian_reference: reference }
    } else {
        shape.fail("fewer than three central points");
        ShapeFit { intercept: f64::NAN, c4_fitted: f64::NAN, r2: f64::NAN, c4_gaussian_reference: reference }
    };

    let (c1, c2) = default_constants(model.lambda());
    let far = if (x_hi - eta0).abs() >= (x_lo - eta0).abs() { x_hi } else { x_lo };
    let mut plan = plan_chain(model, t, far, c1, c2);
    if let Err(KhError::BlockTooWide { min_n, .. }) = plan {
        plan = plan_with_blocks(model, t, far, c1, c2, min_n);
    }
    let plan = plan?;
    let chain_bound = chain_lower_bound(&plan).ok();
    Ok(LateVerification {
        t,
        positivity,
        feasibility,
        shape,
        feasible_pairs: count,
        best,
        fit,
        centering,
        excluded_points: excluded,
        plan,
        chain_bound,
        points,
        density: est.values,
        stderr: est.stderr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sdde::{simulate, tests::model};

    fn admissible(m: usize) -> ModelSpec {
        model("1+0.25*tanh(x)", "0.1*sin(x)", "0.5*sin(3*x)", 0.0, 0.75, m)
    }

    #[test]
    fn block_count_and_sigma_n() {
        let m = admissible(16);
        let p = plan_chain(&m, 1.0 + 1e-9, 1.0, 0.2, 16.0);
        // t barely past r: N = 16 from the formula.
        assert_eq!(p.unwrap().n, 16);
        assert_eq!(block_count(1.0, 1.0, 0.0, 0.6, 16.0), 16);
        let two = model("1", "0", "0", 0.0, 0.75, 16);
        let p = plan_with_blocks(&two, 2.0, 1.0, 0.2, 16.0, 32).unwrap();
        assert!((p.delta - 1.0 / 16.0).abs() < 1e-15);
        assert!((p.sigma_n - 0.125).abs() < 1e-15);
    }

    #[test]
    fn maximal_c1() {
        let want = (std::f64::consts::LN_2 / 8.0).sqrt();
        assert!((max_c1(1.0) - want).abs() < 1e-15);
        assert!((max_c1(1.0) - 0.2944).abs() < 5e-5);
        let c = max_c1(1.0);
        assert!((-8.0 * c * c).exp() >= 0.5 - 1e-15);
    }

    #[test]
    fn waypoints_and_steps() {
        let m = admissible(16);
        let (c1, c2) = default_constants(m.lambda());
        let p = plan_chain(&m, 1.5, 2.3, c1, c2).unwrap();
        assert_eq!(p.waypoints[0], m.eta0);
        assert_eq!(*p.waypoints.last().unwrap(), 2.3);
        let sum: f64 = p.waypoints.windows(2).map(|w| w[1] - w[0]).sum();
        assert!((sum - 2.3).abs() < 1e-12);
        assert!((p.waypoint_step - 2.3 / p.n as f64).abs() < 1e-15);
        assert!(p.feasible, "{:?}", p.feasibility);
        assert_eq!(p.waypoint_in_radius, p.waypoint_step <= p.radius);
        let q = plan_with_blocks(&m, 1.5, 2.3, c1, c2, p.min_n_for_radius.max(p.n)).unwrap();
        assert!(q.waypoint_in_radius);

        assert!((p.n as f64 * p.delta - 1.5).abs() < 1e-12);
    }

    #[test]
    fn wide_blocks_rejected() {
        let m = admissible(16);
        match plan_chain(&m, 1.5, 0.0, 0.2, 30.0) {
            Err(KhError::BlockTooWide { n: 1, min_n: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(plan_chain(&m, 0.5, 1.0, 0.2, 30.0), Err(KhError::NotLate { .. })));
    }

    #[test]
    fn infeasible_is_flagged_not_rejected() {
        let m = admissible(16);
        let p = plan_with_blocks(&m, 1.5, 1.0, 1.0, 1.0, 4).unwrap();
        assert!(!p.feasible && !p.feasibility.c1_small);
        assert!(matches!(chain_lower_bound(&p), Err(KhError::Infeasible(_))));
        let q = plan_with_blocks(&m, 1.5, 1.0, 0.2, 4.0, 4).unwrap();
        assert!(!q.feasibility.waypoint_step);
        // c c1 >= 4 makes rho non-positive.
        let r = plan_with_blocks(&model("0.05", "0", "0", 0.0, 0.75, 16), 1.5, 1.0, 1.0, 1e4, 4).unwrap();
        assert!(r.c * r.c1 >= 4.0 && !r.feasibility.rho_positive);
    }

    #[test]
    fn single_block_bound() {
        let c = j1_prefactor(1.3);
        let v = chain_bound_exact(1, c, 0.2, 1.7, 0.75);
        assert!((v - c / (4.0 * 1.7f64.powf(0.75))).abs() < 1e-15);
    }

    #[test]
    fn exact_dominates_when_n_integral() {
        let m = admissible(16);
        let (c1, c2) = default_constants(m.lambda());
        let th = 1.5f64.powf(0.75);
        // Choose x so that c2 (x - η0)² / t^{2H} = 40 exactly up to rounding.
        let x = (40.0 / c2).sqrt() * th;
        let p = plan_with_blocks(&m, 1.5, x, c1, c2, 40).unwrap();
        let b = chain_lower_bound(&p).unwrap();
        assert!(b.exact_dominates && b.exact > 0.0 && b.simplified > 0.0);
    }

    #[test]
    fn simplified_bound_monotone_in_c2() {
        let m = admissible(16);
        let c1 = 0.2;
        let mut prev = f64::INFINITY;
        for c2 in [4.0, 8.0, 16.0, 32.0] {
            let p = plan_chain(&m, 1.5, 1.0, c1, c2).unwrap();
            let v = chain_bound_simplified(p.rho, c1, c2, 1.0, 1.5, 0.75);
            assert!(v < prev);
            prev = v;
        }
    }

    #[test]
    fn constant_sigma_bracket_is_exact() {
        let m = model("1.5", "0", "0", 0.0, 0.75, 32);
        let paths = simulate(&m, 1.5, 5, 1).unwrap();
        let p = plan_with_blocks(&m, 1.5, 1.0, 0.2, 30.0, 8).unwrap();
        let j = j1_variance_bracket(&m, &paths, &p).unwrap();
        assert!(j.report.pass, "{}", j.report.summary());
        for r in &j.rows {
            assert!((r.v_min - 2.25 * p.sigma_n2()).abs() < 1e-12);
            assert!((r.v_max - 2.25 * p.sigma_n2()).abs() < 1e-12);
        }
        let (rn, max_r) = rn_smallness(&m, &paths, &p).unwrap();
        assert!(rn.pass && max_r == 0.0);
    }

    #[test]
    fn constant_drift_remainder() {
        let m = model("1", "0.3", "0", 0.0, 0.75, 32);
        let paths = simulate(&m, 1.5, 3, 1).unwrap();
        let p = plan_with_blocks(&m, 1.5, 1.0, 0.2, 30.0, 16).unwrap();
        let (rn, max_r) = rn_smallness(&m, &paths, &p).unwrap();
        assert!(rn.pass);
        assert!((max_r - 0.3 * p.delta).abs() < 1e-14);
    }

    #[test]
    fn non_commensurate_blocks() {
        let m = admissible(16);
        let paths = simulate(&m, 1.5, 2, 1).unwrap();
        let p = plan_with_blocks(&m, 1.5, 1.0, 0.2, 30.0, 7).unwrap();
        assert!(matches!(j1_variance_bracket(&m, &paths, &p), Err(KhError::NonCommensurate { .. })));
    }

    #[test]
    fn remainder_threshold_formula() {
        assert_eq!(remainder_threshold(0.0, 0.2, 1.5, 0.75), 1);
        let n = remainder_threshold(0.1, 0.2, 1.5, 0.75);
        let d = 1.5 / n as f64;
        assert!(0.1 * d <= 0.2 * d.powf(0.75));
        let d_prev = 1.5 / (n - 1) as f64;
        assert!(0.1 * d_prev > 0.2 * d_prev.powf(0.75) || n == 1);
    }

    #[test]
    fn out_of_support_points_excluded() {
        let m = admissible(16);
        let xs = simulate_terminal(&m, 1.5, 2000, 3).unwrap();
        let opts = LateOptions { n_paths: 2000, points: 21, ..LateOptions::default() };
        let v = late_from_samples(&m, 1.5, &xs, -50.0, 50.0, &opts).unwrap();
        assert!(!v.excluded_points.is_empty());
        assert!(v.points.iter().all(|x| x.abs() < 50.0));
        assert!(matches!(late_from_samples(&m, 1.5, &xs, 100.0, 200.0, &opts), Err(KhError::EmptyRange)));
    }
}
