//! Pathwise Malliavin derivatives of the solution.
//!
//! Inside a block of width below the delay, `σ(X_{s-r})` is already known,
//! so `D_s X_τ` solves a linear ODE with closed form
//! `σ(X_{s-r}) exp(∫_s^τ b'(X_u) du)`. On `(0, r]` the initial condition is
//! the deterministic `σ(η(s - r))`. The exponent is integrated by the
//! trapezoid rule on the solver grid.
//!
//! Step-function representations use the left end of each cell as the
//! direction `s`, matching the left-point evaluation of the solver.

use serde::Serialize;
use thiserror::Error;

use crate::coeffs::{CoefficientProfile, ExprError};
use crate::hspace::CellWeightMatrix;
use crate::report::{BoundReport, CheckPoint};
use crate::sdde::{ModelSpec, SolutionPath};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MalliavinError {
    #[error("time {0} is not on the solution grid")]
    OffGrid(f64),
    #[error("direction s = {s} lies after t = {t}")]
    DirectionAfterTime { s: f64, t: f64 },
    #[error("early-regime derivative needs t <= r (t = {t}, r = {r})")]
    NotEarly { t: f64, r: f64 },
    #[error("block spans {width} steps but the delay is only {lag} steps")]
    BlockTooWide { width: usize, lag: usize },
    #[error("index {index} is outside block [{start}, {end}]")]
    OutsideBlock { index: usize, start: usize, end: usize },
    #[error("cell weights cover {weights} cells, block has {cells}")]
    WeightMismatch { weights: usize, cells: usize },
    #[error(transparent)]
    Coefficient(#[from] ExprError),
}

/// Cells `start..end` of a solution grid, i.e. `[t_start, t_end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Block {
    pub index: usize,
    pub start: usize,
    pub end: usize,
}

impl Block {
    pub fn cells(&self) -> usize {
        self.end - self.start
    }
}

/// Prefix trapezoid integrals of `b'(X)` along a path: `E[k] = ∫_0^{t_k} b'(X_u) du`.
pub struct DriftExponent {
    prefix: Vec<f64>,
    slopes: Vec<f64>,
}

impl DriftExponent {
    pub fn new(path: &SolutionPath, drift: &CoefficientProfile) -> Result<Self, ExprError> {
        let h = path.step();
        let slopes = path.forward().iter().map(|&x| drift.eval_derivative(x)).collect::<Result<Vec<_>, _>>()?;
        let mut prefix = Vec::with_capacity(slopes.len());
        prefix.push(0.0);
        for k in 1..slopes.len() {
            prefix.push(prefix[k - 1] + 0.5 * h * (slopes[k - 1] + slopes[k]));
        }
        Ok(DriftExponent { prefix, slopes })
    }

    /// `∫_{t_s}^{t_t} b'(X_u) du`.
    pub fn between(&self, s: usize, t: usize) -> f64 {
        self.prefix[t] - self.prefix[s]
    }

    /// `b'(X_{t_k})`.
    pub fn slope(&self, k: usize) -> f64 {
        self.slopes[k]
    }
}

fn grid_index(path: &SolutionPath, t: f64) -> Result<usize, MalliavinError> {
    path.grid.index_of(t).ok_or(MalliavinError::OffGrid(t))
}

/// `D_s X_t = σ(η(s - r)) exp(∫_s^t b'(X_u) du)` for `0 <= s <= t <= r`.
pub fn derivative_early(model: &ModelSpec, path: &SolutionPath, s: f64, t: f64) -> Result<f64, MalliavinError> {
    let (si, ti) = (grid_index(path, s)?, grid_index(path, t)?);
    if si > ti {
        return Err(MalliavinError::DirectionAfterTime { s, t });
    }
    if ti > path.lag {
        return Err(MalliavinError::NotEarly { t, r: model.delay });
    }
    let exponent = DriftExponent::new(path, &model.drift)?;
    Ok(model.sigma.eval(path.lagged(si))? * exponent.between(si, ti).exp())
}

/// `D_s X_τ = σ(X_{s-r}) exp(∫_s^τ b'(X_u) du)` for `s, τ` in the same block
/// (grid indices); zero when `τ < s`.
pub fn derivative_block(
    model: &ModelSpec,
    path: &SolutionPath,
    exponent: &DriftExponent,
    block: Block,
    s: usize,
    tau: usize,
) -> Result<f64, MalliavinError> {
    check_block(path, block)?;
    for idx in [s, tau] {
        if idx < block.start || idx > block.end {
            return Err(MalliavinError::OutsideBlock { index: idx, start: block.start, end: block.end });
        }
    }
    if tau < s {
        return Ok(0.0);
    }
    Ok(model.sigma.eval(path.lagged(s))? * exponent.between(s, tau).exp())
}

fn check_block(path: &SolutionPath, block: Block) -> Result<(), MalliavinError> {
    if block.cells() >= path.lag {
        return Err(MalliavinError::BlockTooWide { width: block.cells(), lag: path.lag });
    }
    if block.end > path.grid.cells() || block.start >= block.end {
        return Err(MalliavinError::OutsideBlock { index: block.end, start: block.start, end: path.grid.cells() });
    }
    Ok(())
}

/// Grid values of `D_s X_τ` for directions and times in one block
/// (`values[a][b]` is direction `start + a`, time `start + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTable {
    pub block: Block,
    pub values: Vec<Vec<f64>>,
}

impl DerivativeTable {
    /// Table for block `[start, end]` of a path. The block must fit inside
    /// one delay; on `(0, r]` any block up to index `lag` qualifies because
    /// the initial condition only reads `η`.
    pub fn build(model: &ModelSpec, path: &SolutionPath, block: Block) -> Result<Self, MalliavinError> {
        let early = block.end <= path.lag;
        if !early {
            check_block(path, block)?;
        }
        let exponent = DriftExponent::new(path, &model.drift)?;
        let n = block.cells() + 1;
        let mut values = vec![vec![0.0; n]; n];
        for a in 0..n {
            let s = block.start + a;
            let init = model.sigma.eval(path.lagged(s))?;
            for b in a..n {
                values[a][b] = init * exponent.between(s, block.start + b).exp();
            }
        }
        Ok(DerivativeTable { block, values })
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.values.iter().enumerate().flat_map(|(a, row)| row.iter().enumerate().skip(a).map(move |(b, v)| (a, b, *v)))
    }
}

/// Cell values of `s ↦ D_s X_{t_k}` on `[0, t_k]` for `t_k <= r`.
pub fn early_derivative_cells(
    model: &ModelSpec,
    path: &SolutionPath,
    exponent: &DriftExponent,
    k: usize,
) -> Result<Vec<f64>, ExprError> {
    (0..k).map(|j| Ok(model.sigma.eval(path.lagged(j))? * exponent.between(j, k).exp())).collect()
}

/// `Φ_j = D_{t_j} X_{t_k}` for `j < k` straight from solver values on
/// `[0, t_k]`, given `σ(η(t_j - r))` for each cell. Early regime only.
pub(crate) fn early_phi(
    drift: &CoefficientProfile,
    forward: &[f64],
    sigma_eta: &[f64],
    h: f64,
    out: &mut Vec<f64>,
) -> Result<(), ExprError> {
    let k = sigma_eta.len();
    out.clear();
    out.resize(k, 0.0);
    // Accumulate ∫_{t_j}^{t_k} b'(X) backwards from t_k.
    let mut tail = 0.0;
    let mut right = drift.eval_derivative(forward[k])?;
    for j in (0..k).rev() {
        let left = drift.eval_derivative(forward[j])?;
        tail += 0.5 * h * (left + right);
        out[j] = sigma_eta[j] * tail.exp();
        right = left;
    }
    Ok(())
}

/// Checks `λ e^{-Mr} <= D_s X_t <= Λ e^{Mr}` over every `0 <= s <= t <= r`.
pub fn check_early_bounds(model: &ModelSpec, paths: &[SolutionPath]) -> Result<BoundReport, MalliavinError> {
    let r = model.delay;
    let m = model.drift_lipschitz();
    let lo = model.lambda() * (-m * r).exp();
    let hi = model.big_lambda() * (m * r).exp();
    let mut report = BoundReport::new("malliavin-early-bracket")
        .constant("lambda", model.lambda())
        .constant("Lambda", model.big_lambda())
        .constant("M", m)
        .constant("lower", lo)
        .constant("upper", hi);
    let mut worst_lo = f64::INFINITY;
    let mut worst_hi = f64::INFINITY;
    let mut entries = 0usize;
    for (pi, path) in paths.iter().enumerate() {
        let end = path.lag.min(path.grid.cells());
        let table = DerivativeTable::build(model, path, Block { index: 0, start: 0, end })?;
        let mut path_lo = f64::INFINITY;
        let mut path_hi = f64::INFINITY;
        for (_, _, v) in table.entries() {
            path_lo = path_lo.min(v - lo);
            path_hi = path_hi.min(hi - v);
            entries += 1;
        }
        worst_lo = worst_lo.min(path_lo);
        worst_hi = worst_hi.min(path_hi);
        report.push(CheckPoint::new(pi as f64, path_lo.min(path_hi), 1e-12 * hi));
    }
    report.set_constant("entries", entries as f64);
    report.set_constant("worst_lower_margin", worst_lo);
    report.set_constant("worst_upper_margin", worst_hi);
    Ok(report)
}

/// H-norms of the block derivatives of `I_n = ∫ σ(X_{s-r}) dB` and
/// `R_n = ∫ b(X_s) ds` on `[t_{n-1}, t_n]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockNorms {
    pub block: Block,
    pub di_norm2: f64,
    pub dr_norm2: f64,
    pub sigma_n2: f64,
    /// `(||DI||²/2 - ||DR||²) / σ_N²`, a lower bound for `||DU_n||²`.
    pub gamma_u_lower: f64,
}

/// `w` holds the cell weights of one block (any block on a uniform grid has
/// the same layout).
pub fn block_norms(
    model: &ModelSpec,
    path: &SolutionPath,
    exponent: &DriftExponent,
    block: Block,
    w: &CellWeightMatrix,
    sigma_n2: f64,
) -> Result<BlockNorms, MalliavinError> {
    check_block(path, block)?;
    if w.cells() != block.cells() {
        return Err(MalliavinError::WeightMismatch { weights: w.cells(), cells: block.cells() });
    }
    let h = path.step();
    let mut di = Vec::with_capacity(block.cells());
    let mut dr = Vec::with_capacity(block.cells());
    for s in block.start..block.end {
        let init = model.sigma.eval(path.lagged(s))?;
        di.push(init);
        // D_s R_n = ∫_s^{t_n} b'(X_u) D_s X_u du, trapezoid on the grid.
        let integrand = |u: usize| exponent.slope(u) * init * exponent.between(s, u).exp();
        let mut acc = 0.0;
        for u in s..block.end {
            acc += 0.5 * h * (integrand(u) + integrand(u + 1));
        }
        dr.push(acc);
    }
    let di_norm2 = w.pairing(&di, &di);
    let dr_norm2 = w.pairing(&dr, &dr);
    Ok(BlockNorms { block, di_norm2, dr_norm2, sigma_n2, gamma_u_lower: (di_norm2 / 2.0 - dr_norm2) / sigma_n2 })
}

/// `||DI_n||²/2 - ||DR_n||² >= λ² σ_N² / 4` on every block.
pub fn check_nondegeneracy(norms: &[BlockNorms], lambda: f64) -> BoundReport {
    let mut report = BoundReport::new("nondegeneracy-gamma-u").constant("lambda", lambda);
    for (i, b) in norms.iter().enumerate() {
        let floor = lambda * lambda * b.sigma_n2 / 4.0;
        let margin = b.di_norm2 / 2.0 - b.dr_norm2 - floor;
        report.push(CheckPoint::new(i as f64, margin, 1e-12 * b.di_norm2.max(floor)));
    }
    if let Some(first) = norms.first() {
        report.set_constant("sigma_n2", first.sigma_n2);
    }
    report
}

/// Uniform bounds `C_j >= |D^{(j)}_{s_1..s_j} X_τ|` for directions and time in
/// one block of width `width < r`.
///
/// Inside a block every derivative of `σ(X_{s_q - r})` vanishes, so the
/// order-`j` derivative solves `D^j X_τ = ∫ (b' D^j X_u + Q_j(u)) du` with
/// `Q_j` the Faà di Bruno terms of order `k >= 2`. Gronwall then gives
/// `C_j = width · q_j · e^{M width}` where `q_j` bounds `Q_j` through the
/// partial Bell polynomials of the lower-order bounds. `C_1 = Λ e^{M width}`.
///
/// `drift_sups[k - 1]` is `||b^{(k)}||_∞` for `k = 1..=order`.
pub fn derivative_bounds(sigma_sup: f64, drift_sups: &[f64], width: f64, order: usize) -> Vec<f64> {
    assert!(drift_sups.len() >= order.min(1), "need ||b'||");
    let m = drift_sups.first().copied().unwrap_or(0.0);
    let growth = (m * width).exp();
    let mut bounds: Vec<f64> = Vec::with_capacity(order);
    for j in 1..=order {
        if j == 1 {
            bounds.push(sigma_sup * growth);
            continue;
        }
        let mut q = 0.0;
        for k in 2..=j {
            let bk = drift_sups.get(k - 1).copied().unwrap_or(0.0);
            q += bk * partial_bell(j, k, &bounds);
        }
        bounds.push(width * q * growth);
    }
    bounds
}

/// Partial Bell polynomial `B_{n,k}(x_1, ..., x_{n-k+1})` with `x[i-1] = x_i`.
pub fn partial_bell(n: usize, k: usize, x: &[f64]) -> f64 {
    if n == 0 && k == 0 {
        return 1.0;
    }
    if n == 0 || k == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 1..=(n - k + 1) {
        let xi = match x.get(i - 1) {
            Some(v) => *v,
            None => continue,
        };
        acc += binomial(n - 1, i - 1) * xi * partial_bell(n - i, k - 1, x);
    }
    acc
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
