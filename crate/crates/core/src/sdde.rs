//! Pathwise solver for
//!
//! ```text
//! X_t = η_0 + ∫_0^t σ(X_{s-r}) dB^H_s + ∫_0^t b(X_s) ds,   t ∈ (0, T]
//! X_t = η(t),                                              t ∈ [-r, 0]
//! ```
//!
//! The grid step divides the delay, so `X_{t_k - r}` is always an earlier
//! grid value and the left-point Young sum needs no interpolation.

use serde::Serialize;
use thiserror::Error;

use crate::coeffs::{CoefficientProfile, ExprError, Expression};
use crate::csv;
use crate::fbm::{self, FbmError, FbmSampler};
use crate::grid::{Grid, GridError};
use crate::par;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SddeError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("time {t} is not a multiple of the grid step {step}")]
    NonCommensurate { t: f64, step: f64 },
    #[error("driver has {got} values, grid needs {want}")]
    DriverLength { got: usize, want: usize },
    #[error("diffusion coefficient is not elliptic on the scan range (lower bound {0})")]
    NotElliptic(f64),
    #[error("coefficient evaluation failed: {0}")]
    Coefficient(#[from] ExprError),
    #[error(transparent)]
    Fbm(#[from] FbmError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A complete problem instance.
#[derive(Debug, Clone, Serialize)]
pub struct ModelSpec {
    pub hurst: f64,
    pub horizon: f64,
    pub delay: f64,
    /// Initial path; its variable `x` is the time `u ∈ [-r, 0]`.
    #[serde(serialize_with = "display_expr")]
    pub eta: Expression,
    pub eta0: f64,
    pub sigma: CoefficientProfile,
    pub drift: CoefficientProfile,
    pub steps_per_delay: usize,
}

fn display_expr<S: serde::Serializer>(e: &Expression, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(e)
}

impl ModelSpec {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        hurst: f64,
        horizon: f64,
        delay: f64,
        eta: Expression,
        eta0: f64,
        sigma: CoefficientProfile,
        drift: CoefficientProfile,
        steps_per_delay: usize,
    ) -> Result<Self, SddeError> {
        fbm::check_hurst(hurst)?;
        if !(delay > 0.0 && delay.is_finite()) {
            return Err(SddeError::InvalidModel(format!("delay must be positive, got {delay}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(SddeError::InvalidModel(format!("horizon must be positive, got {horizon}")));
        }
        if steps_per_delay == 0 {
            return Err(SddeError::InvalidModel("steps_per_delay must be positive".into()));
        }
        let at_zero = eta.eval(0.0)?;
        if (at_zero - eta0).abs() > 1e-12 {
            return Err(SddeError::InvalidModel(format!("eta(0) = {at_zero} differs from eta0 = {eta0}")));
        }
        Ok(ModelSpec { hurst, horizon, delay, eta, eta0, sigma, drift, steps_per_delay })
    }

    pub fn step(&self) -> f64 {
        self.delay / self.steps_per_delay as f64
    }

    /// λ from the σ scan.
    pub fn lambda(&self) -> f64 {
        self.sigma.lower
    }

    /// Λ from the σ scan.
    pub fn big_lambda(&self) -> f64 {
        self.sigma.upper
    }

    /// `M = ||b'||_∞` from the drift scan.
    pub fn drift_lipschitz(&self) -> f64 {
        self.drift.derivative_sup
    }

    /// `||b||_∞` from the drift scan.
    pub fn drift_sup(&self) -> f64 {
        self.drift.sup_abs()
    }

    pub fn require_elliptic(&self) -> Result<(), SddeError> {
        if self.sigma.lower > 0.0 {
            Ok(())
        } else {
            Err(SddeError::NotElliptic(self.sigma.lower))
        }
    }

    /// Number of solver steps to reach `t`.
    pub fn steps_to(&self, t: f64) -> Result<usize, SddeError> {
        let h = self.step();
        let k = (t / h).round();
        if k < 1.0 || (k * h - t).abs() > 1e-9 * t.max(1.0) {
            return Err(SddeError::NonCommensurate { t, step: h });
        }
        Ok(k as usize)
    }

    /// Uniform solver grid on `[0, t]`.
    pub fn grid_to(&self, t: f64) -> Result<Grid, SddeError> {
        Ok(Grid::uniform(self.steps_to(t)?, t)?)
    }

    /// `η` at the `steps_per_delay + 1` grid times of `[-r, 0]`.
    pub fn history(&self) -> Result<Vec<f64>, SddeError> {
        let m = self.steps_per_delay;
        let h = self.step();
        let mut out = Vec::with_capacity(m + 1);
        for k in 0..m {
            out.push(self.eta.eval(-self.delay + k as f64 * h)?);
        }
        out.push(self.eta0);
        Ok(out)
    }

    pub fn sampler_to(&self, t: f64) -> Result<FbmSampler, SddeError> {
        Ok(FbmSampler::new(&self.grid_to(t)?, self.hurst)?)
    }
}

/// A trajectory on `[-r, T]`. `values[lag + k]` is `X` at `t_k`, where `lag`
/// is the number of steps per delay, so `values[k]` is `X_{t_k - r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPath {
    pub grid: Grid,
    pub lag: usize,
    pub values: Vec<f64>,
    pub driver: Vec<f64>,
}

impl SolutionPath {
    pub fn x(&self, k: usize) -> f64 {
        self.values[self.lag + k]
    }

    /// `X_{t_k - r}`.
    pub fn lagged(&self, k: usize) -> f64 {
        self.values[k]
    }

    /// Values on `[0, T]`.
    pub fn forward(&self) -> &[f64] {
        &self.values[self.lag..]
    }

    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("nonempty")
    }

    pub fn step(&self) -> f64 {
        self.grid.times()[1]
    }
}

pub(crate) struct Solver<'a> {
    model: &'a ModelSpec,
    history: Vec<f64>,
    steps: usize,
    h: f64,
}

impl<'a> Solver<'a> {
    pub(crate) fn new(model: &'a ModelSpec, t: f64) -> Result<Self, SddeError> {
        Ok(Solver { model, history: model.history()?, steps: model.steps_to(t)?, h: model.step() })
    }

    /// Fills `out` (length `lag + steps + 1`) with the solution.
    pub(crate) fn run(&self, driver: &[f64], out: &mut Vec<f64>) -> Result<(), SddeError> {
        if driver.len() != self.steps + 1 {
            return Err(SddeError::DriverLength { got: driver.len(), want: self.steps + 1 });
        }
        let lag = self.model.steps_per_delay;
        out.clear();
        out.extend_from_slice(&self.history);
        for k in 0..self.steps {
            let xk = out[lag + k];
            let diffusion = self.model.sigma.expr.eval(out[k])?;
            let drift = self.model.drift.expr.eval(xk)?;
            out.push(xk + diffusion * (driver[k + 1] - driver[k]) + drift * self.h);
        }
        Ok(())
    }
}

/// Left-point Euler solution driven by the fBm path `driver` on `model.grid_to(t)`.
pub fn solve(model: &ModelSpec, t: f64, driver: &[f64]) -> Result<SolutionPath, SddeError> {
    let solver = Solver::new(model, t)?;
    let mut values = Vec::with_capacity(solver.history.len() + solver.steps);
    solver.run(driver, &mut values)?;
    Ok(SolutionPath { grid: model.grid_to(t)?, lag: model.steps_per_delay, values, driver: driver.to_vec() })
}

/// Solves `n_paths` paths to time `t`; path `i` uses fBm stream `i` of `seed`.
pub fn simulate(model: &ModelSpec, t: f64, n_paths: usize, seed: u64) -> Result<Vec<SolutionPath>, SddeError> {
    let sampler = model.sampler_to(t)?;
    par::map_indices(n_paths, |i| solve(model, t, &sampler.path(seed, i as u64))).into_iter().collect()
}

/// Only `X_t` for each of `n_paths` paths (same streams as [`simulate`]).
pub fn simulate_terminal(model: &ModelSpec, t: f64, n_paths: usize, seed: u64) -> Result<Vec<f64>, SddeError> {
    let sampler = model.sampler_to(t)?;
    let solver = Solver::new(model, t)?;
    par::map_indices(n_paths, |i| {
        let mut buf = Vec::new();
        solver.run(&sampler.path(seed, i as u64), &mut buf)?;
        Ok(*buf.last().expect("nonempty"))
    })
    .into_iter()
    .collect()
}

/// Monte Carlo mean of `X_t` and mean absolute deviation about it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Centering {
    pub mean: f64,
    pub mean_se: f64,
    pub abs_dev: f64,
    pub abs_dev_se: f64,
    pub n: usize,
}

pub fn mean_and_centering(values: &[f64]) -> Centering {
    let n = values.len();
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    let abs_dev = values.iter().map(|v| (v - mean).abs()).sum::<f64>() / nf;
    let abs_var = values.iter().map(|v| ((v - mean).abs() - abs_dev).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    Centering { mean, mean_se: (var / nf).sqrt(), abs_dev, abs_dev_se: (abs_var / nf).sqrt(), n }
}

/// [`mean_and_centering`] of `X` at grid time `t` across paths.
pub fn centering_at(paths: &[SolutionPath], t: f64) -> Option<Centering> {
    let k = paths.first()?.grid.index_of(t)?;
    let values: Vec<f64> = paths.iter().map(|p| p.x(k)).collect();
    Some(mean_and_centering(&values))
}

/// Rows `(path_id, t, X_t)` over `[-r, T]`.
pub fn paths_to_csv(paths: &[SolutionPath]) -> String {
    let mut s = csv::header(&["path_id", "t", "x"]);
    for (id, p) in paths.iter().enumerate() {
        let h = p.step();
        for (k, v) in p.values.iter().enumerate() {
            let t = (k as f64 - p.lag as f64) * h;
            csv::row(&mut s, [id.to_string(), csv::num(t), csv::num(*v)]);
        }
    }
    s
}
