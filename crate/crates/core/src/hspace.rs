//! Inner products `<f, g> = α_H ∫∫ f(u) g(v) |u - v|^{2H-2} du dv` for step
//! functions, with `α_H = H(2H - 1)`.
//!
//! Each cell-pair weight `∫_{I_i} ∫_{I_j} |u - v|^{2H-2}` is computed from
//! the double antiderivative `|u - v|^{2H} / (2 α_H)` by inclusion-exclusion
//! over rectangle corners, so the diagonal singularity never meets a
//! quadrature rule.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::fbm::{self, FbmError};
use crate::grid::Grid;
use crate::report::{BoundReport, CheckPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HspaceError {
    #[error("step function has {values} values but the grid has {cells} cells")]
    LengthMismatch { values: usize, cells: usize },
    #[error("step functions live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Hurst(#[from] FbmError),
}

pub fn alpha(hurst: f64) -> f64 {
    hurst * (2.0 * hurst - 1.0)
}

/// `∫_a^b ∫_c^d |u - v|^{2H-2} dv du` in closed form.
pub fn rectangle_weight(a: f64, b: f64, c: f64, d: f64, hurst: f64) -> f64 {
    let p = 2.0 * hurst;
    let f = |x: f64| x.abs().powf(p);
    (f(b - c) + f(a - d) - f(b - d) - f(a - c)) / (2.0 * alpha(hurst))
}

/// Piecewise-constant function on the cells of a grid (which may start at
/// any offset; only cell lengths and relative positions matter).
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, HspaceError> {
        if values.len() != grid.cells() {
            return Err(HspaceError::LengthMismatch { values: values.len(), cells: grid.cells() });
        }
        Ok(StepFunction { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        let values = vec![c; grid.cells()];
        StepFunction { grid, values }
    }
}

/// Symmetric matrix of cell-pair weights of the kernel `|u - v|^{2H-2}`.
#[derive(Debug, Clone)]
pub struct CellWeightMatrix {
    hurst: f64,
    grid: Grid,
    weights: DMatrix<f64>,
}

pub fn cell_weights(grid: &Grid, hurst: f64) -> Result<CellWeightMatrix, HspaceError> {
    fbm::check_hurst(hurst)?;
    Ok(cell_weights_over(grid.times(), grid, hurst))
}

fn cell_weights_over(times: &[f64], grid: &Grid, hurst: f64) -> CellWeightMatrix {
    let n = times.len() - 1;
    let mut weights = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let w = rectangle_weight(times[i], times[i + 1], times[j], times[j + 1], hurst);
            weights[(i, j)] = w;
            weights[(j, i)] = w;
        }
    }
    CellWeightMatrix { hurst, grid: grid.clone(), weights }
}

impl CellWeightMatrix {
    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn cells(&self) -> usize {
        self.weights.nrows()
    }

    /// Un-normalized double integral of the kernel over the whole grid.
    pub fn total(&self) -> f64 {
        self.weights.sum()
    }

    /// `α_H Σ_ij f_i g_j W_ij` on raw value slices.
    pub fn pairing(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.cells());
        debug_assert_eq!(g.len(), self.cells());
        let n = self.cells();
        let mut acc = 0.0;
        for j in 0..n {
            let col = self.weights.column(j);
            let inner: f64 = f.iter().zip(col.iter()).map(|(a, w)| a * w).sum();
            acc += inner * g[j];
        }
        alpha(self.hurst) * acc
    }

    /// Pairing restricted to cells `from..to` (half-open).
    pub fn pairing_range(&self, from: usize, to: usize, f: &[f64], g: &[f64]) -> f64 {
        let mut acc = 0.0;
        for j in from..to {
            let mut inner = 0.0;
            for i in from..to {
                inner += f[i - from] * self.weights[(i, j)];
            }
            acc += inner * g[j - from];
        }
        alpha(self.hurst) * acc
    }
}

pub fn h_inner(f: &StepFunction, g: &StepFunction, w: &CellWeightMatrix) -> Result<f64, HspaceError> {
    let same = |grid: &Grid| grid.cells() == w.cells() && relative_layout_matches(grid, w.grid());
    if !same(&f.grid) || !same(&g.grid) {
        return Err(HspaceError::GridMismatch);
    }
    Ok(w.pairing(&f.values, &g.values))
}

fn relative_layout_matches(a: &Grid, b: &Grid) -> bool {
    let (ta, tb) = (a.times(), b.times());
    let scale = tb.last().copied().unwrap_or(1.0).abs().max(1.0);
    ta.len() == tb.len() && ta.iter().zip(tb).all(|(x, y)| (x - y).abs() <= 1e-12 * scale)
}

/// `||f + g||^2 >= ||f||^2 / 2 - ||g||^2` for random step-function pairs on
/// random grids of `dim` cells.
pub fn check_norm_inequality<R: Rng>(trials: usize, dim: usize, hurst: f64, rng: &mut R) -> BoundReport {
    let mut report = BoundReport::new("norm-inequality")
        .constant("hurst", hurst)
        .constant("trials", trials as f64)
        .constant("dim", dim as f64);
    if fbm::check_hurst(hurst).is_err() || dim == 0 {
        report.fail("invalid hurst or dimension");
        return report;
    }
    for trial in 0..trials {
        let grid = random_grid(dim, rng);
        let w = cell_weights_over(grid.times(), &grid, hurst);
        let f: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let g: Vec<f64> = match trial % 4 {
            0 => vec![0.0; dim],
            1 => f.iter().map(|v| -v).collect(),
            _ => (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(),
        };
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + b).collect();
        let nf = w.pairing(&f, &f);
        let ng = w.pairing(&g, &g);
        let nsum = w.pairing(&sum, &sum);
        let slack = nsum - nf / 2.0 + ng;
        let tol = 1e-12 * (nf + ng + nsum).max(1e-300);
        report.push(CheckPoint::new(trial as f64, slack, tol));
    }
    report
}

fn random_grid<R: Rng>(dim: usize, rng: &mut R) -> Grid {
    let mut times = Vec::with_capacity(dim + 1);
    times.push(0.0);
    let mut t = 0.0;
    for _ in 0..dim {
        t += rng.random_range(0.05..1.0);
        times.push(t);
    }
    Grid::new(times).expect("positive increments")
}

/// Sum of cell weights over `cells` equal cells of `[a, b]` against the
/// closed form `(b - a)^{2H} / α_H`; passes at relative error `rel_tol`.
pub fn check_block_integral(a: f64, b: f64, hurst: f64, cells: usize, rel_tol: f64) -> BoundReport {
    let mut report = BoundReport::new("block-integral")
        .constant("a", a)
        .constant("b", b)
        .constant("hurst", hurst)
        .constant("cells", cells as f64);
    if !(0.0 <= a && a < b) || fbm::check_hurst(hurst).is_err() || cells == 0 {
        report.fail("requires 0 <= a < b, H in (1/2,1) and at least one cell");
        return report;
    }
    let step = (b - a) / cells as f64;
    let times: Vec<f64> = (0..=cells).map(|k| if k == cells { b } else { a + k as f64 * step }).collect();
    let rel = Grid::uniform(cells, b - a).expect("b > a");
    let total = cell_weights_over(&times, &rel, hurst).total();
    let exact = (b - a).powf(2.0 * hurst) / alpha(hurst);
    let rel_err = (total - exact).abs() / exact;
    report.set_constant("double_integral", total);
    report.set_constant("closed_form", exact);
    report.set_constant("relative_error", rel_err);
    report.push(CheckPoint::new(a, rel_tol - rel_err, 0.0));
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_cell() {
        let w = rectangle_weight(0.0, 1.0, 0.0, 1.0, 0.75);
        assert!((w - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn mirror_cells_match() {
        let g = Grid::new(vec![0.0, 0.3, 0.5, 1.2, 1.3]).unwrap();
        let w = cell_weights(&g, 0.7).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(w.weights()[(i, j)], w.weights()[(j, i)]);
                assert!(w.weights()[(i, j)] > 0.0);
            }
        }
        // Cells [0,1]x[2,3] and [2,3]x[0,1] via explicit rectangles.
        assert_eq!(rectangle_weight(0.0, 1.0, 2.0, 3.0, 0.7), rectangle_weight(2.0, 3.0, 0.0, 1.0, 0.7));
    }

    #[test]
    fn total_on_unit_interval() {
        let g = Grid::new(vec![0.0, 0.1, 0.35, 0.4, 0.9, 1.0]).unwrap();
        let w = cell_weights(&g, 0.75).unwrap();
        assert!((alpha(0.75) * w.total() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_norm_is_power() {
        let g = Grid::uniform(7, 0.6).unwrap();
        let w = cell_weights(&g, 0.65).unwrap();
        let one = StepFunction::constant(g.clone(), 1.0);
        let v = h_inner(&one, &one, &w).unwrap();
        assert!((v - 0.6f64.powf(1.3)).abs() < 1e-12);
        let c = StepFunction::constant(g.clone(), -3.0);
        assert!((h_inner(&c, &c, &w).unwrap() - 9.0 * 0.6f64.powf(1.3)).abs() < 1e-11);
        let z = StepFunction::constant(g, 0.0);
        assert_eq!(h_inner(&z, &one, &w).unwrap(), 0.0);
    }

    #[test]
    fn mismatches_are_errors() {
        let g = Grid::uniform(3, 1.0).unwrap();
        assert!(matches!(
            StepFunction::new(g.clone(), vec![1.0; 2]),
            Err(HspaceError::LengthMismatch { values: 2, cells: 3 })
        ));
        let w = cell_weights(&g, 0.7).unwrap();
        let other = StepFunction::constant(Grid::uniform(3, 2.0).unwrap(), 1.0);
        assert_eq!(h_inner(&other, &other, &w), Err(HspaceError::GridMismatch));
        assert!(cell_weights(&g, 0.5).is_err());
    }

    #[test]
    fn norm_inequality_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = check_norm_inequality(200, 6, 0.8, &mut rng);
        assert!(r.pass, "{}", r.summary());
    }

    #[test]
    fn block_integral_examples() {
        let r = check_block_integral(0.0, 1.0, 0.75, 8, 1e-10);
        assert!(r.pass);
        assert!((r.constants["closed_form"] - 8.0 / 3.0).abs() < 1e-14);
        let r = check_block_integral(1.0, 3.0, 0.6, 16, 1e-10);
        assert!(r.pass, "{:?}", r.constants);
        assert!((r.constants["closed_form"] - 19.144_972_583_283_92).abs() < 1e-9);
        let shifted = check_block_integral(5.0, 7.0, 0.6, 16, 1e-10);
        assert!((shifted.constants["closed_form"] - r.constants["closed_form"]).abs() < 1e-12);
        assert!(!check_block_integral(2.0, 1.0, 0.6, 4, 1e-10).pass);
    }
}
