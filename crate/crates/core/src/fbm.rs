//! Exact sampling of fractional Brownian motion on a grid.
//!
//! Paths are `L z` where `L` is the Cholesky factor of the covariance matrix
//! over the positive grid times and `z` is standard normal. Each path draws
//! from its own ChaCha stream selected by `(seed, index)`, so path `i` does
//! not depend on how many paths are requested or on the worker count.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::csv;
use crate::grid::Grid;
use crate::par;
use crate::report::{BoundReport, CheckPoint};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FbmError {
    #[error("Hurst parameter must lie in (1/2, 1), got {0}")]
    HurstOutOfRange(f64),
    #[error("covariance matrix is not positive definite (degenerate grid?)")]
    NotPositiveDefinite,
    #[error("need at least one path")]
    NoPaths,
}

pub fn check_hurst(hurst: f64) -> Result<(), FbmError> {
    if hurst > 0.5 && hurst < 1.0 {
        Ok(())
    } else {
        Err(FbmError::HurstOutOfRange(hurst))
    }
}

/// `R_H(t, s) = (|t|^{2H} + |s|^{2H} - |t - s|^{2H}) / 2`.
pub fn covariance(t: f64, s: f64, hurst: f64) -> f64 {
    let two_h = 2.0 * hurst;
    0.5 * (t.abs().powf(two_h) + s.abs().powf(two_h) - (t - s).abs().powf(two_h))
}

/// Covariance matrix over the given times.
pub fn covariance_matrix(times: &[f64], hurst: f64) -> DMatrix<f64> {
    DMatrix::from_fn(times.len(), times.len(), |i, j| covariance(times[i], times[j], hurst))
}

/// Deterministic RNG for stream `index` of `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Cached factorization for one (grid, H) pair; draws individual paths.
#[derive(Debug, Clone)]
pub struct FbmSampler {
    hurst: f64,
    grid: Grid,
    factor: DMatrix<f64>,
    // Row-major packed lower triangle of `factor`, for the hot loop.
    packed: Vec<f64>,
}

impl FbmSampler {
    pub fn new(grid: &Grid, hurst: f64) -> Result<Self, FbmError> {
        check_hurst(hurst)?;
        let positive = &grid.times()[1..];
        let cov = covariance_matrix(positive, hurst);
        let chol = nalgebra::Cholesky::new(cov).ok_or(FbmError::NotPositiveDefinite)?;
        let factor = chol.l();
        let n = positive.len();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                packed.push(factor[(i, j)]);
            }
        }
        Ok(FbmSampler { hurst, grid: grid.clone(), factor, packed })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Lower-triangular factor of the covariance over the positive times.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Path `index` of `seed`, including the leading `B_0 = 0`.
    pub fn path(&self, seed: u64, index: u64) -> Vec<f64> {
        let n = self.grid.cells();
        let mut rng = stream_rng(seed, index);
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = Vec::with_capacity(n + 1);
        out.push(0.0);
        let mut k = 0;
        for i in 0..n {
            let row = &self.packed[k..k + i + 1];
            out.push(row.iter().zip(&z).map(|(l, z)| l * z).sum());
            k += i + 1;
        }
        out
    }

    pub fn batch(&self, n_paths: usize, seed: u64) -> Result<FbmBatch, FbmError> {
        if n_paths == 0 {
            return Err(FbmError::NoPaths);
        }
        let paths = par::map_indices(n_paths, |i| self.path(seed, i as u64));
        Ok(FbmBatch { sampler: self.clone(), paths, seed })
    }
}

/// A seeded set of fBm paths on one grid.
#[derive(Debug, Clone)]
pub struct FbmBatch {
    sampler: FbmSampler,
    paths: Vec<Vec<f64>>,
    seed: u64,
}

pub fn sample(grid: &Grid, hurst: f64, n_paths: usize, seed: u64) -> Result<FbmBatch, FbmError> {
    FbmSampler::new(grid, hurst)?.batch(n_paths, seed)
}

impl FbmBatch {
    pub fn hurst(&self) -> f64 {
        self.sampler.hurst
    }

    pub fn grid(&self) -> &Grid {
        &self.sampler.grid
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.sampler.factor
    }

    pub fn paths(&self) -> &[Vec<f64>] {
        &self.paths
    }

    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    /// Header `t_0,...,t_{n-1}`, one row per path.
    pub fn to_csv(&self) -> String {
        let mut s = csv::fmt_time_header(self.grid().times());
        for p in &self.paths {
            csv::row(&mut s, p.iter().map(|v| csv::num(*v)));
        }
        s
    }

    /// Compares every empirical covariance entry (positive times) with `R_H`,
    /// allowing `n_se` standard errors. The standard error of the product
    /// moment is `sqrt((Σ_ii Σ_jj + Σ_ij²) / n)` under Gaussianity.
    pub fn covariance_check(&self, n_se: f64) -> BoundReport {
        let times = self.grid().times();
        let h = self.hurst();
        let n = self.paths.len() as f64;
        let mut report = BoundReport::new("fbm-covariance")
            .constant("hurst", h)
            .constant("n_paths", n)
            .constant("n_standard_errors", n_se);
        for i in 1..times.len() {
            for j in i..times.len() {
                let emp = self.paths.iter().map(|p| p[i] * p[j]).sum::<f64>() / n;
                let sii = covariance(times[i], times[i], h);
                let sjj = covariance(times[j], times[j], h);
                let sij = covariance(times[i], times[j], h);
                let se = ((sii * sjj + sij * sij) / n).sqrt();
                // Encode the pair as i * len + j.
                let at = (i * times.len() + j) as f64;
                report.push(CheckPoint::new(at, n_se * se - (emp - sij).abs(), 0.0));
            }
        }
        report
    }
}

/// Second-moment Hölder diagnostic: for every pair `s < t` of grid times the
/// ratio `E|B_t - B_s|^2 / |t - s|^{2H}` equals 1; the empirical ratio must
/// lie within 5 standard errors of 1.
pub fn increments_hoelder_check(batch: &FbmBatch, gamma: f64) -> BoundReport {
    let h = batch.hurst();
    let times = batch.grid().times();
    let n = batch.n_paths() as f64;
    let mut report = BoundReport::new("fbm-hoelder-moment")
        .constant("hurst", h)
        .constant("gamma", gamma)
        .constant("p", 2.0)
        .constant("n_paths", n);
    if !(gamma > 0.0 && gamma < h) {
        report.fail(format!("gamma = {gamma} must lie in (0, H)"));
        return report;
    }
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            let scale = (times[j] - times[i]).powf(2.0 * h);
            let (mut s1, mut s2) = (0.0, 0.0);
            for p in batch.paths() {
                let q = (p[j] - p[i]).powi(2) / scale;
                s1 += q;
                s2 += q * q;
            }
            let mean = s1 / n;
            let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0).max(1.0);
            let se = (var / n).sqrt();
            let at = (i * times.len() + j) as f64;
            report.push(CheckPoint::new(at, 5.0 * se - (mean - 1.0).abs(), 0.0));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        assert_eq!(covariance(1.0, 1.0, 0.75), 1.0);
        assert_eq!(covariance(0.7, 0.0, 0.6), 0.0);
        assert!((covariance(2.0, 1.0, 0.75) - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(covariance(0.3, 0.8, 0.7), covariance(0.8, 0.3, 0.7));
    }

    #[test]
    fn rejects_bad_hurst() {
        let g = Grid::uniform(4, 1.0).unwrap();
        assert_eq!(FbmSampler::new(&g, 0.4).unwrap_err(), FbmError::HurstOutOfRange(0.4));
        assert!(FbmSampler::new(&g, 1.0).is_err());
    }

    #[test]
    fn factor_reproduces_covariance() {
        for &n in &[16usize, 128, 512] {
            let g = Grid::uniform(n, 2.0).unwrap();
            let s = FbmSampler::new(&g, 0.8).unwrap();
            let l = s.factor();
            let sigma = covariance_matrix(&g.times()[1..], 0.8);
            let diff = (l * l.transpose() - &sigma).abs().max();
            assert!(diff <= 1e-10 * sigma.abs().max(), "n = {n}: {diff}");
        }
    }

    #[test]
    fn paths_start_at_zero_and_are_stable() {
        let g = Grid::uniform(8, 1.0).unwrap();
        let s = FbmSampler::new(&g, 0.75).unwrap();
        let a = s.batch(10, 99).unwrap();
        let b = s.batch(100, 99).unwrap();
        for i in 0..10 {
            assert_eq!(a.paths()[i], b.paths()[i]);
            assert_eq!(a.paths()[i][0], 0.0);
        }
        assert_ne!(a.paths()[0], a.paths()[1]);
        assert_ne!(s.path(1, 0), s.path(2, 0));
    }

    #[test]
    fn single_time_marginal() {
        let g = Grid::new(vec![0.0, 0.5]).unwrap();
        let b = sample(&g, 0.75, 20_000, 3).unwrap();
        let var = b.paths().iter().map(|p| p[1] * p[1]).sum::<f64>() / 20_000.0;
        let target = 0.5f64.powf(1.5);
        assert!((var - target).abs() < 4.0 * target * (2.0 / 20_000f64).sqrt());
    }

    #[test]
    fn duplicate_times_are_not_positive_definite() {
        // Grid::new rejects duplicates; near-duplicates break the factorization.
        let g = Grid::new(vec![0.0, 0.5, 0.5 + 1e-17_f64.max(f64::EPSILON)]).unwrap();
        assert_eq!(FbmSampler::new(&g, 0.9).unwrap_err(), FbmError::NotPositiveDefinite);
    }

    #[test]
    fn hoelder_gamma_validated() {
        let g = Grid::uniform(4, 1.0).unwrap();
        let b = sample(&g, 0.7, 100, 1).unwrap();
        assert!(!increments_hoelder_check(&b, 0.8).pass);
    }

    #[test]
    fn csv_layout() {
        let g = Grid::uniform(2, 1.0).unwrap();
        let b = sample(&g, 0.7, 3, 1).unwrap();
        let text = b.to_csv();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0].split(',').count(), 3);
        assert!(lines[1].starts_with("0.0000000000000000e0,"));
    }
}
