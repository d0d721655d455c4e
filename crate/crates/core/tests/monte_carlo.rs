mod common;

use common::{admissible, gaussian, model};
use sddelab::fbm::{self, covariance, increments_hoelder_check};
use sddelab::grid::Grid;
use sddelab::hspace::{alpha, cell_weights};
use sddelab::khbound::{
    default_constants, j1_variance_bracket, late_from_samples, nondegeneracy_scan, plan_with_blocks, LateOptions,
};
use sddelab::malliavin::{block_norms, derivative_early, Block, DerivativeTable, DriftExponent};
use sddelab::nvdensity::{agreement, density_from_gf, estimate_gf, kde, linspace, GfOptions};
use sddelab::sdde::{centering_at, simulate, simulate_terminal, solve};
use sddelab::stats::{ks_critical_1pct, ks_normal, linear_fit};

#[test]
fn constant_noise_solution_is_gaussian() {
    let m = model("2", "0", "0.3", 0.3, 0.7, 2.0, 32);
    let t: f64 = 0.75;
    let xs = simulate_terminal(&m, t, 10_000, 5).unwrap();
    let sd = 2.0 * t.powf(0.7);
    assert!(ks_normal(&xs, 0.3, sd) < ks_critical_1pct(xs.len()));
}

#[test]
fn gaussian_centering() {
    let m = gaussian(32);
    let paths = simulate(&m, 0.5, 20_000, 8).unwrap();
    let c = centering_at(&paths, 0.5).unwrap();
    let want = (2.0 / std::f64::consts::PI).sqrt() * 0.5f64.powf(0.75);
    assert!((want - 0.474_42).abs() < 1e-5);
    assert!((c.abs_dev - want).abs() < 4.0 * c.abs_dev_se, "{} vs {want}", c.abs_dev);
    assert!((c.mean - m.eta0).abs() < 4.0 * c.mean_se);
    let still = model("0", "0", "0", 0.0, 0.75, 2.0, 16);
    let c = centering_at(&simulate(&still, 0.5, 100, 1).unwrap(), 0.5).unwrap();
    assert_eq!(c.abs_dev, 0.0);
}

#[test]
fn hoelder_moments_of_increments() {
    let g = Grid::uniform(12, 1.0).unwrap();
    let b = fbm::sample(&g, 0.8, 20_000, 4).unwrap();
    let r = increments_hoelder_check(&b, 0.6);
    assert!(r.pass, "{}", r.summary());
}

#[test]
fn solver_refinement_order() {
    // One fine fBm path per sample drives every resolution by subsampling.
    let fine_m = 512;
    let t = 2.0;
    let fine = admissible(fine_m);
    let sampler = fine.sampler_to(t).unwrap();
    let levels = [64usize, 128, 256, 512];
    let n_paths = 100;
    let mut terminal = vec![vec![0.0; n_paths]; levels.len()];
    for i in 0..n_paths {
        let path = sampler.path(77, i as u64);
        for (l, &m) in levels.iter().enumerate() {
            let coarse = admissible(m);
            let stride = fine_m / m;
            let driver: Vec<f64> = path.iter().step_by(stride).copied().collect();
            terminal[l][i] = solve(&coarse, t, &driver).unwrap().terminal();
        }
    }
    let mut hs = Vec::new();
    let mut diffs = Vec::new();
    for l in 0..levels.len() - 1 {
        let d = (0..n_paths).map(|i| (terminal[l][i] - terminal[l + 1][i]).abs()).sum::<f64>() / n_paths as f64;
        hs.push((1.0 / levels[l] as f64).ln());
        diffs.push(d.ln());
    }
    assert!(diffs.windows(2).all(|w| w[1] < w[0]), "{diffs:?}");
    let (_, order, _) = linear_fit(&hs, &diffs);
    assert!(order >= 0.4, "order {order}");
}

#[test]
fn derivative_matches_driver_perturbation() {
    // X_t(B + ε R_H(·, s)) differentiates to ⟨D X_t, 1_[0,s]⟩_H.
    let m = admissible(128);
    let (t, s) = (1.0, 0.5);
    let h = m.hurst;
    let grid = m.grid_to(t).unwrap();
    let k = grid.cells();
    let sk = grid.index_of(s).unwrap();
    let w = cell_weights(&grid, h).unwrap();
    let dir: Vec<f64> = grid.times().iter().map(|&u| covariance(u, s, h)).collect();
    let eps = 1e-5;
    let sampler = m.sampler_to(t).unwrap();
    let mut rel = 0.0;
    for i in 0..100 {
        let b = sampler.path(3, i);
        let shifted = |sign: f64| -> f64 {
            let d: Vec<f64> = b.iter().zip(&dir).map(|(x, y)| x + sign * eps * y).collect();
            solve(&m, t, &d).unwrap().terminal()
        };
        let fd = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
        let path = solve(&m, t, &b).unwrap();
        let table = DerivativeTable::build(&m, &path, Block { index: 0, start: 0, end: k }).unwrap();
        let phi: Vec<f64> = (0..k).map(|j| table.values[j][k]).collect();
        let ind: Vec<f64> = (0..k).map(|j| if j < sk { 1.0 } else { 0.0 }).collect();
        let analytic = w.pairing(&phi, &ind);
        rel += ((fd - analytic) / analytic).abs();
    }
    rel /= 100.0;
    assert!(rel <= 1e-3, "mean relative error {rel}");
}

#[test]
fn early_derivative_bracket_random_times() {
    let m = admissible(64);
    let paths = simulate(&m, 1.0, 50, 6).unwrap();
    let mr = m.drift_lipschitz() * m.delay;
    let (lo, hi) = (m.lambda() * (-mr).exp(), m.big_lambda() * mr.exp());
    for p in &paths {
        for (s, t) in [(0.0, 1.0), (0.25, 0.5), (0.5, 0.75), (1.0, 1.0)] {
            let v = derivative_early(&m, p, s, t).unwrap();
            assert!(v >= lo && v <= hi);
        }
    }
}

#[test]
fn remainder_norm_is_second_order_small() {
    let m = admissible(64);
    let paths = simulate(&m, 1.5, 50, 2).unwrap();
    let mr = m.drift_lipschitz() * m.delay;
    for n in [8usize, 16, 32] {
        let delta = 1.5 / n as f64;
        let per = (delta * 64.0).round() as usize;
        let w = cell_weights(&Grid::uniform(per, delta).unwrap(), m.hurst).unwrap();
        let s2 = delta.powf(2.0 * m.hurst);
        let cap = (m.drift_lipschitz() * m.big_lambda() * mr.exp() * delta).powi(2) * s2;
        for p in &paths {
            let e = DriftExponent::new(p, &m.drift).unwrap();
            for b in 0..n {
                let block = Block { index: b, start: b * per, end: (b + 1) * per };
                let norms = block_norms(&m, p, &e, block, &w, s2).unwrap();
                assert!(norms.dr_norm2 <= cap * (1.0 + 1e-9), "N={n}");
                assert!(norms.di_norm2 >= m.lambda().powi(2) * s2 * (1.0 - 1e-12));
            }
        }
    }
}

#[test]
fn nondegeneracy_negative_control() {
    let wild = model("1+0.25*tanh(x)", "10*sin(x)", "0.5*sin(3*x)", 0.0, 0.75, 2.0, 128);
    let paths = simulate(&wild, 1.5, 50, 3).unwrap();
    let scan = nondegeneracy_scan(&wild, &paths, 1.5, &[2, 4, 8, 16, 32, 64]).unwrap();
    assert!(!scan.reports[0].1.pass, "N = 2 should fail with an inflated drift");
    let n0 = scan.n0.expect("large N passes");
    assert!(n0 > 2);
}

#[test]
fn j1_bracket_is_tight() {
    let m = admissible(64);
    let paths = simulate(&m, 1.5, 1000, 12).unwrap();
    let (c1, c2) = default_constants(m.lambda());
    let plan = plan_with_blocks(&m, 1.5, 1.0, c1, c2, 32).unwrap();
    let j = j1_variance_bracket(&m, &paths, &plan).unwrap();
    assert!(j.report.pass);
    let tight = j.report.constants["tightness"];
    assert!((0.98..=1.0 + 1e-12).contains(&tight), "tightness {tight}");
}

#[test]
fn gf_bracket_positivity_and_agreement() {
    let m = admissible(64);
    let t: f64 = 0.5;
    let opts = GfOptions { n_paths: 20_000, theta_nodes: 16, bins: 31, bandwidth: None };
    let gf = estimate_gf(&m, t, &opts, 41).unwrap();
    let th2 = t.powf(2.0 * m.hurst);
    let mr = m.drift_lipschitz() * m.delay;
    let lo = m.lambda().powi(2) * (-2.0 * mr).exp() * th2;
    let hi = m.big_lambda().powi(2) * (2.0 * mr).exp() * th2;
    assert!(gf.bracket_check(lo, hi, 3.0).pass);
    assert!(gf.values.iter().all(|v| *v > 0.0));

    let sd = (gf.samples.iter().map(|v| v * v).sum::<f64>() / gf.samples.len() as f64).sqrt();
    let pts = linspace(-2.5 * sd, 2.5 * sd, 51);
    let nv = density_from_gf(&gf, gf.centering.abs_dev, &pts).unwrap();
    let k = kde(&gf.samples, &pts, None).unwrap();
    let r = agreement(&nv, &k, &gf.samples, 0.05, 3.0);
    assert!(r.pass, "{}", r.summary());
    let wide = linspace(-4.0 * sd, 4.0 * sd, 201);
    let mass = density_from_gf(&gf, gf.centering.abs_dev, &wide).unwrap().mass();
    assert!((0.9..=1.02).contains(&mass), "mass {mass}");
}

#[test]
fn symmetric_model_has_symmetric_density() {
    let m = model("1+0.2*x*x/(1+x*x)", "0.1*sin(x)", "0", 0.0, 0.75, 2.0, 32);
    let opts = GfOptions { n_paths: 20_000, theta_nodes: 8, bins: 31, bandwidth: None };
    let gf = estimate_gf(&m, 0.5, &opts, 5).unwrap();
    let sd = (gf.samples.iter().map(|v| v * v).sum::<f64>() / gf.samples.len() as f64).sqrt();
    let pts = linspace(-1.5 * sd, 1.5 * sd, 31);
    let p = density_from_gf(&gf, gf.centering.abs_dev, &pts).unwrap().values;
    for i in 0..pts.len() {
        let j = pts.len() - 1 - i;
        assert!((p[i] - p[j]).abs() <= 0.05 * p[i].max(p[j]), "{} vs {}", p[i], p[j]);
    }
}

#[test]
fn gaussian_control_shape_fit() {
    let m = gaussian(32);
    let t: f64 = 1.5;
    let xs = simulate_terminal(&m, t, 50_000, 9).unwrap();
    let th = t.powf(m.hurst);
    let opts = LateOptions { n_paths: xs.len(), min_shape_r2: Some(0.9), ..LateOptions::default() };
    let v = late_from_samples(&m, t, &xs, -3.0 * th, 3.0 * th, &opts).unwrap();
    assert!(v.pass(), "{} {} {}", v.positivity.summary(), v.feasibility.summary(), v.shape.summary());
    let rel = (v.fit.c4_fitted - v.fit.c4_gaussian_reference).abs() / v.fit.c4_gaussian_reference;
    assert!(rel <= 0.25, "fitted {} vs {}", v.fit.c4_fitted, v.fit.c4_gaussian_reference);
    assert!(v.fit.r2 >= 0.9);
}

#[test]
fn alpha_normalization_of_unit_block() {
    let g = Grid::uniform(10, 0.3).unwrap();
    let w = cell_weights(&g, 0.65).unwrap();
    assert!((alpha(0.65) * w.total() - 0.3f64.powf(1.3)).abs() < 1e-13);
}
