//! Acceptance suite. Runs each criterion at its stated size and tolerance,
//! prints one PASS/FAIL line per criterion and exits non-zero on any failure.
//!
//! Criteria run sequentially so the wall-clock budgets measure one criterion
//! at a time.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{admissible, gaussian};
use sddelab::fbm;
use sddelab::grid::Grid;
use sddelab::hspace::{check_block_integral, check_norm_inequality};
use sddelab::khbound::{
    default_constants, j1_variance_bracket, nondegeneracy_scan, plan_with_blocks, rn_refinement, rn_smallness,
    verify_late_bound, LateOptions,
};
use sddelab::malliavin::check_early_bounds;
use sddelab::nvdensity::{density_from_gf, estimate_gf, linspace, verify_early_bounds, GfOptions};
use sddelab::sdde::{simulate, simulate_terminal};
use sddelab::stats::{ks_critical_1pct, ks_normal, normal_pdf};
use sddelab::BoundReport;

/// Serialized outputs of a criterion, compared byte for byte on rerun.
type Artifacts = Vec<(String, String)>;

struct Outcome {
    pass: bool,
    detail: String,
    artifacts: Artifacts,
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serializable")
}

fn outcome(checks: Vec<(bool, String)>, artifacts: Artifacts) -> Outcome {
    let pass = checks.iter().all(|(ok, _)| *ok);
    let detail =
        checks.iter().map(|(ok, s)| format!("{}{}", if *ok { "" } else { "!" }, s)).collect::<Vec<_>>().join("; ");
    Outcome { pass, detail, artifacts }
}

fn report_line(r: &BoundReport) -> (bool, String) {
    (r.pass, format!("{} violations={} worst={:.3e}", r.name, r.violations(), r.worst_margin().unwrap_or(0.0)))
}

fn hspace_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    for &h in &[0.6, 0.75, 0.9] {
        let mut worst: f64 = 0.0;
        let mut all = true;
        let mut reports = Vec::new();
        for _ in 0..20 {
            let a = rng.random_range(0.0..5.0);
            let b = a + rng.random_range(0.01..5.0);
            let cells = rng.random_range(1..=64);
            let r = check_block_integral(a, b, h, cells, 1e-10);
            worst = worst.max(r.constants["relative_error"]);
            all &= r.pass;
            reports.push(r);
        }
        checks.push((all, format!("block H={h} max rel err {worst:.2e}")));
        let norm = check_norm_inequality(10_000, 8, h, &mut rng);
        checks.push((norm.pass && norm.violations() == 0, format!("norm H={h} violations={}", norm.violations())));
        reports.push(norm);
        artifacts.push((format!("hspace_H{h}.json"), json(&reports)));
    }
    outcome(checks, artifacts)
}

fn fbm_exactness() -> Outcome {
    let g = Grid::uniform(15, 1.0).unwrap();
    let batch = fbm::sample(&g, 0.75, 10_000, 7).unwrap();
    let r = batch.covariance_check(4.0);
    let checks = vec![report_line(&r), (g.len() == 16, format!("grid points {}", g.len()))];
    outcome(checks, vec![("fbm_paths.csv".into(), batch.to_csv()), ("fbm_cov.json".into(), json(&r))])
}

fn gaussian_reduction() -> Outcome {
    let m = gaussian(64);
    let t: f64 = 0.5;
    let th = t.powf(0.75);
    let n = 100_000;
    let mut checks = Vec::new();

    let xs = simulate_terminal(&m, t, n, 11).unwrap();
    let ks = ks_normal(&xs, m.eta0, th);
    let crit = ks_critical_1pct(n);
    checks.push((ks < crit, format!("(a) KS {ks:.5} < {crit:.5}")));

    let opts = GfOptions { n_paths: n, theta_nodes: 16, bins: 41, bandwidth: None };
    let gf = estimate_gf(&m, t, &opts, 12).unwrap();
    let target = th * th;
    let mut worst_g: f64 = 0.0;
    let mut used = 0;
    for (v, c) in gf.values.iter().zip(&gf.counts) {
        if *c >= 200 {
            worst_g = worst_g.max((v - target).abs() / target);
            used += 1;
        }
    }
    checks.push((used > 0 && worst_g <= 0.03, format!("(b) gf rel err {worst_g:.2e} over {used} bins")));

    let pts = linspace(-2.0 * th, 2.0 * th, 81);
    let nv = density_from_gf(&gf, gf.centering.abs_dev, &pts).unwrap();
    let worst_p = pts
        .iter()
        .zip(&nv.values)
        .map(|(x, p)| {
            let want = normal_pdf(*x, 0.0, th);
            (p - want).abs() / want
        })
        .fold(0.0, f64::max);
    checks.push((worst_p <= 0.05, format!("(c) NV sup rel err {worst_p:.2e}")));

    let early = verify_early_bounds(&m, t, n, 13, 101, 3.0).unwrap();
    let collapsed = (early.sigma_min2 - early.sigma_max2).abs() <= 1e-15 * early.sigma_max2
        && early.lower.iter().zip(&early.upper).all(|(a, b)| a == b);
    checks.push((collapsed, "(d) bounds collapse".into()));
    checks.push(report_line(&early.report));

    let nv_csv = sddelab::csv::table(&["x", "p_nv"], pts.iter().zip(&nv.values).map(|(x, p)| vec![*x, *p]));
    outcome(
        checks,
        vec![
            ("gf.csv".into(), gf.to_csv()),
            ("gf.json".into(), json(&gf)),
            ("nv.csv".into(), nv_csv),
            ("early.csv".into(), early.to_csv()),
            ("early.json".into(), json(&early.report)),
        ],
    )
}

fn der0r() -> Outcome {
    let m = admissible(64);
    let paths = simulate(&m, 1.0, 1000, 17).unwrap();
    let r = check_early_bounds(&m, &paths).unwrap();
    let entries = r.constants["entries"];
    let checks = vec![report_line(&r), (entries > 1e6, format!("entries={entries}"))];
    outcome(checks, vec![("der0r.json".into(), json(&r))])
}

fn early_two_sided() -> Outcome {
    let m = admissible(64);
    let v = verify_early_bounds(&m, 0.5, 100_000, 19, 101, 3.0).unwrap();
    let checks = vec![report_line(&v.report), (v.report.points.len() == 101, "101 points".into())];
    outcome(checks, vec![("early2.csv".into(), v.to_csv()), ("early2.json".into(), json(&v))])
}

fn j1_bracket_and_remainder() -> Outcome {
    let m = admissible(128);
    let t: f64 = 1.5;
    let paths = simulate(&m, t, 1000, 23).unwrap();
    let (c1, c2) = default_constants(m.lambda());
    let mut checks = Vec::new();
    let mut artifacts = Vec::new();
    for n in [8, 16, 32] {
        let plan = plan_with_blocks(&m, t, 1.0, c1, c2, n).unwrap();
        let j = j1_variance_bracket(&m, &paths, &plan).unwrap();
        let (rn, _) = rn_smallness(&m, &paths, &plan).unwrap();
        checks.push((j.report.pass, format!("J1 N={n} violations={}", j.report.violations())));
        checks.push((rn.pass, format!("Rn N={n} violations={}", rn.violations())));
        artifacts.push((format!("j1_N{n}.csv"), j.to_csv()));
        artifacts.push((format!("j1_N{n}.json"), json(&(j.report, rn))));
    }
    let slope = rn_refinement(&m, &paths, t, 1.0, &[8, 16, 32, 64], (0.9, 1.1)).unwrap();
    checks.push((slope.pass, format!("Rn slope {:.4}", slope.constants.get("gamma").copied().unwrap_or(f64::NAN))));
    artifacts.push(("rn_slope.json".into(), json(&slope)));
    outcome(checks, artifacts)
}

fn nondegeneracy() -> Outcome {
    let m = admissible(64);
    let t: f64 = 1.5;
    let paths = simulate(&m, t, 1000, 29).unwrap();
    let scan = nondegeneracy_scan(&m, &paths, t, &[2, 4, 8, 16, 32]).unwrap();
    let n0 = scan.n0;
    let checks = vec![
        (n0.is_some_and(|n| n <= 32), format!("N0 = {n0:?}")),
        (
            scan.reports.iter().filter(|(n, _)| n0.is_some_and(|n0| *n >= n0)).all(|(_, r)| r.pass),
            "all N >= N0 pass".into(),
        ),
    ];
    outcome(checks, vec![("nondeg.json".into(), json(&scan))])
}

fn late_regime() -> Outcome {
    let m = admissible(64);
    let t: f64 = 1.5;
    let th = t.powf(m.hurst);
    let opts = LateOptions { n_paths: 100_000, points: 61, ..LateOptions::default() };
    let v = verify_late_bound(&m, t, m.eta0 - 3.0 * th, m.eta0 + 3.0 * th, &opts, 31).unwrap();
    let f = v.plan.feasibility;
    let checks = vec![
        report_line(&v.positivity),
        (v.excluded_points.is_empty(), format!("excluded={}", v.excluded_points.len())),
        (v.feasible_pairs > 0, format!("feasible (c3,c4) pairs={} best={:?}", v.feasible_pairs, v.best)),
        (f.c1_small && f.rho_positive && f.n_rho_power && f.waypoint_step, format!("constraint ledger {f:?}")),
        (v.fit.c4_fitted.is_finite(), format!("shape c4={:.4} r2={:.4}", v.fit.c4_fitted, v.fit.r2)),
    ];
    outcome(checks, vec![("late.json".into(), json(&v)), ("late.csv".into(), v.to_csv())])
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 H-space identities", hspace_identities, Duration::from_secs(5)),
        ("2 fbm exactness", fbm_exactness, Duration::from_secs(10)),
        ("3 gaussian reduction", gaussian_reduction, Duration::from_secs(180)),
        ("4 early derivative bracket", der0r, Duration::from_secs(60)),
        ("5 early two-sided bound", early_two_sided, Duration::from_secs(180)),
        ("6 J1 bracket and remainder", j1_bracket_and_remainder, Duration::from_secs(120)),
        ("7 non-degeneracy", nondegeneracy, Duration::from_secs(60)),
        ("8 late positivity and shape", late_regime, Duration::from_secs(300)),
    ];
    let mut failed = 0;
    let mut first_artifacts = Vec::new();
    for (name, run, budget) in criteria.iter() {
        let start = Instant::now();
        let o = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= *budget;
        let pass = o.pass && in_time;
        failed += usize::from(!pass);
        println!(
            "{} criterion {name}: {} [{:.2}s / budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
        first_artifacts.push(o.artifacts);
    }

    // Determinism: rerun every criterion on a single worker thread and compare bytes.
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let mut mismatches = Vec::new();
    let mut compared = 0;
    for ((_, run, _), first) in criteria.iter().zip(&first_artifacts) {
        let again = pool.install(|| run().artifacts);
        for ((name, a), (_, b)) in first.iter().zip(&again) {
            compared += 1;
            if a != b {
                mismatches.push(name.clone());
            }
        }
    }
    let pass = mismatches.is_empty() && compared > 0;
    failed += usize::from(!pass);
    println!(
        "{} criterion 9 determinism: {compared} artifacts compared, mismatches {mismatches:?} [{:.2}s]",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        println!("acceptance: all 9 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
