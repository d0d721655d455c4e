use std::collections::BTreeMap;
use std::fmt::Display;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use sddelab::csv;
use sddelab::fbm;
use sddelab::grid::Grid;
use sddelab::hspace::{check_block_integral, check_norm_inequality};
use sddelab::khbound::{
    chain_lower_bound, default_constants, j1_variance_bracket, max_c1, nondegeneracy_scan, plan_chain,
    plan_with_blocks, remainder_threshold, rn_refinement, rn_smallness, verify_late_bound, ChainPlan, KhError,
    LateOptions,
};
use sddelab::malliavin::check_early_bounds;
use sddelab::nvdensity::{
    agreement, density_from_gf, estimate_gf, kde, linspace, verify_early_bounds, GfEstimate, GfOptions,
};
use sddelab::sdde::{mean_and_centering, paths_to_csv, simulate};
use sddelab::stats::normal_pdf;
use sddelab::{BoundReport, ModelSpec};

use crate::config::RunConfig;
use crate::output::{resolve_dir, CheckVerdict, Manifest, Outputs, Verdict};
use crate::svg::{line_chart, Series};
use crate::{CliError, RunArgs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Simulate,
    Gf,
    Density,
    VerifyEarly,
    VerifyLate,
    KhConstants,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Gf => "gf",
            Kind::Density => "density",
            Kind::VerifyEarly => "verify-early",
            Kind::VerifyLate => "verify-late",
            Kind::KhConstants => "kh-constants",
        }
    }
}

/// Every check name and the subcommand that produces it.
pub const CHECKS: &[(&str, Kind)] = &[
    ("fbm-covariance", Kind::Simulate),
    ("early-derivative-bracket", Kind::Simulate),
    ("gf-bracket", Kind::Gf),
    ("gf-positivity", Kind::Gf),
    ("nv-kde-agreement", Kind::Density),
    ("early-two-sided-bound", Kind::VerifyEarly),
    ("late-positivity", Kind::VerifyLate),
    ("late-feasibility", Kind::VerifyLate),
    ("late-shape", Kind::VerifyLate),
    ("late-constraint-ledger", Kind::VerifyLate),
    ("j1-variance-bracket", Kind::VerifyLate),
    ("rn-smallness", Kind::VerifyLate),
    ("rn-refinement-slope", Kind::VerifyLate),
    ("nondegeneracy", Kind::VerifyLate),
    ("constraint-ledger", Kind::KhConstants),
];

/// Paths kept for full-trajectory diagnostics.
const FULL_PATHS: usize = 1000;
const PLOTTED_PATHS: usize = 10;
const DUMPED_PATHS: usize = 100;

struct Check {
    name: &'static str,
    pass: bool,
    summary: String,
}

impl Check {
    fn new(name: &'static str, pass: bool, summary: impl Into<String>) -> Self {
        Check { name, pass, summary: summary.into() }
    }

    fn from_report(name: &'static str, r: &BoundReport) -> Self {
        let mut s = format!("{} points, {} violations", r.points.len(), r.violations());
        if let Some(m) = r.worst_margin() {
            s.push_str(&format!(", worst margin {m:.6e}"));
        }
        if !r.pass {
            if let Some(n) = r.notes.first() {
                s.push_str(&format!(" ({n})"));
            }
        }
        Check::new(name, r.pass, s)
    }
}

fn pipe<E: Display>(e: E) -> CliError {
    CliError::Pipeline(e.to_string())
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    model: &'a ModelSpec,
    t: f64,
    x: Option<f64>,
    out: &'a mut Outputs,
}

pub fn check_lemmas(hurst: f64, trials: usize, tol: f64, seed: u64) -> Result<bool, CliError> {
    if !(hurst > 0.5 && hurst < 1.0) {
        return Err(CliError::Usage(format!("--h {hurst} must lie in (0.5, 1)")));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Usage(format!("--tol {tol} must be positive")));
    }
    if trials == 0 {
        return Err(CliError::Usage("--trials must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = check_norm_inequality(trials, 8, hurst, &mut rng);
    let mut worst: f64 = 0.0;
    let mut block_pass = true;
    for _ in 0..20 {
        let a = rng.random_range(0.0..5.0);
        let b = a + rng.random_range(0.01..5.0);
        let cells = rng.random_range(1..=64);
        let r = check_block_integral(a, b, hurst, cells, tol);
        worst = worst.max(r.constants.get("relative_error").copied().unwrap_or(f64::INFINITY));
        block_pass &= r.pass;
    }
    let checks = [
        Check::from_report("norm-inequality", &norm),
        Check::new("block-integral", block_pass, format!("20 intervals, max relative error {worst:.3e} (tol {tol:e})")),
    ];
    Ok(print_checks(checks.iter()))
}

fn print_checks<'a>(checks: impl Iterator<Item = &'a Check>) -> bool {
    let mut all = true;
    for c in checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.summary);
        all &= c.pass;
    }
    all
}

fn resolve_t(kind: Kind, flag: Option<f64>, cfg: &RunConfig, model: &ModelSpec) -> Result<f64, CliError> {
    let r = model.delay;
    let t = match kind {
        Kind::Simulate => flag.unwrap_or(cfg.horizon),
        Kind::Gf | Kind::Density | Kind::VerifyEarly => flag.unwrap_or(cfg.t_early),
        Kind::VerifyLate | Kind::KhConstants => flag.or(cfg.t_late).unwrap_or(cfg.horizon),
    };
    if !(t > 0.0 && t <= cfg.horizon * (1.0 + 1e-12)) {
        return Err(CliError::Usage(format!("t = {t} must lie in (0, {}]", cfg.horizon)));
    }
    match kind {
        Kind::Gf | Kind::Density | Kind::VerifyEarly if t > r => {
            return Err(CliError::Usage(format!("{} needs t <= delay {r}, got {t}", kind.name())));
        }
        Kind::VerifyLate | Kind::KhConstants if t <= r => {
            return Err(CliError::Usage(format!("{} needs t > delay {r}, got {t}", kind.name())));
        }
        _ => {}
    }
    model.steps_to(t).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(t)
}

pub fn run(kind: Kind, args: &RunArgs) -> Result<bool, CliError> {
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    if let Some(req) = &cfg.checks {
        for name in req {
            if !CHECKS.iter().any(|(n, _)| n == name) {
                let known: Vec<&str> = CHECKS.iter().map(|(n, _)| *n).collect();
                return Err(CliError::Config(format!("unknown check {name:?}; known: {}", known.join(", "))));
            }
        }
    }
    if args.x.is_some() && kind != Kind::KhConstants {
        return Err(CliError::Usage("--x applies to kh-constants only".into()));
    }
    let model = cfg.model()?;
    let t = resolve_t(kind, args.t, &cfg, &model)?;
    let mut out = Outputs::create(resolve_dir(args.out.as_deref(), &cfg), &cfg)?;
    out.mark("setup");

    let mut ctx = Ctx { cfg: &cfg, model: &model, t, x: args.x, out: &mut out };
    let checks = match kind {
        Kind::Simulate => cmd_simulate(&mut ctx)?,
        Kind::Gf => cmd_gf(&mut ctx)?,
        Kind::Density => cmd_density(&mut ctx)?,
        Kind::VerifyEarly => cmd_verify_early(&mut ctx)?,
        Kind::VerifyLate => cmd_verify_late(&mut ctx)?,
        Kind::KhConstants => cmd_kh_constants(&mut ctx)?,
    };

    let wanted = |name: &str| cfg.checks.as_ref().is_none_or(|r| r.iter().any(|n| n == name));
    let counted: Vec<&Check> = checks.iter().filter(|c| wanted(c.name)).collect();
    let pass = print_checks(counted.iter().copied());
    let mut verdicts = BTreeMap::new();
    for c in &counted {
        let verdict = if c.pass { Verdict::Pass } else { Verdict::Fail };
        verdicts.insert(c.name.to_string(), CheckVerdict { verdict, summary: c.summary.clone() });
    }
    for name in cfg.checks.iter().flatten() {
        if !verdicts.contains_key(name) {
            let owner = CHECKS.iter().find(|(n, _)| n == name).map_or("?", |(_, k)| k.name());
            verdicts.insert(
                name.clone(),
                CheckVerdict { verdict: Verdict::NotRun, summary: format!("produced by the {owner} subcommand") },
            );
        }
    }
    let manifest = Manifest {
        command: kind.name().to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        t,
        checks: verdicts,
        files: Vec::new(),
        timings: String::new(),
    };
    let dir = out.dir().display().to_string();
    out.finish(manifest)?;
    println!("outputs written to {dir}");
    Ok(pass)
}

/// `(λ² e^{-2Mr} t^{2H}, Λ² e^{2Mr} t^{2H})`.
fn early_variances(model: &ModelSpec, t: f64) -> (f64, f64) {
    let mr = model.drift_lipschitz() * model.delay;
    let th2 = t.powf(2.0 * model.hurst);
    (model.lambda().powi(2) * (-2.0 * mr).exp() * th2, model.big_lambda().powi(2) * (2.0 * mr).exp() * th2)
}

fn cmd_simulate(ctx: &mut Ctx) -> Result<Vec<Check>, CliError> {
    let (cfg, model, t) = (ctx.cfg, ctx.model, ctx.t);
    let paths = simulate(model, t, cfg.paths, cfg.seed).map_err(pipe)?;
    ctx.out.mark("simulate");
    let terminal: Vec<f64> = paths.iter().map(|p| p.terminal()).collect();
    let centering = mean_and_centering(&terminal);

    // Independent covariance check on a coarse grid keeps the cost quadratic in a small size.
    let cells = model.steps_to(t).map_err(pipe)?.min(16);
    let coarse = Grid::uniform(cells, t).map_err(pipe)?;
    let batch = fbm::sample(&coarse, model.hurst, cfg.paths.min(10_000), cfg.seed).map_err(pipe)?;
    let cov = batch.covariance_check(4.0);
    let early = check_early_bounds(model, &paths[..paths.len().min(FULL_PATHS)]).map_err(pipe)?;
    ctx.out.mark("checks");

    ctx.out.csv("paths.csv", &paths_to_csv(&paths[..paths.len().min(DUMPED_PATHS)]))?;
    let mut term = csv::header(&["path_id", "x_t"]);
    for (i, v) in terminal.iter().enumerate() {
        csv::row(&mut term, [i.to_string(), csv::num(*v)]);
    }
    ctx.out.csv("terminal.csv", &term)?;

    #[derive(Serialize)]
    struct Summary<'a> {
        t: f64,
        n_paths: usize,
        model: &'a ModelSpec,
        centering: sddelab::sdde::Centering,
        fbm_covariance: &'a BoundReport,
        early_derivative_bracket: &'a BoundReport,
    }
    ctx.out.json(
        "simulate.json",
        &Summary { t, n_paths: paths.len(), model, centering, fbm_covariance: &cov, early_derivative_bracket: &early },
    )?;
    ctx.out.svg("paths.svg", || {
        let shown = &paths[..paths.len().min(PLOTTED_PATHS)];
        let times: Vec<Vec<f64>> =
            shown.iter().map(|p| (0..p.values.len()).map(|k| (k as f64 - p.lag as f64) * p.step()).collect()).collect();
        let names: Vec<String> = (0..shown.len()).map(|i| format!("path {i}")).collect();
        let series: Vec<Series> = shown
            .iter()
            .zip(&times)
            .zip(&names)
            .map(|((p, ts), n)| Series { name: n, xs: ts, ys: &p.values, dashed: false })
            .collect();
        line_chart("Sample paths", "t", "X_t", &series)
    })?;
    ctx.out.mark("write");
    Ok(vec![Check::from_report("fbm-covariance", &cov), Check::from_report("early-derivative-bracket", &early)])
}

fn gf_estimate(ctx: &mut Ctx) -> Result<GfEstimate, CliError> {
    let cfg = ctx.cfg;
    let opts = GfOptions { n_paths: cfg.paths, theta_nodes: cfg.theta_nodes, bins: cfg.bins, bandwidth: cfg.bandwidth };
    let gf = estimate_gf(ctx.model, ctx.t, &opts, cfg.seed).map_err(pipe)?;
    ctx.out.mark("gf");
    Ok(gf)
}

fn cmd_gf(ctx: &mut Ctx) -> Result<Vec<Check>, CliError> {
    let gf = gf_estimate(ctx)?;
    let (lo, hi) = early_variances(ctx.model, ctx.t);
    let bracket = gf.bracket_check(lo, hi, ctx.cfg.n_se);
    let min = gf.values.iter().copied().fold(f64::INFINITY, f64::min);
    let positive = Check::new(
        "gf-positivity",
        min > 0.0,
        format!("{} populated bins, minimum {min:.6e}, {} empty bins dropped", gf.values.len(), gf.dropped_bins),
    );
    ctx.out.csv("gf.csv", &gf.to_csv())?;
    #[derive(Serialize)]
    struct Out<'a> {
        estimate: &'a GfEstimate,
        bracket: &'a BoundReport,
    }
    ctx.out.json("gf.json", &Out { estimate: &gf, bracket: &bracket })?;
    ctx.out.svg("gf.svg", || {
        let los = vec![lo; gf.centers.len()];
        let his = vec![hi; gf.centers.len()];
        line_chart(
            &format!("g_F at t = {}", ctx.t),
            "F",
            "g_F",
            &[
                Series { name: "g_F estimate", xs: &gf.centers, ys: &gf.values, dashed: false },
                Series { name: "lower bracket", xs: &gf.centers, ys: &los, dashed: true },
                Series { name: "upper bracket", xs: &gf.centers, ys: &his, dashed: true },
            ],
        )
    })?;
    ctx.out.mark("write");
    Ok(vec![Check::from_report("gf-bracket", &bracket), positive])
}

fn cmd_density(ctx: &mut Ctx) -> Result<Vec<Check>, CliError> {
    let gf = gf_estimate(ctx)?;
    let (model, t, cfg) = (ctx.model, ctx.t, ctx.cfg);
    let th = t.powf(model.hurst);
    let (first, last) = (gf.centers[0], gf.centers[gf.centers.len() - 1]);
    let grid = linspace((-3.0 * th).max(first), (3.0 * th).min(last), cfg.points);
    let nv = density_from_gf(&gf, gf.centering.abs_dev, &grid).map_err(pipe)?;
    let kd = kde(&gf.samples, &grid, cfg.bandwidth).map_err(pipe)?;
    let agree = agreement(&nv, &kd, &gf.samples, 0.05, cfg.n_se);
    let (smin2, smax2) = early_variances(model, t);
    let ad = gf.centering.abs_dev;
    let lower: Vec<f64> = grid.iter().map(|f| ad / (2.0 * smax2) * (-f * f / (2.0 * smin2)).exp()).collect();
    let upper: Vec<f64> = grid.iter().map(|f| ad / (2.0 * smin2) * (-f * f / (2.0 * smax2)).exp()).collect();
    let mean = gf.centering.mean;
    let xs: Vec<f64> = grid.iter().map(|f| mean + f).collect();
    ctx.out.mark("density");

    let rows = (0..grid.len()).map(|i| vec![xs[i], nv.values[i], kd.values[i], lower[i], upper[i]]);
    ctx.out.csv("density.csv", &csv::table(&["x", "p_nv", "p_kde", "lower", "upper"], rows))?;
    #[derive(Serialize)]
    struct Out<'a> {
        t: f64,
        centering: sddelab::sdde::Centering,
        sigma_min2: f64,
        sigma_max2: f64,
        kde_bandwidth: Option<f64>,
        nv_mass: f64,
        agreement: &'a BoundReport,
    }
    let summary = Out {
        t,
        centering: gf.centering,
        sigma_min2: smin2,
        sigma_max2: smax2,
        kde_bandwidth: kd.bandwidth,
        nv_mass: nv.mass(),
        agreement: &agree,
    };
    ctx.out.json("density.json", &summary)?;
    ctx.out.svg("density.svg", || {
        let sd = (gf.samples.iter().map(|v| v * v).sum::<f64>() / gf.samples.len() as f64).sqrt();
        let gauss: Vec<f64> = xs.iter().map(|x| normal_pdf(*x, mean, sd)).collect();
        line_chart(
            &format!("Density of X_t at t = {t}"),
            "x",
            "density",
            &[
                Series { name: "NV formula", xs: &xs, ys: &nv.values, dashed: false },
                Series { name: "KDE", xs: &xs, ys: &kd.values, dashed: false },
                Series { name: "lower bound", xs: &xs, ys: &lower, dashed: true },
                Series { name: "upper bound", xs: &xs, ys: &upper, dashed: true },
                Series { name: "Gaussian fit", xs: &xs, ys: &gauss, dashed: true },
            ],
        )
    })?;
    ctx.out.mark("write");
    Ok(vec![Check::from_report("nv-kde-agreement", &agree)])
}

fn cmd_verify_early(ctx: &mut Ctx) -> Result<Vec<Check>, CliError> {
    let cfg = ctx.cfg;
    let ev = verify_early_bounds(ctx.model, ctx.t, cfg.paths, cfg.seed, cfg.points, cfg.n_se).map_err(pipe)?;
    ctx.out.mark("verify");
    ctx.out.csv("early.csv", &ev.to_csv())?;
    ctx.out.json("early.json", &ev)?;
    ctx.out.svg("early.svg", || {
        let x = &ev.kde.points;
        line_chart(
            &format!("Early two-sided bound at t = {}", ctx.t),
            "x",
            "density",
            &[
                Series { name: "KDE", xs: x, ys: &ev.kde.values, dashed: false },
                Series { name: "lower bound", xs: x, ys: &ev.lower, dashed: true },
                Series { name: "upper bound", xs: x, ys: &ev.upper, dashed: true },
            ],
        )
    })?;
    ctx.out.mark("write");
    let mut c = Check::from_report("early-two-sided-bound", &ev.report);
    if ev.sigma_min2 == ev.sigma_max2 {
        c.summary.push_str(", bounds collapse to a single Gaussian");
    }
    Ok(vec![c])
}

fn constants(cfg: &RunConfig, model: &ModelSpec) -> (f64, f64) {
    let (d1, d2) = default_constants(model.lambda());
    (cfg.c1.unwrap_or(d1), cfg.c2.unwrap_or(d2))
}

fn ledger_check(name: &'static str, plan: &ChainPlan) -> Check {
    let f = plan.feasibility.failures();
    let summary = if f.is_empty() {
        format!("c1 = {:.6}, c2 = {}, rho = {:.6}, N = {}: all constraints hold", plan.c1, plan.c2, plan.rho, plan.n)
    } else {
        format!("c1 = {:.6}, c2 = {}, N = {}: violated {}", plan.c1, plan.c2, plan.n, f.join(", "))
    };
    Check::new(name, plan.feasible, summary)
}

fn cmd_verify_late(ctx: &mut Ctx) -> Result<Vec<Check>, CliError> {
    let (cfg, model, t) = (ctx.cfg, ctx.model, ctx.t);
    let th = t.powf(model.hurst);
    let x_lo = cfg.x_lo.unwrap_or(model.eta0 - 3.0 * th);
    let x_hi = cfg.x_hi.unwrap_or(model.eta0 + 3.0 * th);
    let opts = LateOptions { n_paths: cfg.paths, points: cfg.points, n_se: cfg.n_se, ..LateOptions::default() };
    let late = verify_late_bound(model, t, x_lo, x_hi, &opts, cfg.seed).map_err(pipe)?;
    ctx.out.mark("late density");

    let paths = simulate(model, t, cfg.paths.min(FULL_PATHS), cfg.seed).map_err(pipe)?;
    let (c1, c2) = constants(cfg, model);
    let x_far = late.plan.x;
    let mut j1_pass = true;
    let mut rn_pass = true;
    let mut j1_parts = Vec::new();
    let mut rn_parts = Vec::new();
    let mut per_n = Vec::new();
    for &n in &cfg.blocks {
        let plan = plan_with_blocks(model, t, x_far, c1, c2, n).map_err(pipe)?;
        let j = j1_variance_bracket(model, &paths, &plan).map_err(pipe)?;
        let (rn, max_r) = rn_smallness(model, &paths, &plan).map_err(pipe)?;
        j1_pass &= j.report.pass;
        rn_pass &= rn.pass;
        j1_parts.push(format!("N={n}: {} violations", j.report.violations()));
        rn_parts.push(format!("N={n}: max|R_n| {max_r:.3e}"));
        ctx.out.csv(&format!("j1_N{n}.csv"), &j.to_csv())?;
        per_n.push((n, j.report, rn));
    }
    let slope = if cfg.blocks.len() >= 2 {
        Some(rn_refinement(model, &paths, t, x_far, &cfg.blocks, (0.9, 1.1)).map_err(pipe)?)
    } else {
        None
    };
    let scan = nondegeneracy_scan(model, &paths, t, &cfg.nondegeneracy_blocks).map_err(pipe)?;
    ctx.out.mark("block diagnostics");

    ctx.out.csv("late.csv", &late.to_csv())?;
    ctx.out.json("late.json", &late)?;
    #[derive(Serialize)]
    struct Blocks<'a> {
        t: f64,
        x: f64,
        n_paths: usize,
        per_n: &'a [(usize, BoundReport, BoundReport)],
        rn_refinement: &'a Option<BoundReport>,
        nondegeneracy: &'a sddelab::khbound::NondegeneracyScan,
    }
    ctx.out.json(
        "blocks.json",
        &Blocks { t, x: x_far, n_paths: paths.len(), per_n: &per_n, rn_refinement: &slope, nondegeneracy: &scan },
    )?;
    ctx.out.svg("late.svg", || {
        let lower: Vec<f64> = late.density.iter().zip(&late.stderr).map(|(p, s)| p - cfg.n_se * s).collect();
        let floor: Vec<f64> = late
            .points
            .iter()
            .map(|x| late.best.map_or(f64::NAN, |b| b.c3 / th * (-b.c4 * (x - model.eta0).powi(2) / (th * th)).exp()))
            .collect();
        line_chart(
            &format!("Late-regime density at t = {t}"),
            "x",
            "density",
            &[
                Series { name: "KDE", xs: &late.points, ys: &late.density, dashed: false },
                Series { name: "KDE - n_se se", xs: &late.points, ys: &lower, dashed: true },
                Series { name: "Gaussian floor", xs: &late.points, ys: &floor, dashed: true },
            ],
        )
    })?;
    ctx.out.mark("write");

    let slope_check = match &slope {
        Some(r) => {
            let mut c = Check::from_report("rn-refinement-slope", r);
            if let Some(g) = r.constants.get("gamma") {
                c.summary = format!("slope {g:.4} (target [0.9, 1.1]); {}", c.summary);
            }
            c
        }
        None => Check::new("rn-refinement-slope", false, "needs at least two block counts"),
    };
    let nondeg_pass = scan.n0.is_some();
    let nondeg_summary = format!(
        "N0 = {}, scanned {:?}",
        scan.n0.map_or("none".to_string(), |n| n.to_string()),
        cfg.nondegeneracy_blocks
    );
    let fit = late.fit;
    Ok(vec![
        Check::from_report("late-positivity", &late.positivity),
        Check::new(
            "late-feasibility",
            late.feasibility.pass,
            format!(
                "{} feasible (c3, c4) pairs, best {}",
                late.feasible_pairs,
                late.best.map_or("none".into(), |b| format!("c3 = {:.4e}, c4 = {:.4e}", b.c3, b.c4))
            ),
        ),
        Check::new(
            "late-shape",
            late.shape.pass,
            format!(
                "fitted c4 {:.4}, R^2 {:.4}, Gaussian reference {:.4}",
                fit.c4_fitted, fit.r2, fit.c4_gaussian_reference
            ),
        ),
        ledger_check("late-constraint-ledger", &late.plan),
        Check::new("j1-variance-bracket", j1_pass, j1_parts.join("; ")),
        Check::new("rn-smallness", rn_pass, rn_parts.join("; ")),
        slope_check,
        Check::new("nondegeneracy", nondeg_pass, nondeg_summary),
    ])
}

/// `log10` of the exact chain bound; the bound itself underflows far from `η_0`.
fn log10_exact(n: usize, c: f64, c1: f64, t: f64, h: f64) -> f64 {
    let nf = n as f64;
    (nf * (c * c1 / 4.0).ln() + 0.5 * nf.ln() - (c1 * t.powf(h)).ln()) / std::f64::consts::LN_10
}

fn log10_simplified(rho: f64, c1: f64, c2: f64, dx: f64, t: f64, h: f64) -> f64 {
    (-rho * c2 * dx * dx / t.powf(2.0 * h) - (c1 * t.powf(h)).ln()) / std::f64::consts::LN_10
}

fn cmd_kh_constants(ctx: &mut Ctx) -> Result<Vec<Check>, CliError> {
    let (cfg, model, t) = (ctx.cfg, ctx.model, ctx.t);
    let h = model.hurst;
    let th = t.powf(h);
    let x = ctx.x.or(cfg.x_hi).unwrap_or(model.eta0 + 3.0 * th);
    let (c1, c2) = constants(cfg, model);
    let mut notes = Vec::new();
    let plan = match plan_chain(model, t, x, c1, c2) {
        Err(KhError::BlockTooWide { n, min_n, .. }) => {
            notes.push(format!("N = {n} gives blocks wider than the delay; raised to N = {min_n}"));
            plan_with_blocks(model, t, x, c1, c2, min_n)
        }
        other => other,
    }
    .map_err(pipe)?;
    let bound = chain_lower_bound(&plan).ok();
    if !plan.waypoint_in_radius {
        notes.push(format!(
            "waypoint step {:.4e} exceeds the radius c1*sigma_N = {:.4e}; N >= {} keeps it inside",
            plan.waypoint_step, plan.radius, plan.min_n_for_radius
        ));
    }
    let log_exact = log10_exact(plan.n, plan.c, c1, t, h);
    let log_simple = log10_simplified(plan.rho, c1, c2, x - model.eta0, t, h);
    let threshold = remainder_threshold(model.drift_sup(), c1, t, h);
    let (d1, d2) = default_constants(model.lambda());

    let min_n = (t / model.delay).floor() as usize + 1;
    let profile: Vec<[f64; 4]> = linspace(model.eta0, x, 41)
        .into_iter()
        .map(|xi| {
            let n = sddelab::khbound::block_count(t, xi, model.eta0, h, c2).max(min_n);
            let dx = xi - model.eta0;
            [xi, n as f64, log10_exact(n, plan.c, c1, t, h), log10_simplified(plan.rho, c1, c2, dx, t, h)]
        })
        .collect();
    ctx.out.mark("constants");

    let mut chain = csv::header(&["i", "waypoint"]);
    for (i, y) in plan.waypoints.iter().enumerate() {
        csv::row(&mut chain, [i.to_string(), csv::num(*y)]);
    }
    ctx.out.csv("chain.csv", &chain)?;
    ctx.out.csv(
        "chain_profile.csv",
        &csv::table(
            &["x", "n_blocks", "log10_bound_exact", "log10_bound_simplified"],
            profile.iter().map(|r| r.to_vec()),
        ),
    )?;
    #[derive(Serialize)]
    struct Out<'a> {
        t: f64,
        x: f64,
        max_c1: f64,
        default_c1: f64,
        default_c2: f64,
        remainder_threshold: usize,
        plan: &'a ChainPlan,
        chain_bound: Option<sddelab::khbound::ChainBound>,
        log10_bound_exact: f64,
        log10_bound_simplified: f64,
        notes: &'a [String],
    }
    let body = Out {
        t,
        x,
        max_c1: max_c1(model.lambda()),
        default_c1: d1,
        default_c2: d2,
        remainder_threshold: threshold,
        plan: &plan,
        chain_bound: bound,
        log10_bound_exact: log_exact,
        log10_bound_simplified: log_simple,
        notes: &notes,
    };
    ctx.out.json("kh_constants.json", &body)?;
    ctx.out.svg("chain_profile.svg", || {
        let xs: Vec<f64> = profile.iter().map(|r| r[0]).collect();
        let e: Vec<f64> = profile.iter().map(|r| r[2]).collect();
        let s: Vec<f64> = profile.iter().map(|r| r[3]).collect();
        line_chart(
            &format!("Chain lower bound at t = {t}"),
            "x",
            "log10 bound",
            &[
                Series { name: "exact", xs: &xs, ys: &e, dashed: false },
                Series { name: "simplified", xs: &xs, ys: &s, dashed: true },
            ],
        )
    })?;
    ctx.out.mark("write");
    for n in &notes {
        println!("note: {n}");
    }
    let mut c = ledger_check("constraint-ledger", &plan);
    if plan.feasible {
        c.summary.push_str(&format!("; log10 lower bound {log_exact:.4} (simplified {log_simple:.4})"));
    }
    Ok(vec![c])
}

#[cfg(test)]
mod tests {
    use super::*;
    use sddelab::khbound::{chain_bound_exact, chain_bound_simplified};

    #[test]
    fn log_bounds_match_direct_forms() {
        let (c, c1, c2, t, h, rho) = (0.3, 0.2, 25.0, 1.5, 0.75, 4.2);
        for n in [1usize, 3, 10] {
            let want = chain_bound_exact(n, c, c1, t, h).log10();
            assert!((log10_exact(n, c, c1, t, h) - want).abs() < 1e-12);
        }
        let want = chain_bound_simplified(rho, c1, c2, 0.4, t, h).log10();
        assert!((log10_simplified(rho, c1, c2, 0.4, t, h) - want).abs() < 1e-12);
    }

    #[test]
    fn check_names_are_unique() {
        let mut names: Vec<&str> = CHECKS.iter().map(|(n, _)| *n).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), CHECKS.len());
    }
}
