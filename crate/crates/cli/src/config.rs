//! Run configuration: a sectioned key-value file.
//!
//! ```ini
//! [model]
//! hurst = 0.75
//! horizon = 2
//! delay = 1
//! eta = 0.5*sin(3*x)
//! eta0 = 0
//! sigma = 1+0.25*tanh(x)
//! drift = 0.1*sin(x)
//!
//! [simulation]
//! paths = 20000
//! steps_per_delay = 64
//! seed = 42
//! ```
//!
//! Unknown sections or keys are rejected so typos surface as errors.

use std::collections::BTreeMap;
use std::path::Path;

use ini::Ini;
use sha2::{Digest, Sha256};

use sddelab::coeffs::{parse, profile, ScanRange};
use sddelab::ModelSpec;

use crate::CliError;

/// Solver steps to the horizon; keeps the dense covariance factorization interactive.
pub const MAX_GRID: usize = 1024;

const KEYS: &[(&str, &[&str])] = &[
    (
        "model",
        &[
            "hurst",
            "horizon",
            "delay",
            "eta",
            "eta0",
            "sigma",
            "drift",
            "scan_lo",
            "scan_hi",
            "scan_points",
            "lambda",
            "big_lambda",
        ],
    ),
    ("simulation", &["paths", "steps_per_delay", "seed"]),
    (
        "verification",
        &[
            "t_early",
            "t_late",
            "x_lo",
            "x_hi",
            "theta_nodes",
            "bins",
            "bandwidth",
            "c1",
            "c2",
            "n_se",
            "points",
            "blocks",
            "nondegeneracy_blocks",
            "checks",
        ],
    ),
    ("output", &["directory", "formats"]),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub hurst: f64,
    pub horizon: f64,
    pub delay: f64,
    pub eta: String,
    pub eta0: f64,
    pub sigma: String,
    pub drift: String,
    pub scan: ScanRange,
    pub scan_points: usize,
    pub declared_lambda: Option<f64>,
    pub declared_big_lambda: Option<f64>,

    pub paths: usize,
    pub steps_per_delay: usize,
    pub seed: u64,

    pub t_early: f64,
    pub t_late: Option<f64>,
    pub x_lo: Option<f64>,
    pub x_hi: Option<f64>,
    pub theta_nodes: usize,
    pub bins: usize,
    pub bandwidth: Option<f64>,
    pub c1: Option<f64>,
    pub c2: Option<f64>,
    pub n_se: f64,
    pub points: usize,
    pub blocks: Vec<usize>,
    pub nondegeneracy_blocks: Vec<usize>,
    pub checks: Option<Vec<String>>,

    pub directory: Option<String>,
    pub formats: Vec<Format>,

    /// `section.key=value` lines, sorted, after overrides.
    pub canonical: String,
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

struct Table(BTreeMap<(String, String), String>);

impl Table {
    fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.0.get(&(section.to_string(), key.to_string())).map(String::as_str)
    }

    fn text(&self, section: &str, key: &str) -> Result<String, CliError> {
        self.raw(section, key).map(str::to_string).ok_or_else(|| bad(format!("missing [{section}] {key}")))
    }

    fn num<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, CliError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| bad(format!("[{section}] {key} = {v:?} is not a valid number"))),
        }
    }

    fn req<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<T, CliError> {
        self.num(section, key)?.ok_or_else(|| bad(format!("missing [{section}] {key}")))
    }

    fn list<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<T>>, CliError> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse().map_err(|_| bad(format!("[{section}] {key}: bad entry {s:?}"))))
                .collect::<Result<Vec<_>, _>>()
                .map(Some),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| bad(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str_with(&text, overrides)
    }

    pub fn from_str_with(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let ini = Ini::load_from_str(text).map_err(|e| bad(format!("config syntax: {e}")))?;
        let mut map = BTreeMap::new();
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if props.iter().next().is_some() {
                    return Err(bad("keys outside a section"));
                }
                continue;
            };
            for (k, v) in props.iter() {
                map.insert((section.to_string(), k.to_string()), v.trim().to_string());
            }
        }
        for o in overrides {
            let (lhs, value) =
                o.split_once('=').ok_or_else(|| bad(format!("override {o:?} is not section.key=value")))?;
            let (section, key) =
                lhs.trim().split_once('.').ok_or_else(|| bad(format!("override {o:?} is not section.key=value")))?;
            map.insert((section.to_string(), key.to_string()), value.trim().to_string());
        }
        for (section, key) in map.keys() {
            let known =
                KEYS.iter().find(|(s, _)| s == section).ok_or_else(|| bad(format!("unknown section [{section}]")))?;
            if !known.1.contains(&key.as_str()) {
                return Err(bad(format!("unknown key [{section}] {key}")));
            }
        }
        let canonical = map.iter().map(|((s, k), v)| format!("{s}.{k}={v}\n")).collect();
        let t = Table(map);

        let formats = match t.raw("output", "formats") {
            None => vec![Format::Csv, Format::Json, Format::Svg],
            Some(v) => {
                let mut f = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| match s {
                        "csv" => Ok(Format::Csv),
                        "json" => Ok(Format::Json),
                        "svg" => Ok(Format::Svg),
                        other => Err(bad(format!("unknown output format {other:?}"))),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                f.sort();
                f.dedup();
                f
            }
        };
        let cfg = RunConfig {
            hurst: t.req("model", "hurst")?,
            horizon: t.req("model", "horizon")?,
            delay: t.req("model", "delay")?,
            eta: t.text("model", "eta")?,
            eta0: t.req("model", "eta0")?,
            sigma: t.text("model", "sigma")?,
            drift: t.text("model", "drift")?,
            scan: ScanRange::new(
                t.num("model", "scan_lo")?.unwrap_or(-10.0),
                t.num("model", "scan_hi")?.unwrap_or(10.0),
            ),
            scan_points: t.num("model", "scan_points")?.unwrap_or(20_001),
            declared_lambda: t.num("model", "lambda")?,
            declared_big_lambda: t.num("model", "big_lambda")?,
            paths: t.num("simulation", "paths")?.unwrap_or(10_000),
            steps_per_delay: t.num("simulation", "steps_per_delay")?.unwrap_or(64),
            seed: t.num("simulation", "seed")?.unwrap_or(1),
            t_early: t.num("verification", "t_early")?.unwrap_or(0.5),
            t_late: t.num("verification", "t_late")?,
            x_lo: t.num("verification", "x_lo")?,
            x_hi: t.num("verification", "x_hi")?,
            theta_nodes: t.num("verification", "theta_nodes")?.unwrap_or(16),
            bins: t.num("verification", "bins")?.unwrap_or(41),
            bandwidth: t.num("verification", "bandwidth")?,
            c1: t.num("verification", "c1")?,
            c2: t.num("verification", "c2")?,
            n_se: t.num("verification", "n_se")?.unwrap_or(3.0),
            points: t.num("verification", "points")?.unwrap_or(101),
            blocks: t.list("verification", "blocks")?.unwrap_or_else(|| vec![8, 16, 32]),
            nondegeneracy_blocks: t
                .list("verification", "nondegeneracy_blocks")?
                .unwrap_or_else(|| vec![2, 4, 8, 16, 32]),
            checks: t.list("verification", "checks")?,
            directory: t.raw("output", "directory").map(str::to_string),
            formats,
            canonical,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.hurst > 0.5 && self.hurst < 1.0) {
            return Err(bad(format!("hurst = {} must lie in (0.5, 1)", self.hurst)));
        }
        if !(self.delay > 0.0) {
            return Err(bad(format!("delay = {} must be positive", self.delay)));
        }
        if !(self.horizon > 0.0) {
            return Err(bad(format!("horizon = {} must be positive", self.horizon)));
        }
        if self.paths < 100 {
            return Err(bad(format!("paths = {} must be at least 100", self.paths)));
        }
        if self.steps_per_delay == 0 {
            return Err(bad("steps_per_delay must be positive"));
        }
        let grid = (self.horizon / self.delay * self.steps_per_delay as f64).round();
        if grid > MAX_GRID as f64 {
            return Err(bad(format!("{grid} solver steps to the horizon exceed the limit of {MAX_GRID}")));
        }
        if !(self.n_se > 0.0) {
            return Err(bad(format!("n_se = {} must be positive", self.n_se)));
        }
        if self.points < 2 {
            return Err(bad("points must be at least 2"));
        }
        if let Some(tl) = self.t_late {
            if tl > self.horizon {
                return Err(bad(format!("t_late = {tl} exceeds the horizon {}", self.horizon)));
            }
        }
        Ok(())
    }

    /// Builds the model and checks declared ellipticity constants against the scans.
    pub fn model(&self) -> Result<ModelSpec, CliError> {
        let expr = |name: &str, s: &str| parse(s).map_err(|e| bad(format!("{name}: {e}")));
        let sigma = profile(&expr("sigma", &self.sigma)?, self.scan, self.scan_points)
            .map_err(|e| bad(format!("sigma: {e}")))?;
        let drift = profile(&expr("drift", &self.drift)?, self.scan, self.scan_points)
            .map_err(|e| bad(format!("drift: {e}")))?;
        if let Some(l) = self.declared_lambda {
            if l > sigma.lower {
                return Err(bad(format!("declared lambda = {l} exceeds the sigma scan minimum {}", sigma.lower)));
            }
        }
        if let Some(l) = self.declared_big_lambda {
            if l < sigma.upper {
                return Err(bad(format!("declared big_lambda = {l} is below the sigma scan maximum {}", sigma.upper)));
            }
        }
        let m = ModelSpec::new(
            self.hurst,
            self.horizon,
            self.delay,
            expr("eta", &self.eta)?,
            self.eta0,
            sigma,
            drift,
            self.steps_per_delay,
        )
        .map_err(|e| bad(e.to_string()))?;
        m.require_elliptic().map_err(|e| bad(e.to_string()))?;
        Ok(m)
    }

    /// SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "[model]\nhurst=0.75\nhorizon=2\ndelay=1\neta=0\neta0=0\nsigma=1\ndrift=0\n";

    #[test]
    fn parses_minimal_config() {
        let c = RunConfig::from_str_with(BASE, &[]).unwrap();
        assert_eq!(c.paths, 10_000);
        assert_eq!(c.blocks, vec![8, 16, 32]);
        assert!(c.model().is_ok());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn overrides_apply_and_change_hash() {
        let a = RunConfig::from_str_with(BASE, &[]).unwrap();
        let b = RunConfig::from_str_with(BASE, &["simulation.paths=500".into()]).unwrap();
        assert_eq!(b.paths, 500);
        assert_ne!(a.hash(), b.hash());
        let c = RunConfig::from_str_with(&format!("{BASE}\n# comment\n"), &[]).unwrap();
        assert_eq!(a.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_values() {
        for (o, needle) in [
            ("model.hurst=0.4", "hurst"),
            ("simulation.paths=10", "paths"),
            ("model.nope=1", "unknown key"),
            ("extra.k=1", "unknown section"),
            ("model.delay=abc", "not a valid number"),
            ("output.formats=pdf", "format"),
        ] {
            let e = RunConfig::from_str_with(BASE, &[o.to_string()]).unwrap_err();
            assert!(e.to_string().contains(needle), "{o}: {e}");
        }
    }

    #[test]
    fn declared_lambda_checked_against_scan() {
        let c =
            RunConfig::from_str_with(BASE, &["model.sigma=1+0.25*tanh(x)".into(), "model.lambda=0.9".into()]).unwrap();
        let e = c.model().unwrap_err().to_string();
        assert!(e.contains("0.9"), "{e}");
        let ok = RunConfig::from_str_with(BASE, &["model.lambda=1".into()]).unwrap();
        assert!(ok.model().is_ok());
    }
}
