//! Output directory, artifact writers and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::{Format, RunConfig};
use crate::CliError;

pub const OUT_ENV: &str = "SDDELAB_OUT";
const DEFAULT_DIR: &str = "sddelab-out";

/// `--out`, then `[output] directory`, then `$SDDELAB_OUT`, then `./sddelab-out`.
pub fn resolve_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(d) = &cfg.directory {
        return PathBuf::from(d);
    }
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_DIR),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    NotRun,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckVerdict {
    pub verdict: Verdict,
    pub summary: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub t: f64,
    pub checks: BTreeMap<String, CheckVerdict>,
    pub files: Vec<String>,
    /// Wall-clock timings live in this file so the manifest itself is reproducible.
    pub timings: String,
}

pub struct Outputs {
    dir: PathBuf,
    formats: Vec<Format>,
    files: Vec<String>,
    timings: Vec<(String, f64)>,
    clock: Instant,
}

impl Outputs {
    pub fn create(dir: PathBuf, cfg: &RunConfig) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Outputs { dir, formats: cfg.formats.clone(), files: Vec::new(), timings: Vec::new(), clock: Instant::now() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn write(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, body).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        if self.formats.contains(&Format::Csv) {
            self.write(name, body)?;
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        if self.formats.contains(&Format::Json) {
            self.write(name, &to_json(value)?)?;
        }
        Ok(())
    }

    pub fn svg(&mut self, name: &str, body: impl FnOnce() -> String) -> Result<(), CliError> {
        if self.formats.contains(&Format::Svg) {
            self.write(name, &body())?;
        }
        Ok(())
    }

    /// Records the time since the previous mark under `stage`.
    pub fn mark(&mut self, stage: &str) {
        let now = Instant::now();
        self.timings.push((stage.to_string(), (now - self.clock).as_secs_f64()));
        self.clock = now;
    }

    pub fn finish(mut self, mut manifest: Manifest) -> Result<PathBuf, CliError> {
        let mut t = String::new();
        for (stage, secs) in &self.timings {
            t.push_str(&format!("{stage}\t{secs:.3}\n"));
        }
        let timings = "timings.txt";
        std::fs::write(self.dir.join(timings), t).map_err(|e| CliError::Io(format!("cannot write timings: {e}")))?;
        manifest.files = std::mem::take(&mut self.files);
        manifest.timings = timings.to_string();
        let path = self.dir.join("manifest.json");
        std::fs::write(&path, to_json(&manifest)?).map_err(|e| CliError::Io(format!("cannot write manifest: {e}")))?;
        Ok(path)
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(format!("serialization: {e}")))?;
    s.push('\n');
    Ok(s)
}
