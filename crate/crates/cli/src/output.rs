//! Output directories and the metadata sidecar written next to every run.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use cavcool::model::RegimeReport;
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

/// Collects the files of one run in its own directory.
pub struct OutDir {
    path: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self {
            path: path.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn write<F>(&mut self, name: &str, f: F) -> anyhow::Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
    {
        let p = self.path.join(name);
        let file = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).with_context(|| format!("writing {}", p.display()))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn finish(mut self, meta: Metadata) -> anyhow::Result<PathBuf> {
        let mut meta = meta;
        meta.files = std::mem::take(&mut self.files);
        let p = self.path.join("metadata.json");
        let text = serde_json::to_string_pretty(&meta)?;
        fs::write(&p, text + "\n").with_context(|| format!("writing {}", p.display()))?;
        Ok(self.path)
    }
}

/// Everything needed to regenerate a run's data files.
#[derive(Debug, Serialize)]
pub struct Metadata {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub command: String,
    /// Config after flags were applied.
    pub config: RunConfig,
    /// Physical parameters the run actually used, in units of κ.
    pub resolved: Value,
    pub seed: u64,
    pub rng: &'static str,
    pub kappa_units: Option<f64>,
    pub wall_clock_seconds: f64,
    pub steps: Value,
    pub regime: Option<RegimeReport>,
    pub diagnostics: Value,
    pub files: Vec<String>,
}

impl Metadata {
    pub fn new(command: &str, config: &RunConfig, started: Instant) -> Self {
        Self {
            toolkit: "cavcool",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            config: config.clone(),
            resolved: Value::Null,
            seed: config.run.seed,
            rng: cavcool::trajectory::RNG_DESCRIPTION,
            kappa_units: config.run.kappa_units,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
            steps: Value::Null,
            regime: None,
            diagnostics: Value::Null,
            files: Vec::new(),
        }
    }
}

/// Evenly spaced grid `0, dt, …, t_max`.
pub fn time_grid(t_max: f64, dt: f64) -> anyhow::Result<Vec<f64>> {
    anyhow::ensure!(t_max > 0.0 && dt > 0.0, "t_max and dt must be positive (got {t_max}, {dt})");
    let n = (t_max / dt).round() as usize;
    anyhow::ensure!(
        ((n as f64) * dt - t_max).abs() <= 1e-9 * t_max,
        "t_max = {t_max} is not a multiple of dt = {dt}"
    );
    Ok((0..=n).map(|k| k as f64 * dt).collect())
}
