//! Experiment runner: config, orchestration, CSV and manifest output.

mod config;
mod experiments;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

pub use config::{Experiment, ExperimentConfig, KernelConfig, NonlinearityConfig, Numerics, WeightConfig};
pub use experiments::execute;

use crate::error::{Error, Result};
use crate::front::fmt_num;

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Artifact {
    pub fn text(name: impl Into<String>, text: String) -> Self {
        Self { name: name.into(), bytes: text.into_bytes() }
    }
}

/// In-memory result of an experiment; nothing here touches the filesystem.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    /// Wall-clock seconds per stage.
    pub stages: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub summary: Vec<(String, String)>,
    /// `eta(eps)` rule used by the run, when one applies.
    pub eta_rule: Option<String>,
}

impl Outcome {
    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.name == name)
    }

    pub fn value(&self, key: &str) -> Option<&str> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub(crate) fn stage<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        let out = f().map_err(|e| Error::Stage { stage: name.to_string(), source: Box::new(e) })?;
        self.stages.push((name.to_string(), t0.elapsed().as_secs_f64()));
        Ok(out)
    }

    pub(crate) fn note(&mut self, key: &str, value: impl ToString) {
        self.summary.push((key.to_string(), value.to_string()));
    }

    pub(crate) fn num(&mut self, key: &str, value: f64) {
        self.note(key, fmt_num(value));
    }
}

/// Run manifest written next to the artifacts.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub experiment: Experiment,
    pub config_sha256: String,
    pub version: String,
    pub threads: usize,
    pub wall_clock: f64,
    pub stages: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub eta_rule: Option<String>,
    pub artifacts: Vec<String>,
    pub summary: Vec<(String, String)>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment = {}", self.experiment);
        let _ = writeln!(s, "status = {}", if self.error.is_some() { "failed" } else { "ok" });
        let _ = writeln!(s, "config_sha256 = {}", self.config_sha256);
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(s, "threads = {}", self.threads);
        let _ = writeln!(s, "eta_rule = {}", self.eta_rule.as_deref().unwrap_or("none"));
        let _ = writeln!(s, "wall_clock_s = {:.3}", self.wall_clock);
        for (name, t) in &self.stages {
            let _ = writeln!(s, "stage.{name}_s = {t:.3}");
        }
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        for a in &self.artifacts {
            let _ = writeln!(s, "artifact = {a}");
        }
        for (k, v) in &self.summary {
            let _ = writeln!(s, "summary.{k} = {v}");
        }
        if let Some(e) = &self.error {
            let _ = writeln!(s, "error = {e}");
        }
        s
    }
}

pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Parse, execute and write artifacts plus `manifest.txt` into `out`
/// (falls back to the config's `output`, then `.`). The manifest is written
/// once, also when the experiment fails.
pub fn run(config_text: &str, out: Option<&Path>, log: &mut dyn FnMut(&str)) -> Result<(RunManifest, Outcome)> {
    let config = ExperimentConfig::parse(config_text)?;
    let dir: PathBuf = out.map(Path::to_path_buf).or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir)?;
    log(&format!("running {} into {}", config.experiment, dir.display()));
    let t0 = Instant::now();
    let result = execute(&config, log);
    let mut manifest = RunManifest {
        experiment: config.experiment,
        config_sha256: config_hash(config_text),
        version: format!("frontlab {}", env!("CARGO_PKG_VERSION")),
        threads: rayon::current_num_threads(),
        wall_clock: 0.0,
        stages: vec![],
        warnings: vec![],
        eta_rule: None,
        artifacts: vec![],
        summary: vec![],
        error: None,
    };
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            manifest.wall_clock = t0.elapsed().as_secs_f64();
            manifest.error = Some(e.to_string());
            fs::write(dir.join("manifest.txt"), manifest.render())?;
            return Err(e);
        }
    };
    for a in &outcome.artifacts {
        fs::write(dir.join(&a.name), &a.bytes)?;
        log(&format!("wrote {}", a.name));
    }
    manifest.wall_clock = t0.elapsed().as_secs_f64();
    manifest.stages = outcome.stages.clone();
    manifest.warnings = outcome.warnings.clone();
    manifest.eta_rule = outcome.eta_rule.clone();
    manifest.artifacts = outcome.artifacts.iter().map(|a| a.name.clone()).collect();
    manifest.summary = outcome.summary.clone();
    fs::write(dir.join("manifest.txt"), manifest.render())?;
    Ok((manifest, outcome))
}
