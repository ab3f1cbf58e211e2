//! Single-writer output directory with content hashes and a run manifest.

use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

/// Provenance of one run. Timings live here, never in the numeric outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_hash: String,
    pub environment_hash: String,
    pub files: Vec<OutputFile>,
    pub wall_clock_seconds: f64,
    pub solve_seconds: Vec<(String, f64)>,
    pub versions: Value,
    pub config: ExperimentConfig,
}

pub struct RunContext {
    pub cfg: ExperimentConfig,
    pub dir: PathBuf,
    pub config_hash: String,
    pub environment_hash: String,
    files: Vec<OutputFile>,
    solve_seconds: Vec<(String, f64)>,
    started: Instant,
}

/// Shortest round-trip decimal form (floats keep a `.0`); stable across runs.
pub fn num(x: impl Debug) -> String {
    format!("{x:?}")
}

impl RunContext {
    pub fn new(cfg: ExperimentConfig, dir: PathBuf) -> std::io::Result<Self> {
        fs::create_dir_all(&dir)?;
        let config_hash = sha256_hex(&serde_json::to_vec(&cfg).expect("config serialises"));
        let env_spec = json!({"law": cfg.environment.law, "lambda": cfg.lambda, "seed": cfg.environment_seed(), "d": cfg.d});
        let environment_hash = sha256_hex(&serde_json::to_vec(&env_spec).expect("spec serialises"));
        Ok(Self {
            cfg,
            dir,
            config_hash,
            environment_hash,
            files: Vec::new(),
            solve_seconds: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn record_solve(&mut self, what: impl Into<String>, seconds: f64) {
        self.solve_seconds.push((what.into(), seconds));
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> std::io::Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(OutputFile { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    /// CSV with a `# config_hash=` comment line and a header row.
    pub fn write_csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
        let mut s = format!("# config_hash={}\n{}\n", self.config_hash, header.join(","));
        for r in rows {
            debug_assert_eq!(r.len(), header.len());
            s.push_str(&r.join(","));
            s.push('\n');
        }
        self.write_bytes(name, s.as_bytes())
    }

    pub fn write_json(&mut self, name: &str, value: &impl Serialize) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }

    /// Writes `run_manifest.json`.
    pub fn finish(self, subcommand: &str) -> std::io::Result<PathBuf> {
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config_hash: self.config_hash,
            environment_hash: self.environment_hash,
            files: self.files,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            solve_seconds: self.solve_seconds,
            versions: json!({"rcgff": env!("CARGO_PKG_VERSION"), "manifest": 1}),
            config: self.cfg,
        };
        let path = self.dir.join("run_manifest.json");
        fs::write(&path, serde_json::to_vec_pretty(&manifest).map_err(std::io::Error::other)?)?;
        Ok(path)
    }
}

pub fn site_columns(d: usize) -> Vec<String> {
    (0..d).map(|i| format!("x{i}")).collect()
}

pub fn coords(x: &rcgff::lattice::Site) -> Vec<String> {
    x.coords().iter().map(|c| c.to_string()).collect()
}

pub fn resolve_out(cfg: &ExperimentConfig, flag: Option<&Path>, config_path: &Path, sub: &str) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match &cfg.output {
        Some(o) => {
            let base = config_path.parent().unwrap_or(Path::new("."));
            base.join(o)
        }
        None => PathBuf::from(format!("rcgff-out-{sub}")),
    }
}
