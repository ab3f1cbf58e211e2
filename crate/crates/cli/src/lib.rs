//! Experiment runner: declarative JSON configs, one subcommand per module,
//! CSV/JSON/binary outputs and a run manifest with content hashes.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::Path;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use experiments::{experiment_registry, Experiment};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Core(#[from] rcgff::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// 2 schema, 3 solver, 4 geometry, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use rcgff::Error as E;
        match self {
            RunError::Schema(_) => 2,
            RunError::Core(e) => match e {
                E::InvalidParameter(_) | E::UnknownStrategy { .. } | E::Format(_) | E::Json(_) => 2,
                E::Solver(_) => 3,
                E::Geometry(_) | E::MissingEdge(_) | E::WindowEdge(_) => 4,
                E::Io(_) => 1,
            },
            RunError::Io(_) => 1,
        }
    }
}

pub struct RunOptions<'a> {
    pub config: &'a Path,
    pub seed_override: Option<u64>,
    pub out: Option<&'a Path>,
}

/// Loads, validates and runs `subcommand`; returns the manifest path.
pub fn run(subcommand: &str, opts: &RunOptions) -> Result<std::path::PathBuf, RunError> {
    let mut cfg = ExperimentConfig::load(opts.config).map_err(RunError::Schema)?;
    if let Some(s) = opts.seed_override {
        cfg.master_seed = s;
    }
    let registry = experiment_registry();
    let exp = registry.build(&rcgff::registry::NamedSpec::new(subcommand, serde_json::Value::Null))?;
    exp.check(&cfg)?;
    let diags = cfg.diagnostics();
    if let Some(first) = diags.first() {
        return Err(classify_diagnostic(first));
    }
    let dir = output::resolve_out(&cfg, opts.out, opts.config, subcommand);
    let mut ctx = output::RunContext::new(cfg, dir)?;
    exp.run(&mut ctx)?;
    Ok(ctx.finish(subcommand)?)
}

/// Nesting and padding problems are geometry errors; the rest are schema errors.
fn classify_diagnostic(d: &str) -> RunError {
    let geometric = ["⊄", "must lie", "does not fit", "padding", "empty", "inside"];
    if geometric.iter().any(|g| d.contains(g)) {
        RunError::Core(rcgff::Error::Geometry(d.to_string()))
    } else {
        RunError::Schema(d.to_string())
    }
}

/// Diagnostics for `validate`; a config that does not parse yields one line.
pub fn validate(config: &Path) -> Vec<String> {
    match ExperimentConfig::load(config) {
        Ok(cfg) => cfg.diagnostics(),
        Err(e) => vec![e],
    }
}
