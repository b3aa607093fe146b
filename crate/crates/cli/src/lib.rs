//! Experiment runner for the `dynprice` command.
//!
//! A run resolves an [`ExperimentConfig`] (file plus flag overrides), evaluates
//! one job over its sweep points and writes a CSV table together with a TOML
//! manifest that reproduces the run when fed back as `--config`.

pub mod config;
pub mod error;
pub mod format;
pub mod jobs;

use std::path::{Path, PathBuf};

pub use config::{Axis, ExperimentConfig, Job, Overrides, Sweep, TypesSpec};
pub use error::{CliError, Result};
pub use jobs::{run, RunOutput};

/// Paths a run writes, derived from the main table path.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputPaths {
    pub tables: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn sibling(main: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = main
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    let name = if suffix.is_empty() {
        format!("{stem}.{ext}")
    } else {
        format!("{stem}.{suffix}.{ext}")
    };
    main.with_file_name(name)
}

/// Writes every table and the manifest.
pub fn write_outputs(config: &ExperimentConfig, output: &RunOutput) -> Result<OutputPaths> {
    let main = PathBuf::from(config.output_path());
    let mut tables = Vec::with_capacity(output.tables.len());
    for (suffix, table) in &output.tables {
        let path = if suffix.is_empty() {
            main.clone()
        } else {
            sibling(&main, suffix, "csv")
        };
        table.write(&path)?;
        tables.push(path);
    }
    let manifest = sibling(&main, "manifest", "toml");
    format::write_file(&manifest, &config.to_toml()?)?;
    Ok(OutputPaths { tables, manifest })
}

/// Resolves, runs and writes one job.
pub fn execute(
    config: ExperimentConfig,
    job: Job,
    flags: &Overrides,
) -> Result<(OutputPaths, Vec<String>)> {
    let config = config.resolve(job, flags)?;
    let output = run(&config)?;
    let paths = write_outputs(&config, &output)?;
    Ok((paths, output.warnings))
}
