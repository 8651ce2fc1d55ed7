//! File helpers and the run manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, Utc};
use cifbm_core::eval::{sample_target, SampleSet, Source};
use cifbm_core::rng::stream;
use cifbm_core::Distribution;
use serde::Serialize;

use crate::{input_error, Cli, Failure, Input};

pub const MANIFEST: &str = "manifest.json";

pub fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::invalid)
}

pub fn read_distribution(cli: &Cli, input: &Input) -> Result<Distribution, Failure> {
    if let Some(n) = input.random {
        let mut rng = stream(cli.seed.unwrap_or(0), &[]);
        return sample_target(n, &mut rng).map_err(input_error);
    }
    let path = input.input.as_deref().expect("clap requires an input");
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::invalid)
}

pub fn read_samples(path: &Path) -> Result<SampleSet, Failure> {
    let text = read_text(path)?;
    SampleSet::from_lines01(
        &text,
        Source::File {
            path: path.display().to_string(),
        },
    )
    .map_err(|e| {
        Failure::invalid(anyhow::Error::new(e).context(format!("parsing {}", path.display())))
    })
}

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> anyhow::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.flush()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    write_atomic(path, &w.into_inner().map_err(|e| e.into_error())?)
}

/// Record of one invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub master_seed: Option<u64>,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn start(command: &str, config: serde_json::Value, master_seed: Option<u64>) -> Self {
        let now = Utc::now();
        RunManifest {
            command: command.into(),
            argv: std::env::args().collect(),
            config,
            master_seed,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            started_at: now,
            finished_at: now,
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn finish(mut self, path: &Path) -> anyhow::Result<()> {
        self.finished_at = Utc::now();
        write_json(path, &self)
    }
}

/// Output directory of commands that write several files.
pub fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

pub fn print_json(value: &serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(value).expect("JSON values serialize")
    );
}
