use std::path::{Path, PathBuf};

use anyhow::anyhow;
use cifbm_core::eval::{SampleSet, Source};
use serde_json::json;

use crate::io::{self, RunManifest};
use crate::{Cli, CmdResult, Failure, Format};

pub fn run(cli: &Cli, input: &Path, format: Format) -> CmdResult {
    let text = io::read_text(input)?;
    let source = Source::File {
        path: input.display().to_string(),
    };
    let mut set = match format {
        Format::Lines01 => SampleSet::from_lines01(&text, source.clone()),
        Format::Csv => SampleSet::from_csv(&text, source.clone()),
    }
    .map_err(|e| {
        Failure::invalid(anyhow::Error::new(e).context(format!("parsing {}", input.display())))
    })?;
    set.meta.source = source;
    if set.is_empty() {
        return Err(Failure::invalid(anyhow!(
            "{} holds no rows",
            input.display()
        )));
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| input.with_extension("samples"));
    io::write_atomic(&out, set.to_lines01().as_bytes())?;
    let manifest_path = PathBuf::from(format!("{}.manifest.json", out.display()));
    let mut m = RunManifest::start(
        "ingest",
        json!({ "input": input, "format": format!("{format:?}").to_lowercase() }),
        None,
    );
    m.outputs.push(out.clone());
    m.details = json!({ "n": set.n(), "N": set.len() });
    m.finish(&manifest_path)?;
    let report = json!({ "n": set.n(), "N": set.len(), "out": out });
    if cli.json {
        io::print_json(&report);
    } else {
        println!(
            "ingested {} rows of {} variables into {}",
            set.len(),
            set.n(),
            out.display()
        );
    }
    Ok(0)
}
