use std::path::Path;

use anyhow::anyhow;
use cifbm_core::eval::{run_experiment, ExperimentSpec};
use serde_json::json;

use crate::io::{self, RunManifest};
use crate::{input_error, Cli, CmdResult, Failure, EXIT_ALL_FAILED};

pub fn load_spec(path: &Path) -> Result<ExperimentSpec, Failure> {
    let mut spec = ExperimentSpec::from_json(&io::read_text(path)?).map_err(|e| {
        Failure::invalid(anyhow::Error::new(e).context(format!("parsing {}", path.display())))
    })?;
    spec.resolve_data(path.parent().unwrap_or(Path::new(".")));
    Ok(spec)
}

pub fn run(
    cli: &Cli,
    spec_path: &Path,
    targets: Option<usize>,
    repeats: Option<usize>,
) -> CmdResult {
    let mut spec = load_spec(spec_path)?;
    if let Some(seed) = cli.seed {
        spec.master_seed = seed;
    }
    for (cap, field) in [
        (targets, &mut spec.n_targets),
        (repeats, &mut spec.n_repeats),
    ] {
        match cap {
            Some(0) => {
                return Err(Failure::invalid(anyhow!(
                    "--targets and --repeats must be ≥ 1"
                )))
            }
            Some(k) => *field = (*field).min(k),
            None => {}
        }
    }
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let dir = io::out_dir(cli, "experiment_out");
    let mut manifest = RunManifest::start(
        "experiment",
        serde_json::to_value(&spec).map_err(Failure::other)?,
        Some(spec.master_seed),
    );
    let table = run_experiment(&spec, jobs).map_err(input_error)?;

    let csv_path = dir.join("results.csv");
    let summary_path = dir.join("summary.json");
    io::write_atomic(&csv_path, table.to_csv().map_err(input_error)?.as_bytes())?;
    let summary = table.summary_json();
    io::write_json(&summary_path, &summary)?;
    manifest.outputs = vec![csv_path, summary_path];
    manifest.details = json!({ "spec_path": spec_path, "jobs": jobs, "trials": table.rows.len(), "failures": table.failures() });
    manifest.finish(&dir.join(io::MANIFEST))?;

    if cli.json {
        io::print_json(&summary);
    } else {
        println!(
            "{:<12} {:>7} {:>8} {:>12} {:>10} {:>6} {:>8}",
            "method", "N", "metric", "mean", "stderr", "count", "failed"
        );
        for c in table.summary() {
            println!(
                "{:<12} {:>7} {:>8} {:>12.6} {:>10.6} {:>6} {:>8}",
                c.method, c.sample_size, c.metric_name, c.mean, c.stderr, c.count, c.failures
            );
        }
        println!("wrote {}", dir.display());
    }
    if table.all_failed() {
        eprintln!("error: every trial failed");
        return Ok(EXIT_ALL_FAILED);
    }
    Ok(0)
}
