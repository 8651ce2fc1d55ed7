use std::path::Path;

use anyhow::anyhow;
use cifbm_core::{rbm, sbm, Distribution, TrainConfig};
use serde_json::json;

use crate::io::{self, RunManifest};
use crate::{input_error, Cli, CmdResult, Failure, MethodArg, ModelArg, EXIT_DIVERGED};

pub fn run(
    cli: &Cli,
    model: ModelArg,
    method: MethodArg,
    data: &Path,
    config: &Path,
    target: Option<&Path>,
) -> CmdResult {
    let mut cfg = TrainConfig::from_json(&io::read_text(config)?).map_err(|e| {
        Failure::invalid(anyhow::Error::new(e).context(format!("parsing {}", config.display())))
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let samples = io::read_samples(data)?;
    let target: Option<Distribution> = match target {
        Some(p) => Some(serde_json::from_str(&io::read_text(p)?).map_err(Failure::invalid)?),
        None => None,
    };
    let dir = io::out_dir(cli, "train_out");
    let mut manifest = RunManifest::start("train", serde_json::Value::Null, Some(cfg.seed));
    let mut details = json!({
        "model": format!("{model:?}").to_lowercase(),
        "method": format!("{method:?}").to_lowercase(),
        "data": data,
        "target": target.is_some(),
        "samples": samples.len(),
        "n": samples.n(),
    });
    let params_path = dir.join("params.json");
    let trace_path = dir.join("trace.csv");
    let mut diverged_at = None;
    let summary;
    match (model, method) {
        (ModelArg::Sbm, MethodArg::Ip) | (ModelArg::Rbm, MethodArg::Cdcif) => {
            return Err(Failure::invalid(anyhow!(
                "method {method:?} does not apply to model {model:?}"
            )));
        }
        (ModelArg::Sbm, _) => {
            let run = match method {
                MethodArg::Ml => sbm::train_ml(&samples, &cfg, target.as_ref()),
                MethodArg::Cd1 => sbm::train_cd1(&samples, &cfg, target.as_ref()),
                _ => sbm::train_cd_cif(&samples, &cfg, target.as_ref()),
            }
            .map_err(input_error)?;
            if let Some(mask) = &run.mask {
                cfg.cif_r = Some(mask.r);
                cfg.cif_alpha = None;
                details["cif"] = json!({
                    "r": mask.r,
                    "tau": mask.tau,
                    "total_fisher": mask.total,
                    "kept_weights": mask.kept_count(),
                });
            }
            io::write_json(&params_path, &run.params)?;
            io::write_csv(&trace_path, &run.trace)?;
            diverged_at = run.diverged_at;
            summary =
                json!({ "epochs": run.epochs, "final_kl_to_target": run.final_kl_to_target() });
        }
        (ModelArg::Rbm, MethodArg::Ip) => {
            let run = rbm::train_ip(&samples, None, &cfg, target.as_ref()).map_err(input_error)?;
            io::write_json(&params_path, &run.params)?;
            io::write_csv(&trace_path, &run.trace)?;
            let violation = run.max_monotonicity_violation();
            let mut s =
                json!({ "iterations": run.trace.len(), "max_monotonicity_violation": violation });
            if let Some((k, best)) = rbm::best_ip_select(&run) {
                let best_path = dir.join("best_params.json");
                io::write_json(&best_path, best)?;
                manifest.outputs.push(best_path);
                s["best_iteration"] = json!(run.trace[k].iteration);
            }
            if let Some(last) = run.trace.last() {
                s["final_kl_to_target"] = json!(last.kl_marginal_to_target);
            }
            summary = s;
        }
        (ModelArg::Rbm, _) => {
            let run = match method {
                MethodArg::Ml => rbm::train_ml(&samples, &cfg, target.as_ref()),
                _ => rbm::train_cd1(&samples, &cfg, target.as_ref()),
            }
            .map_err(input_error)?;
            io::write_json(&params_path, &run.params)?;
            io::write_csv(&trace_path, &run.trace)?;
            diverged_at = run.diverged_at;
            let last = run.trace.last().and_then(|r| r.kl_to_target);
            summary = json!({ "epochs": run.epochs, "final_kl_to_target": last });
        }
    }
    details["result"] = summary.clone();
    if let Some(epoch) = diverged_at {
        details["diverged_at"] = json!(epoch);
    }
    manifest.config = serde_json::to_value(&cfg).map_err(Failure::other)?;
    manifest.details = details;
    manifest.outputs.insert(0, trace_path);
    manifest.outputs.insert(0, params_path);
    manifest.finish(&dir.join(io::MANIFEST))?;

    let mut report = summary;
    report["out"] = json!(dir);
    if let Some(epoch) = diverged_at {
        report["diverged_at"] = json!(epoch);
    }
    if cli.json {
        io::print_json(&report);
    } else {
        println!("wrote {}", dir.display());
        for (k, v) in report.as_object().expect("object") {
            println!("{k}: {v}");
        }
    }
    match diverged_at {
        Some(epoch) => {
            eprintln!("error: training diverged at epoch {epoch}");
            Ok(EXIT_DIVERGED)
        }
        None => Ok(0),
    }
}
