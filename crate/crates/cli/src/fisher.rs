use cifbm_core::fisher::{self, fisher_score_oracle, information_ratios};
use cifbm_core::CoordSystem;
use serde_json::json;

use crate::coords::{require_order, subset_label};
use crate::io::{self, RunManifest};
use crate::{input_error, Cli, CmdResult, Failure, Input, System};

pub fn run(
    cli: &Cli,
    input: &Input,
    system: System,
    l: Option<usize>,
    ratios: bool,
    oracle: bool,
) -> CmdResult {
    let d = io::read_distribution(cli, input)?;
    let n = d.n();
    let coord = match system {
        System::P => {
            return Err(Failure::invalid(anyhow::anyhow!(
                "Fisher matrices are defined for eta, theta and mixed"
            )))
        }
        System::Eta => CoordSystem::Eta,
        System::Theta => CoordSystem::Theta,
        System::Mixed => CoordSystem::Mixed(require_order(l, n)?),
    };
    let mut doc = if ratios {
        let l = require_order(l, n)?;
        let r = information_ratios(&d, coord, l).map_err(input_error)?;
        let (loss, tail) = r.as_percent();
        if !cli.json {
            println!("{loss:.4}% {tail:.4}%");
        }
        json!({
            "system": coord.to_string(),
            "l": l,
            "loss_ratio_percent": loss,
            "tail_to_min_kept_percent": tail,
        })
    } else {
        let g = fisher::fisher(&d, coord).map_err(input_error)?;
        if !cli.json {
            println!("# system={} dim={}", coord, g.dim());
            let labels: Vec<String> = g.labels.iter().map(|&s| subset_label(s)).collect();
            println!(
                "{:>12} {}",
                "",
                labels
                    .iter()
                    .map(|s| format!("{s:>12}"))
                    .collect::<String>()
            );
            for (a, label) in labels.iter().enumerate() {
                let row: String = (0..g.dim())
                    .map(|b| format!("{:>12.6}", g.m[(a, b)]))
                    .collect();
                println!("{label:>12} {row}");
            }
        }
        serde_json::to_value(&g).map_err(Failure::other)?
    };
    if oracle {
        let g = fisher::fisher(&d, coord).map_err(input_error)?;
        let o = fisher_score_oracle(&d, coord).map_err(input_error)?;
        let dev = g.relative_deviation(&o);
        if !cli.json {
            println!("oracle max relative deviation {dev:.3e}");
        }
        doc["oracle_max_deviation"] = json!(dev);
    }
    if cli.json {
        io::print_json(&doc);
    }
    if let Some(dir) = &cli.out {
        let path = dir.join("fisher.json");
        io::write_json(&path, &doc)?;
        let mut m = RunManifest::start(
            "fisher",
            json!({ "system": coord.to_string(), "l": l, "ratios": ratios, "oracle": oracle, "random": input.random }),
            cli.seed,
        );
        m.outputs.push(path);
        m.finish(&dir.join(io::MANIFEST))?;
    }
    Ok(0)
}
