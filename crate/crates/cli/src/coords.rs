use cifbm_core::subset::{self, SubsetIndex};
use cifbm_core::Distribution;
use serde_json::json;

use crate::io::{self, RunManifest};
use crate::{input_error, Cli, CmdResult, Failure, Input, System};

/// `x_1 x_2 ... x_n` as a 0/1 string.
pub fn state_label(mask: usize, n: usize) -> String {
    (0..n)
        .map(|i| if mask >> i & 1 == 1 { '1' } else { '0' })
        .collect()
}

/// `{1,2}` style subset label.
pub fn subset_label(s: SubsetIndex) -> String {
    let vars: Vec<String> = s.vars().map(|v| v.to_string()).collect();
    format!("{{{}}}", vars.join(","))
}

pub fn require_order(l: Option<usize>, n: usize) -> Result<usize, Failure> {
    match l {
        Some(l) if (1..=n).contains(&l) => Ok(l),
        Some(l) => Err(Failure::invalid(anyhow::anyhow!(
            "--l {l} is outside 1..={n}"
        ))),
        None => Err(Failure::invalid(anyhow::anyhow!("--l is required here"))),
    }
}

/// `(label, kind, value)` entries of `d` in the requested system.
fn entries(
    d: &Distribution,
    system: System,
    l: Option<usize>,
) -> Result<Vec<(String, &'static str, f64)>, Failure> {
    let n = d.n();
    Ok(match system {
        System::P => d
            .p()
            .iter()
            .enumerate()
            .map(|(m, &v)| (state_label(m, n), "p", v))
            .collect(),
        System::Eta => subset::nonempty(n)
            .into_iter()
            .map(|s| (subset_label(s), "eta", d.eta().get(s)))
            .collect(),
        System::Theta => subset::nonempty(n)
            .into_iter()
            .map(|s| (subset_label(s), "theta", d.theta().get(s)))
            .collect(),
        System::Mixed => {
            let l = require_order(l, n)?;
            let mixed = d.mixed(l).map_err(input_error)?;
            subset::by_order(n)
                .into_iter()
                .map(|s| {
                    let kind = if s.order() <= l { "eta" } else { "theta" };
                    (subset_label(s), kind, mixed.get(s))
                })
                .collect()
        }
    })
}

pub fn run(cli: &Cli, input: &Input, system: System, l: Option<usize>) -> CmdResult {
    let d = io::read_distribution(cli, input)?;
    let entries = entries(&d, system, l)?;
    let system_name = match system {
        System::P => "p".to_string(),
        System::Eta => "eta".into(),
        System::Theta => "theta".into(),
        System::Mixed => format!("mixed({})", l.unwrap_or(0)),
    };
    let mut doc = json!({
        "n": d.n(),
        "system": system_name,
        "labels": entries.iter().map(|e| &e.0).collect::<Vec<_>>(),
        "kinds": entries.iter().map(|e| e.1).collect::<Vec<_>>(),
        "values": entries.iter().map(|e| e.2).collect::<Vec<_>>(),
    });
    if system == System::Theta {
        doc["psi"] = json!(d.theta().psi());
    }
    if cli.json {
        io::print_json(&doc);
    } else {
        println!("# n={} system={}", d.n(), system_name);
        for (label, kind, v) in &entries {
            println!("{kind:<5} {label:<12} {v:.10}");
        }
    }
    if let Some(dir) = &cli.out {
        let path = dir.join("coords.json");
        io::write_json(&path, &doc)?;
        let mut m = RunManifest::start(
            "coords",
            json!({ "system": system_name, "l": l, "random": input.random }),
            cli.seed,
        );
        m.outputs.push(path);
        m.finish(&dir.join(io::MANIFEST))?;
    }
    Ok(0)
}
