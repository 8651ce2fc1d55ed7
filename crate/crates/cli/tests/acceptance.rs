//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Run with `cargo test --release -p cifbm-cli --test acceptance`. The process
//! exits non-zero when any criterion fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cifbm_core::eval::{
    hamming_eval, run_experiment, sample_target, ExperimentSpec, Method, ResultTable, SampleSet,
    Source,
};
use cifbm_core::fisher::{
    fisher_eta, fisher_mixed, fisher_score_oracle, fisher_theta, information_ratios,
    max_trace_check,
};
use cifbm_core::rng::stream;
use cifbm_core::sbm::{self, SbmParams};
use cifbm_core::subset::SubsetIndex;
use cifbm_core::{CoordSystem, Distribution, TrainConfig};
use nalgebra::DMatrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn specs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("specs")
}

fn load_spec(name: &str) -> ExperimentSpec {
    let path = specs_dir().join(name);
    let mut spec = ExperimentSpec::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    spec.resolve_data(&specs_dir());
    spec
}

fn cifbm(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cifbm"))
        .args(args)
        .output()
        .expect("cifbm runs")
}

fn worked_example() -> Distribution {
    // p_{x1 x2 x3}: p000 = 0.05, p100 = 0.2, p010 = 0.1, p110 = 0.05, ...
    Distribution::from_p(vec![0.05, 0.2, 0.1, 0.05, 0.15, 0.1, 0.05, 0.3]).unwrap()
}

fn random_dist(n: usize, seed: u64, i: u64) -> Distribution {
    sample_target(n, &mut stream(seed, &[n as u64, i])).unwrap()
}

/// A random table mixed half-and-half with the uniform one, so every entry
/// is at least `2^-(n+1)`. A central difference with step 1e-5 on `log p`
/// is only accurate to about `(h / p)^2`, which rules out near-empty states.
fn interior_dist(n: usize, seed: u64, i: u64) -> Distribution {
    let d = random_dist(n, seed, i);
    let u = 1.0 / d.len() as f64;
    Distribution::from_p(d.p().iter().map(|v| 0.5 * v + 0.5 * u).collect()).unwrap()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn cell_mean(t: &ResultTable, method: &str, size: usize) -> f64 {
    mean(
        t.method_rows(method)
            .filter(|r| r.sample_size == size && !r.failed)
            .map(|r| r.metric_value),
    )
}

fn worked_example_ratios() -> Outcome {
    let d = worked_example();
    let cases = [
        ("mixed", CoordSystem::Mixed(2), (0.001, 0.06)),
        ("eta", CoordSystem::Eta, (7.58, 94.45)),
        ("theta", CoordSystem::Theta, (12.94, 92.31)),
    ];
    let start = Instant::now();
    let got: Vec<(f64, f64)> = cases
        .iter()
        .map(|(_, sys, _)| information_ratios(&d, *sys, 2).unwrap().as_percent())
        .collect();
    let elapsed = start.elapsed();
    let mut pass = elapsed < Duration::from_millis(1);
    let mut parts = Vec::new();
    for ((name, _, want), have) in cases.iter().zip(&got) {
        let ok = (have.0 - want.0).abs() <= 0.005 && (have.1 - want.1).abs() <= 0.005;
        pass &= ok;
        parts.push(format!(
            "{name} ({:.4}%, {:.4}%) vs ({}%, {}%) {}",
            have.0,
            have.1,
            want.0,
            want.1,
            if ok { "ok" } else { "off" }
        ));
    }
    outcome(pass, format!("{}; {:?}", parts.join("; "), elapsed))
}

fn eta_fisher_symbolic_entry() -> Outcome {
    let i = SubsetIndex::from_vars(&[1, 2]);
    let j = SubsetIndex::from_vars(&[2, 3]);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let d = random_dist(3, 101, k);
        let want = 1.0 / d.prob(0b000) + 1.0 / d.prob(0b010);
        let have = fisher_eta(&d).get(i, j).unwrap();
        worst = worst.max((have - want).abs() / want.abs().max(1.0));
    }
    outcome(
        worst <= 1e-12,
        format!("max deviation {worst:.2e} over 100 tables"),
    )
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let (mut dev, mut inv): (f64, f64) = (0.0, 0.0);
    for n in 2..=5 {
        for k in 0..20 {
            let d = interior_dist(n, 102, k);
            let gt = fisher_theta(&d);
            let ge = fisher_eta(&d);
            dev = dev
                .max(gt.relative_deviation(&fisher_score_oracle(&d, CoordSystem::Theta).unwrap()));
            dev =
                dev.max(ge.relative_deviation(&fisher_score_oracle(&d, CoordSystem::Eta).unwrap()));
            let id = DMatrix::<f64>::identity(gt.dim(), gt.dim());
            inv = inv.max((&gt.m * &ge.m - id).abs().max());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        dev <= 1e-6 && inv <= 1e-8 && elapsed < Duration::from_secs(30),
        format!("oracle deviation {dev:.2e}, |G_theta G_eta - I| {inv:.2e}, {elapsed:?}"),
    )
}

fn mixed_fisher_structure() -> Outcome {
    let (mut min_a, mut max_b, mut off): (f64, f64, f64) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let mut traces_ok = true;
    let mut cases = 0;
    for k in 0..20u64 {
        let n = 2 + (k as usize % 5);
        let d = random_dist(n, 103, k);
        for l in 1..=n {
            let g = fisher_mixed(&d, l).unwrap();
            let kept = g.labels.iter().filter(|s| s.order() <= l).count();
            for (a, v) in g.diag().into_iter().enumerate() {
                if a < kept {
                    min_a = min_a.min(v);
                } else {
                    max_b = max_b.max(v);
                }
            }
            for a in 0..kept {
                for b in kept..g.dim() {
                    off = off.max(g.m[(a, b)].abs()).max(g.m[(b, a)].abs());
                }
            }
            traces_ok &= max_trace_check(&d, l, 1000, &mut stream(104, &[k, l as u64])).unwrap();
            cases += 1;
        }
    }
    outcome(
        min_a >= 1.0 - 1e-10 && max_b <= 1.0 + 1e-10 && off == 0.0 && traces_ok,
        format!("{cases} (d, l) cases: min diag(A) {min_a:.4}, max diag(B) {max_b:.4}, off-block {off:e}, max-trace {traces_ok}"),
    )
}

fn round_trips_and_legendre() -> Outcome {
    let start = Instant::now();
    let (mut eta_rt, mut theta_rt, mut mixed_rt, mut legendre): (f64, f64, f64, f64) =
        (0.0, 0.0, 0.0, 0.0);
    for k in 0..200u64 {
        let n = 1 + (k as usize % 10);
        let d = random_dist(n, 105, k);
        eta_rt = eta_rt.max(d.eta().to_distribution().unwrap().max_abs_diff(&d));
        theta_rt = theta_rt.max(d.theta().to_distribution().unwrap().max_abs_diff(&d));
        let l = 1 + (k as usize / 10) % n;
        mixed_rt = mixed_rt.max(
            d.mixed(l)
                .unwrap()
                .to_distribution()
                .unwrap()
                .max_abs_diff(&d),
        );
        let dot: f64 = d
            .theta()
            .as_slice()
            .iter()
            .zip(d.eta().as_slice())
            .skip(1)
            .map(|(t, e)| t * e)
            .sum();
        legendre = legendre.max((d.theta().psi() + d.phi() - dot).abs());
    }
    let elapsed = start.elapsed();
    outcome(
        eta_rt <= 1e-12 && theta_rt <= 1e-10 && mixed_rt <= 1e-8 && legendre <= 1e-10 && elapsed < Duration::from_secs(60),
        format!("p-eta {eta_rt:.1e}, p-theta {theta_rt:.1e}, mixed {mixed_rt:.1e}, legendre {legendre:.1e}, {elapsed:?}"),
    )
}

fn sbm_ml_moment_matching() -> Outcome {
    let target = random_dist(6, 106, 0);
    let data = cifbm_core::eval::draw_samples(&target, 20_000, &mut stream(106, &[1]));
    let cfg = TrainConfig::new(0.05, 5000).with_seed(7);
    let run = sbm::train_ml(&data, &cfg, None).unwrap();
    let model = run.params.stationary().unwrap();
    let n = data.n();
    let m1 = data.first_moments();
    let m2 = data.second_moments();
    let eta = model.eta();
    let mut gap: f64 = 0.0;
    for i in 0..n {
        gap = gap.max((eta.get(SubsetIndex::from_vars(&[i + 1])) - m1[i]).abs());
        for j in (i + 1)..n {
            gap = gap.max((eta.get(SubsetIndex::from_vars(&[i + 1, j + 1])) - m2[i * n + j]).abs());
        }
    }
    outcome(
        gap < 1e-4,
        format!("max moment gap {gap:.2e} after {} epochs", run.epochs),
    )
}

fn ip_monotone_on_bundled_specs() -> Outcome {
    let mut runs = 0;
    let mut worst: f64 = 0.0;
    let mut missing = 0;
    for entry in std::fs::read_dir(specs_dir()).unwrap() {
        let path = entry.unwrap().path();
        let mut spec = load_spec(path.file_name().unwrap().to_str().unwrap());
        spec.methods.retain(|m| {
            m.method == Method::Ip && m.config.gamma_h == cifbm_core::GammaHMode::Exact
        });
        if spec.methods.is_empty() {
            continue;
        }
        let table = run_experiment(&spec, 1).unwrap();
        for note in &table.notes {
            runs += 1;
            match note.ip_max_violation {
                Some(v) => worst = worst.max(v),
                None => missing += 1,
            }
        }
    }
    outcome(
        runs > 0 && missing == 0 && worst <= 1e-6,
        format!(
            "{runs} exact-mode IP runs, max violation {worst:.2e}, {missing} without divergences"
        ),
    )
}

fn cd_cif_directional() -> Outcome {
    let start = Instant::now();
    let mut spec = load_spec("paper_sbm.spec");
    spec.sample_sizes = vec![100];
    spec.n_targets = 20;
    spec.n_repeats = 5;
    let table = run_experiment(&spec, 0).unwrap();
    let (cif, cd, ml) = (
        cell_mean(&table, "cdcif", 100),
        cell_mean(&table, "cd1", 100),
        cell_mean(&table, "ml", 100),
    );
    let r_is_auto = spec
        .methods
        .iter()
        .any(|m| m.method == Method::Cdcif && m.config.cif_alpha == Some(35.0));

    // r = 0 keeps every weight, so the trajectory must equal CD-1 exactly.
    let target = random_dist(10, 107, 0);
    let data = cifbm_core::eval::draw_samples(&target, 100, &mut stream(107, &[1]));
    let mut cfg = TrainConfig::new(0.1, 300).with_seed(11);
    let cd1 = sbm::train_cd1(&data, &cfg, Some(&target)).unwrap();
    cfg.cif_r = Some(0.0);
    let cif0 = sbm::train_cd_cif(&data, &cfg, Some(&target)).unwrap();
    let identical = cd1.params == cif0.params && cd1.trace == cif0.trace;
    let elapsed = start.elapsed();
    outcome(
        r_is_auto && cif <= 0.95 * cd && cif <= 0.95 * ml && identical && elapsed < Duration::from_secs(15 * 60),
        format!(
            "mean KL cdcif {cif:.4}, cd1 {cd:.4} ({:.3}x), ml {ml:.4} ({:.3}x); r=0 identical {identical}; {elapsed:?}",
            cif / cd,
            cif / ml
        ),
    )
}

fn rbm_spec(sizes: Vec<usize>, targets: usize, repeats: usize) -> ExperimentSpec {
    let mut spec = load_spec("paper_rbm.spec");
    spec.sample_sizes = sizes;
    spec.n_targets = targets;
    spec.n_repeats = repeats;
    spec.methods
        .retain(|m| matches!(m.method, Method::Cd1 | Method::Ip));
    spec
}

fn ip_beats_cd1_at_large_n() -> Outcome {
    let start = Instant::now();
    let table = run_experiment(&rbm_spec(vec![50_000], 10, 1), 0).unwrap();
    let (cd, ip, best) = (
        cell_mean(&table, "cd1", 50_000),
        cell_mean(&table, "ip", 50_000),
        cell_mean(&table, "ip_best", 50_000),
    );
    let converge: Vec<_> = table.method_rows("ip").collect();
    let best_rows: Vec<_> = table.method_rows("ip_best").collect();
    let best_le = converge.len() == best_rows.len()
        && converge
            .iter()
            .zip(&best_rows)
            .all(|(c, b)| !c.failed && !b.failed && b.metric_value <= c.metric_value);
    let elapsed = start.elapsed();
    outcome(
        ip <= 0.92 * cd && best <= 0.85 * cd && best_le && elapsed < Duration::from_secs(30 * 60),
        format!(
            "mean KL cd1 {cd:.4}, ip {ip:.4} ({:.3}x), best ip {best:.4} ({:.3}x); best <= converge in every trial {best_le}; {elapsed:?}",
            ip / cd,
            best / cd
        ),
    )
}

fn ip_parity_at_small_n() -> Outcome {
    let table = run_experiment(&rbm_spec(vec![50, 100], 20, 5), 0).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for size in [50, 100] {
        let (cd, ip) = (
            cell_mean(&table, "cd1", size),
            cell_mean(&table, "ip", size),
        );
        let rel = (ip - cd).abs() / cd;
        pass &= rel <= 0.10;
        parts.push(format!(
            "N={size}: cd1 {cd:.4}, ip {ip:.4}, rel diff {:.1}%",
            100.0 * rel
        ));
    }
    outcome(pass, parts.join("; "))
}

fn deterministic_reruns() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    let mut names: Vec<PathBuf> = std::fs::read_dir(specs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    names.sort();
    for spec in names {
        let name = spec.file_stem().unwrap().to_string_lossy().to_string();
        // The full paper_* grids take hours; their first target and repeat cover
        // every method and sample size.
        let caps: &[&str] = if name.starts_with("paper_") {
            &["--targets", "1", "--repeats", "1"]
        } else {
            &[]
        };
        let mut csvs = Vec::new();
        for jobs in ["1", "3"] {
            let out = tmp.path().join(format!("{name}-{jobs}"));
            let mut args = vec![
                "experiment",
                "--spec",
                spec.to_str().unwrap(),
                "--jobs",
                jobs,
                "--json",
                "--out",
                out.to_str().unwrap(),
            ];
            args.extend_from_slice(caps);
            let status = cifbm(&args).status;
            pass &= status.success();
            csvs.push(std::fs::read(out.join("results.csv")).unwrap_or_default());
        }
        let same = !csvs[0].is_empty() && csvs[0] == csvs[1];
        pass &= same;
        parts.push(format!(
            "{name} {}",
            if same { "identical" } else { "DIFFERS" }
        ));
    }
    outcome(pass, parts.join(", "))
}

fn corpus_smoke() -> Outcome {
    let start = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let raw = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/corpus100.txt");
    let samples = tmp.path().join("corpus.samples");
    let ingest = cifbm(&[
        "ingest",
        "--input",
        raw.to_str().unwrap(),
        "--format",
        "lines01",
        "--out",
        samples.to_str().unwrap(),
    ]);
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"learning_rate": 0.2, "max_epochs": 200, "trace_every": 50, "seed": 3}"#,
    )
    .unwrap();
    let train_out = tmp.path().join("train");
    let train = cifbm(&[
        "train",
        "--model",
        "sbm",
        "--method",
        "cd1",
        "--data",
        samples.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        train_out.to_str().unwrap(),
    ]);
    if !ingest.status.success() || !train.status.success() {
        return outcome(
            false,
            format!("ingest {:?}, train {:?}", ingest.status, train.status),
        );
    }
    let data = SampleSet::from_lines01(
        &std::fs::read_to_string(&samples).unwrap(),
        Source::File {
            path: samples.display().to_string(),
        },
    )
    .unwrap();
    let params: SbmParams =
        serde_json::from_str(&std::fs::read_to_string(train_out.join("params.json")).unwrap())
            .unwrap();
    let generated = params
        .sample(data.len(), 200, 5, &mut stream(108, &[]))
        .unwrap();
    let d_model = hamming_eval(&data, &generated).unwrap();
    let uniform = SampleSet::from_flat(
        100,
        (0..data.len() * 100)
            .map(|k| (cifbm_core::rng::derive_seed(109, &[k as u64]) & 1) as u8)
            .collect(),
        Default::default(),
    )
    .unwrap();
    let d_uniform = hamming_eval(&data, &uniform).unwrap();
    let exp_out = tmp.path().join("exp");
    let exp = cifbm(&[
        "experiment",
        "--spec",
        specs_dir().join("corpus_smoke.spec").to_str().unwrap(),
        "--out",
        exp_out.to_str().unwrap(),
    ]);
    let elapsed = start.elapsed();
    outcome(
        exp.status.success() && d_model < d_uniform && elapsed < Duration::from_secs(5 * 60),
        format!(
            "{} rows x {} terms; D_ham model {d_model:.3} vs uniform {d_uniform:.3}; experiment {:?}; {elapsed:?}",
            data.len(),
            data.n(),
            exp.status.code()
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Outcome)> = vec![
        ("worked-example information ratios", worked_example_ratios),
        ("eta Fisher symbolic entry", eta_fisher_symbolic_entry),
        ("closed forms match score oracle", oracle_equivalence),
        ("mixed Fisher bounds and max trace", mixed_fisher_structure),
        (
            "round trips and Legendre identity",
            round_trips_and_legendre,
        ),
        (
            "SBM ML matches first and second moments",
            sbm_ml_moment_matching,
        ),
        (
            "IP divergence chain is monotone",
            ip_monotone_on_bundled_specs,
        ),
        ("CD-CIF beats CD-1 and ML at N=100", cd_cif_directional),
        ("IP beats CD-1 at N=50000", ip_beats_cd1_at_large_n),
        ("IP matches CD-1 at N in {50, 100}", ip_parity_at_small_n),
        ("bundled specs rerun bit-exactly", deterministic_reruns),
        ("corpus ingest, train and Hamming smoke", corpus_smoke),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {}/{ran} passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
