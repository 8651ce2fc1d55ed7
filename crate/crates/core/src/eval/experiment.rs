//! Grid runner: targets × sample sizes × repeats × methods.
//!
//! Every trial draws its data and trainer seeds from the master seed and the
//! trial key, so results do not depend on the number of worker threads.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};
use crate::eval::{draw_samples, hamming_eval, sample_target, SampleSet};
use crate::rbm;
use crate::rng::{derive_seed, stream, TrialRng};
use crate::sbm;
use crate::simplex::{kl_divergence, Distribution};

const TAG_TARGET: u64 = 1;
const TAG_SAMPLE: u64 = 2;
const TAG_TRAIN: u64 = 3;
const TAG_EVAL: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SbmDensity,
    RbmDensity,
    CorpusHamming,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::SbmDensity => "sbm_density",
            ExperimentKind::RbmDensity => "rbm_density",
            ExperimentKind::CorpusHamming => "corpus_hamming",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Sbm,
    Rbm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ml,
    Cd1,
    Cdcif,
    Ip,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ml => "ml",
            Method::Cd1 => "cd1",
            Method::Cdcif => "cdcif",
            Method::Ip => "ip",
        }
    }
}

/// One trainer in a grid. `label` names its rows (defaults to the method).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub config: TrainConfig,
}

impl MethodSpec {
    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(self.method.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_h: Option<usize>,
    pub sample_sizes: Vec<usize>,
    pub n_targets: usize,
    pub n_repeats: usize,
    pub methods: Vec<MethodSpec>,
    #[serde(default)]
    pub master_seed: u64,
    /// Corpus kind: model family to train.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<Model>,
    /// Corpus kind: sample file in `lines01` format.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Corpus kind: Gibbs burn-in and thinning when generating rows.
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
}

fn default_burn_in() -> usize {
    200
}

fn default_thin() -> usize {
    5
}

impl ExperimentSpec {
    pub fn from_json(s: &str) -> Result<Self> {
        let spec: ExperimentSpec = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.n == 0 || self.n_targets == 0 || self.n_repeats == 0 {
            return bad("n, n_targets and n_repeats must be ≥ 1");
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return bad("sample_sizes must be non-empty and positive");
        }
        if self.methods.is_empty() {
            return bad("at least one method is required");
        }
        let model = self.model_family();
        for m in &self.methods {
            m.config.validate()?;
            let ok = match (model, m.method) {
                (Model::Sbm, Method::Ip) | (Model::Rbm, Method::Cdcif) => false,
                _ => true,
            };
            if !ok {
                return Err(Error::InvalidConfig(format!(
                    "method {} does not apply to {:?}",
                    m.method.as_str(),
                    model
                )));
            }
        }
        let mut labels: Vec<&str> = self.methods.iter().map(MethodSpec::label).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return bad("method labels must be unique");
        }
        if model == Model::Rbm && self.n_h.is_none() {
            return bad("RBM experiments need n_h");
        }
        match self.kind {
            ExperimentKind::CorpusHamming => {
                if self.data.is_none() || self.model.is_none() {
                    return bad("corpus_hamming needs data and model");
                }
            }
            _ => {
                if self.n > crate::subset::MAX_VARS {
                    return Err(Error::CapExceeded {
                        n: self.n,
                        cap: crate::subset::MAX_VARS,
                    });
                }
            }
        }
        Ok(())
    }

    fn model_family(&self) -> Model {
        match self.kind {
            ExperimentKind::SbmDensity => Model::Sbm,
            ExperimentKind::RbmDensity => Model::Rbm,
            ExperimentKind::CorpusHamming => self.model.unwrap_or(Model::Sbm),
        }
    }

    /// Resolves a relative `data` path against `base`.
    pub fn resolve_data(&mut self, base: &std::path::Path) {
        if let Some(p) = &self.data {
            if p.is_relative() {
                self.data = Some(base.join(p));
            }
        }
    }
}

/// One trained model evaluated once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub kind: String,
    pub method: String,
    pub n: usize,
    pub n_h: Option<usize>,
    #[serde(rename = "N")]
    pub sample_size: usize,
    pub target_id: usize,
    pub repeat: usize,
    pub metric_name: String,
    pub metric_value: f64,
    pub epochs_or_iters: usize,
    pub seed: u64,
    pub failed: bool,
}

/// Diagnostics kept out of the CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialNote {
    pub method: String,
    #[serde(rename = "N")]
    pub sample_size: usize,
    pub target_id: usize,
    pub repeat: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cif_r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cif_kept: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_max_violation: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ip_best_iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub method: String,
    #[serde(rename = "N")]
    pub sample_size: usize,
    pub metric_name: String,
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
    pub notes: Vec<TrialNote>,
}

impl ResultTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "kind",
            "method",
            "n",
            "n_h",
            "N",
            "target_id",
            "repeat",
            "metric_name",
            "metric_value",
            "epochs_or_iters",
            "seed",
            "failed",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.kind.clone(),
                r.method.clone(),
                r.n.to_string(),
                r.n_h.map(|v| v.to_string()).unwrap_or_default(),
                r.sample_size.to_string(),
                r.target_id.to_string(),
                r.repeat.to_string(),
                r.metric_name.clone(),
                if r.failed {
                    String::new()
                } else {
                    r.metric_value.to_string()
                },
                r.epochs_or_iters.to_string(),
                r.seed.to_string(),
                r.failed.to_string(),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Per `(method, N)` mean and standard error over successful trials, in
    /// first-appearance order.
    pub fn summary(&self) -> Vec<CellSummary> {
        let mut order: Vec<(String, usize)> = Vec::new();
        let mut cells: BTreeMap<(String, usize), (String, Vec<f64>, usize)> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.method.clone(), r.sample_size);
            let e = cells.entry(key.clone()).or_insert_with(|| {
                order.push(key.clone());
                (r.metric_name.clone(), Vec::new(), 0)
            });
            if r.failed {
                e.2 += 1;
            } else {
                e.1.push(r.metric_value);
            }
        }
        order
            .into_iter()
            .map(|key| {
                let (metric_name, vals, failures) = &cells[&key];
                let count = vals.len();
                let mean = if count > 0 {
                    vals.iter().sum::<f64>() / count as f64
                } else {
                    f64::NAN
                };
                let stderr = if count > 1 {
                    let var =
                        vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
                    (var / count as f64).sqrt()
                } else {
                    f64::NAN
                };
                CellSummary {
                    method: key.0,
                    sample_size: key.1,
                    metric_name: metric_name.clone(),
                    mean,
                    stderr,
                    count,
                    failures: *failures,
                }
            })
            .collect()
    }

    pub fn summary_json(&self) -> serde_json::Value {
        let cells: Vec<serde_json::Value> = self
            .summary()
            .into_iter()
            .map(|c| {
                serde_json::json!({
                    "method": c.method,
                    "N": c.sample_size,
                    "metric_name": c.metric_name,
                    "mean": finite_or_null(c.mean),
                    "stderr": finite_or_null(c.stderr),
                    "count": c.count,
                    "failures": c.failures,
                })
            })
            .collect();
        serde_json::json!({ "cells": cells, "trials": self.notes })
    }

    pub fn all_failed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.failed)
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed).count()
    }

    /// Rows for one method label.
    pub fn method_rows<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a ResultRow> + 'a {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// A unit of parallel work: one data set, every method trained on it.
#[derive(Debug, Clone, Copy)]
struct TrialKey {
    target_id: usize,
    sample_size: usize,
    repeat: usize,
}

struct TrialOutput {
    rows: Vec<ResultRow>,
    notes: Vec<TrialNote>,
}

/// Runs every trial of `spec` on `jobs` worker threads (`0` = all cores).
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<ResultTable> {
    spec.validate()?;
    let corpus = match spec.kind {
        ExperimentKind::CorpusHamming => {
            let path = spec.data.as_ref().expect("validated");
            let text = std::fs::read_to_string(path)?;
            let data = SampleSet::from_lines01(
                &text,
                crate::eval::Source::File {
                    path: path.display().to_string(),
                },
            )?;
            if data.n() != spec.n {
                return Err(Error::DimensionMismatch {
                    expected: spec.n,
                    found: data.n(),
                });
            }
            Some(data)
        }
        _ => None,
    };
    let targets: Vec<Option<Distribution>> = (0..spec.n_targets)
        .map(|t| match corpus {
            Some(_) => Ok(None),
            None => sample_target(
                spec.n,
                &mut stream(spec.master_seed, &[TAG_TARGET, t as u64]),
            )
            .map(Some),
        })
        .collect::<Result<_>>()?;

    let mut keys = Vec::new();
    for target_id in 0..spec.n_targets {
        for &sample_size in &spec.sample_sizes {
            for repeat in 0..spec.n_repeats {
                keys.push(TrialKey {
                    target_id,
                    sample_size,
                    repeat,
                });
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outputs: Vec<TrialOutput> = pool.install(|| {
        use rayon::prelude::*;
        keys.par_iter()
            .map(|k| run_trial(spec, *k, targets[k.target_id].as_ref(), corpus.as_ref()))
            .collect()
    });

    let mut table = ResultTable::default();
    for o in outputs {
        table.rows.extend(o.rows);
        table.notes.extend(o.notes);
    }
    Ok(table)
}

fn run_trial(
    spec: &ExperimentSpec,
    key: TrialKey,
    target: Option<&Distribution>,
    corpus: Option<&SampleSet>,
) -> TrialOutput {
    let tags = [
        key.target_id as u64,
        key.sample_size as u64,
        key.repeat as u64,
    ];
    let sample_seed = derive_seed(spec.master_seed, &[TAG_SAMPLE, tags[0], tags[1], tags[2]]);
    let train_seed = derive_seed(spec.master_seed, &[TAG_TRAIN, tags[0], tags[1], tags[2]]);
    let data = match (target, corpus) {
        (Some(t), _) => {
            let mut rng: TrialRng = rand::SeedableRng::seed_from_u64(sample_seed);
            let mut s = draw_samples(t, key.sample_size, &mut rng);
            s.meta.seed = Some(sample_seed);
            s.meta.source = crate::eval::Source::Synthetic {
                target_id: key.target_id as u64,
            };
            s
        }
        (None, Some(c)) => subsample(c, key.sample_size, sample_seed),
        (None, None) => unreachable!("synthetic trials always have a target"),
    };

    let mut out = TrialOutput {
        rows: Vec::new(),
        notes: Vec::new(),
    };
    for m in &spec.methods {
        let mut cfg = m.config.clone();
        cfg.seed = train_seed;
        if spec.model_family() == Model::Rbm && cfg.n_h.is_none() {
            cfg.n_h = spec.n_h;
        }
        let row =
            |method: &str, metric_name: &str, value: f64, epochs: usize, failed: bool| ResultRow {
                kind: spec.kind.as_str().into(),
                method: method.into(),
                n: spec.n,
                n_h: spec.n_h,
                sample_size: key.sample_size,
                target_id: key.target_id,
                repeat: key.repeat,
                metric_name: metric_name.into(),
                metric_value: if failed { f64::NAN } else { value },
                epochs_or_iters: epochs,
                seed: train_seed,
                failed,
            };
        let mut note = TrialNote {
            method: m.label().into(),
            sample_size: key.sample_size,
            target_id: key.target_id,
            repeat: key.repeat,
            error: None,
            cif_r: None,
            cif_kept: None,
            ip_max_violation: None,
            ip_best_iteration: None,
        };
        let metric_name = if corpus.is_some() { "hamming" } else { "kl" };
        let eval_seed = derive_seed(spec.master_seed, &[TAG_EVAL, tags[0], tags[1], tags[2]]);
        let result = train_and_score(spec, m, &cfg, &data, target, eval_seed, &mut note);
        match result {
            Ok(scores) => {
                for (suffix, value, epochs, failed) in scores {
                    let label = match suffix {
                        Some(s) => format!("{}_{s}", m.label()),
                        None => m.label().to_string(),
                    };
                    out.rows
                        .push(row(&label, metric_name, value, epochs, failed));
                }
            }
            Err(e) => {
                note.error = Some(e.to_string());
                out.rows
                    .push(row(m.label(), metric_name, f64::NAN, 0, true));
                if m.method == Method::Ip {
                    out.rows.push(row(
                        &format!("{}_best", m.label()),
                        metric_name,
                        f64::NAN,
                        0,
                        true,
                    ));
                }
            }
        }
        out.notes.push(note);
    }
    out
}

/// `(label suffix, metric, epochs or iterations, failed)` per emitted row.
type Scores = Vec<(Option<&'static str>, f64, usize, bool)>;

fn train_and_score(
    spec: &ExperimentSpec,
    m: &MethodSpec,
    cfg: &TrainConfig,
    data: &SampleSet,
    target: Option<&Distribution>,
    eval_seed: u64,
    note: &mut TrialNote,
) -> Result<Scores> {
    let score_sbm = |p: &sbm::SbmParams| -> Result<f64> {
        match target {
            Some(t) => kl_divergence(t, &p.stationary()?),
            None => {
                let mut rng = stream(eval_seed, &[]);
                let gen = p.sample(data.len(), spec.burn_in, spec.thin, &mut rng)?;
                hamming_eval(data, &gen)
            }
        }
    };
    let score_rbm = |p: &rbm::RbmParams| -> Result<f64> {
        match target {
            Some(t) => kl_divergence(t, &p.marginal()?),
            None => {
                let mut rng = stream(eval_seed, &[]);
                let gen = p.sample(data.len(), spec.burn_in, spec.thin, &mut rng)?;
                hamming_eval(data, &gen)
            }
        }
    };
    // Trace KL only matters for the CLI; experiments skip it except where
    // the trainer needs it.
    match (spec.model_family(), m.method) {
        (Model::Sbm, method) => {
            let run = match method {
                Method::Ml => sbm::train_ml(data, cfg, target)?,
                Method::Cd1 => sbm::train_cd1(data, cfg, target)?,
                Method::Cdcif => sbm::train_cd_cif(data, cfg, target)?,
                Method::Ip => unreachable!("validated"),
            };
            if let Some(mask) = &run.mask {
                note.cif_r = Some(mask.r);
                note.cif_kept = Some(mask.kept_count());
            }
            if let Some(epoch) = run.diverged_at {
                note.error = Some(Error::Diverged { epoch }.to_string());
            }
            Ok(vec![(
                None,
                score_sbm(&run.params)?,
                run.epochs,
                run.diverged_at.is_some(),
            )])
        }
        (Model::Rbm, Method::Ip) => {
            let run = rbm::train_ip(data, None, cfg, target)?;
            note.ip_max_violation = run.max_monotonicity_violation();
            let converge = score_rbm(&run.params)?;
            let best = match rbm::best_ip_select(&run) {
                Some((k, p)) => {
                    note.ip_best_iteration = Some(run.trace[k].iteration);
                    score_rbm(p)?
                }
                None => converge,
            };
            Ok(vec![
                (None, converge, cfg.ip_iterations, false),
                (Some("best"), best, cfg.ip_iterations, false),
            ])
        }
        (Model::Rbm, method) => {
            let run = match method {
                Method::Ml => rbm::train_ml(data, cfg, target)?,
                Method::Cd1 => rbm::train_cd1(data, cfg, target)?,
                _ => unreachable!("validated"),
            };
            if let Some(epoch) = run.diverged_at {
                note.error = Some(Error::Diverged { epoch }.to_string());
            }
            Ok(vec![(
                None,
                score_rbm(&run.params)?,
                run.epochs,
                run.diverged_at.is_some(),
            )])
        }
    }
}

/// `size` distinct rows chosen by seed, kept in file order; the whole set
/// when `size` covers it.
fn subsample(data: &SampleSet, size: usize, seed: u64) -> SampleSet {
    if size >= data.len() {
        return data.clone();
    }
    let mut rng: TrialRng = rand::SeedableRng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, data.len(), size).into_vec();
    idx.sort_unstable();
    let mut bits = Vec::with_capacity(size * data.n());
    for i in idx {
        bits.extend_from_slice(data.row(i));
    }
    let mut s = SampleSet::from_flat(data.n(), bits, data.meta.clone())
        .expect("rows come from a valid set");
    s.meta.seed = Some(seed);
    s
}
