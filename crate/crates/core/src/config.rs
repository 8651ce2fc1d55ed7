//! Training configuration shared by the SBM and RBM trainers.
//!
//! The on-disk form is a flat JSON object; unknown keys are rejected.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Step size applied to the data-averaged gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    Fixed(f64),
    /// `0.5 / N` per sample, i.e. `0.5` on the averaged gradient.
    PaperDefault,
}

impl LearningRate {
    /// Rate applied to averaged statistics.
    pub fn averaged(self) -> f64 {
        match self {
            LearningRate::Fixed(r) => r,
            LearningRate::PaperDefault => 0.5,
        }
    }

    /// Equivalent per-sample rate for a data set of `n_samples` rows.
    pub fn per_sample(self, n_samples: usize) -> f64 {
        self.averaged() / n_samples.max(1) as f64
    }
}

impl Serialize for LearningRate {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            LearningRate::Fixed(r) => s.serialize_f64(*r),
            LearningRate::PaperDefault => s.serialize_str("paper-default"),
        }
    }
}

impl<'de> Deserialize<'de> for LearningRate {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(LearningRate::Fixed(r)),
            Raw::Str(s) if s == "paper-default" => Ok(LearningRate::PaperDefault),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "learning_rate must be a number or \"paper-default\", got \"{s}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativePhaseKind {
    #[default]
    Exact,
    Gibbs,
}

/// How model expectations are obtained in maximum-likelihood training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegativePhase {
    Exact,
    Gibbs { steps: usize, chains: usize },
}

/// CD-CIF weight-retention rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CifRule {
    Ratio(f64),
    /// `r = max(0, 1 - alpha / N)`.
    Auto {
        alpha: f64,
    },
}

impl CifRule {
    pub fn resolve(self, n_samples: usize) -> f64 {
        match self {
            CifRule::Ratio(r) => r,
            CifRule::Auto { alpha } => (1.0 - alpha / n_samples.max(1) as f64).max(0.0),
        }
    }
}

/// Hidden-layer completion used by the iterative projection trainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaHMode {
    /// Analytic `q(x) Π_j f(h_j | x)`.
    #[default]
    Exact,
    /// One hidden draw per data row.
    Sampled,
}

/// Sub-learner used for the projection onto the RBM manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaBMode {
    /// Exact-gradient descent on `D[q ‖ p]`.
    #[default]
    Exact,
    /// CD-1 on joint samples, with every unit visible.
    Cd,
}

fn d_steps() -> usize {
    10
}
fn d_chains() -> usize {
    100
}
fn d_ip_iterations() -> usize {
    40
}
fn d_sub_epochs() -> usize {
    200
}
fn d_gamma_b_tol() -> f64 {
    1e-5
}
fn d_init_noise() -> f64 {
    0.01
}
fn d_one() -> usize {
    1
}
fn d_patience() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: LearningRate,
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub negative_phase: NegativePhaseKind,
    #[serde(default = "d_steps")]
    pub gibbs_steps: usize,
    #[serde(default = "d_chains")]
    pub gibbs_chains: usize,
    /// Fixed CD-CIF ratio `r`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cif_r: Option<f64>,
    /// CD-CIF auto rule constant; `r = 1 - alpha / N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cif_alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_h: Option<usize>,
    #[serde(default = "d_ip_iterations")]
    pub ip_iterations: usize,
    #[serde(default = "d_sub_epochs")]
    pub sub_epochs: usize,
    #[serde(default)]
    pub gamma_h: GammaHMode,
    #[serde(default)]
    pub gamma_b: GammaBMode,
    #[serde(default = "d_gamma_b_tol")]
    pub gamma_b_tol: f64,
    #[serde(default = "d_init_noise")]
    pub init_noise: f64,
    /// Record a trace row every this many epochs (the last epoch is always
    /// recorded).
    #[serde(default = "d_one")]
    pub trace_every: usize,
    /// Consecutive KL increases that count as divergence.
    #[serde(default = "d_patience")]
    pub divergence_patience: usize,
}

impl TrainConfig {
    pub fn new(learning_rate: f64, max_epochs: usize) -> Self {
        TrainConfig {
            learning_rate: LearningRate::Fixed(learning_rate),
            max_epochs,
            seed: 0,
            negative_phase: NegativePhaseKind::Exact,
            gibbs_steps: d_steps(),
            gibbs_chains: d_chains(),
            cif_r: None,
            cif_alpha: None,
            n_h: None,
            ip_iterations: d_ip_iterations(),
            sub_epochs: d_sub_epochs(),
            gamma_h: GammaHMode::Exact,
            gamma_b: GammaBMode::Exact,
            gamma_b_tol: d_gamma_b_tol(),
            init_noise: d_init_noise(),
            trace_every: 1,
            divergence_patience: d_patience(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let rate = self.learning_rate.averaged();
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {rate} must be ≥ 0"
            )));
        }
        if let Some(r) = self.cif_r {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::InvalidConfig(format!(
                    "cif_r {r} must lie in [0, 1)"
                )));
            }
        }
        if let Some(a) = self.cif_alpha {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(Error::InvalidConfig(format!("cif_alpha {a} must be ≥ 0")));
            }
        }
        if self.cif_r.is_some() && self.cif_alpha.is_some() {
            return Err(Error::InvalidConfig(
                "set at most one of cif_r and cif_alpha".into(),
            ));
        }
        if self.negative_phase == NegativePhaseKind::Gibbs
            && (self.gibbs_steps == 0 || self.gibbs_chains == 0)
        {
            return Err(Error::InvalidConfig(
                "gibbs_steps and gibbs_chains must be ≥ 1".into(),
            ));
        }
        if self.n_h == Some(0) {
            return Err(Error::InvalidConfig("n_h must be ≥ 1".into()));
        }
        if self.trace_every == 0 {
            return Err(Error::InvalidConfig("trace_every must be ≥ 1".into()));
        }
        Ok(())
    }

    pub fn negative_phase(&self) -> NegativePhase {
        match self.negative_phase {
            NegativePhaseKind::Exact => NegativePhase::Exact,
            NegativePhaseKind::Gibbs => NegativePhase::Gibbs {
                steps: self.gibbs_steps,
                chains: self.gibbs_chains,
            },
        }
    }

    /// The CD-CIF rule; `r = 0` (keep every weight) when neither key is set.
    pub fn cif_rule(&self) -> CifRule {
        match (self.cif_r, self.cif_alpha) {
            (_, Some(alpha)) => CifRule::Auto { alpha },
            (Some(r), None) => CifRule::Ratio(r),
            (None, None) => CifRule::Ratio(0.0),
        }
    }

    pub(crate) fn should_trace(&self, epoch: usize) -> bool {
        epoch % self.trace_every == 0 || epoch == self.max_epochs
    }
}
