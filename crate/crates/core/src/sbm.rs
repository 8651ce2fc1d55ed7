//! Boltzmann machines without hidden units.
//!
//! `p(x) ∝ exp(½ xᵀUx + bᵀx)` with `U` symmetric and zero on the diagonal.
//! In θ-coordinates this is `θ^{i} = b_i`, `θ^{ij} = U_ij` and zero above
//! order two.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{NegativePhase, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{empirical_distribution, SampleSet};
use crate::rng::TrialRng;
use crate::simplex::{distribution_from_exponents, kl_divergence, Distribution};
use crate::subset::{subset_zeta, MAX_VARS};

pub(crate) fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn clipped_logit(m: f64) -> f64 {
    let lo = sigmoid(-4.0);
    let m = m.clamp(lo, 1.0 - lo);
    (m / (1.0 - m)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbmParams {
    n: usize,
    /// Row-major `n × n`.
    u: Vec<f64>,
    b: Vec<f64>,
}

impl SbmParams {
    pub(crate) fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.b).all(|v| v.is_finite())
    }

    pub fn zeros(n: usize) -> Self {
        SbmParams {
            n,
            u: vec![0.0; n * n],
            b: vec![0.0; n],
        }
    }

    /// Validates symmetry, zero diagonal and finiteness.
    pub fn new(u: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let n = b.len();
        if u.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: u.len(),
            });
        }
        let mut flat = Vec::with_capacity(n * n);
        for row in &u {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        for i in 0..n {
            if flat[i * n + i] != 0.0 {
                return Err(Error::InvalidConfig(format!("U[{i}][{i}] must be zero")));
            }
            for j in 0..i {
                if flat[i * n + j] != flat[j * n + i] {
                    return Err(Error::InvalidConfig(format!(
                        "U is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if flat.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(SbmParams { n, u: flat, b })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.u[i * self.n + j]
    }

    /// Sets `U_ij = U_ji = v`; `i ≠ j`.
    pub fn set_weight(&mut self, i: usize, j: usize, v: f64) {
        assert_ne!(i, j, "diagonal weights are fixed at zero");
        self.u[i * self.n + j] = v;
        self.u[j * self.n + i] = v;
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    /// `E(x) = -½ xᵀUx - bᵀx`.
    pub fn energy(&self, x: &[u8]) -> f64 {
        let n = self.n;
        let mut e = 0.0;
        for i in 0..n {
            if x[i] == 0 {
                continue;
            }
            e -= self.b[i];
            for j in (i + 1)..n {
                if x[j] == 1 {
                    e -= self.u[i * n + j];
                }
            }
        }
        e
    }

    /// Natural coordinates indexed by subset mask.
    pub fn theta_embedding(&self) -> Result<Vec<f64>> {
        let n = self.n;
        if n > MAX_VARS {
            return Err(Error::CapExceeded { n, cap: MAX_VARS });
        }
        let mut t = vec![0.0; 1 << n];
        for i in 0..n {
            t[1 << i] = self.b[i];
            for j in (i + 1)..n {
                t[(1 << i) | (1 << j)] = self.u[i * n + j];
            }
        }
        Ok(t)
    }

    /// Exact `exp(-E) / Z` over all `2^n` states.
    pub fn stationary(&self) -> Result<Distribution> {
        let mut s = self.theta_embedding()?;
        subset_zeta(&mut s);
        distribution_from_exponents(self.n, s)
    }

    fn field(&self, i: usize, x: &[u8]) -> f64 {
        let row = &self.u[i * self.n..(i + 1) * self.n];
        self.b[i] + row.iter().zip(x).map(|(w, &xj)| w * xj as f64).sum::<f64>()
    }

    /// One sequential sweep `x_1, ..., x_n` in place.
    pub fn sweep<R: Rng + ?Sized>(&self, x: &mut [u8], rng: &mut R) {
        for i in 0..self.n {
            let p = sigmoid(self.field(i, x));
            x[i] = (rng.random::<f64>() < p) as u8;
        }
    }

    pub fn gibbs_step<R: Rng + ?Sized>(&self, x0: &[u8], rng: &mut R) -> Vec<u8> {
        let mut x = x0.to_vec();
        self.sweep(&mut x, rng);
        x
    }

    /// `count` samples: exact for `n ≤ 16`, otherwise every `thin`-th sweep
    /// of one chain after `burn_in` sweeps.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        count: usize,
        burn_in: usize,
        thin: usize,
        rng: &mut R,
    ) -> Result<SampleSet> {
        if self.n <= 16 {
            return Ok(crate::eval::draw_samples(&self.stationary()?, count, rng));
        }
        let mut x: Vec<u8> = (0..self.n).map(|_| rng.random_range(0..2u8)).collect();
        for _ in 0..burn_in {
            self.sweep(&mut x, rng);
        }
        let mut bits = Vec::with_capacity(count * self.n);
        for _ in 0..count {
            for _ in 0..thin.max(1) {
                self.sweep(&mut x, rng);
            }
            bits.extend_from_slice(&x);
        }
        SampleSet::from_flat(self.n, bits, Default::default())
    }

    fn init_from_data(m1: &[f64]) -> Self {
        let mut p = SbmParams::zeros(m1.len());
        for (b, &m) in p.b.iter_mut().zip(m1) {
            *b = clipped_logit(m);
        }
        p
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SbmFile {
    n: usize,
    #[serde(rename = "U")]
    u: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Serialize for SbmParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SbmFile {
            n: self.n,
            u: self.u.chunks(self.n.max(1)).map(<[f64]>::to_vec).collect(),
            b: self.b.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SbmParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = SbmFile::deserialize(d)?;
        if f.b.len() != f.n {
            return Err(serde::de::Error::custom(format!(
                "b has {} entries, n = {}",
                f.b.len(),
                f.n
            )));
        }
        SbmParams::new(f.u, f.b).map_err(serde::de::Error::custom)
    }
}

/// One recorded epoch. KL values are absent when `2^n` enumeration is out of
/// reach.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub kl_to_empirical: Option<f64>,
    pub kl_to_target: Option<f64>,
}

/// Which weights a CD-CIF run trains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CifMask {
    pub r: f64,
    pub tau: f64,
    pub total: f64,
    /// `F(U_ij)` for `i < j`, row by row.
    pub fisher: Vec<f64>,
    /// Kept flags in the same order as `fisher`.
    pub kept: Vec<bool>,
}

impl CifMask {
    /// `F(U_ij) = m_ij - m_ij²` from data moments; a weight is kept iff
    /// `F ≥ r · Σ F`.
    pub fn from_moments(n: usize, m2: &[f64], r: f64) -> Self {
        let mut fisher = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let m = m2[i * n + j];
                fisher.push(m - m * m);
            }
        }
        let total: f64 = fisher.iter().sum();
        let tau = r * total;
        let kept = fisher.iter().map(|&f| f >= tau).collect();
        CifMask {
            r,
            tau,
            total,
            fisher,
            kept,
        }
    }

    pub fn kept_count(&self) -> usize {
        self.kept.iter().filter(|&&k| k).count()
    }
}

#[derive(Debug, Clone)]
pub struct SbmRun {
    pub params: SbmParams,
    pub trace: Vec<TraceRow>,
    pub epochs: usize,
    /// Set when the KL rose for `divergence_patience` consecutive epochs.
    pub diverged_at: Option<usize>,
    pub mask: Option<CifMask>,
}

impl SbmRun {
    pub fn final_kl_to_target(&self) -> Option<f64> {
        self.trace.last().and_then(|r| r.kl_to_target)
    }
}

struct Monitor<'a> {
    empirical: Option<Distribution>,
    target: Option<&'a Distribution>,
}

impl<'a> Monitor<'a> {
    fn new(data: &SampleSet, target: Option<&'a Distribution>) -> Result<Self> {
        let empirical = if data.n() <= MAX_VARS && !data.is_empty() {
            Some(empirical_distribution(data)?)
        } else {
            None
        };
        Ok(Monitor { empirical, target })
    }

    fn row(&self, epoch: usize, model: Option<&Distribution>) -> Result<TraceRow> {
        let Some(model) = model else {
            return Ok(TraceRow {
                epoch,
                kl_to_empirical: None,
                kl_to_target: None,
            });
        };
        Ok(TraceRow {
            epoch,
            kl_to_empirical: self
                .empirical
                .as_ref()
                .map(|e| kl_divergence(e, model))
                .transpose()?,
            kl_to_target: self.target.map(|t| kl_divergence(t, model)).transpose()?,
        })
    }
}

fn check_data(data: &SampleSet, target: Option<&Distribution>) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("training data is empty".into()));
    }
    if let Some(t) = target {
        if t.n() != data.n() {
            return Err(Error::DimensionMismatch {
                expected: data.n(),
                found: t.n(),
            });
        }
    }
    Ok(())
}

fn apply_update(
    p: &mut SbmParams,
    m1: &[f64],
    m2: &[f64],
    g1: &[f64],
    g2: &[f64],
    rate: f64,
    kept: Option<&[bool]>,
) {
    let n = p.n;
    for i in 0..n {
        p.b[i] += rate * (m1[i] - g1[i]);
    }
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if kept.is_none_or(|kept| kept[k]) {
                let w = p.u[i * n + j] + rate * (m2[i * n + j] - g2[i * n + j]);
                p.u[i * n + j] = w;
                p.u[j * n + i] = w;
            }
            k += 1;
        }
    }
}

/// First and second moments of a distribution, as `(m1, m2)`.
fn model_moments(d: &Distribution) -> (Vec<f64>, Vec<f64>) {
    let n = d.n();
    let eta = d.eta();
    let m1: Vec<f64> = (0..n).map(|i| eta.as_slice()[1 << i]).collect();
    let mut m2 = vec![0.0; n * n];
    for i in 0..n {
        m2[i * n + i] = m1[i];
        for j in (i + 1)..n {
            let v = eta.as_slice()[(1 << i) | (1 << j)];
            m2[i * n + j] = v;
            m2[j * n + i] = v;
        }
    }
    (m1, m2)
}

/// Averages first and second moments over rows of `states`.
fn chain_moments(n: usize, states: &[u8]) -> (Vec<f64>, Vec<f64>) {
    let count = (states.len() / n).max(1) as f64;
    let mut c1 = vec![0u64; n];
    let mut c2 = vec![0u64; n * n];
    for x in states.chunks_exact(n) {
        for i in 0..n {
            if x[i] == 0 {
                continue;
            }
            c1[i] += 1;
            for j in (i + 1)..n {
                c2[i * n + j] += x[j] as u64;
            }
        }
    }
    let m1: Vec<f64> = c1.iter().map(|&c| c as f64 / count).collect();
    let mut m2 = vec![0.0; n * n];
    for i in 0..n {
        m2[i * n + i] = m1[i];
        for j in (i + 1)..n {
            let v = c2[i * n + j] as f64 / count;
            m2[i * n + j] = v;
            m2[j * n + i] = v;
        }
    }
    (m1, m2)
}

/// Maximum-likelihood gradient ascent.
pub fn train_ml(
    data: &SampleSet,
    cfg: &TrainConfig,
    target: Option<&Distribution>,
) -> Result<SbmRun> {
    cfg.validate()?;
    check_data(data, target)?;
    let n = data.n();
    let phase = cfg.negative_phase();
    if phase == NegativePhase::Exact && n > MAX_VARS {
        return Err(Error::CapExceeded { n, cap: MAX_VARS });
    }
    let rate = cfg.learning_rate.averaged();
    let m1 = data.first_moments();
    let m2 = data.second_moments();
    let monitor = Monitor::new(data, target)?;
    let mut rng = TrialRng::seed_from_u64(cfg.seed);
    let mut params = SbmParams::init_from_data(&m1);
    let mut trace = Vec::new();
    let mut prev_kl = f64::INFINITY;
    let mut rising = 0;
    let mut diverged_at = None;
    let mut epochs = 0;

    let exact = phase == NegativePhase::Exact;
    let mut model = if n <= MAX_VARS {
        Some(params.stationary()?)
    } else {
        None
    };
    trace.push(monitor.row(0, model.as_ref())?);

    for epoch in 1..=cfg.max_epochs {
        let (g1, g2) = match phase {
            NegativePhase::Exact => {
                model_moments(model.as_ref().expect("exact phase needs a model table"))
            }
            NegativePhase::Gibbs { steps, chains } => {
                let mut states: Vec<u8> =
                    (0..chains * n).map(|_| rng.random_range(0..2u8)).collect();
                for x in states.chunks_exact_mut(n) {
                    for _ in 0..steps {
                        params.sweep(x, &mut rng);
                    }
                }
                chain_moments(n, &states)
            }
        };
        let before = params.clone();
        apply_update(&mut params, &m1, &m2, &g1, &g2, rate, None);
        let need_model = n <= MAX_VARS && (exact || cfg.should_trace(epoch));
        let next = match params.is_finite().then_some(()).ok_or(Error::Overflow) {
            Ok(()) if need_model => params.stationary().map(Some),
            Ok(()) => Ok(None),
            Err(e) => Err(e),
        };
        model = match next {
            Ok(m) => m,
            Err(Error::Overflow) => {
                params = before;
                diverged_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        };
        epochs = epoch;
        if exact {
            let row = monitor.row(epoch, model.as_ref())?;
            let kl = row.kl_to_empirical.unwrap_or(f64::NAN);
            if kl > prev_kl {
                rising += 1;
            } else {
                rising = 0;
            }
            prev_kl = kl;
            if cfg.should_trace(epoch) || rising >= cfg.divergence_patience {
                trace.push(row);
            }
            if rising >= cfg.divergence_patience {
                diverged_at = Some(epoch);
                break;
            }
        } else if cfg.should_trace(epoch) {
            trace.push(monitor.row(epoch, model.as_ref())?);
        }
    }
    Ok(SbmRun {
        params,
        trace,
        epochs,
        diverged_at,
        mask: None,
    })
}

/// CD-1 with full-batch updates; equal to CD-CIF with every weight kept.
pub fn train_cd1(
    data: &SampleSet,
    cfg: &TrainConfig,
    target: Option<&Distribution>,
) -> Result<SbmRun> {
    cd_loop(data, cfg, target, None)
}

/// CD-1 restricted to weights whose sample Fisher information clears
/// `τ = r · T_FI`; masked weights stay at zero.
pub fn train_cd_cif(
    data: &SampleSet,
    cfg: &TrainConfig,
    target: Option<&Distribution>,
) -> Result<SbmRun> {
    let r = cfg.cif_rule().resolve(data.len());
    let mask = CifMask::from_moments(data.n(), &data.second_moments(), r);
    cd_loop(data, cfg, target, Some(mask))
}

fn cd_loop(
    data: &SampleSet,
    cfg: &TrainConfig,
    target: Option<&Distribution>,
    mask: Option<CifMask>,
) -> Result<SbmRun> {
    cfg.validate()?;
    check_data(data, target)?;
    let n = data.n();
    let rate = cfg.learning_rate.averaged();
    let m1 = data.first_moments();
    let m2 = data.second_moments();
    let monitor = Monitor::new(data, target)?;
    let mut rng = TrialRng::seed_from_u64(cfg.seed);
    let mut params = SbmParams::init_from_data(&m1);
    let kept = mask.as_ref().map(|m| m.kept.as_slice());
    let traced = n <= MAX_VARS;
    let mut trace =
        vec![monitor.row(0, traced.then(|| params.stationary()).transpose()?.as_ref())?];
    let mut states = data.as_flat().to_vec();
    let mut epochs = 0;
    let mut diverged_at = None;
    for epoch in 1..=cfg.max_epochs {
        states.copy_from_slice(data.as_flat());
        for x in states.chunks_exact_mut(n) {
            params.sweep(x, &mut rng);
        }
        let (g1, g2) = chain_moments(n, &states);
        let before = params.clone();
        apply_update(&mut params, &m1, &m2, &g1, &g2, rate, kept);
        let model = match params.is_finite().then_some(()).ok_or(Error::Overflow) {
            Ok(()) if traced && cfg.should_trace(epoch) => params.stationary().map(Some),
            Ok(()) => Ok(None),
            Err(e) => Err(e),
        };
        let model = match model {
            Ok(m) => m,
            Err(Error::Overflow) => {
                params = before;
                diverged_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        };
        epochs = epoch;
        if cfg.should_trace(epoch) {
            trace.push(monitor.row(epoch, model.as_ref())?);
        }
    }
    Ok(SbmRun {
        params,
        trace,
        epochs,
        diverged_at,
        mask,
    })
}
