//! Restricted Boltzmann machines.
//!
//! Joint states put the visible units in the low `n_x` bits of a mask and the
//! hidden units above them, so `h_j` is bit `n_x + j - 1`.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, Distribution as _};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::config::{GammaBMode, GammaHMode, NegativePhase, TrainConfig};
use crate::error::{Error, Result};
use crate::eval::{draw_samples, empirical_distribution, SampleSet};
use crate::linalg::symmetrize;
use crate::rng::TrialRng;
use crate::sbm::sigmoid;
use crate::simplex::{
    distribution_from_exponents, kl_divergence, log_sum_exp, solve_free_theta, Distribution,
    NewtonOptions,
};
use crate::subset::{subset_zeta, MAX_VARS};

/// Largest `n_x + n_h` for which maximum likelihood enumerates the negative
/// phase.
pub const EXACT_ML_MAX_UNITS: usize = 14;

fn softplus(a: f64) -> f64 {
    if a > 0.0 {
        a + (-a).exp().ln_1p()
    } else {
        a.exp().ln_1p()
    }
}

fn clipped_logit(m: f64) -> f64 {
    let lo = sigmoid(-4.0);
    let m = m.clamp(lo, 1.0 - lo);
    (m / (1.0 - m)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    n_x: usize,
    n_h: usize,
    /// Row-major `n_x × n_h`.
    w: Vec<f64>,
    b: Vec<f64>,
    d: Vec<f64>,
}

impl RbmParams {
    pub(crate) fn is_finite(&self) -> bool {
        self.w
            .iter()
            .chain(&self.b)
            .chain(&self.d)
            .all(|v| v.is_finite())
    }

    pub fn zeros(n_x: usize, n_h: usize) -> Self {
        RbmParams {
            n_x,
            n_h,
            w: vec![0.0; n_x * n_h],
            b: vec![0.0; n_x],
            d: vec![0.0; n_h],
        }
    }

    pub fn new(w: Vec<Vec<f64>>, b: Vec<f64>, d: Vec<f64>) -> Result<Self> {
        let (n_x, n_h) = (b.len(), d.len());
        if w.len() != n_x {
            return Err(Error::DimensionMismatch {
                expected: n_x,
                found: w.len(),
            });
        }
        let mut flat = Vec::with_capacity(n_x * n_h);
        for row in &w {
            if row.len() != n_h {
                return Err(Error::DimensionMismatch {
                    expected: n_h,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        if flat.iter().chain(&b).chain(&d).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite parameter".into()));
        }
        Ok(RbmParams {
            n_x,
            n_h,
            w: flat,
            b,
            d,
        })
    }

    /// Small uniform weights in `[-noise, noise]`, biases from data logits.
    pub fn init<R: Rng + ?Sized>(data: &SampleSet, n_h: usize, noise: f64, rng: &mut R) -> Self {
        let n_x = data.n();
        let mut p = RbmParams::zeros(n_x, n_h);
        if noise > 0.0 {
            for w in &mut p.w {
                *w = rng.random_range(-noise..=noise);
            }
        }
        for (b, m) in p.b.iter_mut().zip(data.first_moments()) {
            *b = clipped_logit(m);
        }
        p
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.w[i * self.n_h + j]
    }

    pub fn set_weight(&mut self, i: usize, j: usize, v: f64) {
        self.w[i * self.n_h + j] = v;
    }

    pub fn visible_bias(&self) -> &[f64] {
        &self.b
    }

    pub fn hidden_bias(&self) -> &[f64] {
        &self.d
    }

    pub fn visible_bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn hidden_bias_mut(&mut self) -> &mut [f64] {
        &mut self.d
    }

    fn units(&self) -> usize {
        self.n_x + self.n_h
    }

    fn hidden_input(&self, j: usize, x: &[u8]) -> f64 {
        let mut a = self.d[j];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 1 {
                a += self.w[i * self.n_h + j];
            }
        }
        a
    }

    fn visible_input(&self, i: usize, h: &[u8]) -> f64 {
        let row = &self.w[i * self.n_h..(i + 1) * self.n_h];
        let mut a = self.b[i];
        for (w, &hj) in row.iter().zip(h) {
            if hj == 1 {
                a += w;
            }
        }
        a
    }

    /// `f(h_j = 1 | x)` for every hidden unit.
    pub fn cond_h_given_x(&self, x: &[u8]) -> Vec<f64> {
        (0..self.n_h)
            .map(|j| sigmoid(self.hidden_input(j, x)))
            .collect()
    }

    /// `f(x_i = 1 | h)` for every visible unit.
    pub fn cond_x_given_h(&self, h: &[u8]) -> Vec<f64> {
        (0..self.n_x)
            .map(|i| sigmoid(self.visible_input(i, h)))
            .collect()
    }

    fn check_cap(&self, units: usize) -> Result<()> {
        if units > MAX_VARS {
            return Err(Error::CapExceeded {
                n: units,
                cap: MAX_VARS,
            });
        }
        Ok(())
    }

    /// Joint natural coordinates indexed by joint mask.
    pub fn theta_embedding(&self) -> Result<Vec<f64>> {
        self.check_cap(self.units())?;
        let (n_x, n_h) = (self.n_x, self.n_h);
        let mut t = vec![0.0; 1 << self.units()];
        for i in 0..n_x {
            t[1 << i] = self.b[i];
            for j in 0..n_h {
                t[(1 << i) | (1 << (n_x + j))] = self.w[i * n_h + j];
            }
        }
        for j in 0..n_h {
            t[1 << (n_x + j)] = self.d[j];
        }
        Ok(t)
    }

    /// Exact joint `p(x, h) ∝ exp(xᵀWh + bᵀx + dᵀh)`.
    pub fn joint(&self) -> Result<JointDistribution> {
        let mut s = self.theta_embedding()?;
        subset_zeta(&mut s);
        Ok(JointDistribution {
            n_x: self.n_x,
            n_h: self.n_h,
            dist: distribution_from_exponents(self.units(), s)?,
        })
    }

    /// Unnormalized log marginal `bᵀx + Σ_j softplus(d_j + Σ_i W_ij x_i)`
    /// for every visible state.
    fn log_marginal_weights(&self) -> Result<Vec<f64>> {
        self.check_cap(self.n_x)?;
        let mut x = vec![0u8; self.n_x];
        Ok((0..1usize << self.n_x)
            .map(|m| {
                fill_bits(m, &mut x);
                let mut s: f64 = self
                    .b
                    .iter()
                    .zip(&x)
                    .filter(|(_, &xi)| xi == 1)
                    .map(|(b, _)| b)
                    .sum();
                for j in 0..self.n_h {
                    s += softplus(self.hidden_input(j, &x));
                }
                s
            })
            .collect())
    }

    /// Exact marginal `p(x) = Σ_h p(x, h)`.
    pub fn marginal(&self) -> Result<Distribution> {
        distribution_from_exponents(self.n_x, self.log_marginal_weights()?)
    }

    pub fn log_partition(&self) -> Result<f64> {
        Ok(log_sum_exp(&self.log_marginal_weights()?))
    }

    /// Model moments `⟨x_i⟩`, `⟨h_j⟩`, `⟨x_i h_j⟩` by enumerating visible
    /// states, plus `log Z`.
    fn model_moments(&self) -> Result<(Moments, f64)> {
        let lw = self.log_marginal_weights()?;
        let lz = log_sum_exp(&lw);
        let mut m = Moments::zeros(self.n_x, self.n_h);
        let mut x = vec![0u8; self.n_x];
        for (mask, l) in lw.iter().enumerate() {
            let px = (l - lz).exp();
            fill_bits(mask, &mut x);
            m.accumulate(&x, &self.cond_h_given_x(&x), px);
        }
        Ok((m, lz))
    }

    /// `count` visible samples from the marginal: exact when `n_x ≤ 16`,
    /// otherwise one blocked Gibbs chain thinned every `thin` steps.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        count: usize,
        burn_in: usize,
        thin: usize,
        rng: &mut R,
    ) -> Result<SampleSet> {
        if self.n_x <= 16 {
            return Ok(draw_samples(&self.marginal()?, count, rng));
        }
        let mut x: Vec<u8> = (0..self.n_x).map(|_| rng.random_range(0..2u8)).collect();
        let mut h = vec![0u8; self.n_h];
        let step = |x: &mut Vec<u8>, h: &mut Vec<u8>, rng: &mut R| {
            for j in 0..self.n_h {
                h[j] = (rng.random::<f64>() < sigmoid(self.hidden_input(j, x))) as u8;
            }
            for i in 0..self.n_x {
                x[i] = (rng.random::<f64>() < sigmoid(self.visible_input(i, h))) as u8;
            }
        };
        for _ in 0..burn_in {
            step(&mut x, &mut h, rng);
        }
        let mut bits = Vec::with_capacity(count * self.n_x);
        for _ in 0..count {
            for _ in 0..thin.max(1) {
                step(&mut x, &mut h, rng);
            }
            bits.extend_from_slice(&x);
        }
        SampleSet::from_flat(self.n_x, bits, Default::default())
    }

    fn dot(&self, m: &Moments) -> f64 {
        let s: f64 = self.b.iter().zip(&m.x).map(|(a, b)| a * b).sum::<f64>()
            + self.d.iter().zip(&m.h).map(|(a, b)| a * b).sum::<f64>()
            + self.w.iter().zip(&m.xh).map(|(a, b)| a * b).sum::<f64>();
        s
    }

    /// Parameters as one vector: `b`, then `d`, then `W` row-major.
    fn to_vec(&self) -> Vec<f64> {
        self.b
            .iter()
            .chain(&self.d)
            .chain(&self.w)
            .copied()
            .collect()
    }

    fn from_vec(n_x: usize, n_h: usize, v: &[f64]) -> Self {
        RbmParams {
            n_x,
            n_h,
            b: v[..n_x].to_vec(),
            d: v[n_x..n_x + n_h].to_vec(),
            w: v[n_x + n_h..].to_vec(),
        }
    }
}

fn fill_bits(mask: usize, out: &mut [u8]) {
    for (i, v) in out.iter_mut().enumerate() {
        *v = (mask >> i & 1) as u8;
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RbmFile {
    n_x: usize,
    n_h: usize,
    #[serde(rename = "W")]
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    d: Vec<f64>,
}

impl Serialize for RbmParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let w = (0..self.n_x)
            .map(|i| self.w[i * self.n_h..(i + 1) * self.n_h].to_vec())
            .collect();
        RbmFile {
            n_x: self.n_x,
            n_h: self.n_h,
            w,
            b: self.b.clone(),
            d: self.d.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RbmParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = RbmFile::deserialize(d)?;
        if f.b.len() != f.n_x || f.d.len() != f.n_h {
            return Err(serde::de::Error::custom(
                "bias lengths do not match n_x / n_h",
            ));
        }
        RbmParams::new(f.w, f.b, f.d).map_err(serde::de::Error::custom)
    }
}

/// Sufficient statistics of the RBM family: `⟨x_i⟩`, `⟨h_j⟩`, `⟨x_i h_j⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    /// Row-major `n_x × n_h`.
    pub xh: Vec<f64>,
}

impl Moments {
    fn zeros(n_x: usize, n_h: usize) -> Self {
        Moments {
            x: vec![0.0; n_x],
            h: vec![0.0; n_h],
            xh: vec![0.0; n_x * n_h],
        }
    }

    fn accumulate(&mut self, x: &[u8], h: &[f64], weight: f64) {
        let n_h = self.h.len();
        for (acc, hj) in self.h.iter_mut().zip(h) {
            *acc += weight * hj;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 1 {
                self.x[i] += weight;
                for (acc, hj) in self.xh[i * n_h..(i + 1) * n_h].iter_mut().zip(h) {
                    *acc += weight * hj;
                }
            }
        }
    }

    fn as_vec(&self) -> Vec<f64> {
        self.x
            .iter()
            .chain(&self.h)
            .chain(&self.xh)
            .copied()
            .collect()
    }

    /// Max-norm distance between two moment vectors.
    pub fn max_gap(&self, other: &Moments) -> f64 {
        self.as_vec()
            .iter()
            .zip(other.as_vec())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Exact distribution over joint `(x, h)` states.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    n_x: usize,
    n_h: usize,
    dist: Distribution,
}

impl JointDistribution {
    pub fn new(n_x: usize, n_h: usize, dist: Distribution) -> Result<Self> {
        if dist.n() != n_x + n_h {
            return Err(Error::DimensionMismatch {
                expected: n_x + n_h,
                found: dist.n(),
            });
        }
        Ok(JointDistribution { n_x, n_h, dist })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn p(&self) -> &[f64] {
        self.dist.p()
    }

    pub fn distribution(&self) -> &Distribution {
        &self.dist
    }

    /// `Σ_h q(x, h)`.
    pub fn marginal_x(&self) -> Result<Distribution> {
        let len_x = 1usize << self.n_x;
        let mut m = vec![0.0; len_x];
        for (s, &v) in self.dist.p().iter().enumerate() {
            m[s & (len_x - 1)] += v;
        }
        Distribution::from_p(m)
    }

    pub fn moments(&self) -> Moments {
        let (n_x, n_h) = (self.n_x, self.n_h);
        let mut m = Moments::zeros(n_x, n_h);
        for (s, &v) in self.dist.p().iter().enumerate() {
            for i in 0..n_x {
                if s >> i & 1 == 1 {
                    m.x[i] += v;
                    for j in 0..n_h {
                        if s >> (n_x + j) & 1 == 1 {
                            m.xh[i * n_h + j] += v;
                        }
                    }
                }
            }
            for j in 0..n_h {
                if s >> (n_x + j) & 1 == 1 {
                    m.h[j] += v;
                }
            }
        }
        m
    }

    /// `Σ q log q`.
    pub fn neg_entropy(&self) -> f64 {
        self.dist.phi()
    }
}

/// Γ_H: `q(x, h) = q_x(x) Π_j f(h_j | x; p)`.
pub fn gamma_h(p: &RbmParams, q_x: &Distribution) -> Result<JointDistribution> {
    if q_x.n() != p.n_x {
        return Err(Error::DimensionMismatch {
            expected: p.n_x,
            found: q_x.n(),
        });
    }
    p.check_cap(p.units())?;
    let (n_x, n_h) = (p.n_x, p.n_h);
    let len_x = 1usize << n_x;
    let mut out = vec![0.0; len_x << n_h];
    let mut x = vec![0u8; n_x];
    for xm in 0..len_x {
        fill_bits(xm, &mut x);
        let f = p.cond_h_given_x(&x);
        for hm in 0..1usize << n_h {
            let mut v = q_x.prob(xm);
            for (j, fj) in f.iter().enumerate() {
                v *= if hm >> j & 1 == 1 { *fj } else { 1.0 - fj };
            }
            out[xm | (hm << n_x)] = v;
        }
    }
    Ok(JointDistribution {
        n_x,
        n_h,
        dist: Distribution::from_p(out)?,
    })
}

/// Γ_H by sampling one hidden vector per data row; returns the joint rows.
pub fn gamma_h_sampled<R: Rng + ?Sized>(
    p: &RbmParams,
    data: &SampleSet,
    rng: &mut R,
) -> Result<SampleSet> {
    if data.n() != p.n_x {
        return Err(Error::DimensionMismatch {
            expected: p.n_x,
            found: data.n(),
        });
    }
    let mut bits = Vec::with_capacity(data.len() * p.units());
    for x in data.rows() {
        bits.extend_from_slice(x);
        for j in 0..p.n_h {
            bits.push((rng.random::<f64>() < sigmoid(p.hidden_input(j, x))) as u8);
        }
    }
    SampleSet::from_flat(p.units(), bits, data.meta.clone())
}

/// What Γ_B projects: moments of `q` and, when known, `Σ q log q`.
#[derive(Debug, Clone)]
pub struct ProjectionTarget {
    pub moments: Moments,
    pub neg_entropy: Option<f64>,
}

impl ProjectionTarget {
    pub fn from_joint(q: &JointDistribution) -> Self {
        ProjectionTarget {
            moments: q.moments(),
            neg_entropy: Some(q.neg_entropy()),
        }
    }

    /// Moments of joint sample rows (`n_x` visible columns, then hidden).
    pub fn from_samples(rows: &SampleSet, n_x: usize) -> Self {
        let n_h = rows.n() - n_x;
        let mut m = Moments::zeros(n_x, n_h);
        let w = 1.0 / rows.len().max(1) as f64;
        let mut h = vec![0.0; n_h];
        for r in rows.rows() {
            for (a, &b) in h.iter_mut().zip(&r[n_x..]) {
                *a = b as f64;
            }
            m.accumulate(&r[..n_x], &h, w);
        }
        let neg_entropy = if rows.n() <= MAX_VARS {
            empirical_distribution(rows).ok().map(|d| d.phi())
        } else {
            None
        };
        ProjectionTarget {
            moments: m,
            neg_entropy,
        }
    }

    /// `D[q ‖ p] = Σ q log q - ξ·η(q) + log Z(ξ)`; without the entropy term
    /// this is the divergence up to a constant.
    fn divergence(&self, p: &RbmParams, log_z: f64) -> f64 {
        self.neg_entropy.unwrap_or(0.0) - p.dot(&self.moments) + log_z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaBReport {
    pub steps: usize,
    pub gradient_norm: f64,
    pub converged: bool,
}

/// Γ_B: minimizes `D[q ‖ p(ξ)]` over RBM parameters starting from `start`.
///
/// With [`GammaBMode::Exact`] the exact gradient `η(p) - η(q)` is followed with
/// the configured rate, halving the step whenever it would raise the
/// divergence. Running out of `sub_epochs` is reported, not an error.
pub fn gamma_b(
    q: &ProjectionTarget,
    start: &RbmParams,
    cfg: &TrainConfig,
) -> Result<(RbmParams, GammaBReport)> {
    let (n_x, n_h) = (start.n_x, start.n_h);
    if q.moments.x.len() != n_x || q.moments.h.len() != n_h {
        return Err(Error::DimensionMismatch {
            expected: n_x + n_h,
            found: q.moments.x.len() + q.moments.h.len(),
        });
    }
    let base_rate = cfg.learning_rate.averaged();
    let target = q.moments.as_vec();
    let mut p = start.clone();
    let (mut pm, lz) = p.model_moments()?;
    let mut f = q.divergence(&p, lz);
    let mut steps = 0;
    loop {
        let grad: Vec<f64> = pm
            .as_vec()
            .iter()
            .zip(&target)
            .map(|(a, b)| a - b)
            .collect();
        let norm = grad.iter().fold(0.0, |m: f64, g| m.max(g.abs()));
        if norm < cfg.gamma_b_tol || steps >= cfg.sub_epochs || base_rate == 0.0 {
            return Ok((
                p,
                GammaBReport {
                    steps,
                    gradient_norm: norm,
                    converged: norm < cfg.gamma_b_tol,
                },
            ));
        }
        steps += 1;
        let x = p.to_vec();
        let mut rate = base_rate;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = RbmParams::from_vec(
                n_x,
                n_h,
                &x.iter()
                    .zip(&grad)
                    .map(|(a, g)| a - rate * g)
                    .collect::<Vec<_>>(),
            );
            let (cm, clz) = cand.model_moments()?;
            let cf = q.divergence(&cand, clz);
            if cf.is_finite() && cf <= f {
                p = cand;
                pm = cm;
                f = cf;
                accepted = true;
                break;
            }
            rate *= 0.5;
        }
        if !accepted {
            // No descent direction at working precision.
            return Ok((
                p,
                GammaBReport {
                    steps,
                    gradient_norm: norm,
                    converged: false,
                },
            ));
        }
    }
}

/// Γ_B by damped Newton steps with the exact Fisher matrix of the RBM
/// family as Hessian.
pub fn gamma_b_newton(
    q: &ProjectionTarget,
    start: &RbmParams,
    tol: f64,
    max_iter: usize,
) -> Result<(RbmParams, GammaBReport)> {
    let (n_x, n_h) = (start.n_x, start.n_h);
    let dim = n_x + n_h + n_x * n_h;
    let target = q.moments.as_vec();
    let mut p = start.clone();
    let mut steps = 0;
    loop {
        let (pm, lz) = p.model_moments()?;
        let f = q.divergence(&p, lz);
        let grad: Vec<f64> = pm
            .as_vec()
            .iter()
            .zip(&target)
            .map(|(a, b)| a - b)
            .collect();
        let norm = grad.iter().fold(0.0, |m: f64, g| m.max(g.abs()));
        if norm < tol || steps >= max_iter {
            return Ok((
                p,
                GammaBReport {
                    steps,
                    gradient_norm: norm,
                    converged: norm < tol,
                },
            ));
        }
        steps += 1;
        let hess = fisher_rbm(&p)?;
        let g = nalgebra::DVector::from_vec(grad.clone());
        let dir = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => g.clone(),
        };
        let x = p.to_vec();
        let mut rate = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = RbmParams::from_vec(
                n_x,
                n_h,
                &x.iter()
                    .zip(dir.iter())
                    .map(|(a, s)| a - rate * s)
                    .collect::<Vec<_>>(),
            );
            let (_, clz) = cand.model_moments()?;
            let cf = q.divergence(&cand, clz);
            if cf.is_finite() && cf <= f {
                p = cand;
                accepted = true;
                break;
            }
            rate *= 0.5;
        }
        if !accepted {
            return Ok((
                p,
                GammaBReport {
                    steps,
                    gradient_norm: norm,
                    converged: false,
                },
            ));
        }
        debug_assert_eq!(dim, x.len());
    }
}

/// Covariance of the sufficient statistics `(x, h, x h)` under the model.
fn fisher_rbm(p: &RbmParams) -> Result<nalgebra::DMatrix<f64>> {
    let (n_x, n_h) = (p.n_x, p.n_h);
    let dim = n_x + n_h + n_x * n_h;
    let lw = p.log_marginal_weights()?;
    let lz = log_sum_exp(&lw);
    let mut second = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    let mut mean = vec![0.0; dim];
    let mut x = vec![0u8; n_x];
    // Index of each statistic: visible i, hidden j, pair (i, j).
    let vi = |i: usize| i;
    let hj = |j: usize| n_x + j;
    let pij = |i: usize, j: usize| n_x + n_h + i * n_h + j;
    let mut t = vec![0.0; dim];
    for (mask, l) in lw.iter().enumerate() {
        let px = (l - lz).exp();
        fill_bits(mask, &mut x);
        let s = p.cond_h_given_x(&x);
        // Conditional mean of each statistic given x.
        for i in 0..n_x {
            t[vi(i)] = x[i] as f64;
        }
        for j in 0..n_h {
            t[hj(j)] = s[j];
            for i in 0..n_x {
                t[pij(i, j)] = x[i] as f64 * s[j];
            }
        }
        for a in 0..dim {
            mean[a] += px * t[a];
        }
        // E[T_a T_b | x] = t_a t_b except where both involve the same h_j,
        // where h_j² = h_j adds s_j (1 - s_j).
        for a in 0..dim {
            for b in a..dim {
                second[(a, b)] += px * t[a] * t[b];
            }
        }
        for j in 0..n_h {
            let v = s[j] * (1.0 - s[j]);
            let mut involved = vec![hj(j)];
            for i in 0..n_x {
                if x[i] == 1 {
                    involved.push(pij(i, j));
                }
            }
            for (k, &a) in involved.iter().enumerate() {
                for &b in &involved[k..] {
                    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                    second[(lo, hi)] += px * v;
                }
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let c = second[(a, b)] - mean[a] * mean[b];
            second[(a, b)] = c;
            second[(b, a)] = c;
        }
    }
    symmetrize(&mut second);
    Ok(second)
}

/// Fractional mixed coordinates of a joint distribution: order-one η,
/// cross-layer order-two η, and θ for within-layer pairs and all higher
/// orders.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalMixed {
    pub n_x: usize,
    pub n_h: usize,
    pub eta1_x: Vec<f64>,
    pub eta1_h: Vec<f64>,
    /// Row-major `n_x × n_h`.
    pub eta_xh: Vec<f64>,
    /// `(mask, θ)` for pairs within the visible layer.
    pub theta_xx: Vec<(usize, f64)>,
    pub theta_hh: Vec<(usize, f64)>,
    /// `(mask, θ)` for every subset of order three or more.
    pub theta_high: Vec<(usize, f64)>,
}

impl FractionalMixed {
    pub fn from_joint(q: &JointDistribution) -> Self {
        let (n_x, n_h) = (q.n_x, q.n_h);
        let eta = q.dist.eta().as_slice();
        let theta = q.dist.theta().as_slice();
        let x_bits = (1usize << n_x) - 1;
        let mut out = FractionalMixed {
            n_x,
            n_h,
            eta1_x: (0..n_x).map(|i| eta[1 << i]).collect(),
            eta1_h: (0..n_h).map(|j| eta[1 << (n_x + j)]).collect(),
            eta_xh: Vec::with_capacity(n_x * n_h),
            theta_xx: Vec::new(),
            theta_hh: Vec::new(),
            theta_high: Vec::new(),
        };
        for i in 0..n_x {
            for j in 0..n_h {
                out.eta_xh.push(eta[(1 << i) | (1 << (n_x + j))]);
            }
        }
        for (m, &t) in theta.iter().enumerate().skip(1) {
            match m.count_ones() {
                1 => {}
                2 if m & x_bits == m => out.theta_xx.push((m, t)),
                2 if m & x_bits == 0 => out.theta_hh.push((m, t)),
                2 => {}
                _ => out.theta_high.push((m, t)),
            }
        }
        out
    }

    /// The η-side masks and their values, in the order
    /// `x_i`, `h_j`, `(x_i, h_j)`.
    fn eta_part(&self) -> (Vec<usize>, Vec<f64>) {
        let (n_x, n_h) = (self.n_x, self.n_h);
        let mut masks = Vec::new();
        let mut vals = Vec::new();
        for i in 0..n_x {
            masks.push(1 << i);
            vals.push(self.eta1_x[i]);
        }
        for j in 0..n_h {
            masks.push(1 << (n_x + j));
            vals.push(self.eta1_h[j]);
        }
        for i in 0..n_x {
            for j in 0..n_h {
                masks.push((1 << i) | (1 << (n_x + j)));
                vals.push(self.eta_xh[i * n_h + j]);
            }
        }
        (masks, vals)
    }

    /// Reconstructs the joint distribution with the constrained Newton solver.
    pub fn to_joint(&self, opts: &NewtonOptions) -> Result<JointDistribution> {
        let n = self.n_x + self.n_h;
        let mut base = vec![0.0; 1 << n];
        for &(m, t) in self
            .theta_xx
            .iter()
            .chain(&self.theta_hh)
            .chain(&self.theta_high)
        {
            base[m] = t;
        }
        let (free, targets) = self.eta_part();
        let (dist, _) = solve_free_theta(n, &base, &free, &targets, opts)?;
        JointDistribution::new(self.n_x, self.n_h, dist)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RbmTraceRow {
    pub epoch: usize,
    pub kl_to_empirical: Option<f64>,
    pub kl_to_target: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RbmRun {
    pub params: RbmParams,
    pub trace: Vec<RbmTraceRow>,
    pub epochs: usize,
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IpTraceRow {
    pub iteration: usize,
    pub d_q_to_prev_p: Option<f64>,
    pub d_q_to_new_p: Option<f64>,
    pub kl_marginal_to_empirical: Option<f64>,
    pub kl_marginal_to_target: Option<f64>,
    pub gamma_b_steps: usize,
    pub gamma_b_converged: bool,
}

#[derive(Debug, Clone)]
pub struct IpRun {
    pub params: RbmParams,
    pub trace: Vec<IpTraceRow>,
    /// Parameters after each iteration; `history[k]` pairs with `trace[k]`.
    pub history: Vec<RbmParams>,
}

impl IpRun {
    /// Largest violation of `D[q_{i+1}‖p_i] ≥ D[q_{i+1}‖p_{i+1}] ≥ D[q_{i+2}‖p_{i+1}]`
    /// along the trace; `None` when divergences were not computed.
    pub fn max_monotonicity_violation(&self) -> Option<f64> {
        let mut worst: f64 = 0.0;
        for (k, row) in self.trace.iter().enumerate() {
            let (prev, new) = (row.d_q_to_prev_p?, row.d_q_to_new_p?);
            worst = worst.max(new - prev);
            if let Some(next) = self.trace.get(k + 1) {
                worst = worst.max(next.d_q_to_prev_p? - new);
            }
        }
        Some(worst)
    }
}

/// Index into [`IpRun::history`] whose marginal is closest to the empirical
/// distribution in `KL(empirical ‖ model)`.
pub fn best_ip_select(run: &IpRun) -> Option<(usize, &RbmParams)> {
    let mut best: Option<(usize, f64)> = None;
    for (k, row) in run.trace.iter().enumerate() {
        let Some(kl) = row.kl_marginal_to_empirical else {
            continue;
        };
        if best.is_none_or(|(_, b)| kl <= b) {
            best = Some((k, kl));
        }
    }
    best.map(|(k, _)| (k, &run.history[k]))
}

struct Monitor<'a> {
    empirical: Option<Distribution>,
    target: Option<&'a Distribution>,
}

impl<'a> Monitor<'a> {
    fn new(data: &SampleSet, target: Option<&'a Distribution>) -> Result<Self> {
        if let Some(t) = target {
            if t.n() != data.n() {
                return Err(Error::DimensionMismatch {
                    expected: data.n(),
                    found: t.n(),
                });
            }
        }
        let empirical = (data.n() <= MAX_VARS)
            .then(|| empirical_distribution(data))
            .transpose()?;
        Ok(Monitor { empirical, target })
    }

    fn kls(&self, model: Option<&Distribution>) -> Result<(Option<f64>, Option<f64>)> {
        let Some(model) = model else {
            return Ok((None, None));
        };
        Ok((
            self.empirical
                .as_ref()
                .map(|e| kl_divergence(e, model))
                .transpose()?,
            self.target.map(|t| kl_divergence(t, model)).transpose()?,
        ))
    }

    fn row(&self, epoch: usize, p: &RbmParams) -> Result<RbmTraceRow> {
        let model = (p.n_x <= MAX_VARS).then(|| p.marginal()).transpose()?;
        let (kl_to_empirical, kl_to_target) = self.kls(model.as_ref())?;
        Ok(RbmTraceRow {
            epoch,
            kl_to_empirical,
            kl_to_target,
        })
    }
}

fn n_hidden(cfg: &TrainConfig) -> Result<usize> {
    cfg.n_h
        .ok_or_else(|| Error::InvalidConfig("RBM training needs n_h".into()))
}

fn apply(p: &mut RbmParams, pos: &Moments, neg: &Moments, rate: f64) {
    for (b, (a, c)) in p.b.iter_mut().zip(pos.x.iter().zip(&neg.x)) {
        *b += rate * (a - c);
    }
    for (d, (a, c)) in p.d.iter_mut().zip(pos.h.iter().zip(&neg.h)) {
        *d += rate * (a - c);
    }
    for (w, (a, c)) in p.w.iter_mut().zip(pos.xh.iter().zip(&neg.xh)) {
        *w += rate * (a - c);
    }
}

/// Distinct data rows with their relative frequencies, in row order.
fn distinct_rows(data: &SampleSet) -> Vec<(&[u8], f64)> {
    let mut counts: BTreeMap<&[u8], usize> = BTreeMap::new();
    for x in data.rows() {
        *counts.entry(x).or_default() += 1;
    }
    let w = 1.0 / data.len() as f64;
    counts.into_iter().map(|(x, c)| (x, c as f64 * w)).collect()
}

/// `E_data E_{p(h|x)}[·]` over weighted distinct rows.
fn positive_moments(p: &RbmParams, rows: &[(&[u8], f64)]) -> Moments {
    let mut m = Moments::zeros(p.n_x, p.n_h);
    for &(x, w) in rows {
        m.accumulate(x, &p.cond_h_given_x(x), w);
    }
    m
}

fn start(data: &SampleSet, cfg: &TrainConfig) -> Result<(RbmParams, TrialRng)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training data is empty".into()));
    }
    let mut rng = TrialRng::seed_from_u64(cfg.seed);
    let p = RbmParams::init(data, n_hidden(cfg)?, cfg.init_noise, &mut rng);
    Ok((p, rng))
}

/// Maximum-likelihood gradient ascent on the visible marginal.
pub fn train_ml(
    data: &SampleSet,
    cfg: &TrainConfig,
    target: Option<&Distribution>,
) -> Result<RbmRun> {
    let (mut p, mut rng) = start(data, cfg)?;
    let monitor = Monitor::new(data, target)?;
    let rate = cfg.learning_rate.averaged();
    let exact = p.units() <= EXACT_ML_MAX_UNITS && cfg.negative_phase() == NegativePhase::Exact;
    let (steps, chains) = match cfg.negative_phase() {
        NegativePhase::Gibbs { steps, chains } => (steps, chains),
        NegativePhase::Exact => (cfg.gibbs_steps, cfg.gibbs_chains),
    };
    let mut trace = vec![monitor.row(0, &p)?];
    let mut prev = f64::INFINITY;
    let mut rising = 0;
    let mut diverged_at = None;
    let mut epochs = 0;
    let rows = distinct_rows(data);
    for epoch in 1..=cfg.max_epochs {
        let pos = positive_moments(&p, &rows);
        let neg = if exact {
            p.model_moments()?.0
        } else {
            gibbs_moments(&p, steps, chains, &mut rng)
        };
        let before = p.clone();
        apply(&mut p, &pos, &neg, rate);
        let row = match p.is_finite().then_some(()).ok_or(Error::Overflow) {
            Ok(()) if exact || cfg.should_trace(epoch) => monitor.row(epoch, &p).map(Some),
            Ok(()) => Ok(None),
            Err(e) => Err(e),
        };
        let row = match row {
            Ok(r) => r,
            Err(Error::Overflow) => {
                p = before;
                diverged_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        };
        epochs = epoch;
        if exact {
            let row = row.expect("exact runs trace every epoch");
            let kl = row.kl_to_empirical.unwrap_or(f64::NAN);
            rising = if kl > prev { rising + 1 } else { 0 };
            prev = kl;
            let stop = rising >= cfg.divergence_patience;
            if cfg.should_trace(epoch) || stop {
                trace.push(row);
            }
            if stop {
                diverged_at = Some(epoch);
                break;
            }
        } else if let Some(row) = row {
            trace.push(row);
        }
    }
    Ok(RbmRun {
        params: p,
        trace,
        epochs,
        diverged_at,
    })
}

/// Moments from `chains` blocked Gibbs chains started at uniform visible
/// states, with hidden units Rao-Blackwellized.
fn gibbs_moments<R: Rng + ?Sized>(
    p: &RbmParams,
    steps: usize,
    chains: usize,
    rng: &mut R,
) -> Moments {
    let mut m = Moments::zeros(p.n_x, p.n_h);
    let w = 1.0 / chains as f64;
    let mut x = vec![0u8; p.n_x];
    let mut h = vec![0u8; p.n_h];
    for _ in 0..chains {
        for v in x.iter_mut() {
            *v = rng.random_range(0..2u8);
        }
        for _ in 0..steps {
            for j in 0..p.n_h {
                h[j] = (rng.random::<f64>() < sigmoid(p.hidden_input(j, &x))) as u8;
            }
            for i in 0..p.n_x {
                x[i] = (rng.random::<f64>() < sigmoid(p.visible_input(i, &h))) as u8;
            }
        }
        m.accumulate(&x, &p.cond_h_given_x(&x), w);
    }
    m
}

/// Largest joint state count for which CD-1 samples layers as state counts.
const TABLE_MAX_STATES: usize = 1 << 16;

/// Integer co-occurrence counts of one CD-1 pass.
struct CdCounts {
    x: Vec<u64>,
    h: Vec<u64>,
    xh: Vec<u64>,
}

impl CdCounts {
    fn new(n_x: usize, n_h: usize) -> Self {
        CdCounts {
            x: vec![0; n_x],
            h: vec![0; n_h],
            xh: vec![0; n_x * n_h],
        }
    }

    fn add(&mut self, x: &[u8], h: &[u8], times: u64) {
        let n_h = self.h.len();
        for (c, &v) in self.h.iter_mut().zip(h) {
            *c += v as u64 * times;
        }
        for (i, &xi) in x.iter().enumerate() {
            if xi == 1 {
                self.x[i] += times;
                for (c, &v) in self.xh[i * n_h..(i + 1) * n_h].iter_mut().zip(h) {
                    *c += v as u64 * times;
                }
            }
        }
    }

    fn to_moments(&self, count: usize) -> Moments {
        let w = 1.0 / count as f64;
        let f = |v: &Vec<u64>| v.iter().map(|&c| c as f64 * w).collect();
        Moments {
            x: f(&self.x),
            h: f(&self.h),
            xh: f(&self.xh),
        }
    }
}

/// Probabilities of a product of Bernoulli(`f_k`) over all masks.
fn product_probs(f: &[f64]) -> Vec<f64> {
    let mut probs = vec![1.0];
    for &fk in f {
        let mut next = Vec::with_capacity(probs.len() * 2);
        next.extend(probs.iter().map(|p| p * (1.0 - fk)));
        next.extend(probs.iter().map(|p| p * fk));
        probs = next;
    }
    probs
}

/// Adds a Multinomial(`count`, `probs`) draw into `out` via conditional
/// binomials.
fn add_multinomial<R: Rng + ?Sized>(count: u64, probs: &[f64], out: &mut [u64], rng: &mut R) {
    let mut left = count;
    let mut mass: f64 = probs.iter().sum();
    for (k, &pk) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        let last = k + 1 == probs.len();
        let share = if last || mass <= 0.0 {
            1.0
        } else {
            (pk / mass).clamp(0.0, 1.0)
        };
        let c = if share >= 1.0 {
            left
        } else {
            Binomial::new(left, share)
                .expect("share lies in [0, 1]")
                .sample(rng)
        };
        out[k] += c;
        left -= c;
        mass -= pk;
    }
}

/// One CD-1 pass over `data`: `h⁰ ~ p(h|x⁰)`, `x¹ ~ p(x|h⁰)`, `h¹ ~ p(h|x¹)`.
/// Returns positive and negative moments from the sampled states.
fn cd_pass<R: Rng + ?Sized>(p: &RbmParams, data: &SampleSet, rng: &mut R) -> (Moments, Moments) {
    let units = p.n_x + p.n_h;
    let per_row_draws = data.len() * (p.n_x + 2 * p.n_h);
    if units < 32 && (1usize << units) <= TABLE_MAX_STATES && 8 << units <= per_row_draws {
        cd_pass_table(p, data, rng)
    } else {
        cd_pass_units(p, data, rng)
    }
}

/// Samples whole layers as state counts: rows sharing a state are exchangeable,
/// so each layer is a multinomial draw per conditioning state.
fn cd_pass_table<R: Rng + ?Sized>(
    p: &RbmParams,
    data: &SampleSet,
    rng: &mut R,
) -> (Moments, Moments) {
    let (n_x, n_h) = (p.n_x, p.n_h);
    let (sx, sh) = (1usize << n_x, 1usize << n_h);
    let mut bits_x = vec![0u8; n_x];
    let mut bits_h = vec![0u8; n_h];
    let h_given_x: Vec<Vec<f64>> = (0..sx)
        .map(|m| {
            fill_bits(m, &mut bits_x);
            product_probs(&p.cond_h_given_x(&bits_x))
        })
        .collect();
    let x_given_h: Vec<Vec<f64>> = (0..sh)
        .map(|m| {
            fill_bits(m, &mut bits_h);
            product_probs(&p.cond_x_given_h(&bits_h))
        })
        .collect();
    let mut x0 = vec![0u64; sx];
    for row in data.rows() {
        x0[crate::subset::bits_to_mask(row)] += 1;
    }
    // pairs[x * sh + h]
    let mut pos_pairs = vec![0u64; sx * sh];
    for (xm, &c) in x0.iter().enumerate() {
        add_multinomial(
            c,
            &h_given_x[xm],
            &mut pos_pairs[xm * sh..(xm + 1) * sh],
            rng,
        );
    }
    let mut h0 = vec![0u64; sh];
    for (s, &c) in pos_pairs.iter().enumerate() {
        h0[s % sh] += c;
    }
    let mut x1 = vec![0u64; sx];
    for (hm, &c) in h0.iter().enumerate() {
        add_multinomial(c, &x_given_h[hm], &mut x1, rng);
    }
    let mut neg_pairs = vec![0u64; sx * sh];
    for (xm, &c) in x1.iter().enumerate() {
        add_multinomial(
            c,
            &h_given_x[xm],
            &mut neg_pairs[xm * sh..(xm + 1) * sh],
            rng,
        );
    }
    let mut pos = CdCounts::new(n_x, n_h);
    let mut neg = CdCounts::new(n_x, n_h);
    for (pairs, counts) in [(&pos_pairs, &mut pos), (&neg_pairs, &mut neg)] {
        for (s, &c) in pairs.iter().enumerate() {
            if c > 0 {
                fill_bits(s / sh, &mut bits_x);
                fill_bits(s % sh, &mut bits_h);
                counts.add(&bits_x, &bits_h, c);
            }
        }
    }
    (pos.to_moments(data.len()), neg.to_moments(data.len()))
}

/// Unit-by-unit sampling for layers too wide to tabulate.
fn cd_pass_units<R: Rng + ?Sized>(
    p: &RbmParams,
    data: &SampleSet,
    rng: &mut R,
) -> (Moments, Moments) {
    let (n_x, n_h) = (p.n_x, p.n_h);
    let mut pos = CdCounts::new(n_x, n_h);
    let mut neg = CdCounts::new(n_x, n_h);
    let mut h0 = vec![0u8; n_h];
    let mut x1 = vec![0u8; n_x];
    let mut h1 = vec![0u8; n_h];
    for x0 in data.rows() {
        for j in 0..n_h {
            h0[j] = (rng.random::<f64>() < sigmoid(p.hidden_input(j, x0))) as u8;
        }
        for i in 0..n_x {
            x1[i] = (rng.random::<f64>() < sigmoid(p.visible_input(i, &h0))) as u8;
        }
        for j in 0..n_h {
            h1[j] = (rng.random::<f64>() < sigmoid(p.hidden_input(j, &x1))) as u8;
        }
        pos.add(x0, &h0, 1);
        neg.add(&x1, &h1, 1);
    }
    (pos.to_moments(data.len()), neg.to_moments(data.len()))
}

/// CD-1 with full-batch updates.
pub fn train_cd1(
    data: &SampleSet,
    cfg: &TrainConfig,
    target: Option<&Distribution>,
) -> Result<RbmRun> {
    let (mut p, mut rng) = start(data, cfg)?;
    let monitor = Monitor::new(data, target)?;
    let rate = cfg.learning_rate.averaged();
    let mut trace = vec![monitor.row(0, &p)?];
    let mut epochs = 0;
    let mut diverged_at = None;
    for epoch in 1..=cfg.max_epochs {
        let (pos, neg) = cd_pass(&p, data, &mut rng);
        let before = p.clone();
        apply(&mut p, &pos, &neg, rate);
        let row = match p.is_finite().then_some(()).ok_or(Error::Overflow) {
            Ok(()) if cfg.should_trace(epoch) => monitor.row(epoch, &p).map(Some),
            Ok(()) => Ok(None),
            Err(e) => Err(e),
        };
        match row {
            Ok(row) => trace.extend(row),
            Err(Error::Overflow) => {
                p = before;
                diverged_at = Some(epoch);
                break;
            }
            Err(e) => return Err(e),
        }
        epochs = epoch;
    }
    Ok(RbmRun {
        params: p,
        trace,
        epochs,
        diverged_at,
    })
}

/// CD-1 for the fully visible sub-problem of Γ_B: every joint row is data,
/// and a step resamples `h` given `x`, then `x` given `h`, then `h` again.
fn gamma_b_cd<R: Rng + ?Sized>(
    rows: &SampleSet,
    start: &RbmParams,
    cfg: &TrainConfig,
    rng: &mut R,
) -> (RbmParams, GammaBReport) {
    let (n_x, n_h) = (start.n_x, start.n_h);
    let rate = cfg.learning_rate.averaged();
    let mut p = start.clone();
    let mut pos = CdCounts::new(n_x, n_h);
    for r in rows.rows() {
        pos.add(&r[..n_x], &r[n_x..], 1);
    }
    let pos = pos.to_moments(rows.len());
    let mut x1 = vec![0u8; n_x];
    let mut h1 = vec![0u8; n_h];
    for _ in 0..cfg.sub_epochs {
        let mut neg = CdCounts::new(n_x, n_h);
        for r in rows.rows() {
            let x0 = &r[..n_x];
            for j in 0..n_h {
                h1[j] = (rng.random::<f64>() < sigmoid(p.hidden_input(j, x0))) as u8;
            }
            for i in 0..n_x {
                x1[i] = (rng.random::<f64>() < sigmoid(p.visible_input(i, &h1))) as u8;
            }
            for j in 0..n_h {
                h1[j] = (rng.random::<f64>() < sigmoid(p.hidden_input(j, &x1))) as u8;
            }
            neg.add(&x1, &h1, 1);
        }
        apply(&mut p, &pos, &neg.to_moments(rows.len()), rate);
    }
    (
        p,
        GammaBReport {
            steps: cfg.sub_epochs,
            gradient_norm: f64::NAN,
            converged: false,
        },
    )
}

/// Alternating projections `q_{i+1} = Γ_H(p_i)`, `p_{i+1} = Γ_B(q_{i+1})`
/// starting from `p0` (or the usual initialization when `None`).
pub fn train_ip(
    data: &SampleSet,
    p0: Option<RbmParams>,
    cfg: &TrainConfig,
    target: Option<&Distribution>,
) -> Result<IpRun> {
    let (init, mut rng) = start(data, cfg)?;
    let mut p = p0.unwrap_or(init);
    if p.n_x != data.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: p.n_x,
        });
    }
    let monitor = Monitor::new(data, target)?;
    let enumerable = p.units() <= MAX_VARS;
    let q_x = monitor.empirical.clone();
    let mut trace = Vec::with_capacity(cfg.ip_iterations);
    let mut history = Vec::with_capacity(cfg.ip_iterations);
    for iteration in 1..=cfg.ip_iterations {
        let (q, q_joint) = match (cfg.gamma_h, enumerable, q_x.as_ref()) {
            (GammaHMode::Exact, true, Some(q_x)) => {
                let joint = gamma_h(&p, q_x)?;
                (ProjectionTarget::from_joint(&joint), None)
            }
            (GammaHMode::Exact, _, _) => {
                return Err(Error::CapExceeded {
                    n: p.units(),
                    cap: MAX_VARS,
                })
            }
            (GammaHMode::Sampled, _, _) => {
                let rows = gamma_h_sampled(&p, data, &mut rng)?;
                (ProjectionTarget::from_samples(&rows, p.n_x), Some(rows))
            }
        };
        let before = divergence_to(&q, &p)?;
        let (next, report) = match cfg.gamma_b {
            GammaBMode::Exact => gamma_b(&q, &p, cfg)?,
            GammaBMode::Cd => {
                let rows = match q_joint {
                    Some(rows) => rows,
                    None => ip_joint_rows(&p, data, &mut rng)?,
                };
                gamma_b_cd(&rows, &p, cfg, &mut rng)
            }
        };
        p = next;
        let after = divergence_to(&q, &p)?;
        let model = (p.n_x <= MAX_VARS).then(|| p.marginal()).transpose()?;
        let (kl_e, kl_t) = monitor.kls(model.as_ref())?;
        trace.push(IpTraceRow {
            iteration,
            d_q_to_prev_p: before,
            d_q_to_new_p: after,
            kl_marginal_to_empirical: kl_e,
            kl_marginal_to_target: kl_t,
            gamma_b_steps: report.steps,
            gamma_b_converged: report.converged,
        });
        history.push(p.clone());
    }
    Ok(IpRun {
        params: p,
        trace,
        history,
    })
}

/// Joint rows for CD sub-learning when Γ_H is exact: one hidden draw per
/// data row.
fn ip_joint_rows<R: Rng + ?Sized>(
    p: &RbmParams,
    data: &SampleSet,
    rng: &mut R,
) -> Result<SampleSet> {
    gamma_h_sampled(p, data, rng)
}

fn divergence_to(q: &ProjectionTarget, p: &RbmParams) -> Result<Option<f64>> {
    if q.neg_entropy.is_none() || p.n_x > MAX_VARS {
        return Ok(None);
    }
    Ok(Some(q.divergence(p, p.log_partition()?)))
}
