//! Probability tables on the open simplex and their coordinate systems.
//!
//! A [`Distribution`] owns a strictly positive table of `2^n` probabilities
//! indexed by state mask and lazily caches its η- and θ-coordinates. The
//! conversions are exact lattice transforms except for mixed coordinates,
//! which need an iterative solve ([`solve_free_theta`]).

use std::sync::OnceLock;

use faer::linalg::solvers::Solve;
use faer::{Col, Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subset::{self, SubsetIndex, MAX_VARS};

/// A strictly positive, normalized table over `2^n` binary states.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DistributionFile", into = "DistributionFile")]
pub struct Distribution {
    n: usize,
    p: Vec<f64>,
    eta: OnceLock<EtaCoords>,
    theta: OnceLock<ThetaCoords>,
}

/// On-disk form: `{ "n": int, "p": [2^n floats in increasing-mask order] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DistributionFile {
    n: usize,
    p: Vec<f64>,
}

impl TryFrom<DistributionFile> for Distribution {
    type Error = Error;

    fn try_from(f: DistributionFile) -> Result<Self> {
        if f.p.len() != 1usize.checked_shl(f.n as u32).unwrap_or(0) {
            return Err(Error::DimensionMismatch {
                expected: 1usize.checked_shl(f.n as u32).unwrap_or(usize::MAX),
                found: f.p.len(),
            });
        }
        Distribution::from_p(f.p)
    }
}

impl From<Distribution> for DistributionFile {
    fn from(d: Distribution) -> Self {
        DistributionFile { n: d.n, p: d.p }
    }
}

impl PartialEq for Distribution {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.p == other.p
    }
}

impl Distribution {
    /// Validates and normalizes a positive table whose length is `2^n`.
    pub fn from_p(table: Vec<f64>) -> Result<Self> {
        let n = subset::vars_for_len(table.len()).ok_or(Error::BadLength(table.len()))?;
        if n > MAX_VARS {
            return Err(Error::CapExceeded { n, cap: MAX_VARS });
        }
        if let Some((state, &value)) = table
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::NonPositiveEntry { state, value });
        }
        let total: f64 = table.iter().sum();
        let p = table.into_iter().map(|v| v / total).collect();
        Ok(Self::from_normalized(n, p))
    }

    fn from_normalized(n: usize, p: Vec<f64>) -> Self {
        Distribution {
            n,
            p,
            eta: OnceLock::new(),
            theta: OnceLock::new(),
        }
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_VARS {
            return Err(Error::CapExceeded { n, cap: MAX_VARS });
        }
        let len = 1usize << n;
        Ok(Self::from_normalized(n, vec![1.0 / len as f64; len]))
    }

    /// Product of independent Bernoulli marginals `P(x_i = 1) = marginals[i]`.
    pub fn product(marginals: &[f64]) -> Result<Self> {
        let n = marginals.len();
        if n == 0 || n > MAX_VARS {
            return Err(Error::CapExceeded { n, cap: MAX_VARS });
        }
        let p = (0..1usize << n)
            .map(|s| {
                marginals
                    .iter()
                    .enumerate()
                    .map(|(i, &m)| if s >> i & 1 == 1 { m } else { 1.0 - m })
                    .product()
            })
            .collect();
        Self::from_p(p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    /// Probability of the state encoded by `mask`.
    pub fn prob(&self, mask: usize) -> f64 {
        self.p[mask]
    }

    /// Expectation coordinates `η_I = Σ_{s ⊇ I} p_s`.
    pub fn eta(&self) -> &EtaCoords {
        self.eta.get_or_init(|| {
            let mut eta = self.p.clone();
            subset::superset_zeta(&mut eta);
            EtaCoords { n: self.n, eta }
        })
    }

    /// Natural coordinates by Möbius inversion of `log p`, with
    /// `ψ = -log p(0…0)`.
    pub fn theta(&self) -> &ThetaCoords {
        self.theta.get_or_init(|| {
            let mut theta: Vec<f64> = self.p.iter().map(|v| v.ln()).collect();
            let psi = -theta[0];
            subset::subset_mobius(&mut theta);
            theta[0] = 0.0;
            ThetaCoords {
                n: self.n,
                theta,
                psi,
            }
        })
    }

    /// Negative entropy `φ = Σ p log p`.
    pub fn phi(&self) -> f64 {
        self.p.iter().map(|v| v * v.ln()).sum()
    }

    /// `l`-mixed coordinates: η up to order `l`, θ above it.
    pub fn mixed(&self, l: usize) -> Result<MixedCoords> {
        check_order(l, self.n)?;
        let eta = self.eta();
        let theta = self.theta();
        let values = (0..self.p.len())
            .map(|m| match m.count_ones() as usize {
                0 => 0.0,
                k if k <= l => eta.eta[m],
                _ => theta.theta[m],
            })
            .collect();
        Ok(MixedCoords {
            n: self.n,
            l,
            values,
        })
    }

    /// Marginal over the variables in `keep` (re-indexed in ascending order).
    pub fn marginal(&self, keep: SubsetIndex) -> Result<Distribution> {
        let vars: Vec<usize> = keep.vars().map(|v| v - 1).collect();
        if vars.is_empty() || vars.iter().any(|&v| v >= self.n) {
            return Err(Error::InvalidConfig(format!("bad marginal subset {keep}")));
        }
        let mut out = vec![0.0; 1 << vars.len()];
        for (s, &v) in self.p.iter().enumerate() {
            let m = vars
                .iter()
                .enumerate()
                .fold(0usize, |acc, (k, &i)| acc | ((s >> i & 1) << k));
            out[m] += v;
        }
        Distribution::from_p(out)
    }

    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn check_order(l: usize, n: usize) -> Result<()> {
    if l == 0 || l > n {
        Err(Error::BadOrder { l, n })
    } else {
        Ok(())
    }
}

/// Expectation coordinates. Index 0 holds `η_∅ = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaCoords {
    n: usize,
    eta: Vec<f64>,
}

impl EtaCoords {
    /// Builds from the `2^n - 1` nonempty-subset values in increasing-mask
    /// order.
    pub fn from_values(n: usize, values: &[f64]) -> Result<Self> {
        let len = 1usize << n;
        if values.len() + 1 != len {
            return Err(Error::DimensionMismatch {
                expected: len - 1,
                found: values.len(),
            });
        }
        let mut eta = Vec::with_capacity(len);
        eta.push(1.0);
        eta.extend_from_slice(values);
        Ok(EtaCoords { n, eta })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: SubsetIndex) -> f64 {
        self.eta[i.mask()]
    }

    /// Full table indexed by mask, including `η_∅`.
    pub fn as_slice(&self) -> &[f64] {
        &self.eta
    }

    /// Möbius inversion back to probabilities.
    pub fn to_distribution(&self) -> Result<Distribution> {
        let mut p = self.eta.clone();
        p[0] = 1.0;
        subset::superset_mobius(&mut p);
        if let Some((state, &value)) = p.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            return Err(Error::NonPositiveReconstruction { state, value });
        }
        Distribution::from_p(p)
    }
}

/// Natural coordinates with log normalizer `psi`. Index 0 is unused (0).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCoords {
    n: usize,
    theta: Vec<f64>,
    psi: f64,
}

impl ThetaCoords {
    /// Builds from the `2^n - 1` nonempty-subset values; `psi` is derived.
    pub fn from_values(n: usize, values: &[f64]) -> Result<Self> {
        let len = 1usize << n;
        if values.len() + 1 != len {
            return Err(Error::DimensionMismatch {
                expected: len - 1,
                found: values.len(),
            });
        }
        let mut theta = Vec::with_capacity(len);
        theta.push(0.0);
        theta.extend_from_slice(values);
        let mut t = ThetaCoords { n, theta, psi: 0.0 };
        t.psi = t.log_partition()?;
        Ok(t)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: SubsetIndex) -> f64 {
        self.theta[i.mask()]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.theta
    }

    /// The stored log normalizer.
    pub fn psi(&self) -> f64 {
        self.psi
    }

    /// `ψ(θ) = log Σ_x exp(Σ_I θ^I X_I(x))`, recomputed from θ.
    pub fn log_partition(&self) -> Result<f64> {
        let s = self.exponents()?;
        Ok(log_sum_exp(&s))
    }

    fn exponents(&self) -> Result<Vec<f64>> {
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Overflow);
        }
        let mut s = self.theta.clone();
        s[0] = 0.0;
        subset::subset_zeta(&mut s);
        Ok(s)
    }

    /// `p(x) ∝ exp(Σ_I θ^I X_I(x))`; the stored `psi` is ignored.
    pub fn to_distribution(&self) -> Result<Distribution> {
        distribution_from_exponents(self.n, self.exponents()?)
    }
}

/// Normalizes `exp(s)` with a max shift; fails if any state underflows.
pub(crate) fn distribution_from_exponents(n: usize, s: Vec<f64>) -> Result<Distribution> {
    let lse = log_sum_exp(&s);
    if !lse.is_finite() {
        return Err(Error::Overflow);
    }
    let p: Vec<f64> = s.iter().map(|v| (v - lse).exp()).collect();
    if p.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::Overflow);
    }
    Ok(Distribution::from_normalized(n, p))
}

pub(crate) fn log_sum_exp(s: &[f64]) -> f64 {
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `l`-mixed coordinates. `values[mask]` holds `η_I` for `|I| ≤ l` and
/// `θ^I` for `|I| > l`; index 0 is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedCoords {
    n: usize,
    l: usize,
    values: Vec<f64>,
}

impl MixedCoords {
    /// Builds from a full mask-indexed table (entry 0 ignored).
    pub fn from_table(n: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        check_order(l, n)?;
        if values.len() != 1 << n {
            return Err(Error::DimensionMismatch {
                expected: 1 << n,
                found: values.len(),
            });
        }
        Ok(MixedCoords { n, l, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> usize {
        self.l
    }

    pub fn get(&self, i: SubsetIndex) -> f64 {
        self.values[i.mask()]
    }

    pub fn set(&mut self, i: SubsetIndex, v: f64) {
        self.values[i.mask()] = v;
    }

    /// The η block, grouped by order.
    pub fn eta_low(&self) -> Vec<(SubsetIndex, f64)> {
        subset::by_order(self.n)
            .into_iter()
            .filter(|s| s.order() <= self.l)
            .map(|s| (s, self.values[s.mask()]))
            .collect()
    }

    /// The θ block, grouped by order.
    pub fn theta_high(&self) -> Vec<(SubsetIndex, f64)> {
        subset::by_order(self.n)
            .into_iter()
            .filter(|s| s.order() > self.l)
            .map(|s| (s, self.values[s.mask()]))
            .collect()
    }

    /// The tailored coordinates: same η block, θ block set to zero.
    pub fn tailored(&self) -> MixedCoords {
        let mut out = self.clone();
        for (m, v) in out.values.iter_mut().enumerate() {
            if m.count_ones() as usize > self.l {
                *v = 0.0;
            }
        }
        out
    }

    pub fn to_distribution(&self) -> Result<Distribution> {
        self.to_distribution_with(&NewtonOptions::default())
    }

    /// Reconstructs the unique distribution with these coordinates by
    /// solving for the low-order θ with the high-order θ held fixed.
    pub fn to_distribution_with(&self, opts: &NewtonOptions) -> Result<Distribution> {
        if self.l == self.n {
            return EtaCoords::from_values(self.n, &self.values[1..])?.to_distribution();
        }
        let mut base = vec![0.0; self.values.len()];
        let mut free = Vec::new();
        let mut targets = Vec::new();
        for (m, &v) in self.values.iter().enumerate().skip(1) {
            if m.count_ones() as usize > self.l {
                base[m] = v;
            } else {
                free.push(m);
                targets.push(v);
            }
        }
        solve_free_theta(self.n, &base, &free, &targets, opts).map(|(d, _)| d)
    }
}

/// Settings for [`solve_free_theta`].
#[derive(Debug, Clone)]
pub struct NewtonOptions {
    /// Convergence threshold on the max-norm η residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Starting values for the free θ block (zeros when absent).
    pub initial: Option<Vec<f64>>,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tol: 1e-8,
            max_iter: 500,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonReport {
    pub iterations: usize,
    pub residual: f64,
}

struct Evaluated {
    dist: Distribution,
    objective: f64,
    residual: Vec<f64>,
}

impl Evaluated {
    fn max_residual(&self) -> f64 {
        self.residual.iter().fold(0.0, |a, r| a.max(r.abs()))
    }
}

fn evaluate(
    n: usize,
    theta: &[f64],
    free: &[usize],
    x: &[f64],
    targets: &[f64],
) -> Result<Evaluated> {
    let mut s = theta.to_vec();
    for (&m, &v) in free.iter().zip(x) {
        s[m] = v;
    }
    s[0] = 0.0;
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow);
    }
    subset::subset_zeta(&mut s);
    let psi = log_sum_exp(&s);
    let dist = distribution_from_exponents(n, s)?;
    let eta = dist.eta().as_slice();
    let residual = free.iter().zip(targets).map(|(&m, t)| eta[m] - t).collect();
    let objective = psi - x.iter().zip(targets).map(|(a, t)| a * t).sum::<f64>();
    Ok(Evaluated {
        dist,
        objective,
        residual,
    })
}

fn damped_solve(hess: &Mat<f64>, grad: &[f64], mu: f64) -> Option<Vec<f64>> {
    let mut h = hess.clone();
    for i in 0..h.nrows() {
        h[(i, i)] += mu;
    }
    let rhs = Col::<f64>::from_fn(grad.len(), |i| grad[i]);
    let step = match h.llt(Side::Lower) {
        Ok(ch) => ch.solve(&rhs),
        Err(_) => h.partial_piv_lu().solve(&rhs),
    };
    let step: Vec<f64> = step.iter().copied().collect();
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Backtracks from a full step until the dual decreases sufficiently, or,
/// once that change is at round-off level, until the max residual drops.
fn line_search<F>(cur: &Evaluated, res: f64, slope: f64, mut at: F) -> Option<(Vec<f64>, Evaluated)>
where
    F: FnMut(f64) -> Option<(Vec<f64>, Evaluated)>,
{
    let mut t = 1.0;
    for _ in 0..60 {
        if let Some((trial, e)) = at(t) {
            let armijo = e.objective <= cur.objective - 1e-4 * t * slope;
            let flat = (e.objective - cur.objective).abs() <= 1e-13 * cur.objective.abs().max(1.0);
            if armijo || (flat && e.max_residual() < res) {
                return Some((trial, e));
            }
        }
        t *= 0.5;
    }
    None
}

/// Finds the distribution in the e-flat family `{θ : θ^J = base[J], J ∉ free}`
/// whose η on the `free` masks equals `targets`.
///
/// Damped Newton on the convex dual `ψ(θ) - Σ_free θ^I t_I`; the Jacobian is
/// the θ-Fisher block `η_{I∪J} - η_I η_J`.
pub fn solve_free_theta(
    n: usize,
    base: &[f64],
    free: &[usize],
    targets: &[f64],
    opts: &NewtonOptions,
) -> Result<(Distribution, NewtonReport)> {
    if n == 0 || n > MAX_VARS {
        return Err(Error::CapExceeded { n, cap: MAX_VARS });
    }
    if base.len() != 1 << n {
        return Err(Error::DimensionMismatch {
            expected: 1 << n,
            found: base.len(),
        });
    }
    if free.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: free.len(),
            found: targets.len(),
        });
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::NonRealizable(format!("η target {t} outside (0, 1)")));
    }
    let x = match &opts.initial {
        Some(init) if init.len() == free.len() => init.clone(),
        Some(init) => {
            return Err(Error::DimensionMismatch {
                expected: free.len(),
                found: init.len(),
            })
        }
        None => vec![0.0; free.len()],
    };
    let (_, e, iterations) = match evaluate(n, base, free, &x, targets) {
        Ok(start) => newton(n, base, free, targets, x, start, opts)?,
        Err(Error::Overflow) => continuation(n, base, free, targets, x, opts)?,
        Err(e) => return Err(e),
    };
    let residual = e.max_residual();
    Ok((
        e.dist,
        NewtonReport {
            iterations,
            residual,
        },
    ))
}

/// Used when the starting point is not representable: scales the fixed block
/// up from zero, warm-starting each stage from the previous solution.
fn continuation(
    n: usize,
    base: &[f64],
    free: &[usize],
    targets: &[f64],
    mut x: Vec<f64>,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, Evaluated, usize)> {
    let mut lambda = 0.0;
    let mut stride = 1.0;
    let mut total = 0;
    loop {
        let next = f64::min(lambda + stride, 1.0);
        let scaled: Vec<f64> = base.iter().map(|b| b * next).collect();
        let attempt = evaluate(n, &scaled, free, &x, targets)
            .and_then(|start| newton(n, &scaled, free, targets, x.clone(), start, opts));
        match attempt {
            Ok((nx, e, iterations)) => {
                total += iterations;
                if next == 1.0 {
                    return Ok((nx, e, total));
                }
                x = nx;
                lambda = next;
                stride *= 2.0;
            }
            Err(_) if stride > 1e-4 => stride /= 2.0,
            Err(e) => return Err(e),
        }
    }
}

fn newton(
    n: usize,
    base: &[f64],
    free: &[usize],
    targets: &[f64],
    mut x: Vec<f64>,
    mut cur: Evaluated,
    opts: &NewtonOptions,
) -> Result<(Vec<f64>, Evaluated, usize)> {
    let m = free.len();
    let mut iterations = 0;
    let mut converged_at = None;
    while iterations < opts.max_iter {
        let res = cur.max_residual();
        if res < opts.tol && converged_at.is_none() {
            converged_at = Some(iterations);
        }
        // A couple of extra full steps after convergence push the residual
        // to round-off level.
        if let Some(k) = converged_at {
            if iterations >= k + 2 {
                break;
            }
        }
        iterations += 1;
        let eta = cur.dist.eta().as_slice();
        let hess = Mat::<f64>::from_fn(m, m, |a, b| {
            let (i, j) = (free[a], free[b]);
            eta[i | j] - eta[i] * eta[j]
        });
        let grad = &cur.residual;
        // When the mass piles onto one state the Fisher block loses precision
        // and the Newton direction can point uphill. Retry with growing
        // Levenberg damping, ending at a scaled gradient step.
        let scale = ((0..m).map(|a| hess[(a, a)]).sum::<f64>() / m as f64).max(f64::EPSILON);
        let mut accepted = None;
        for damping in [0.0, 1e-10, 1e-8, 1e-6, 1e-4, 1e-2, 1.0, f64::INFINITY] {
            let step = if damping.is_infinite() {
                let g = grad.iter().fold(f64::MIN_POSITIVE, |a, v| a.max(v.abs()));
                Some(grad.iter().map(|v| v / g).collect())
            } else {
                damped_solve(&hess, grad, damping * scale)
            };
            let Some(step) = step else { continue };
            let slope: f64 = grad.iter().zip(&step).map(|(g, s)| g * s).sum();
            if !(slope > 0.0) {
                continue;
            }
            accepted = line_search(&cur, res, slope, |t| {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
                let e = evaluate(n, base, free, &trial, targets).ok()?;
                Some((trial, e))
            });
            if accepted.is_some() {
                break;
            }
        }
        match accepted {
            Some((nx, e)) => {
                x = nx;
                cur = e;
            }
            None if converged_at.is_some() => break,
            None => {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: res,
                })
            }
        }
    }
    let residual = cur.max_residual();
    if residual >= opts.tol {
        return Err(Error::NoConvergence {
            iterations,
            residual,
        });
    }
    Ok((x, cur, iterations))
}

/// `D(q ‖ p) = Σ_x q log(q/p)` in nats.
pub fn kl_divergence(q: &Distribution, p: &Distribution) -> Result<f64> {
    if q.n != p.n {
        return Err(Error::DimensionMismatch {
            expected: q.n,
            found: p.n,
        });
    }
    Ok(q.p
        .iter()
        .zip(&p.p)
        .map(|(a, b)| a * (a / b).ln())
        .sum::<f64>())
}
