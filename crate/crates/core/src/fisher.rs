//! Fisher information in θ-, η- and mixed coordinates, confidence ratios and
//! CIF tailoring.
//!
//! Closed forms:
//!
//! * θ: `g_IJ = η_{I∪J} - η_I η_J`
//! * η: `g^IJ = Σ_{K ⊆ I∩J} (-1)^{|I-K| + |J-K|} / p_K`, where the empty `K`
//!   contributes `1 / p(0…0)`. Since `|I-K| + |J-K| ≡ |I| + |J| (mod 2)` the
//!   sum is a subset-zeta transform of `1/p` evaluated at `I∩J`.
//! * `l`-mixed: block diagonal with `A = (G_θ restricted to orders ≤ l)⁻¹`
//!   and `B = (G_η restricted to orders > l)⁻¹`, using `G_η⁻¹ = G_θ`.
//!
//! [`fisher_score_oracle`] recomputes any of them from the definition (score
//! covariance) by finite differences, independently of the closed forms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::simplex::{
    check_order, Distribution, EtaCoords, MixedCoords, NewtonOptions, ThetaCoords,
};
use crate::subset::{self, SubsetIndex};

/// Coordinate system a Fisher matrix is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordSystem {
    Theta,
    Eta,
    Mixed(usize),
}

impl fmt::Display for CoordSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoordSystem::Theta => f.write_str("theta"),
            CoordSystem::Eta => f.write_str("eta"),
            CoordSystem::Mixed(l) => write!(f, "mixed({l})"),
        }
    }
}

impl FromStr for CoordSystem {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "theta" => return Ok(CoordSystem::Theta),
            "eta" => return Ok(CoordSystem::Eta),
            _ => {}
        }
        let l = s
            .strip_prefix("mixed(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("mixed:"))
            .ok_or_else(|| Error::Parse(format!("unknown coordinate system `{s}`")))?;
        l.parse()
            .map(CoordSystem::Mixed)
            .map_err(|_| Error::Parse(format!("bad order in `{s}`")))
    }
}

/// A Fisher information matrix whose rows and columns are labeled by
/// subsets.
#[derive(Debug, Clone, PartialEq)]
pub struct FisherMatrix {
    pub system: CoordSystem,
    pub labels: Vec<SubsetIndex>,
    pub m: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct FisherFile {
    system: String,
    labels: Vec<u32>,
    m: Vec<Vec<f64>>,
}

impl Serialize for FisherMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FisherFile {
            system: self.system.to_string(),
            labels: self.labels.iter().map(|l| l.0).collect(),
            m: self
                .m
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FisherMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let f = FisherFile::deserialize(d)?;
        let system = f.system.parse().map_err(D::Error::custom)?;
        let k = f.labels.len();
        if f.m.len() != k || f.m.iter().any(|r| r.len() != k) {
            return Err(D::Error::custom("matrix shape does not match labels"));
        }
        Ok(FisherMatrix {
            system,
            labels: f.labels.into_iter().map(SubsetIndex).collect(),
            m: DMatrix::from_fn(k, k, |i, j| f.m[i][j]),
        })
    }
}

impl FisherMatrix {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn diag(&self) -> Vec<f64> {
        self.m.diagonal().iter().copied().collect()
    }

    fn position(&self, i: SubsetIndex) -> Option<usize> {
        self.labels.iter().position(|&l| l == i)
    }

    /// Entry for the coordinate pair `(i, j)`.
    pub fn get(&self, i: SubsetIndex, j: SubsetIndex) -> Option<f64> {
        Some(self.m[(self.position(i)?, self.position(j)?)])
    }

    pub fn max_asymmetry(&self) -> f64 {
        (&self.m - self.m.transpose()).abs().max()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.m
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Max absolute entry difference over the max absolute entry of `self`.
    pub fn relative_deviation(&self, other: &FisherMatrix) -> f64 {
        let scale = self.m.abs().max().max(f64::MIN_POSITIVE);
        (&self.m - &other.m).abs().max() / scale
    }
}

/// θ-coordinate Fisher matrix, labels in increasing-mask order.
pub fn fisher_theta(d: &Distribution) -> FisherMatrix {
    let labels = subset::nonempty(d.n());
    let eta = d.eta().as_slice();
    let k = labels.len();
    let m = DMatrix::from_fn(k, k, |a, b| {
        let (i, j) = (labels[a].mask(), labels[b].mask());
        eta[i | j] - eta[i] * eta[j]
    });
    FisherMatrix {
        system: CoordSystem::Theta,
        labels,
        m,
    }
}

/// η-coordinate Fisher matrix, labels in increasing-mask order.
pub fn fisher_eta(d: &Distribution) -> FisherMatrix {
    let labels = subset::nonempty(d.n());
    let mut z: Vec<f64> = d.p().iter().map(|v| 1.0 / v).collect();
    subset::subset_zeta(&mut z);
    let k = labels.len();
    let m = DMatrix::from_fn(k, k, |a, b| {
        let (i, j) = (labels[a], labels[b]);
        let sign = if (i.order() + j.order()) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        sign * z[i.intersection(j).mask()]
    });
    FisherMatrix {
        system: CoordSystem::Eta,
        labels,
        m,
    }
}

/// `l`-mixed Fisher matrix, labels grouped by order: the η block (orders
/// ≤ l) first, then the θ block.
pub fn fisher_mixed(d: &Distribution, l: usize) -> Result<FisherMatrix> {
    check_order(l, d.n())?;
    let labels = subset::by_order(d.n());
    let kept = labels.iter().take_while(|s| s.order() <= l).count();
    let eta = d.eta().as_slice();
    let k = labels.len();

    let kept_labels = &labels[..kept];
    let theta_block = DMatrix::from_fn(kept, kept, |a, b| {
        let (i, j) = (kept_labels[a].mask(), kept_labels[b].mask());
        eta[i | j] - eta[i] * eta[j]
    });
    let a = linalg::sym_inverse(&theta_block)?;

    let tail = &labels[kept..];
    let b = if tail.is_empty() {
        DMatrix::zeros(0, 0)
    } else {
        let mut z: Vec<f64> = d.p().iter().map(|v| 1.0 / v).collect();
        subset::subset_zeta(&mut z);
        let eta_block = DMatrix::from_fn(tail.len(), tail.len(), |x, y| {
            let (i, j) = (tail[x], tail[y]);
            let sign = if (i.order() + j.order()) % 2 == 0 {
                1.0
            } else {
                -1.0
            };
            sign * z[i.intersection(j).mask()]
        });
        linalg::sym_inverse(&eta_block)?
    };

    let mut m = DMatrix::zeros(k, k);
    m.view_mut((0, 0), (kept, kept)).copy_from(&a);
    m.view_mut((kept, kept), (k - kept, k - kept)).copy_from(&b);
    Ok(FisherMatrix {
        system: CoordSystem::Mixed(l),
        labels,
        m,
    })
}

pub fn fisher(d: &Distribution, system: CoordSystem) -> Result<FisherMatrix> {
    match system {
        CoordSystem::Theta => Ok(fisher_theta(d)),
        CoordSystem::Eta => Ok(fisher_eta(d)),
        CoordSystem::Mixed(l) => fisher_mixed(d, l),
    }
}

/// Replaces the θ block of the `l`-mixed coordinates by zeros and
/// reconstructs the distribution.
pub fn cif_tailor(d: &Distribution, l: usize) -> Result<Distribution> {
    d.mixed(l)?.tailored().to_distribution()
}

/// How much Fisher information a tailoring at order `l` discards, with the
/// diagonal entries read as per-parameter confidences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InformationRatios {
    /// Σ diag over orders > l divided by Σ diag over all coordinates.
    pub loss_ratio: f64,
    /// Max diag over orders > l divided by min diag over orders ≤ l.
    pub tail_to_min_kept: f64,
}

impl InformationRatios {
    pub fn as_percent(&self) -> (f64, f64) {
        (100.0 * self.loss_ratio, 100.0 * self.tail_to_min_kept)
    }
}

pub fn information_ratios(
    d: &Distribution,
    system: CoordSystem,
    l: usize,
) -> Result<InformationRatios> {
    check_order(l, d.n())?;
    let g = fisher(d, system)?;
    let diag = g.diag();
    let (mut kept_sum, mut tail_sum) = (0.0, 0.0);
    let (mut kept_min, mut tail_max) = (f64::INFINITY, 0.0f64);
    for (label, v) in g.labels.iter().zip(diag) {
        if label.order() <= l {
            kept_sum += v;
            kept_min = kept_min.min(v);
        } else {
            tail_sum += v;
            tail_max = tail_max.max(v);
        }
    }
    Ok(InformationRatios {
        loss_ratio: tail_sum / (kept_sum + tail_sum),
        tail_to_min_kept: tail_max / kept_min,
    })
}

/// Largest `n` accepted by [`fisher_score_oracle`].
pub const ORACLE_MAX_VARS: usize = 8;
/// Central-difference step of the score oracle.
pub const ORACLE_STEP: f64 = 1e-5;

/// Fisher matrix from its definition `E[∂_a log p · ∂_b log p]`, with the
/// scores taken by central differences of `log p(x; ξ)` after rebuilding
/// the distribution from each perturbed coordinate vector.
pub fn fisher_score_oracle(d: &Distribution, system: CoordSystem) -> Result<FisherMatrix> {
    let n = d.n();
    if n > ORACLE_MAX_VARS {
        return Err(Error::CapExceeded {
            n,
            cap: ORACLE_MAX_VARS,
        });
    }
    let labels = match system {
        CoordSystem::Mixed(l) => {
            check_order(l, n)?;
            subset::by_order(n)
        }
        _ => subset::nonempty(n),
    };
    let rebuild: Box<dyn Fn(usize, f64) -> Result<Distribution>> = match system {
        CoordSystem::Theta => {
            let base: Vec<f64> = d.theta().as_slice()[1..].to_vec();
            Box::new(move |k, h| {
                let mut v = base.clone();
                v[k] += h;
                ThetaCoords::from_values(n, &v)?.to_distribution()
            })
        }
        CoordSystem::Eta => {
            let base: Vec<f64> = d.eta().as_slice()[1..].to_vec();
            Box::new(move |k, h| {
                let mut v = base.clone();
                v[k] += h;
                EtaCoords::from_values(n, &v)?.to_distribution()
            })
        }
        CoordSystem::Mixed(l) => {
            let base = d.mixed(l)?;
            let theta = d.theta().as_slice().to_vec();
            let labels = labels.clone();
            Box::new(move |k, h| {
                let mut m: MixedCoords = base.clone();
                m.set(labels[k], base.get(labels[k]) + h);
                let initial = (1..theta.len())
                    .filter(|i| i.count_ones() as usize <= l)
                    .map(|i| theta[i])
                    .collect();
                m.to_distribution_with(&NewtonOptions {
                    tol: 1e-13,
                    max_iter: 100,
                    initial: Some(initial),
                })
            })
        }
    };

    let states = d.len();
    let h = ORACLE_STEP;
    let mut scores = DMatrix::zeros(labels.len(), states);
    for k in 0..labels.len() {
        let plus = rebuild(k, h)?;
        let minus = rebuild(k, -h)?;
        for x in 0..states {
            scores[(k, x)] = (plus.prob(x).ln() - minus.prob(x).ln()) / (2.0 * h);
        }
    }
    let weighted = DMatrix::from_fn(labels.len(), states, |k, x| scores[(k, x)] * d.prob(x));
    let mut m = &weighted * scores.transpose();
    linalg::symmetrize(&mut m);
    Ok(FisherMatrix { system, labels, m })
}

/// Checks that the CIF-kept η block of the `l`-mixed Fisher matrix has a
/// trace at least as large as that of `trials` random coordinate subsets of
/// the same size, and of the tailored complement.
pub fn max_trace_check<R: Rng + ?Sized>(
    d: &Distribution,
    l: usize,
    trials: usize,
    rng: &mut R,
) -> Result<bool> {
    let g = fisher_mixed(d, l)?;
    let diag = g.diag();
    let kept = g.labels.iter().filter(|s| s.order() <= l).count();
    let trace = |idx: &mut Vec<usize>| {
        idx.sort_unstable();
        idx.iter().map(|&i| diag[i]).sum::<f64>()
    };
    let kept_trace = trace(&mut (0..kept).collect());
    if trace(&mut (kept..diag.len()).collect()) > kept_trace {
        return Ok(false);
    }
    for _ in 0..trials {
        let mut idx = index::sample(rng, diag.len(), kept).into_vec();
        if trace(&mut idx) > kept_trace {
            return Ok(false);
        }
    }
    Ok(true)
}
