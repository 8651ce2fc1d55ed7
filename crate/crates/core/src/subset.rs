//! Subsets of `{1..n}` as bitmasks, and transforms over the subset lattice.
//!
//! A table `f` of length `2^n` indexed by mask is transformed in place in
//! `O(n 2^n)`. The four transforms come in inverse pairs:
//!
//! * [`superset_zeta`] / [`superset_mobius`]: `g[I] = Σ_{S ⊇ I} f[S]`,
//!   which maps `p` to `η` and back.
//! * [`subset_zeta`] / [`subset_mobius`]: `g[I] = Σ_{K ⊆ I} f[K]`, which
//!   maps `θ` to `log p + ψ` and back.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Upper bound on the number of variables for dense `2^n` tables.
pub const MAX_VARS: usize = 20;

/// A subset of variable positions, bit `i - 1` standing for `x_i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsetIndex(pub u32);

impl SubsetIndex {
    /// Builds a subset from 1-based variable positions.
    pub fn from_vars(vars: &[usize]) -> Self {
        SubsetIndex(vars.iter().fold(0u32, |m, &v| m | (1 << (v - 1))))
    }

    pub fn mask(self) -> usize {
        self.0 as usize
    }

    /// Cardinality `|I|`.
    pub fn order(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: SubsetIndex) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn union(self, other: SubsetIndex) -> SubsetIndex {
        SubsetIndex(self.0 | other.0)
    }

    pub fn intersection(self, other: SubsetIndex) -> SubsetIndex {
        SubsetIndex(self.0 & other.0)
    }

    /// 1-based variable positions in ascending order.
    pub fn vars(self) -> impl Iterator<Item = usize> {
        let m = self.0;
        (0..32).filter(move |i| m >> i & 1 == 1).map(|i| i + 1)
    }
}

impl fmt::Display for SubsetIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (k, v) in self.vars().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{v}")?;
        }
        f.write_str("}")
    }
}

/// Number of variables encoded by a table of length `len`, if `len` is a
/// power of two no smaller than 2.
pub fn vars_for_len(len: usize) -> Option<usize> {
    (len >= 2 && len.is_power_of_two()).then(|| len.trailing_zeros() as usize)
}

/// All nonempty subsets in increasing-mask order.
pub fn nonempty(n: usize) -> Vec<SubsetIndex> {
    (1..1u32 << n).map(SubsetIndex).collect()
}

/// All nonempty subsets grouped by cardinality, increasing mask within a
/// group.
pub fn by_order(n: usize) -> Vec<SubsetIndex> {
    let mut all = nonempty(n);
    all.sort_by_key(|s| (s.order(), s.0));
    all
}

/// `f[I] <- Σ_{S ⊇ I} f[S]`.
pub fn superset_zeta(f: &mut [f64]) {
    let len = f.len();
    let mut bit = 1;
    while bit < len {
        for m in 0..len {
            if m & bit == 0 {
                f[m] += f[m | bit];
            }
        }
        bit <<= 1;
    }
}

/// Inverse of [`superset_zeta`]: `f[I] <- Σ_{S ⊇ I} (-1)^{|S - I|} f[S]`.
pub fn superset_mobius(f: &mut [f64]) {
    let len = f.len();
    let mut bit = 1;
    while bit < len {
        for m in 0..len {
            if m & bit == 0 {
                f[m] -= f[m | bit];
            }
        }
        bit <<= 1;
    }
}

/// `f[I] <- Σ_{K ⊆ I} f[K]`.
pub fn subset_zeta(f: &mut [f64]) {
    let len = f.len();
    let mut bit = 1;
    while bit < len {
        for m in 0..len {
            if m & bit != 0 {
                f[m] += f[m ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// Inverse of [`subset_zeta`]: `f[I] <- Σ_{K ⊆ I} (-1)^{|I - K|} f[K]`.
pub fn subset_mobius(f: &mut [f64]) {
    let len = f.len();
    let mut bit = 1;
    while bit < len {
        for m in 0..len {
            if m & bit != 0 {
                f[m] -= f[m ^ bit];
            }
        }
        bit <<= 1;
    }
}

/// Decodes the low `n` bits of `mask` into a 0/1 vector, `x_1` first.
pub fn mask_to_bits(mask: usize, n: usize) -> Vec<u8> {
    (0..n).map(|i| (mask >> i & 1) as u8).collect()
}

/// Encodes a 0/1 vector (`x_1` first) as a mask. `bits.len()` must be ≤ 64.
pub fn bits_to_mask(bits: &[u8]) -> usize {
    bits.iter()
        .enumerate()
        .fold(0usize, |m, (i, &b)| m | ((b as usize & 1) << i))
}
