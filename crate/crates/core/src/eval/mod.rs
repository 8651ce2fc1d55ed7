//! Targets, sampling, metrics and the experiment runner.

mod experiment;
mod sampleset;

pub use experiment::{
    run_experiment, CellSummary, ExperimentKind, ExperimentSpec, Method, MethodSpec, Model,
    ResultRow, ResultTable, TrialNote,
};
pub use sampleset::{SampleMeta, SampleSet, Source};

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};
use crate::simplex::Distribution;
use crate::subset::MAX_VARS;

/// A uniform draw from the open simplex over `2^n` states.
pub fn sample_target<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Distribution> {
    if n > MAX_VARS {
        return Err(Error::CapExceeded { n, cap: MAX_VARS });
    }
    let mut p: Vec<f64> = (0..1usize << n)
        .map(|_| rng.sample::<f64, _>(Exp1))
        .collect();
    // Exp1 can return exactly 0 with negligible probability.
    for v in &mut p {
        if *v <= 0.0 {
            *v = f64::MIN_POSITIVE;
        }
    }
    Distribution::from_p(p)
}

/// `count` i.i.d. states drawn from `d`.
pub fn draw_samples<R: Rng + ?Sized>(d: &Distribution, count: usize, rng: &mut R) -> SampleSet {
    let mut cdf = Vec::with_capacity(d.len());
    let mut acc = 0.0;
    for &v in d.p() {
        acc += v;
        cdf.push(acc);
    }
    let last = d.len() - 1;
    let masks: Vec<usize> = (0..count)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect();
    SampleSet::from_masks(d.n(), &masks, SampleMeta::default())
}

/// Smoothed empirical distribution: counts plus `1 / (N 2^n)` per state.
pub fn empirical_distribution(s: &SampleSet) -> Result<Distribution> {
    if s.is_empty() {
        return Err(Error::InvalidConfig(
            "empirical distribution of an empty sample set".into(),
        ));
    }
    let counts = s.counts()?;
    let total = s.len() as f64;
    let delta = 1.0 / (total * counts.len() as f64);
    Distribution::from_p(counts.iter().map(|&c| c as f64 / total + delta).collect())
}

/// Mean over data rows of the minimum Hamming distance to any generated row.
pub fn hamming_eval(data: &SampleSet, generated: &SampleSet) -> Result<f64> {
    if data.n() != generated.n() {
        return Err(Error::DimensionMismatch {
            expected: data.n(),
            found: generated.n(),
        });
    }
    if data.is_empty() {
        return Ok(0.0);
    }
    if generated.is_empty() {
        return Err(Error::InvalidConfig(
            "no generated rows to compare against".into(),
        ));
    }
    let (words, a) = data.packed();
    let (_, b) = generated.packed();
    let total: u64 = a
        .chunks_exact(words)
        .map(|row| {
            b.chunks_exact(words)
                .map(|g| {
                    row.iter()
                        .zip(g)
                        .map(|(x, y)| (x ^ y).count_ones())
                        .sum::<u32>()
                })
                .min()
                .unwrap_or(0) as u64
        })
        .sum();
    Ok(total as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn target_is_positive_and_seeded() {
        let a = sample_target(10, &mut stream(3, &[])).unwrap();
        let b = sample_target(10, &mut stream(3, &[])).unwrap();
        assert_eq!(a.len(), 1024);
        assert!(a.p().iter().all(|&v| v > 0.0));
        assert!((a.p().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a, b);
    }

    #[test]
    fn target_cells_average_to_uniform() {
        let mut rng = stream(11, &[]);
        let draws = 10_000;
        let mut mean = [0.0; 4];
        let mut sq = [0.0; 4];
        for _ in 0..draws {
            let d = sample_target(2, &mut rng).unwrap();
            for k in 0..4 {
                mean[k] += d.p()[k];
                sq[k] += d.p()[k] * d.p()[k];
            }
        }
        for k in 0..4 {
            let m = mean[k] / draws as f64;
            let var = sq[k] / draws as f64 - m * m;
            let se = (var / draws as f64).sqrt();
            assert!((m - 0.25).abs() < 3.0 * se, "cell {k}: {m} vs 0.25 ± {se}");
        }
    }

    #[test]
    fn draws_follow_the_table() {
        let d = Distribution::from_p(vec![0.1, 0.2, 0.05, 0.15, 0.2, 0.1, 0.1, 0.1]).unwrap();
        let count = 100_000;
        let s = draw_samples(&d, count, &mut stream(5, &[]));
        let c = s.counts().unwrap();
        // Pearson chi-square with 7 degrees of freedom; 0.999 quantile ≈ 24.3.
        let chi2: f64 = c
            .iter()
            .zip(d.p())
            .map(|(&o, &p)| {
                let e = p * count as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        assert!(chi2 < 24.3, "chi2 {chi2}");
        assert!(draw_samples(&d, 0, &mut stream(5, &[])).is_empty());
        assert_eq!(s, draw_samples(&d, count, &mut stream(5, &[])));
    }

    #[test]
    fn smoothing_keeps_cells_positive() {
        let s = SampleSet::from_masks(3, &[5; 10], SampleMeta::default());
        let e = empirical_distribution(&s).unwrap();
        let delta = 1.0 / 80.0;
        assert!(e.p().iter().all(|&v| v > 0.0));
        assert!((e.prob(5) - (1.0 + delta) / (1.0 + 8.0 * delta)).abs() < 1e-15);
    }

    #[test]
    fn empirical_approaches_target() {
        let target = sample_target(4, &mut stream(8, &[])).unwrap();
        let mut prev = f64::INFINITY;
        for (k, &count) in [100usize, 1000, 10_000].iter().enumerate() {
            let mut total = 0.0;
            for rep in 0..10 {
                let s = draw_samples(&target, count, &mut stream(8, &[k as u64, rep]));
                let e = empirical_distribution(&s).unwrap();
                total += crate::simplex::kl_divergence(&target, &e).unwrap();
            }
            assert!(total < prev);
            prev = total;
        }
    }

    #[test]
    fn hamming_basics() {
        let d = SampleSet::from_masks(3, &[0], SampleMeta::default());
        let g = SampleSet::from_masks(3, &[7], SampleMeta::default());
        assert_eq!(hamming_eval(&d, &g).unwrap(), 3.0);
        assert_eq!(hamming_eval(&d, &d).unwrap(), 0.0);
        let other = SampleSet::from_masks(2, &[0], SampleMeta::default());
        assert!(hamming_eval(&d, &other).is_err());
    }

    #[test]
    fn hamming_min_beats_pair_mean_on_uniform_rows() {
        let mut rng = stream(21, &[]);
        let gen = |rng: &mut crate::rng::TrialRng| {
            let bits: Vec<u8> = (0..100 * 1000).map(|_| rng.random_range(0..2u8)).collect();
            SampleSet::from_flat(100, bits, SampleMeta::default()).unwrap()
        };
        let a = gen(&mut rng);
        let b = gen(&mut rng);
        assert!(hamming_eval(&a, &b).unwrap() < 50.0);
    }
}
