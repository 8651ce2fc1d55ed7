//! Shared fixtures for the benchmarks.

use cifbm_core::eval::{draw_samples, sample_target, SampleSet};
use cifbm_core::rng::stream;
use cifbm_core::{Distribution, SbmParams};

pub fn target(n: usize) -> Distribution {
    sample_target(n, &mut stream(7, &[n as u64])).expect("n within cap")
}

pub fn samples(n: usize, count: usize) -> SampleSet {
    draw_samples(&target(n), count, &mut stream(8, &[n as u64, count as u64]))
}

/// A fully visible machine with small deterministic couplings.
pub fn sbm(n: usize) -> SbmParams {
    let u = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        0.2 * ((i * j + i + j) as f64).sin()
                    }
                })
                .collect()
        })
        .collect();
    let b = (0..n).map(|i| 0.1 * (i as f64).cos()).collect();
    SbmParams::new(u, b).expect("symmetric couplings")
}
