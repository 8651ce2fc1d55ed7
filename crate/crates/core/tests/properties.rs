use cifbm_core::fisher::{cif_tailor, fisher_eta, fisher_score_oracle, fisher_theta};
use cifbm_core::linalg::sym_inverse;
use cifbm_core::rbm::{FractionalMixed, JointDistribution};
use cifbm_core::simplex::NewtonOptions;
use cifbm_core::{kl_divergence, CoordSystem, Distribution, EtaCoords, SubsetIndex, ThetaCoords};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Positive tables with entries spread over four orders of magnitude.
fn table(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Distribution> {
    spread_table(n, 4.0)
}

fn spread_table(
    n: std::ops::RangeInclusive<usize>,
    decades: f64,
) -> impl Strategy<Value = Distribution> {
    n.prop_flat_map(move |n| prop::collection::vec(-decades..0.0, 1 << n))
        .prop_map(|logs| {
            Distribution::from_p(logs.iter().map(|v| 10f64.powf(*v)).collect()).unwrap()
        })
}

fn table_and_order(
    n: std::ops::RangeInclusive<usize>,
) -> impl Strategy<Value = (Distribution, usize)> {
    table(n).prop_flat_map(|d| {
        let n = d.n();
        (Just(d), 1..=n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eta_round_trip(d in table(1..=8)) {
        let eta = d.eta();
        let back = EtaCoords::from_values(d.n(), &eta.as_slice()[1..]).unwrap().to_distribution().unwrap();
        prop_assert!(back.max_abs_diff(&d) <= 1e-12);
    }

    #[test]
    fn theta_round_trip(d in table(1..=8)) {
        let th = d.theta();
        let back = ThetaCoords::from_values(d.n(), &th.as_slice()[1..]).unwrap().to_distribution().unwrap();
        prop_assert!(back.max_abs_diff(&d) <= 1e-10);
        prop_assert!((back.p().iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!((th.psi() - th.log_partition().unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn mixed_round_trip((d, l) in table_and_order(1..=6)) {
        let back = d.mixed(l).unwrap().to_distribution().unwrap();
        prop_assert!(back.max_abs_diff(&d) <= 1e-8);
    }

    #[test]
    fn legendre_identity(d in table(1..=8)) {
        let th = d.theta();
        let eta = d.eta();
        let dot: f64 = th.as_slice().iter().zip(eta.as_slice()).skip(1).map(|(t, e)| t * e).sum();
        prop_assert!((th.psi() + d.phi() - dot).abs() <= 1e-10);
    }

    #[test]
    fn eta_decreases_along_supersets(d in table(1..=6)) {
        let eta = d.eta().as_slice();
        for i in 0..eta.len() {
            for j in 0..eta.len() {
                if i & j == i {
                    prop_assert!(eta[j] <= eta[i] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn product_has_no_interactions(m in prop::collection::vec(0.01f64..0.99, 1..=7)) {
        let d = Distribution::product(&m).unwrap();
        let th = d.theta().as_slice();
        for (mask, t) in th.iter().enumerate() {
            if mask.count_ones() >= 2 {
                prop_assert!(t.abs() <= 1e-10);
            }
        }
        for (i, &mi) in m.iter().enumerate() {
            prop_assert!((th[1 << i] - (mi / (1.0 - mi)).ln()).abs() <= 1e-10);
        }
    }

    #[test]
    fn kl_is_nonnegative(p in table(3..=3), q in table(3..=3)) {
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
        prop_assert!(kl_divergence(&p, &p).unwrap().abs() <= 1e-15);
    }

    #[test]
    fn tailoring_is_idempotent((d, l) in table_and_order(2..=5)) {
        let once = cif_tailor(&d, l).unwrap();
        let twice = cif_tailor(&once, l).unwrap();
        prop_assert!(twice.max_abs_diff(&once) <= 1e-8);
        let (a, b) = (d.eta().as_slice(), once.eta().as_slice());
        for mask in 1..a.len() {
            if mask.count_ones() as usize <= l {
                prop_assert!((a[mask] - b[mask]).abs() <= 1e-8);
            }
        }
        let th = once.theta().as_slice();
        for (mask, t) in th.iter().enumerate() {
            if mask.count_ones() as usize > l {
                prop_assert!(t.abs() <= 1e-7);
            }
        }
    }

    #[test]
    fn theta_and_eta_fisher_are_inverse(d in table(1..=5)) {
        let gt = fisher_theta(&d);
        let ge = fisher_eta(&d);
        let k = gt.dim();
        let prod = &gt.m * &ge.m;
        prop_assert!((prod - DMatrix::identity(k, k)).abs().max() <= 1e-8);
    }

    /// Finite differences lose accuracy near the simplex boundary, so the
    /// tables here stay within one decade.
    #[test]
    fn closed_forms_match_score_oracle(d in spread_table(2..=3, 1.0)) {
        for system in [CoordSystem::Theta, CoordSystem::Eta, CoordSystem::Mixed(1)] {
            let exact = cifbm_core::fisher::fisher(&d, system).unwrap();
            let oracle = fisher_score_oracle(&d, system).unwrap();
            prop_assert!(exact.relative_deviation(&oracle) <= 1e-6);
        }
    }

    /// An SPD matrix with every diagonal entry below one has an inverse
    /// whose diagonal entries all exceed one.
    #[test]
    fn inverse_diagonal_exceeds_one(
        entries in prop::collection::vec(-1.0f64..1.0, 16),
        ridge in 0.01f64..1.0,
    ) {
        let a = DMatrix::from_row_slice(4, 4, &entries);
        let mut h = &a * a.transpose() + DMatrix::identity(4, 4) * ridge;
        let top = h.diagonal().max();
        h /= top * 1.01;
        let inv = sym_inverse(&h).unwrap();
        for i in 0..4 {
            prop_assert!(inv[(i, i)] > 1.0);
        }
    }

    #[test]
    fn fractional_mixed_round_trip(d in table(4..=4)) {
        let q = JointDistribution::new(2, 2, d).unwrap();
        let back = FractionalMixed::from_joint(&q).to_joint(&NewtonOptions::default()).unwrap();
        prop_assert!(back.distribution().max_abs_diff(q.distribution()) <= 1e-6);
    }
}

#[test]
fn subset_labels_follow_variable_order() {
    let s = SubsetIndex::from_vars(&[1, 3]);
    assert_eq!(s.mask(), 0b101);
    assert_eq!(s.order(), 2);
    assert_eq!(s.to_string(), "{1,3}");
}
