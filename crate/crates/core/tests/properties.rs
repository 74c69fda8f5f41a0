use metacate::arch::ortho_penalty;
use metacate::learners::{clip_propensity, formula, pseudo_dr, pseudo_ra, ClipBound};
use ndarray::Array2;
use proptest::prelude::*;

fn matrices(count: usize) -> impl Strategy<Value = Vec<Array2<f64>>> {
    (1usize..5, 1usize..4).prop_flat_map(move |(d, u)| {
        prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d * u), count)
            .prop_map(move |ms| ms.into_iter().map(|v| Array2::from_shape_vec((d, u), v).unwrap()).collect())
    })
}

proptest! {
    #[test]
    fn ortho_penalty_is_nonnegative_and_order_free(ms in matrices(3)) {
        let views: Vec<_> = ms.iter().map(|m| m.view()).collect();
        let p = ortho_penalty(&views).unwrap();
        prop_assert!(p >= 0.0);
        let rotated = [views[2], views[0], views[1]];
        prop_assert!((ortho_penalty(&rotated).unwrap() - p).abs() <= 1e-12 * (1.0 + p));
        let shared = (0..ms[0].nrows()).any(|j| {
            ms.iter().filter(|m| m.row(j).iter().any(|v| *v != 0.0)).count() >= 2
        });
        prop_assert_eq!(p > 0.0, shared);
    }

    #[test]
    fn clipping_lands_in_range(p in -1.0f64..2.0, delta in 0.001f64..0.49) {
        let c = clip_propensity(p, delta);
        prop_assert!(c >= delta && c <= 1.0 - delta);
        if p >= delta && p <= 1.0 - delta {
            prop_assert_eq!(c, p);
        }
    }

    #[test]
    fn dr_with_exact_outcomes_reduces_to_the_effect_plus_weighted_noise(
        mu0 in -5.0f64..5.0, tau in -5.0f64..5.0, eps in -2.0f64..2.0, pi in 0.05f64..0.95, w in 0u8..2,
    ) {
        let mu1 = mu0 + tau;
        let y = if w == 1 { mu1 } else { mu0 } + eps;
        let dr = pseudo_dr(y, w, mu0, mu1, pi, ClipBound::default()).unwrap();
        let weight = if w == 1 { 1.0 / pi } else { -1.0 / (1.0 - pi) };
        prop_assert!((dr - (tau + weight * eps)).abs() <= 1e-9 * (1.0 + dr.abs()));
        let ra = pseudo_ra(y, w, mu0, mu1).unwrap();
        let signed = if w == 1 { eps } else { -eps };
        prop_assert!((ra - (tau + signed)).abs() <= 1e-9 * (1.0 + ra.abs()));
    }

    #[test]
    fn dr_is_ra_plus_a_weighted_residual(
        y in -5.0f64..5.0, mu0 in -5.0f64..5.0, mu1 in -5.0f64..5.0, pi in 0.05f64..0.95, w in 0u8..2,
    ) {
        let wf = f64::from(w);
        let dr = formula::dr(y, wf, mu0, mu1, pi);
        let expected = if w == 1 {
            (y - mu1) / pi + mu1 - mu0
        } else {
            mu1 - mu0 - (y - mu0) / (1.0 - pi)
        };
        prop_assert!((dr - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
    }

    #[test]
    fn seeds_are_stable_functions_of_their_labels(parent in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(metacate::seed::derive(parent, a), metacate::seed::derive(parent, a));
        if a != b {
            prop_assert_ne!(metacate::seed::derive(parent, a), metacate::seed::derive(parent, b));
        }
    }
}
