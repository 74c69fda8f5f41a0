use metacate::dgp::{DgpSpec, Setting};
use metacate::learners::PseudoOutcomeKind;
use metacate::theory::*;
use ndarray::ArrayView1;

fn print(checks: &[Check]) {
    for c in checks {
        println!("{:<5} {:<80} {:.3e} <= {:.1e}", if c.passed { "ok" } else { "FAIL" }, c.name, c.statistic, c.tolerance);
    }
}

#[test]
fn default_suite_passes() {
    let checks = verify_suite(&FormulaTable::default(), &VerifyConfig::default()).unwrap();
    print(&checks);
    assert!(checks.iter().all(|c| c.passed));
}

#[test]
fn mutated_dr_formula_is_caught() {
    let table = FormulaTable {
        dr: |y, w, mu0, mu1, pi| {
            let a = w / pi;
            let b = (1.0 - w) / (1.0 - pi);
            (a - b) * y + (1.0 - a) * mu1 - (1.0 - b) * mu0 * 0.9
        },
        ..FormulaTable::default()
    };
    let checks = algebra_checks(&table, &VerifyConfig::default());
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).collect();
    assert!(!failed.is_empty());
    assert!(failed.iter().all(|c| c.name.starts_with("DR")));
}

#[test]
fn known_propensity_zeroes_pw_and_dr_remainders() {
    let t = NuisanceTuple {
        mu0: 1.3,
        mu1: -0.4,
        pi: 0.37,
        mu0_hat: 9.0,
        mu1_hat: -3.0,
        pi_hat: 0.37,
        delta: 0.01,
        omega: Some(0.1),
        c_bound: Some(2.0),
    };
    assert_eq!(remainder(PseudoOutcomeKind::Pw, &t).closed_form, 0.0);
    assert_eq!(remainder(PseudoOutcomeKind::Dr, &t).closed_form, 0.0);
    assert!(remainder(PseudoOutcomeKind::Ra, &t).closed_form != 0.0);
    for kind in PseudoOutcomeKind::ALL {
        let r = remainder(kind, &t);
        assert_eq!(r.satisfied, Some(true));
    }
}

#[test]
fn dr_remainder_sign_by_hand() {
    // pi = 0.3, pi_hat = 0.5, mu1 = 2.5, mu1_hat = 3, mu0 = mu0_hat = 1:
    // E[pseudo] = 0.3 * (2 * 2.5 - 3 - 1) + 0.7 * (3 - 2 + 1) = 1.7, tau = 1.5.
    let t = NuisanceTuple {
        mu0: 1.0,
        mu1: 2.5,
        pi: 0.3,
        mu0_hat: 1.0,
        mu1_hat: 3.0,
        pi_hat: 0.5,
        delta: 0.01,
        omega: None,
        c_bound: None,
    };
    assert!((conditional_mean(PseudoOutcomeKind::Dr, &t) - 1.7).abs() < 1e-12);
    assert!((closed_form_remainder(PseudoOutcomeKind::Dr, &t) - 0.2).abs() < 1e-12);
}

#[test]
fn closed_form_matches_monte_carlo() {
    let t = NuisanceTuple {
        mu0: 1.0,
        mu1: 2.5,
        pi: 0.3,
        mu0_hat: 0.2,
        mu1_hat: 3.0,
        pi_hat: 0.45,
        delta: 0.01,
        omega: None,
        c_bound: None,
    };
    for kind in PseudoOutcomeKind::ALL {
        let (m, se) = monte_carlo_mean(&FormulaTable::default(), kind, &t, 1_000_000, 1.0, 17);
        let exact = conditional_mean(kind, &t);
        assert!((m - exact).abs() <= 3.0 * se, "{kind}: {m} vs {exact} (se {se})");
        assert!((exact - t.tau() - closed_form_remainder(kind, &t)).abs() < 1e-12);
    }
}

#[test]
fn identity_holds_exactly_in_the_randomized_constant_case() {
    let spec = DgpSpec::new(Setting::III, 2, 0);
    let one = |_: ArrayView1<f64>| 1.0;
    let r = selection_weight_identity_check(&spec, 10_000, &one, 3).unwrap();
    assert_eq!(r.lhs, 1.0);
    assert_eq!(r.lhs_se, 0.0);
    // Every treated draw carries weight 2 p_pi with p_pi the realized share.
    let p = r.n_treated as f64 / 10_000.0;
    assert!((r.rhs - 2.0 * p).abs() < 1e-12);
    assert!((r.rhs - 1.0).abs() <= 3.0 * (p * (1.0 - p) / 10_000.0).sqrt() * 2.0);
}

#[test]
fn pw_is_noisier_than_ra_with_constant_propensity() {
    let t = NuisanceTuple::oracle(1.0, 3.0, 0.5);
    let var = |kind| {
        let (_, se) = monte_carlo_mean(&FormulaTable::default(), kind, &t, 100_000, 1.0, 5);
        se
    };
    assert!(var(PseudoOutcomeKind::Pw) >= var(PseudoOutcomeKind::Ra));
}
