//! Exact finite-sample algebra of the pseudo-outcomes.
//!
//! For fixed `x`, the conditional mean of a pseudo-outcome built from
//! estimated nuisances is `tau(x) + R`, with a remainder `R` that depends on
//! the estimation errors only:
//!
//! * RA: `R = pi (mu0 - mu0_hat) + (1 - pi)(mu1_hat - mu1)`,
//!   with `R^2 <= 2 (1 - omega)^2 sum_w (mu_w_hat - mu_w)^2`;
//! * PW: `R = (pi - pi_hat)/pi_hat mu1 - (pi_hat - pi)/(1 - pi_hat) mu0`,
//!   with `R^2 <= 4 C^2 / delta^2 (pi_hat - pi)^2`;
//! * DR: `R = (pi - pi_hat)/pi_hat (mu1 - mu1_hat) - (pi_hat - pi)/(1 - pi_hat)(mu0 - mu0_hat)`,
//!   with `R^2 <= 2 / delta^2 (pi_hat - pi)^2 sum_w (mu_w_hat - mu_w)^2`.
//!
//! Here `omega <= pi <= 1 - omega`, `|mu_w| <= C` and `delta <= pi_hat <= 1 - delta`.
//! [`conditional_mean`] averages the pseudo-outcome formula over the two arms
//! and is computed independently of these closed forms.

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dgp::{DgpSpec, Setting};
use crate::error::{Error, Result};
use crate::learners::{formula, PseudoOutcomeKind};
use crate::seed;

/// True and estimated nuisances at one covariate value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceTuple {
    pub mu0: f64,
    pub mu1: f64,
    pub pi: f64,
    pub mu0_hat: f64,
    pub mu1_hat: f64,
    pub pi_hat: f64,
    /// Clipping bound satisfied by `pi_hat`.
    pub delta: f64,
    /// Overlap margin of the true propensity, when known.
    pub omega: Option<f64>,
    /// Bound on `|mu_w|`, when known.
    pub c_bound: Option<f64>,
}

impl NuisanceTuple {
    /// A tuple whose estimates equal the truth.
    pub fn oracle(mu0: f64, mu1: f64, pi: f64) -> Self {
        NuisanceTuple {
            mu0,
            mu1,
            pi,
            mu0_hat: mu0,
            mu1_hat: mu1,
            pi_hat: pi,
            delta: pi.min(1.0 - pi),
            omega: Some(pi.min(1.0 - pi)),
            c_bound: Some(mu0.abs().max(mu1.abs())),
        }
    }

    pub fn tau(&self) -> f64 {
        self.mu1 - self.mu0
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.mu0, self.mu1, self.pi, self.mu0_hat, self.mu1_hat, self.pi_hat, self.delta];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "nuisance tuple" });
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return Err(Error::Contract(format!("pi = {} outside (0, 1)", self.pi)));
        }
        if !(self.delta > 0.0 && self.delta <= 0.5) || self.pi_hat < self.delta || self.pi_hat > 1.0 - self.delta {
            return Err(Error::Contract(format!(
                "pi_hat = {} outside [{}, {}]",
                self.pi_hat,
                self.delta,
                1.0 - self.delta
            )));
        }
        if let Some(o) = self.omega {
            if self.pi < o || self.pi > 1.0 - o {
                return Err(Error::Contract(format!("pi = {} violates overlap margin {o}", self.pi)));
            }
        }
        if let Some(c) = self.c_bound {
            if self.mu0.abs() > c || self.mu1.abs() > c {
                return Err(Error::Contract(format!("|mu_w| exceeds C = {c}")));
            }
        }
        Ok(())
    }
}

pub type PseudoFn = fn(y: f64, w: f64, mu0: f64, mu1: f64, pi: f64) -> f64;

/// The pseudo-outcome formulas under test; swap one out to check that the
/// verification suite notices.
#[derive(Debug, Clone, Copy)]
pub struct FormulaTable {
    pub ra: PseudoFn,
    pub pw: PseudoFn,
    pub dr: PseudoFn,
}

impl Default for FormulaTable {
    fn default() -> Self {
        FormulaTable {
            ra: |y, w, mu0, mu1, _| formula::ra(y, w, mu0, mu1),
            pw: |y, w, _, _, pi| formula::pw(y, w, pi),
            dr: formula::dr,
        }
    }
}

impl FormulaTable {
    pub fn get(&self, kind: PseudoOutcomeKind) -> PseudoFn {
        match kind {
            PseudoOutcomeKind::Ra => self.ra,
            PseudoOutcomeKind::Pw => self.pw,
            PseudoOutcomeKind::Dr => self.dr,
        }
    }
}

/// `E[pseudo | X = x]` with the default formulas.
pub fn conditional_mean(kind: PseudoOutcomeKind, t: &NuisanceTuple) -> f64 {
    conditional_mean_with(&FormulaTable::default(), kind, t)
}

/// `E[pseudo | X = x]`: the pseudo-outcome is linear in `Y`, so it averages
/// `f(mu1, W = 1)` and `f(mu0, W = 0)` with weights `pi` and `1 - pi`.
pub fn conditional_mean_with(table: &FormulaTable, kind: PseudoOutcomeKind, t: &NuisanceTuple) -> f64 {
    let f = table.get(kind);
    t.pi * f(t.mu1, 1.0, t.mu0_hat, t.mu1_hat, t.pi_hat) + (1.0 - t.pi) * f(t.mu0, 0.0, t.mu0_hat, t.mu1_hat, t.pi_hat)
}

/// The closed-form remainder of `kind`.
pub fn closed_form_remainder(kind: PseudoOutcomeKind, t: &NuisanceTuple) -> f64 {
    let (pi, ph) = (t.pi, t.pi_hat);
    match kind {
        PseudoOutcomeKind::Ra => pi * (t.mu0 - t.mu0_hat) + (1.0 - pi) * (t.mu1_hat - t.mu1),
        PseudoOutcomeKind::Pw => (pi - ph) / ph * t.mu1 - (ph - pi) / (1.0 - ph) * t.mu0,
        PseudoOutcomeKind::Dr => (pi - ph) / ph * (t.mu1 - t.mu1_hat) - (ph - pi) / (1.0 - ph) * (t.mu0 - t.mu0_hat),
    }
}

/// Upper bound on `R^2`, or `None` when a needed constant is unknown.
pub fn remainder_bound(kind: PseudoOutcomeKind, t: &NuisanceTuple) -> Option<f64> {
    let sq = (t.mu0_hat - t.mu0).powi(2) + (t.mu1_hat - t.mu1).powi(2);
    let dpi = (t.pi_hat - t.pi).powi(2);
    let d2 = t.delta * t.delta;
    match kind {
        PseudoOutcomeKind::Ra => t.omega.map(|o| 2.0 * (1.0 - o).powi(2) * sq),
        PseudoOutcomeKind::Pw => t.c_bound.map(|c| 4.0 * c * c / d2 * dpi),
        PseudoOutcomeKind::Dr => Some(2.0 / d2 * dpi * sq),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub kind: PseudoOutcomeKind,
    /// `conditional_mean - tau`.
    pub remainder: f64,
    pub closed_form: f64,
    pub bound: Option<f64>,
    /// `remainder^2 <= bound`; `None` when the bound is unavailable.
    pub satisfied: Option<bool>,
}

pub fn remainder(kind: PseudoOutcomeKind, t: &NuisanceTuple) -> RemainderReport {
    remainder_with(&FormulaTable::default(), kind, t)
}

pub fn remainder_with(table: &FormulaTable, kind: PseudoOutcomeKind, t: &NuisanceTuple) -> RemainderReport {
    let r = conditional_mean_with(table, kind, t) - t.tau();
    let bound = remainder_bound(kind, t);
    RemainderReport {
        kind,
        remainder: r,
        closed_form: closed_form_remainder(kind, t),
        bound,
        satisfied: bound.map(|b| {
            let c = closed_form_remainder(kind, t);
            c * c <= b * (1.0 + 1e-12)
        }),
    }
}

/// Monte-Carlo mean and standard error of the pseudo-outcome at `t`, drawing
/// `W ~ Bernoulli(pi)` and `Y = mu_W + noise_sd * N(0, 1)`.
pub fn monte_carlo_mean(
    table: &FormulaTable,
    kind: PseudoOutcomeKind,
    t: &NuisanceTuple,
    draws: usize,
    noise_sd: f64,
    seed: u64,
) -> (f64, f64) {
    let f = table.get(kind);
    let mut rng = seed::rng(seed);
    let mut stats = Welford::default();
    for _ in 0..draws {
        let w = rng.random::<f64>() < t.pi;
        let eps: f64 = rng.sample(StandardNormal);
        let y = if w { t.mu1 } else { t.mu0 } + noise_sd * eps;
        stats.push(f(y, f64::from(u8::from(w)), t.mu0_hat, t.mu1_hat, t.pi_hat));
    }
    (stats.mean(), stats.se())
}

/// Streaming mean and variance.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn se(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Weight turning an expectation over treated units into one over everyone:
/// `p_pi (1 + (1 - pi) / pi)`, with `p_pi` the treated share.
pub fn selection_weight(p_pi: f64, pi: f64) -> f64 {
    p_pi * (1.0 + (1.0 - pi) / pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    /// Mean of `f(X)` over the population.
    pub lhs: f64,
    /// Mean of `w(X) f(X)` over treated draws.
    pub rhs: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    pub abs_diff: f64,
    pub n_treated: usize,
}

impl IdentityCheck {
    pub fn combined_se(&self) -> f64 {
        self.lhs_se.hypot(self.rhs_se)
    }
}

/// Monte-Carlo check of `E_P[f(X)] = E_{P(.|W=1)}[w(X) f(X)]` under a
/// simulation setting. Draws are streamed; `p_pi` is the realized treated share
/// and the propensity offset is the median confounding score of the draws.
pub fn selection_weight_identity_check(
    spec: &DgpSpec,
    n_mc: usize,
    f: &dyn Fn(ArrayView1<f64>) -> f64,
    seed: u64,
) -> Result<IdentityCheck> {
    spec.validate()?;
    if n_mc < 2 {
        return Err(Error::Config("need at least two Monte-Carlo draws".into()));
    }
    let draw_x = |rng: &mut rand_chacha::ChaCha8Rng, buf: &mut Array1<f64>| {
        for v in buf.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    };
    let mut buf = Array1::zeros(spec.d);
    let omega = match spec.setting {
        Setting::III => 0.0,
        _ => {
            let mut rng = seed::rng(seed::derive_str(seed, "offset"));
            let m = n_mc.min(100_001);
            let mut scores: Vec<f64> = (0..m)
                .map(|_| {
                    draw_x(&mut rng, &mut buf);
                    spec.confounding_score(buf.view())
                })
                .collect();
            scores.sort_by(f64::total_cmp);
            scores[m / 2]
        }
    };
    let mut rng = seed::rng(seed::derive_str(seed, "draws"));
    let mut fx = Vec::with_capacity(n_mc);
    let mut treated = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        draw_x(&mut rng, &mut buf);
        let pi = spec.pi(buf.view(), omega);
        let w = rng.random::<f64>() < pi;
        let v = f(buf.view());
        fx.push(v);
        treated.push(w.then_some(pi));
    }
    let n1 = treated.iter().filter(|t| t.is_some()).count();
    if n1 == 0 {
        return Err(Error::EmptyGroup {
            group: 1,
            context: " (no treated Monte-Carlo draws)".into(),
        });
    }
    let p_pi = n1 as f64 / n_mc as f64;
    let mut lhs = Welford::default();
    let mut rhs = Welford::default();
    for (v, t) in fx.iter().zip(&treated) {
        lhs.push(*v);
        if let Some(pi) = t {
            rhs.push(selection_weight(p_pi, *pi) * v);
        }
    }
    Ok(IdentityCheck {
        lhs: lhs.mean(),
        rhs: rhs.mean(),
        lhs_se: lhs.se(),
        rhs_se: rhs.se(),
        abs_diff: (lhs.mean() - rhs.mean()).abs(),
        n_treated: n1,
    })
}

/// One line of the verification table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Observed discrepancy (absolute error, or |z| for Monte-Carlo checks).
    pub statistic: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, statistic: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            statistic,
            tolerance,
            passed: statistic <= tolerance,
        }
    }

    fn exact(name: impl Into<String>, statistic: f64) -> Self {
        Check {
            name: name.into(),
            statistic,
            tolerance: 0.0,
            passed: statistic == 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub random_tuples: usize,
    pub unbiasedness_draws: usize,
    pub unbiasedness_points: usize,
    pub identity_draws: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            random_tuples: 1000,
            unbiasedness_draws: 100_000,
            unbiasedness_points: 10,
            identity_draws: 1_000_000,
            seed: 20210413,
        }
    }
}

fn random_tuple(rng: &mut impl Rng) -> NuisanceTuple {
    let c = 5.0;
    let omega = 0.05;
    let delta = 0.02;
    NuisanceTuple {
        mu0: rng.random_range(-c..=c),
        mu1: rng.random_range(-c..=c),
        pi: rng.random_range(omega..=1.0 - omega),
        mu0_hat: rng.random_range(-2.0 * c..=2.0 * c),
        mu1_hat: rng.random_range(-2.0 * c..=2.0 * c),
        pi_hat: rng.random_range(delta..=1.0 - delta),
        delta,
        omega: Some(omega),
        c_bound: Some(c),
    }
}

/// Exact-algebra checks: tabulated values, zero remainders, closed forms and bounds.
pub fn algebra_checks(table: &FormulaTable, config: &VerifyConfig) -> Vec<Check> {
    let mut out = Vec::new();
    let tab = [
        ("RA(y=1, w=0, mu1=3) = 2", (table.ra)(1.0, 0.0, 0.0, 3.0, 0.5), 2.0),
        ("RA(y=2, w=1, mu0=0.5) = 1.5", (table.ra)(2.0, 1.0, 0.5, 0.0, 0.5), 1.5),
        ("PW(y=2, w=1, pi=0.5) = 4", (table.pw)(2.0, 1.0, 0.0, 0.0, 0.5), 4.0),
        ("PW(y=2, w=0, pi=0.5) = -4", (table.pw)(2.0, 0.0, 0.0, 0.0, 0.5), -4.0),
        ("DR(y=2, w=1, mu0=0, mu1=1, pi=0.5) = 3", (table.dr)(2.0, 1.0, 0.0, 1.0, 0.5), 3.0),
    ];
    for (name, got, want) in tab {
        out.push(Check::new(format!("pseudo-outcome {name}"), (got - want).abs(), 1e-12));
    }
    let ra_example = NuisanceTuple {
        mu0: 1.0,
        mu1: 2.0,
        pi: 0.3,
        mu0_hat: 1.5,
        mu1_hat: 2.5,
        pi_hat: 0.3,
        delta: 0.01,
        omega: None,
        c_bound: None,
    };
    out.push(Check::new(
        "conditional mean RA example = 1.2",
        (conditional_mean_with(table, PseudoOutcomeKind::Ra, &ra_example) - 1.2).abs(),
        1e-12,
    ));

    let mut rng = seed::rng(seed::derive_str(config.seed, "tuples"));
    let tuples: Vec<NuisanceTuple> = (0..config.random_tuples).map(|_| random_tuple(&mut rng)).collect();
    for kind in PseudoOutcomeKind::ALL {
        let mut worst_oracle: f64 = 0.0;
        let mut worst_closed: f64 = 0.0;
        let mut bound_violations = 0usize;
        let mut zero_closed: f64 = 0.0;
        for t in &tuples {
            let o = NuisanceTuple {
                mu0_hat: t.mu0,
                mu1_hat: t.mu1,
                pi_hat: t.pi.clamp(t.delta, 1.0 - t.delta),
                ..*t
            };
            worst_oracle = worst_oracle.max((conditional_mean_with(table, kind, &o) - o.tau()).abs());
            let rep = remainder_with(table, kind, t);
            worst_closed = worst_closed.max((rep.remainder - rep.closed_form).abs());
            if rep.satisfied == Some(false) {
                bound_violations += 1;
            }
            let zero = match kind {
                PseudoOutcomeKind::Ra => NuisanceTuple {
                    mu0_hat: t.mu0,
                    mu1_hat: t.mu1,
                    ..*t
                },
                PseudoOutcomeKind::Pw => NuisanceTuple { pi_hat: t.pi, ..*t },
                PseudoOutcomeKind::Dr => NuisanceTuple { pi_hat: t.pi, ..*t },
            };
            zero_closed = zero_closed.max(closed_form_remainder(kind, &zero).abs());
            if kind == PseudoOutcomeKind::Dr {
                let z = NuisanceTuple {
                    mu0_hat: t.mu0,
                    mu1_hat: t.mu1,
                    ..*t
                };
                zero_closed = zero_closed.max(closed_form_remainder(kind, &z).abs());
            }
        }
        out.push(Check::new(
            format!("{kind}: oracle nuisances give tau ({} tuples)", tuples.len()),
            worst_oracle,
            1e-12,
        ));
        out.push(Check::new(
            format!("{kind}: remainder matches closed form ({} tuples)", tuples.len()),
            worst_closed,
            1e-12,
        ));
        out.push(Check::exact(
            format!("{kind}: remainder bound holds ({} tuples, violations)", tuples.len()),
            bound_violations as f64,
        ));
        let zero_case = match kind {
            PseudoOutcomeKind::Ra => "correct outcome models",
            PseudoOutcomeKind::Pw => "correct propensity",
            PseudoOutcomeKind::Dr => "correct propensity or outcome models",
        };
        out.push(Check::exact(format!("{kind}: remainder is exactly 0 with {zero_case}"), zero_closed));
    }
    out
}

/// Monte-Carlo unbiasedness of each pseudo-outcome with the true nuisances
/// of setting II at fixed covariate points; statistic is the worst |z|.
pub fn unbiasedness_checks(table: &FormulaTable, config: &VerifyConfig) -> Result<Vec<Check>> {
    let spec = DgpSpec::new(Setting::II, 2000, seed::derive_str(config.seed, "setting-ii"));
    let sample = crate::dgp::generate(&spec)?;
    let omega = sample.omega.expect("confounded setting");
    let x = sample.test.x();
    let mut out = Vec::new();
    for kind in PseudoOutcomeKind::ALL {
        let mut worst: f64 = 0.0;
        for i in 0..config.unbiasedness_points.min(x.nrows()) {
            let row = x.row(i);
            let t = NuisanceTuple::oracle(spec.mu0(row), spec.mu1(row), spec.pi(row, omega));
            let (m, se) = monte_carlo_mean(
                table,
                kind,
                &t,
                config.unbiasedness_draws,
                spec.noise_sd,
                seed::derive(seed::derive_str(config.seed, &kind.to_string()), i as u64),
            );
            worst = worst.max((m - t.tau()).abs() / se.max(f64::MIN_POSITIVE));
        }
        out.push(Check::new(
            format!(
                "{kind}: Monte-Carlo mean equals tau at {} points ({} draws), max |z|",
                config.unbiasedness_points, config.unbiasedness_draws
            ),
            worst,
            3.0,
        ));
    }
    Ok(out)
}

/// The selection-bias identity under setting I with `f = mean(X_C^2)`;
/// statistic is |lhs - rhs| in combined standard errors.
pub fn identity_checks(config: &VerifyConfig) -> Result<Vec<Check>> {
    let spec = DgpSpec::new(Setting::I, 2, 0);
    let d_c = spec.d_c;
    let f = move |x: ArrayView1<f64>| x.iter().take(d_c).map(|v| v * v).sum::<f64>() / d_c as f64;
    let r = selection_weight_identity_check(&spec, config.identity_draws, &f, seed::derive_str(config.seed, "identity"))?;
    Ok(vec![Check::new(
        format!("selection-bias identity ({} draws), |diff| / combined SE", config.identity_draws),
        r.abs_diff / r.combined_se(),
        3.0,
    )])
}

/// Every check, using `table` for the pseudo-outcome formulas.
pub fn verify_suite(table: &FormulaTable, config: &VerifyConfig) -> Result<Vec<Check>> {
    let mut out = algebra_checks(table, config);
    out.extend(unbiasedness_checks(table, config)?);
    out.extend(identity_checks(config)?);
    Ok(out)
}
