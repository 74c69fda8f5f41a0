//! Simulation settings: standard normal covariates, quadratic potential
//! outcomes, and a logistic propensity driven by the confounder block.
//!
//! Columns are laid out as `X_C` (confounders, first `d_c`), `X_O`
//! (outcome-only, next `d_o`), then `X_tau` (predictive, next `n_tau`); the
//! rest is noise. Setting III instead uses two disjoint blocks of `d_mu`
//! columns for `mu0` and `mu1` and assigns treatment by a fair coin.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationalDataset, Oracle};
use crate::error::{Error, Result};
use crate::learners::FunctionNuisance;
use crate::nn::sigmoid;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Setting {
    /// Confounded, no treatment effect.
    I,
    /// Confounded, effect through `d_tau` predictive features.
    II,
    /// Randomized, unrelated `mu0` and `mu1`.
    III,
    /// Setting I structure with `n_tau` predictive features.
    Predictive(usize),
    /// Setting I structure with the propensity offset moved so that the
    /// average propensity equals the target treated fraction.
    Imbalance(f64),
}

crate::string_serde!(Setting);

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::I => f.write_str("i"),
            Setting::II => f.write_str("ii"),
            Setting::III => f.write_str("iii"),
            Setting::Predictive(k) => write!(f, "predictive:{k}"),
            Setting::Imbalance(q) => write!(f, "imbalance:{q}"),
        }
    }
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || Error::Config(format!("unknown setting `{s}`"));
        match lower.as_str() {
            "i" | "1" => Ok(Setting::I),
            "ii" | "2" => Ok(Setting::II),
            "iii" | "3" => Ok(Setting::III),
            _ => {
                let (name, value) = lower.split_once(':').ok_or_else(bad)?;
                match name {
                    "predictive" => Ok(Setting::Predictive(value.parse().map_err(|_| bad())?)),
                    "imbalance" => Ok(Setting::Imbalance(value.parse().map_err(|_| bad())?)),
                    _ => Err(bad()),
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpSpec {
    pub setting: Setting,
    pub d: usize,
    pub d_c: usize,
    pub d_o: usize,
    /// Predictive features of setting II.
    pub d_tau: usize,
    /// Block size of each potential outcome in setting III.
    pub d_mu: usize,
    pub xi: f64,
    pub noise_sd: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec {
            setting: Setting::I,
            d: 25,
            d_c: 5,
            d_o: 5,
            d_tau: 5,
            d_mu: 10,
            xi: 3.0,
            noise_sd: 1.0,
            n_train: 2000,
            n_test: 500,
            seed: 0,
        }
    }
}

fn sum_sq(x: ArrayView1<f64>) -> f64 {
    x.iter().map(|v| v * v).sum()
}

impl DgpSpec {
    pub fn new(setting: Setting, n_train: usize, seed: u64) -> Self {
        DgpSpec {
            setting,
            n_train,
            seed,
            ..DgpSpec::default()
        }
    }

    /// Number of predictive features in the confounded settings.
    pub fn n_tau(&self) -> usize {
        match self.setting {
            Setting::I | Setting::III | Setting::Imbalance(_) => 0,
            Setting::II => self.d_tau,
            Setting::Predictive(k) => k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_train < 2 {
            return fail(format!("n_train must be at least 2, got {}", self.n_train));
        }
        if !(self.xi.is_finite() && self.xi >= 0.0) {
            return fail(format!("xi must be finite and nonnegative, got {}", self.xi));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return fail(format!("noise_sd must be finite and nonnegative, got {}", self.noise_sd));
        }
        match self.setting {
            Setting::III => {
                if 2 * self.d_mu > self.d || self.d_mu == 0 {
                    return fail(format!("two blocks of {} columns do not fit in d = {}", self.d_mu, self.d));
                }
            }
            _ => {
                if self.d_c == 0 {
                    return fail("the confounder block cannot be empty".into());
                }
                let used = self.d_c + self.d_o + self.n_tau();
                if used > self.d {
                    return fail(format!(
                        "blocks need {used} columns but d = {} (n_tau = {})",
                        self.d,
                        self.n_tau()
                    ));
                }
            }
        }
        if let Setting::Imbalance(q) = self.setting {
            if !(q > 0.0 && q < 1.0) {
                return fail(format!("treated fraction must lie in (0, 1), got {q}"));
            }
            if self.xi == 0.0 && q != 0.5 {
                return fail(format!("with xi = 0 every propensity is 0.5; {q} is unattainable"));
            }
        }
        Ok(())
    }

    pub fn mu0(&self, x: ArrayView1<f64>) -> f64 {
        match self.setting {
            Setting::III => sum_sq(x.slice(s![..self.d_mu])),
            _ => sum_sq(x.slice(s![..self.d_c + self.d_o])),
        }
    }

    pub fn mu1(&self, x: ArrayView1<f64>) -> f64 {
        match self.setting {
            Setting::III => sum_sq(x.slice(s![self.d_mu..2 * self.d_mu])),
            _ => {
                let start = self.d_c + self.d_o;
                self.mu0(x) + sum_sq(x.slice(s![start..start + self.n_tau()]))
            }
        }
    }

    /// Mean of squared confounders; the propensity is increasing in it.
    pub fn confounding_score(&self, x: ArrayView1<f64>) -> f64 {
        sum_sq(x.slice(s![..self.d_c])) / self.d_c as f64
    }

    /// True propensity given the offset `omega` (ignored in setting III).
    pub fn pi(&self, x: ArrayView1<f64>, omega: f64) -> f64 {
        match self.setting {
            Setting::III => 0.5,
            _ => sigmoid(self.xi * (self.confounding_score(x) - omega)),
        }
    }

    fn covariates(&self, n: usize, stream: u64) -> Array2<f64> {
        let mut rng = seed::rng(seed::derive_str(stream, "x"));
        Array2::from_shape_simple_fn((n, self.d), || rng.sample(StandardNormal))
    }
}

/// Offset making the average of `sigmoid(xi (s - omega))` equal `target`.
pub fn solve_offset(scores: &[f64], xi: f64, target: f64) -> Result<f64> {
    let mean_pi = |omega: f64| scores.iter().map(|&s| sigmoid(xi * (s - omega))).sum::<f64>() / scores.len() as f64;
    let lo_s = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_s = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let margin = 40.0 / xi.max(1e-12);
    let (mut lo, mut hi) = (lo_s - margin, hi_s + margin);
    if !(mean_pi(lo) > target && mean_pi(hi) < target) {
        return Err(Error::Config(format!("treated fraction {target} is unattainable")));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_pi(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            break;
        }
    }
    let omega = 0.5 * (lo + hi);
    if (mean_pi(omega) - target).abs() > 1e-6 {
        return Err(Error::Config(format!("treated fraction {target} is unattainable")));
    }
    Ok(omega)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    pub train: ObservationalDataset,
    pub test: ObservationalDataset,
    /// Propensity offset from the training sample, shared by the test set.
    pub omega: Option<f64>,
    pub treated_fraction: f64,
    pub spec: DgpSpec,
}

impl GeneratedSample {
    /// The true nuisance functions.
    pub fn oracle_nuisance(&self) -> FunctionNuisance {
        let (a, b, c) = (self.spec.clone(), self.spec.clone(), self.spec.clone());
        let omega = self.omega.unwrap_or(0.0);
        FunctionNuisance::new(
            Arc::new(move |x| a.mu0(x)),
            Arc::new(move |x| b.mu1(x)),
            Some(Arc::new(move |x| c.pi(x, omega))),
        )
    }
}

fn draw(spec: &DgpSpec, x: Array2<f64>, omega: f64, stream: u64, label: &str) -> Result<ObservationalDataset> {
    let n = x.nrows();
    let mu0: Array1<f64> = x.rows().into_iter().map(|r| spec.mu0(r)).collect();
    let mu1: Array1<f64> = x.rows().into_iter().map(|r| spec.mu1(r)).collect();
    let pi: Array1<f64> = x.rows().into_iter().map(|r| spec.pi(r, omega)).collect();
    let mut wr = seed::rng(seed::derive_str(stream, "w"));
    let w: Vec<u8> = pi.iter().map(|&p| u8::from(wr.random::<f64>() < p)).collect();
    let mut er = seed::rng(seed::derive_str(stream, "noise"));
    let y: Array1<f64> = (0..n)
        .map(|i| {
            let eps: f64 = er.sample(StandardNormal);
            (if w[i] == 1 { mu1[i] } else { mu0[i] }) + spec.noise_sd * eps
        })
        .collect();
    Ok(ObservationalDataset::new(x, w, y, Some(Oracle::new(mu0, mu1, Some(pi))))?
        .with_provenance(format!("simulated setting={} seed={} {label}", spec.setting, spec.seed)))
}

/// Draws the training and test samples of `spec`.
pub fn generate(spec: &DgpSpec) -> Result<GeneratedSample> {
    spec.validate()?;
    let train_stream = seed::derive_str(spec.seed, "train");
    let test_stream = seed::derive_str(spec.seed, "test");
    let x = spec.covariates(spec.n_train, train_stream);
    let omega = match spec.setting {
        Setting::III => None,
        Setting::Imbalance(q) => {
            let scores: Vec<f64> = x.rows().into_iter().map(|r| spec.confounding_score(r)).collect();
            Some(solve_offset(&scores, spec.xi, q)?)
        }
        _ => {
            let scores: Vec<f64> = x.rows().into_iter().map(|r| spec.confounding_score(r)).collect();
            Some(median(&scores))
        }
    };
    let om = omega.unwrap_or(0.0);
    let train = draw(spec, x, om, train_stream, "train")?;
    let test = draw(spec, spec.covariates(spec.n_test, test_stream), om, test_stream, "test")?;
    Ok(GeneratedSample {
        treated_fraction: train.treated_fraction(),
        train,
        test,
        omega,
        spec: spec.clone(),
    })
}

pub fn sweep_predictive(base: &DgpSpec, n_tau_values: &[usize]) -> Result<Vec<DgpSpec>> {
    n_tau_values
        .iter()
        .map(|&k| {
            let spec = DgpSpec {
                setting: Setting::Predictive(k),
                ..base.clone()
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

pub fn sweep_imbalance(base: &DgpSpec, treated_fractions: &[f64]) -> Result<Vec<DgpSpec>> {
    treated_fractions
        .iter()
        .map(|&q| {
            let spec = DgpSpec {
                setting: Setting::Imbalance(q),
                ..base.clone()
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}
