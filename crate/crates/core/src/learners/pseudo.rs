//! Pseudo-outcome formulas and propensity clipping.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PseudoOutcomeKind {
    Ra,
    Pw,
    Dr,
}

impl PseudoOutcomeKind {
    pub const ALL: [PseudoOutcomeKind; 3] = [PseudoOutcomeKind::Ra, PseudoOutcomeKind::Pw, PseudoOutcomeKind::Dr];

    pub fn needs_outcome_models(self) -> bool {
        self != PseudoOutcomeKind::Pw
    }

    pub fn needs_propensity(self) -> bool {
        self != PseudoOutcomeKind::Ra
    }
}

impl fmt::Display for PseudoOutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PseudoOutcomeKind::Ra => "RA",
            PseudoOutcomeKind::Pw => "PW",
            PseudoOutcomeKind::Dr => "DR",
        })
    }
}

impl FromStr for PseudoOutcomeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ra" => Ok(PseudoOutcomeKind::Ra),
            "pw" => Ok(PseudoOutcomeKind::Pw),
            "dr" => Ok(PseudoOutcomeKind::Dr),
            other => Err(Error::Config(format!("unknown pseudo-outcome `{other}`"))),
        }
    }
}

crate::string_serde!(PseudoOutcomeKind);

/// Propensity clipping bound `delta`, with `delta <= pi_hat <= 1 - delta` after clipping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ClipBound(f64);

impl ClipBound {
    pub const DEFAULT_DELTA: f64 = 0.01;

    pub fn new(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta < 0.5 {
            Ok(ClipBound(delta))
        } else {
            Err(Error::Config(format!("clip bound must lie in (0, 0.5), got {delta}")))
        }
    }

    pub fn delta(self) -> f64 {
        self.0
    }

    pub fn clip(self, pi_hat: f64) -> f64 {
        clip_propensity(pi_hat, self.0)
    }

    pub fn contains(self, pi_hat: f64) -> bool {
        pi_hat >= self.0 && pi_hat <= 1.0 - self.0
    }
}

impl Default for ClipBound {
    fn default() -> Self {
        ClipBound(Self::DEFAULT_DELTA)
    }
}

impl TryFrom<f64> for ClipBound {
    type Error = Error;

    fn try_from(delta: f64) -> Result<Self> {
        ClipBound::new(delta)
    }
}

impl From<ClipBound> for f64 {
    fn from(c: ClipBound) -> f64 {
        c.0
    }
}

pub fn clip_propensity(pi_hat: f64, delta: f64) -> f64 {
    pi_hat.max(delta).min(1.0 - delta)
}

/// The raw formulas with no input checks; `w` may be any real. A weight
/// `w / pi` or `(1 - w) / (1 - pi)` with a zero numerator is zero, so the
/// formulas stay defined at `pi` in {0, 1} for the observed arm.
pub mod formula {
    fn ratio(num: f64, den: f64) -> f64 {
        if num == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    pub fn ra(y: f64, w: f64, mu0: f64, mu1: f64) -> f64 {
        w * (y - mu0) + (1.0 - w) * (mu1 - y)
    }

    pub fn pw(y: f64, w: f64, pi: f64) -> f64 {
        (ratio(w, pi) - ratio(1.0 - w, 1.0 - pi)) * y
    }

    pub fn dr(y: f64, w: f64, mu0: f64, mu1: f64, pi: f64) -> f64 {
        let a = ratio(w, pi);
        let b = ratio(1.0 - w, 1.0 - pi);
        (a - b) * y + (1.0 - a) * mu1 - (1.0 - b) * mu0
    }
}

fn finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { what: "pseudo-outcome input" })
    }
}

fn binary(w: u8) -> Result<f64> {
    match w {
        0 | 1 => Ok(f64::from(w)),
        other => Err(Error::Contract(format!("treatment must be 0 or 1, got {other}"))),
    }
}

fn in_clip(pi: f64, clip: ClipBound) -> Result<()> {
    if clip.contains(pi) {
        Ok(())
    } else {
        Err(Error::Contract(format!(
            "propensity {pi} outside [{}, {}]; clip it first",
            clip.delta(),
            1.0 - clip.delta()
        )))
    }
}

pub fn pseudo_ra(y: f64, w: u8, mu0_hat: f64, mu1_hat: f64) -> Result<f64> {
    finite(&[y, mu0_hat, mu1_hat])?;
    Ok(formula::ra(y, binary(w)?, mu0_hat, mu1_hat))
}

pub fn pseudo_pw(y: f64, w: u8, pi_hat: f64, clip: ClipBound) -> Result<f64> {
    finite(&[y, pi_hat])?;
    in_clip(pi_hat, clip)?;
    Ok(formula::pw(y, binary(w)?, pi_hat))
}

pub fn pseudo_dr(y: f64, w: u8, mu0_hat: f64, mu1_hat: f64, pi_hat: f64, clip: ClipBound) -> Result<f64> {
    finite(&[y, mu0_hat, mu1_hat, pi_hat])?;
    in_clip(pi_hat, clip)?;
    Ok(formula::dr(y, binary(w)?, mu0_hat, mu1_hat, pi_hat))
}

/// Pseudo-outcomes for a batch. `pi_hat` is clipped here before use.
pub fn pseudo_outcomes(
    kind: PseudoOutcomeKind,
    y: ArrayView1<f64>,
    w: &[u8],
    mu0_hat: ArrayView1<f64>,
    mu1_hat: ArrayView1<f64>,
    pi_hat: Option<ArrayView1<f64>>,
    clip: ClipBound,
) -> Result<Array1<f64>> {
    let n = y.len();
    for (what, len) in [("treatment", w.len()), ("mu0_hat", mu0_hat.len()), ("mu1_hat", mu1_hat.len())] {
        if len != n {
            return Err(Error::DimensionMismatch { what, expected: n, actual: len });
        }
    }
    let pi = match (kind.needs_propensity(), pi_hat) {
        (false, _) => None,
        (true, None) => {
            return Err(Error::Contract(format!("{kind} pseudo-outcomes need propensity estimates")))
        }
        (true, Some(p)) if p.len() != n => {
            return Err(Error::DimensionMismatch { what: "pi_hat", expected: n, actual: p.len() })
        }
        (true, Some(p)) => Some(p.mapv(|v| clip.clip(v))),
    };
    (0..n)
        .map(|i| match kind {
            PseudoOutcomeKind::Ra => pseudo_ra(y[i], w[i], mu0_hat[i], mu1_hat[i]),
            PseudoOutcomeKind::Pw => pseudo_pw(y[i], w[i], pi.as_ref().unwrap()[i], clip),
            PseudoOutcomeKind::Dr => {
                pseudo_dr(y[i], w[i], mu0_hat[i], mu1_hat[i], pi.as_ref().unwrap()[i], clip)
            }
        })
        .collect()
}
