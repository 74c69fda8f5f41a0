//! Plug-in and two-step (RA, PW, DR) meta-learners.
//!
//! A two-step learner fits nuisance models in a first stage, turns each row
//! into a pseudo-outcome whose conditional mean is the CATE when the
//! nuisances are exact, and regresses the pseudo-outcomes on the covariates.

mod nuisance;
mod pseudo;
mod two_step;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::arch::ArchitectureKind;
use crate::error::{Error, Result};

pub use nuisance::{ArchitectureFitter, FunctionNuisance, Nuisance, NuisanceFitter, RowFn};
pub use pseudo::{
    clip_propensity, formula, pseudo_dr, pseudo_outcomes, pseudo_pw, pseudo_ra, ClipBound,
    PseudoOutcomeKind,
};
pub use two_step::{
    first_stage, run_plugin, run_two_step, run_two_step_with, second_stage_net, CateModel,
    FirstStage, FitRecord, Provenance,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Learner {
    PlugIn,
    TwoStep(PseudoOutcomeKind),
}

impl Learner {
    pub const ALL: [Learner; 4] = [
        Learner::PlugIn,
        Learner::TwoStep(PseudoOutcomeKind::Ra),
        Learner::TwoStep(PseudoOutcomeKind::Pw),
        Learner::TwoStep(PseudoOutcomeKind::Dr),
    ];

    pub fn needs_propensity(self) -> bool {
        matches!(self, Learner::TwoStep(k) if k.needs_propensity())
    }
}

impl fmt::Display for Learner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Learner::PlugIn => f.write_str("plugin"),
            Learner::TwoStep(k) => f.write_str(&k.to_string().to_ascii_lowercase()),
        }
    }
}

impl FromStr for Learner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "plugin" => Ok(Learner::PlugIn),
            other => other.parse().map(Learner::TwoStep),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FittingStrategy {
    #[default]
    FullSample,
    SplitHalf,
    CrossFit(usize),
}

impl FittingStrategy {
    pub fn validate(self) -> Result<()> {
        match self {
            FittingStrategy::CrossFit(k) if k < 2 => {
                Err(Error::Config(format!("cross-fitting needs at least 2 folds, got {k}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FittingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FittingStrategy::FullSample => f.write_str("full"),
            FittingStrategy::SplitHalf => f.write_str("split"),
            FittingStrategy::CrossFit(k) => write!(f, "crossfit{k}"),
        }
    }
}

impl FromStr for FittingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace(['-', '_', ' '], "");
        match s.as_str() {
            "full" | "fullsample" => Ok(FittingStrategy::FullSample),
            "split" | "splithalf" => Ok(FittingStrategy::SplitHalf),
            _ => {
                let k = s
                    .strip_prefix("crossfit")
                    .and_then(|k| k.strip_prefix('(').map(|k| k.trim_end_matches(')')).or(Some(k)))
                    .and_then(|k| k.parse::<usize>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown fitting strategy `{s}`")))?;
                let st = FittingStrategy::CrossFit(k);
                st.validate()?;
                Ok(st)
            }
        }
    }
}

crate::string_serde!(Learner);
crate::string_serde!(FittingStrategy);

/// Everything that defines a meta-learner run apart from data and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaLearnerSpec {
    pub learner: Learner,
    pub architecture: ArchitectureKind,
    #[serde(default)]
    pub strategy: FittingStrategy,
    #[serde(default)]
    pub clip: ClipBound,
    /// With `SplitHalf`, fit the propensity and outcome models on disjoint
    /// halves of the nuisance sample.
    #[serde(default)]
    pub separate_propensity_sample: bool,
}

impl MetaLearnerSpec {
    pub fn new(learner: Learner, architecture: ArchitectureKind) -> Self {
        MetaLearnerSpec {
            learner,
            architecture,
            strategy: FittingStrategy::FullSample,
            clip: ClipBound::default(),
            separate_propensity_sample: false,
        }
    }

    pub fn with_strategy(mut self, strategy: FittingStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.strategy.validate()?;
        if self.learner == Learner::PlugIn && self.strategy != FittingStrategy::FullSample {
            return Err(Error::Config("the plug-in learner uses a single full-sample fit".into()));
        }
        if self.separate_propensity_sample
            && (self.strategy != FittingStrategy::SplitHalf || !self.learner.needs_propensity())
        {
            return Err(Error::Config(
                "separate propensity sub-samples apply only to PW/DR with split-half fitting".into(),
            ));
        }
        Ok(())
    }

    /// Known weak combinations, for display.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.learner == Learner::TwoStep(PseudoOutcomeKind::Dr)
            && self.architecture == ArchitectureKind::SNetFull
        {
            out.push(
                "DR with SNet shares information between propensity and outcome estimates; \
                 in small samples it tends to do worse than DR with TNet"
                    .to_owned(),
            );
        }
        out
    }
}

impl fmt::Display for MetaLearnerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}/{}", self.learner, self.architecture, self.strategy)
    }
}
