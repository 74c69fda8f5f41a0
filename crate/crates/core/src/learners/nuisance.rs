use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::arch::{fit, ArchConfig, ArchitectureKind, NuisanceModel, NuisancePredictions};
use crate::data::ObservationalDataset;
use crate::error::{Error, Result};

/// Anything that predicts nuisances on covariate rows.
pub trait Nuisance: Send + Sync {
    fn predict(&self, x: ArrayView2<f64>, need_pi: bool) -> Result<NuisancePredictions>;
}

/// Produces a [`Nuisance`] from a training sample.
pub trait NuisanceFitter: Send + Sync {
    fn fit(&self, data: &ObservationalDataset, need_pi: bool, seed: u64) -> Result<Box<dyn Nuisance>>;
}

impl Nuisance for NuisanceModel {
    fn predict(&self, x: ArrayView2<f64>, need_pi: bool) -> Result<NuisancePredictions> {
        let mut p = self.predict_all(x)?;
        if need_pi && p.pi.is_none() {
            return Err(Error::Contract(format!("{} model has no propensity estimate", self.kind())));
        }
        if !need_pi {
            p.pi = None;
        }
        Ok(p)
    }
}

/// Fits one of the neural architectures; the seed replaces `config.train.seed`.
#[derive(Debug, Clone)]
pub struct ArchitectureFitter {
    pub kind: ArchitectureKind,
    pub config: ArchConfig,
}

impl ArchitectureFitter {
    pub fn new(kind: ArchitectureKind, config: ArchConfig) -> Self {
        ArchitectureFitter { kind, config }
    }

    pub fn fit_model(&self, data: &ObservationalDataset, need_pi: bool, seed: u64) -> Result<NuisanceModel> {
        let mut config = self.config.clone();
        config.train.seed = seed;
        fit(self.kind, data, &config, need_pi)
    }
}

impl NuisanceFitter for ArchitectureFitter {
    fn fit(&self, data: &ObservationalDataset, need_pi: bool, seed: u64) -> Result<Box<dyn Nuisance>> {
        Ok(Box::new(self.fit_model(data, need_pi, seed)?))
    }
}

pub type RowFn = Arc<dyn Fn(ArrayView1<f64>) -> f64 + Send + Sync>;

/// Known nuisance functions; fitting ignores the data. Used to inject
/// oracle or deliberately wrong nuisances.
#[derive(Clone)]
pub struct FunctionNuisance {
    pub mu0: RowFn,
    pub mu1: RowFn,
    pub pi: Option<RowFn>,
}

impl fmt::Debug for FunctionNuisance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionNuisance")
            .field("pi", &self.pi.is_some())
            .finish_non_exhaustive()
    }
}

impl FunctionNuisance {
    pub fn new(mu0: RowFn, mu1: RowFn, pi: Option<RowFn>) -> Self {
        FunctionNuisance { mu0, mu1, pi }
    }
}

fn apply(f: &RowFn, x: ArrayView2<f64>) -> Array1<f64> {
    x.rows().into_iter().map(|r| f(r)).collect()
}

impl Nuisance for FunctionNuisance {
    fn predict(&self, x: ArrayView2<f64>, need_pi: bool) -> Result<NuisancePredictions> {
        let pi = if need_pi {
            Some(apply(
                self.pi
                    .as_ref()
                    .ok_or_else(|| Error::Contract("no propensity function supplied".into()))?,
                x,
            ))
        } else {
            None
        };
        Ok(NuisancePredictions {
            mu0: apply(&self.mu0, x),
            mu1: apply(&self.mu1, x),
            pi,
        })
    }
}

impl NuisanceFitter for FunctionNuisance {
    fn fit(&self, _data: &ObservationalDataset, _need_pi: bool, _seed: u64) -> Result<Box<dyn Nuisance>> {
        Ok(Box::new(self.clone()))
    }
}
