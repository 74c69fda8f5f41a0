//! Semi-synthetic benchmark files and CATE-variance rescaling.
//!
//! Realization `i` is the pair `{dir}/ihdp_train_{i}.csv`, `{dir}/ihdp_test_{i}.csv`
//! in the standard CSV format, with `mu0`, `mu1` (and optionally `cate`) columns.

use std::path::{Path, PathBuf};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::csv_io::{load_csv, CsvSchema};
use super::dataset::{ObservationalDataset, Oracle};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RescaleDecision {
    pub applied: bool,
    /// Population standard deviation of the true CATE over training rows.
    pub sigma_cate: f64,
    pub threshold: f64,
}

pub const RESCALE_THRESHOLD: f64 = 1.0;

/// Population standard deviation.
pub fn population_sd(v: &Array1<f64>) -> f64 {
    let n = v.len() as f64;
    if v.is_empty() {
        return 0.0;
    }
    let m = v.sum() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

fn rescale(data: &ObservationalDataset, sigma: f64) -> Result<ObservationalDataset> {
    let o = data.oracle().ok_or(Error::MissingOracle("rescaling needs mu0 and mu1"))?;
    let mu0 = o.mu0.mapv(|v| v / sigma);
    let mu1 = o.mu1.mapv(|v| v / sigma);
    let y = Array1::from_iter((0..data.n()).map(|i| {
        let (old, new) = if data.w()[i] == 1 { (o.mu1[i], mu1[i]) } else { (o.mu0[i], mu0[i]) };
        new + (data.y()[i] - old)
    }));
    data.with_outcomes(y, Some(Oracle::new(mu0, mu1, o.pi.clone())))
}

/// Divides the expected potential outcomes of both splits by the training
/// CATE standard deviation when it exceeds 1, keeping each row's noise.
pub fn rescale_ihdp(
    train: &ObservationalDataset,
    test: &ObservationalDataset,
) -> Result<(ObservationalDataset, ObservationalDataset, RescaleDecision)> {
    let o = train.oracle().ok_or(Error::MissingOracle("rescaling needs mu0 and mu1 on the training split"))?;
    if test.oracle().is_none() {
        return Err(Error::MissingOracle("rescaling needs mu0 and mu1 on the test split"));
    }
    let sigma = population_sd(&o.tau);
    let applied = sigma > RESCALE_THRESHOLD;
    let decision = RescaleDecision {
        applied,
        sigma_cate: sigma,
        threshold: RESCALE_THRESHOLD,
    };
    if !applied {
        return Ok((train.clone(), test.clone(), decision));
    }
    Ok((rescale(train, sigma)?, rescale(test, sigma)?, decision))
}

pub fn ihdp_paths(dir: &Path, index: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("ihdp_train_{index}.csv")),
        dir.join(format!("ihdp_test_{index}.csv")),
    )
}

/// Loads realization `index` from `dir`; both splits must carry oracle columns.
pub fn load_ihdp(dir: &Path, index: usize) -> Result<(ObservationalDataset, ObservationalDataset)> {
    let schema = CsvSchema {
        require_oracle: true,
        ..CsvSchema::default()
    };
    let (a, b) = ihdp_paths(dir, index);
    Ok((load_csv(&a, &schema)?, load_csv(&b, &schema)?))
}
