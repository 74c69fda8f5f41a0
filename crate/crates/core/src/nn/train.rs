//! Minibatch Adam training with validation-split early stopping.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::dense::{DenseLayer, DenseNet, LayerGrad};
use super::loss::{LossKind, LossValue};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub val_fraction: f64,
    pub l2_lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 100,
            learning_rate: 1e-3,
            max_epochs: 1000,
            patience: 50,
            val_fraction: 0.30,
            l2_lambda: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Config("l2_lambda must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }

    /// Training and validation row indices: a seeded shuffle whose last
    /// `ceil(val_fraction * n)` rows form the validation set.
    pub fn split(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        let n_val = (self.val_fraction * n as f64).ceil() as usize;
        if n_val < 1 || n_val >= n {
            return Err(Error::Config(format!(
                "cannot split {n} examples into nonempty train and validation sets"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut seed::rng(seed::derive_str(self.seed, "split")));
        let val = idx.split_off(n - n_val);
        Ok((idx, val))
    }
}

/// A model that can be fit by [`train`].
pub trait Trainable: Clone {
    type Data: ?Sized;

    fn num_examples(data: &Self::Data) -> usize;

    /// Regularized objective over `rows` of `data`, plus its gradient in
    /// [`Trainable::layers`] order when `want_grads` is set.
    fn evaluate(
        &self,
        data: &Self::Data,
        rows: &[usize],
        l2_lambda: f64,
        want_grads: bool,
    ) -> Result<(LossValue, Option<Vec<LayerGrad>>)>;

    fn layers(&self) -> Vec<&DenseLayer>;

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer>;
}

/// Inputs and targets for fitting a plain [`DenseNet`].
#[derive(Debug, Clone)]
pub struct Supervised {
    pub x: Array2<f64>,
    pub target: Array2<f64>,
    pub loss: LossKind,
}

impl Supervised {
    pub fn new(x: Array2<f64>, target: Array2<f64>, loss: LossKind) -> Result<Self> {
        if x.nrows() != target.nrows() {
            return Err(Error::DimensionMismatch {
                what: "target rows",
                expected: x.nrows(),
                actual: target.nrows(),
            });
        }
        Ok(Supervised { x, target, loss })
    }

    /// Single-output regression data.
    pub fn regression(x: ArrayView2<f64>, y: &[f64]) -> Result<Self> {
        let target = Array2::from_shape_vec((y.len(), 1), y.to_vec())
            .map_err(|e| Error::Dataset(e.to_string()))?;
        Supervised::new(x.to_owned(), target, LossKind::Mse)
    }
}

impl Trainable for DenseNet {
    type Data = Supervised;

    fn num_examples(data: &Supervised) -> usize {
        data.x.nrows()
    }

    fn evaluate(
        &self,
        data: &Supervised,
        rows: &[usize],
        l2_lambda: f64,
        want_grads: bool,
    ) -> Result<(LossValue, Option<Vec<LayerGrad>>)> {
        let x = data.x.select(Axis(0), rows);
        let t = data.target.select(Axis(0), rows);
        self.objective(x.view(), t.view(), data.loss, l2_lambda, want_grads)
    }

    fn layers(&self) -> Vec<&DenseLayer> {
        DenseNet::layers(self).iter().collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        DenseNet::layers_mut(self).iter_mut().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl TrainLog {
    /// One `{"epoch":..,"train_loss":..,"val_loss":..}` object per line.
    pub fn to_json_lines(&self) -> String {
        let mut s = String::new();
        for rec in &self.epochs {
            s.push_str(&serde_json::to_string(rec).expect("plain struct"));
            s.push('\n');
        }
        s
    }
}

/// Fits `model` with minibatch Adam and returns the parameters with the best
/// validation objective seen, along with the per-epoch log.
pub fn train<M: Trainable>(
    mut model: M,
    data: &M::Data,
    config: &TrainConfig,
) -> Result<(M, TrainLog)> {
    config.validate()?;
    let n = M::num_examples(data);
    if n == 0 {
        return Err(Error::Dataset("cannot train on an empty dataset".into()));
    }
    let (mut train_rows, val_rows) = config.split(n)?;
    let mut rng = seed::rng(seed::derive_str(config.seed, "minibatch"));
    let mut state = AdamState::new(model.layers());

    let mut best = model.clone();
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        train_rows.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (batch, rows) in train_rows.chunks(config.batch_size).enumerate() {
            let wrap = |source: Error| Error::Training {
                epoch,
                batch,
                source: Box::new(source),
            };
            let (value, grads) = model
                .evaluate(data, rows, config.l2_lambda, true)
                .map_err(wrap)?;
            let grads = grads.expect("gradients requested");
            if grads
                .iter()
                .any(|g| g.weights.iter().chain(g.bias.iter()).any(|v| !v.is_finite()))
            {
                return Err(wrap(Error::NonFinite { what: "gradient" }));
            }
            state
                .step(model.layers_mut(), &grads, config.learning_rate)
                .map_err(wrap)?;
            weighted += value.objective * rows.len() as f64;
        }
        let train_loss = weighted / train_rows.len() as f64;
        let (val, _) = model
            .evaluate(data, &val_rows, config.l2_lambda, false)
            .map_err(|source| Error::Training {
                epoch,
                batch: usize::MAX,
                source: Box::new(source),
            })?;
        let val_loss = val.objective;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    Ok((best, log))
}
