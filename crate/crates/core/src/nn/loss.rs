use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::activation::{softplus, Activation};
use crate::error::{Error, Result};

/// Data-fit loss attached to a network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Squared error `(p - t)^2`.
    Mse,
    /// Binary cross-entropy on a sigmoid output.
    CrossEntropy,
}

/// A regularized objective split into its data-fit and penalty parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub objective: f64,
    pub data_term: f64,
    pub penalty_term: f64,
}

impl LossValue {
    pub fn new(data_term: f64, penalty_term: f64) -> Self {
        LossValue {
            objective: data_term + penalty_term,
            data_term,
            penalty_term,
        }
    }
}

/// Per-element loss summed over a batch, and the gradient of that sum (scaled
/// by `scale`) with respect to the last layer's pre-activation.
///
/// `pre` and `out` are the last layer's pre-activations and outputs.
pub(crate) fn loss_and_grad(
    kind: LossKind,
    activation: Activation,
    pre: ArrayView2<f64>,
    out: ArrayView2<f64>,
    target: ArrayView2<f64>,
    scale: f64,
) -> Result<(f64, Array2<f64>)> {
    if kind == LossKind::CrossEntropy && activation != Activation::Sigmoid {
        return Err(Error::Config(
            "cross-entropy loss requires a sigmoid output layer".into(),
        ));
    }
    let mut grad = Array2::<f64>::zeros(out.raw_dim());
    let mut total = 0.0;
    for (row, ((z_row, p_row), t_row)) in pre
        .rows()
        .into_iter()
        .zip(out.rows())
        .zip(target.rows())
        .enumerate()
    {
        let mut row_loss = 0.0;
        for ((&z, &p), &t) in z_row.iter().zip(p_row).zip(t_row) {
            row_loss += match kind {
                LossKind::Mse => (p - t) * (p - t),
                LossKind::CrossEntropy => softplus(z) - t * z,
            };
        }
        if !row_loss.is_finite() {
            return Err(Error::NonFiniteLoss { row });
        }
        total += row_loss;
    }
    Zip::from(&mut grad)
        .and(out)
        .and(target)
        .for_each(|g, &p, &t| {
            *g = match kind {
                LossKind::Mse => 2.0 * (p - t) * activation.derivative_from_output(p),
                LossKind::CrossEntropy => p - t,
            } * scale;
        });
    Ok((total, grad))
}
