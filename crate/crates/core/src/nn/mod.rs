//! A small feed-forward network engine: dense layers, exact backpropagation,
//! Adam, and early-stopped minibatch training.

mod activation;
mod adam;
mod dense;
mod loss;
mod train;

pub use activation::{sigmoid, softplus, Activation};
pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use dense::{DenseLayer, DenseNet, ForwardCache, LayerGrad};
pub use loss::{LossKind, LossValue};
pub(crate) use loss::loss_and_grad;
pub use train::{train, EpochRecord, Supervised, TrainConfig, TrainLog, Trainable};

/// Takes one Adam step on any trainable model.
pub fn adam_step<M: Trainable>(
    model: &mut M,
    grads: &[LayerGrad],
    state: &mut AdamState,
    learning_rate: f64,
) -> crate::Result<()> {
    state.step(model.layers_mut(), grads, learning_rate)
}

/// Flattens every parameter of a model (weights row-major, then bias, per layer).
pub fn flatten_params<M: Trainable>(model: &M) -> Vec<f64> {
    let mut out = Vec::new();
    for l in model.layers() {
        out.extend(l.weights.iter());
        out.extend(l.bias.iter());
    }
    out
}

/// Inverse of [`flatten_params`].
pub fn set_params<M: Trainable>(model: &mut M, values: &[f64]) {
    let mut it = values.iter();
    for l in model.layers_mut() {
        for w in l.weights.iter_mut() {
            *w = *it.next().expect("parameter count");
        }
        for b in l.bias.iter_mut() {
            *b = *it.next().expect("parameter count");
        }
    }
}

/// Flattens a gradient list in the same order as [`flatten_params`].
pub fn flatten_grads(grads: &[LayerGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend(g.weights.iter());
        out.extend(g.bias.iter());
    }
    out
}
