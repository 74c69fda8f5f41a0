//! Dense layers and plain feed-forward networks.
//!
//! Weights are stored input-major, shape `(in, out)`, so a batch `X` of shape
//! `(m, in)` maps to `X W + b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use super::activation::Activation;
use super::loss::{loss_and_grad, LossKind, LossValue};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Fan-in scaled uniform initialization, `U(-sqrt(6/in), sqrt(6/in))`, zero bias.
    pub fn init<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / input as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let weights = Array2::from_shape_simple_fn((input, output), || dist.sample(rng));
        DenseLayer {
            weights,
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        DenseLayer {
            weights: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Returns `(pre_activation, output)`.
    fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut pre = x.dot(&self.weights);
        pre += &self.bias;
        let act = self.activation;
        let out = pre.mapv(|z| act.apply(z));
        (pre, out)
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

/// Gradient with respect to one layer's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrad {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrad {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

/// Intermediate values of a forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    out: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.out.last().unwrap_or(&self.input)
    }

    pub fn last_pre(&self) -> &Array2<f64> {
        self.pre.last().unwrap_or(&self.input)
    }
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

impl DenseNet {
    /// Builds a network with `widths.len()` layers; every layer but the last
    /// uses `hidden`, the last uses `output`. Per-layer seeds derive from `seed`.
    pub fn new(
        input_dim: usize,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::Config(format!(
                "network needs positive dimensions, got input {input_dim} and widths {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_dim;
        for (k, &w) in widths.iter().enumerate() {
            let act = if k + 1 == widths.len() { output } else { hidden };
            let mut rng = seed::rng(seed::derive(seed, k as u64));
            layers.push(DenseLayer::init(prev, w, act, &mut rng));
            prev = w;
        }
        Ok(DenseNet { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::DimensionMismatch {
                    what: "layer chaining",
                    expected: pair[0].output_dim(),
                    actual: pair[1].input_dim(),
                });
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::DimensionMismatch {
                    what: "bias length",
                    expected: l.output_dim(),
                    actual: l.bias.len(),
                });
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(DenseLayer::num_params).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(DenseLayer::is_finite)
    }

    /// Sum of squared weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input columns",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut cur = x.to_owned();
        for layer in &self.layers {
            cur = layer.forward(cur.view()).1;
        }
        Ok(cur)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut out: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = out.last().map_or(x.view(), |o| o.view());
            let (p, o) = layer.forward(input);
            pre.push(p);
            out.push(o);
        }
        Ok(ForwardCache {
            input: x.to_owned(),
            pre,
            out,
        })
    }

    /// Backpropagates `d_pre_last`, the gradient with respect to the last
    /// layer's pre-activation. Returns per-layer gradients and the gradient
    /// with respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_pre_last: Array2<f64>,
    ) -> (Vec<LayerGrad>, Array2<f64>) {
        let n = self.layers.len();
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(n);
        let mut d_pre = d_pre_last;
        for k in (0..n).rev() {
            let input = if k == 0 {
                cache.input.view()
            } else {
                cache.out[k - 1].view()
            };
            let layer = &self.layers[k];
            let weights = input.t().dot(&d_pre);
            let bias = d_pre.sum_axis(Axis(0));
            let mut d_in = d_pre.dot(&layer.weights.t());
            grads.push(LayerGrad { weights, bias });
            if k > 0 {
                let prev_act = self.layers[k - 1].activation;
                ndarray::Zip::from(&mut d_in)
                    .and(&cache.out[k - 1])
                    .for_each(|d, &o| *d *= prev_act.derivative_from_output(o));
            }
            d_pre = d_in;
        }
        grads.reverse();
        (grads, d_pre)
    }

    /// Mean per-row loss of the regularized objective and its exact gradient.
    ///
    /// The penalty is `l2_lambda * sum(W^2)` over all weight matrices, so its
    /// gradient is `2 * l2_lambda * W`; biases are not penalized.
    pub fn gradients(
        &self,
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
        loss: LossKind,
        l2_lambda: f64,
    ) -> Result<(LossValue, Vec<LayerGrad>)> {
        let (value, grads) = self.objective(x, target, loss, l2_lambda, true)?;
        Ok((value, grads.expect("requested")))
    }

    pub(crate) fn objective(
        &self,
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
        loss: LossKind,
        l2_lambda: f64,
        want_grads: bool,
    ) -> Result<(LossValue, Option<Vec<LayerGrad>>)> {
        if target.nrows() != x.nrows() {
            return Err(Error::DimensionMismatch {
                what: "target rows",
                expected: x.nrows(),
                actual: target.nrows(),
            });
        }
        if target.ncols() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                what: "target columns",
                expected: self.output_dim(),
                actual: target.ncols(),
            });
        }
        let m = x.nrows().max(1) as f64;
        let cache = self.forward_cached(x)?;
        let last = self.layers[self.layers.len() - 1].activation;
        let (sum, d_pre) = loss_and_grad(
            loss,
            last,
            cache.last_pre().view(),
            cache.output().view(),
            target,
            1.0 / m,
        )?;
        let value = LossValue::new(sum / m, l2_lambda * self.weight_sq_norm());
        if !want_grads {
            return Ok((value, None));
        }
        let (mut grads, _) = self.backward(&cache, d_pre);
        if l2_lambda != 0.0 {
            for (g, layer) in grads.iter_mut().zip(&self.layers) {
                g.weights.scaled_add(2.0 * l2_lambda, &layer.weights);
            }
        }
        Ok((value, Some(grads)))
    }
}
