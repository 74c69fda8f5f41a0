use ndarray::Zip;

use super::dense::{DenseLayer, LayerGrad};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates for every layer of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step: u64,
    m: Vec<LayerGrad>,
    v: Vec<LayerGrad>,
}

impl AdamState {
    pub fn new<'a>(layers: impl IntoIterator<Item = &'a DenseLayer>) -> Self {
        let m: Vec<LayerGrad> = layers.into_iter().map(LayerGrad::zeros_like).collect();
        AdamState {
            step: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[LayerGrad] {
        &self.m
    }

    pub fn second_moments(&self) -> &[LayerGrad] {
        &self.v
    }

    /// One bias-corrected Adam update applied in place.
    pub fn step(
        &mut self,
        mut layers: Vec<&mut DenseLayer>,
        grads: &[LayerGrad],
        learning_rate: f64,
    ) -> Result<()> {
        if layers.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer layer count",
                expected: self.m.len(),
                actual: if layers.len() != self.m.len() {
                    layers.len()
                } else {
                    grads.len()
                },
            });
        }
        for ((layer, g), m) in layers.iter().zip(grads).zip(&self.m) {
            if layer.weights.dim() != g.weights.dim()
                || layer.weights.dim() != m.weights.dim()
                || layer.bias.len() != g.bias.len()
                || layer.bias.len() != m.bias.len()
            {
                return Err(Error::DimensionMismatch {
                    what: "optimizer parameter shape",
                    expected: m.weights.len() + m.bias.len(),
                    actual: g.weights.len() + g.bias.len(),
                });
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + EPSILON);
        };
        for (((layer, g), m), v) in layers
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            Zip::from(&mut layer.weights)
                .and(&g.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .for_each(update);
            Zip::from(&mut layer.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(update);
            if !layer.is_finite() {
                return Err(Error::NonFinite {
                    what: "parameter after optimizer step",
                });
            }
        }
        Ok(())
    }
}
