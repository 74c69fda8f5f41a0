//! Networks made of shared representation blocks feeding several heads.
//!
//! Every representation consumes the raw covariates. A head consumes either
//! the raw covariates or the concatenation of a list of representations, in
//! the listed order. Outcome heads may be restricted to one treatment group so
//! that each example's loss flows only through its own head.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::ortho::{ortho_gradient, ortho_penalty};
use crate::error::{Error, Result};
use crate::nn::{
    loss_and_grad, Activation, DenseLayer, DenseNet, ForwardCache, LayerGrad, LossKind, LossValue,
    Trainable,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub name: String,
    pub net: DenseNet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadInput {
    Raw,
    /// Indices into the representation list, concatenated in this order.
    Reps(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadTarget {
    /// Regresses the outcome; `group` restricts the loss to rows with that treatment.
    Outcome { group: Option<u8> },
    /// Classifies the treatment indicator with cross-entropy.
    Propensity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub name: String,
    pub net: DenseNet,
    pub input: HeadInput,
    pub target: HeadTarget,
}

/// Training data for a [`MultiHeadNet`].
#[derive(Debug, Clone)]
pub struct NuisanceTask {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub w: Array1<f64>,
    pub outcome_loss: LossKind,
}

/// Objective components; `data` terms are averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub outcome: f64,
    pub propensity: f64,
    pub l2: f64,
    pub ortho: f64,
}

impl LossTerms {
    pub fn value(&self) -> LossValue {
        LossValue::new(self.outcome + self.propensity, self.l2 + self.ortho)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadNet {
    reps: Vec<Representation>,
    heads: Vec<Head>,
    ortho_gamma: f64,
}

impl MultiHeadNet {
    pub fn new(reps: Vec<Representation>, heads: Vec<Head>, ortho_gamma: f64) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Config("a network needs at least one head".into()));
        }
        let d = reps
            .first()
            .map(|r| r.net.input_dim())
            .or_else(|| heads.first().map(|h| h.net.input_dim()))
            .unwrap_or(0);
        for r in &reps {
            if r.net.input_dim() != d {
                return Err(Error::DimensionMismatch {
                    what: "representation input dim",
                    expected: d,
                    actual: r.net.input_dim(),
                });
            }
        }
        for h in &heads {
            let width = match &h.input {
                HeadInput::Raw => d,
                HeadInput::Reps(ids) => {
                    let mut total = 0;
                    for &id in ids {
                        total += reps
                            .get(id)
                            .ok_or_else(|| {
                                Error::Config(format!("head {} uses unknown representation {id}", h.name))
                            })?
                            .net
                            .output_dim();
                    }
                    total
                }
            };
            if h.net.input_dim() != width {
                return Err(Error::DimensionMismatch {
                    what: "head input width",
                    expected: width,
                    actual: h.net.input_dim(),
                });
            }
            if h.net.output_dim() != 1 {
                return Err(Error::DimensionMismatch {
                    what: "head output dim",
                    expected: 1,
                    actual: h.net.output_dim(),
                });
            }
        }
        if !(ortho_gamma >= 0.0 && ortho_gamma.is_finite()) {
            return Err(Error::Config("ortho_gamma must be nonnegative".into()));
        }
        Ok(MultiHeadNet {
            reps,
            heads,
            ortho_gamma,
        })
    }

    pub fn reps(&self) -> &[Representation] {
        &self.reps
    }

    pub fn heads(&self) -> &[Head] {
        &self.heads
    }

    pub fn ortho_gamma(&self) -> f64 {
        self.ortho_gamma
    }

    pub fn input_dim(&self) -> usize {
        self.reps
            .first()
            .map(|r| r.net.input_dim())
            .unwrap_or_else(|| self.heads[0].net.input_dim())
    }

    pub fn num_params(&self) -> usize {
        self.reps.iter().map(|r| r.net.num_params()).sum::<usize>()
            + self.heads.iter().map(|h| h.net.num_params()).sum::<usize>()
    }

    pub fn head_index(&self, name: &str) -> Option<usize> {
        self.heads.iter().position(|h| h.name == name)
    }

    fn first_weights(&self) -> Vec<ArrayView2<'_, f64>> {
        self.reps
            .iter()
            .map(|r| r.net.layers()[0].weights.view())
            .collect()
    }

    /// Current orthogonalization penalty, before scaling by gamma.
    pub fn ortho_raw(&self) -> f64 {
        ortho_penalty(&self.first_weights()).expect("shared input dim checked at construction")
    }

    fn head_input(&self, head: &Head, x: ArrayView2<f64>, rep_out: &[Array2<f64>]) -> Array2<f64> {
        match &head.input {
            HeadInput::Raw => x.to_owned(),
            HeadInput::Reps(ids) => {
                let views: Vec<_> = ids.iter().map(|&i| rep_out[i].view()).collect();
                concatenate(Axis(1), &views).expect("rows agree")
            }
        }
    }

    /// Predictions of every head on every row, shape `(n, heads)`.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "covariate columns",
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let rep_out = self
            .reps
            .iter()
            .map(|r| r.net.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let mut out = Array2::zeros((x.nrows(), self.heads.len()));
        for (k, head) in self.heads.iter().enumerate() {
            let input = self.head_input(head, x, &rep_out);
            let pred = head.net.forward(input.view())?;
            out.column_mut(k).assign(&pred.column(0));
        }
        Ok(out)
    }

    /// Objective terms and (optionally) gradients over `rows` of `task`.
    pub fn loss_terms(
        &self,
        task: &NuisanceTask,
        rows: &[usize],
        l2_lambda: f64,
        want_grads: bool,
    ) -> Result<(LossTerms, Option<Vec<LayerGrad>>)> {
        let xb = task.x.select(Axis(0), rows);
        let m = rows.len().max(1) as f64;
        let rep_caches: Vec<ForwardCache> = self
            .reps
            .iter()
            .map(|r| r.net.forward_cached(xb.view()))
            .collect::<Result<_>>()?;
        let rep_out: Vec<Array2<f64>> = rep_caches.iter().map(|c| c.output().clone()).collect();
        let mut d_rep: Vec<Array2<f64>> = rep_out
            .iter()
            .map(|o| Array2::zeros(o.raw_dim()))
            .collect();
        let mut head_grads: Vec<Vec<LayerGrad>> = Vec::with_capacity(self.heads.len());
        let mut terms = LossTerms::default();

        for head in &self.heads {
            let positions: Vec<usize> = match head.target {
                HeadTarget::Outcome { group: Some(g) } => (0..rows.len())
                    .filter(|&p| task.w[rows[p]] == f64::from(g))
                    .collect(),
                _ => (0..rows.len()).collect(),
            };
            if positions.is_empty() {
                if want_grads {
                    head_grads.push(head.net.layers().iter().map(LayerGrad::zeros_like).collect());
                }
                continue;
            }
            let full_input = self.head_input(head, xb.view(), &rep_out);
            let input = full_input.select(Axis(0), &positions);
            let (source, loss_kind) = match head.target {
                HeadTarget::Outcome { .. } => (&task.y, task.outcome_loss),
                HeadTarget::Propensity => (&task.w, LossKind::CrossEntropy),
            };
            let target = Array2::from_shape_fn((positions.len(), 1), |(p, _)| source[rows[positions[p]]]);
            let cache = head.net.forward_cached(input.view())?;
            let last = head.net.layers()[head.net.layers().len() - 1].activation;
            let (sum, d_pre) = loss_and_grad(
                loss_kind,
                last,
                cache.last_pre().view(),
                cache.output().view(),
                target.view(),
                1.0 / m,
            )
            .map_err(|e| match e {
                Error::NonFiniteLoss { row } => Error::NonFiniteLoss { row: positions[row] },
                other => other,
            })?;
            match head.target {
                HeadTarget::Outcome { .. } => terms.outcome += sum / m,
                HeadTarget::Propensity => terms.propensity += sum / m,
            }
            if !want_grads {
                continue;
            }
            let (grads, d_input) = head.net.backward(&cache, d_pre);
            head_grads.push(grads);
            if let HeadInput::Reps(ids) = &head.input {
                let mut offset = 0;
                for &id in ids {
                    let width = rep_out[id].ncols();
                    let block = d_input.slice(s![.., offset..offset + width]);
                    for (p, &pos) in positions.iter().enumerate() {
                        let mut row = d_rep[id].row_mut(pos);
                        row += &block.row(p);
                    }
                    offset += width;
                }
            }
        }

        terms.l2 = l2_lambda * self.heads.iter().map(|h| h.net.weight_sq_norm()).sum::<f64>();
        if self.ortho_gamma != 0.0 {
            terms.ortho = self.ortho_gamma * self.ortho_raw();
        }
        if !want_grads {
            return Ok((terms, None));
        }

        let ortho_grads = if self.ortho_gamma != 0.0 {
            Some(ortho_gradient(&self.first_weights())?)
        } else {
            None
        };
        let mut all = Vec::new();
        for (k, rep) in self.reps.iter().enumerate() {
            let last = rep.net.layers()[rep.net.layers().len() - 1].activation;
            let mut d_pre = std::mem::take(&mut d_rep[k]);
            ndarray::Zip::from(&mut d_pre)
                .and(&rep_out[k])
                .for_each(|d, &o| *d *= last.derivative_from_output(o));
            let (mut grads, _) = rep.net.backward(&rep_caches[k], d_pre);
            if let Some(og) = &ortho_grads {
                grads[0].weights.scaled_add(self.ortho_gamma, &og[k]);
            }
            all.extend(grads);
        }
        for (head, mut grads) in self.heads.iter().zip(head_grads) {
            if l2_lambda != 0.0 {
                for (g, layer) in grads.iter_mut().zip(head.net.layers()) {
                    g.weights.scaled_add(2.0 * l2_lambda, &layer.weights);
                }
            }
            all.extend(grads);
        }
        Ok((terms, Some(all)))
    }
}

impl Trainable for MultiHeadNet {
    type Data = NuisanceTask;

    fn num_examples(data: &NuisanceTask) -> usize {
        data.x.nrows()
    }

    fn evaluate(
        &self,
        data: &NuisanceTask,
        rows: &[usize],
        l2_lambda: f64,
        want_grads: bool,
    ) -> Result<(LossValue, Option<Vec<LayerGrad>>)> {
        let (terms, grads) = self.loss_terms(data, rows, l2_lambda, want_grads)?;
        Ok((terms.value(), grads))
    }

    fn layers(&self) -> Vec<&DenseLayer> {
        self.reps
            .iter()
            .flat_map(|r| r.net.layers())
            .chain(self.heads.iter().flat_map(|h| h.net.layers()))
            .collect()
    }

    fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        self.reps
            .iter_mut()
            .flat_map(|r| r.net.layers_mut())
            .chain(self.heads.iter_mut().flat_map(|h| h.net.layers_mut()))
            .collect()
    }
}

/// Representation block: `layers` ELU layers of `width` units.
pub fn representation(name: &str, input: usize, layers: usize, width: usize, seed: u64) -> Result<Representation> {
    Ok(Representation {
        name: name.to_owned(),
        net: DenseNet::new(input, &vec![width; layers], Activation::Elu, Activation::Elu, seed)?,
    })
}

/// Hypothesis head: `layers` ELU layers of `width` units and a scalar output.
pub fn head_net(input: usize, layers: usize, width: usize, output: Activation, seed: u64) -> Result<DenseNet> {
    let mut widths = vec![width; layers];
    widths.push(1);
    DenseNet::new(input, &widths, Activation::Elu, output, seed)
}
