//! Building and training the nuisance architectures.

use std::path::Path;

use ndarray::{Array1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::network::{head_net, representation, Head, HeadInput, HeadTarget, MultiHeadNet, NuisanceTask};
use super::{ArchConfig, ArchitectureKind};
use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::nn::{train, Activation, LossKind, TrainLog};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct HeadRef {
    net: usize,
    head: usize,
}

/// One separately trained network of a nuisance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedNet {
    pub role: String,
    pub net: MultiHeadNet,
    pub log: TrainLog,
    pub train_seed: u64,
}

/// Trained first-stage model exposing mu0, mu1 and (optionally) pi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceModel {
    kind: ArchitectureKind,
    config: ArchConfig,
    seed: u64,
    nets: Vec<FittedNet>,
    mu0: HeadRef,
    mu1: HeadRef,
    pi: Option<HeadRef>,
}

/// Nuisance predictions on a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NuisancePredictions {
    pub mu0: Array1<f64>,
    pub mu1: Array1<f64>,
    pub pi: Option<Array1<f64>>,
}

const PI_FLOOR: f64 = f64::MIN_POSITIVE;
const PI_CEIL: f64 = 1.0 - f64::EPSILON / 2.0;

impl NuisanceModel {
    pub fn kind(&self) -> ArchitectureKind {
        self.kind
    }

    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nets(&self) -> &[FittedNet] {
        &self.nets
    }

    pub fn has_propensity(&self) -> bool {
        self.pi.is_some()
    }

    fn head(&self, r: HeadRef, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.nets[r.net].net.predict(x)?.column(r.head).to_owned())
    }

    pub fn predict_mu0(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.head(self.mu0, x)
    }

    pub fn predict_mu1(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.head(self.mu1, x)
    }

    /// Propensity predictions, kept strictly inside (0, 1).
    pub fn predict_pi(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        let r = self.pi.ok_or(Error::Contract(format!(
            "{} model was fit without a propensity network",
            self.kind
        )))?;
        Ok(self.head(r, x)?.mapv(|p| p.clamp(PI_FLOOR, PI_CEIL)))
    }

    /// All available nuisances, evaluating each network once.
    pub fn predict_all(&self, x: ArrayView2<f64>) -> Result<NuisancePredictions> {
        let outs = self
            .nets
            .iter()
            .map(|f| f.net.predict(x))
            .collect::<Result<Vec<_>>>()?;
        let col = |r: HeadRef| outs[r.net].column(r.head).to_owned();
        Ok(NuisancePredictions {
            mu0: col(self.mu0),
            mu1: col(self.mu1),
            pi: self.pi.map(|r| col(r).mapv(|p| p.clamp(PI_FLOOR, PI_CEIL))),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn outcome_activation(config: &ArchConfig) -> (Activation, LossKind) {
    if config.binary_outcome {
        (Activation::Sigmoid, LossKind::CrossEntropy)
    } else {
        (Activation::Identity, LossKind::Mse)
    }
}

/// A network that is entirely its own: a trunk of `rep_layers` x `solo_units`
/// followed by the usual head layers.
fn solo(d: usize, config: &ArchConfig, output: Activation, target: HeadTarget, name: &str, init: u64) -> Result<MultiHeadNet> {
    let mut widths = vec![config.solo_units; config.rep_layers];
    widths.extend(std::iter::repeat_n(config.head_units, config.head_layers));
    widths.push(1);
    let net = crate::nn::DenseNet::new(d, &widths, Activation::Elu, output, init)?;
    MultiHeadNet::new(
        vec![],
        vec![Head {
            name: name.to_owned(),
            net,
            input: HeadInput::Raw,
            target,
        }],
        0.0,
    )
}

/// Shared network: named representation widths (zero widths are dropped) and
/// heads listing the representations they read.
fn shared(
    d: usize,
    config: &ArchConfig,
    reps: &[(&str, usize)],
    heads: &[(&str, &[&str], HeadTarget)],
    gamma: f64,
    init: u64,
) -> Result<MultiHeadNet> {
    let (out_act, _) = outcome_activation(config);
    let kept: Vec<(&str, usize)> = reps.iter().copied().filter(|&(_, w)| w > 0).collect();
    let mut built = Vec::with_capacity(kept.len());
    for (k, &(name, width)) in kept.iter().enumerate() {
        built.push(representation(
            name,
            d,
            config.rep_layers,
            width,
            seed::derive(init, k as u64),
        )?);
    }
    let mut hs = Vec::with_capacity(heads.len());
    for (k, &(name, inputs, target)) in heads.iter().enumerate() {
        let ids: Vec<usize> = inputs
            .iter()
            .filter_map(|r| kept.iter().position(|(n, _)| n == r))
            .collect();
        if ids.is_empty() {
            return Err(Error::Config(format!("head {name} has no nonzero-width representation")));
        }
        let width: usize = ids.iter().map(|&i| kept[i].1).sum();
        let act = match target {
            HeadTarget::Propensity => Activation::Sigmoid,
            HeadTarget::Outcome { .. } => out_act,
        };
        hs.push(Head {
            name: name.to_owned(),
            net: head_net(width, config.head_layers, config.head_units, act, seed::derive(init, 1000 + k as u64))?,
            input: HeadInput::Reps(ids),
            target,
        });
    }
    MultiHeadNet::new(built, hs, gamma)
}

const G0: HeadTarget = HeadTarget::Outcome { group: Some(0) };
const G1: HeadTarget = HeadTarget::Outcome { group: Some(1) };
const ANY: HeadTarget = HeadTarget::Outcome { group: None };
const PI: HeadTarget = HeadTarget::Propensity;

/// One untrained network together with the rows it is fit on.
pub struct Plan {
    pub role: &'static str,
    pub net: MultiHeadNet,
    /// `None` means every row.
    pub rows: Option<Vec<usize>>,
}

/// Untrained networks for `kind`, initialized from `config.train.seed`.
pub fn build(
    kind: ArchitectureKind,
    data: &ObservationalDataset,
    config: &ArchConfig,
    with_propensity: bool,
) -> Result<Vec<Plan>> {
    let d = data.d();
    let s = config.train.seed;
    let init = |role: &str| seed::derive_str(s, &format!("{role}/init"));
    let (out_act, _) = outcome_activation(config);
    let mut plans = Vec::new();
    let pi_solo = |plans: &mut Vec<Plan>| -> Result<()> {
        plans.push(Plan {
            role: "pi",
            net: solo(d, config, Activation::Sigmoid, PI, "pi", init("pi"))?,
            rows: None,
        });
        Ok(())
    };
    match kind {
        ArchitectureKind::TNet => {
            plans.push(Plan {
                role: "mu0",
                net: solo(d, config, out_act, ANY, "mu0", init("mu0"))?,
                rows: Some(data.group_rows(0)),
            });
            plans.push(Plan {
                role: "mu1",
                net: solo(d, config, out_act, ANY, "mu1", init("mu1"))?,
                rows: Some(data.group_rows(1)),
            });
            if with_propensity {
                pi_solo(&mut plans)?;
            }
        }
        ArchitectureKind::SNet1 => {
            let net = shared(
                d,
                config,
                &[("phi", config.snet_units)],
                &[("mu0", &["phi"], G0), ("mu1", &["phi"], G1)],
                0.0,
                init("joint"),
            )?;
            plans.push(Plan { role: "joint", net, rows: None });
            if with_propensity {
                pi_solo(&mut plans)?;
            }
        }
        ArchitectureKind::SNet2 => {
            let net = shared(
                d,
                config,
                &[("phi", config.snet_units)],
                &[("mu0", &["phi"], G0), ("mu1", &["phi"], G1), ("pi", &["phi"], PI)],
                0.0,
                init("joint"),
            )?;
            plans.push(Plan { role: "joint", net, rows: None });
        }
        ArchitectureKind::SNet3 => {
            let w = config.snet3;
            let net = shared(
                d,
                config,
                &[("phi_o", w.outcome), ("phi_c", w.confounder), ("phi_w", w.treatment)],
                &[
                    ("mu0", &["phi_o", "phi_c"], G0),
                    ("mu1", &["phi_o", "phi_c"], G1),
                    ("pi", &["phi_c", "phi_w"], PI),
                ],
                config.ortho_gamma,
                init("joint"),
            )?;
            plans.push(Plan { role: "joint", net, rows: None });
        }
        ArchitectureKind::SNetFull => {
            let w = config.snet;
            let net = shared(
                d,
                config,
                &[
                    ("phi_o", w.outcome),
                    ("phi_c", w.confounder),
                    ("phi_w", w.treatment),
                    ("phi_mu0", w.mu0),
                    ("phi_mu1", w.mu1),
                ],
                &[
                    ("mu0", &["phi_o", "phi_c", "phi_mu0"], G0),
                    ("mu1", &["phi_o", "phi_c", "phi_mu1"], G1),
                    ("pi", &["phi_c", "phi_w"], PI),
                ],
                config.ortho_gamma,
                init("joint"),
            )?;
            plans.push(Plan { role: "joint", net, rows: None });
        }
    }
    Ok(plans)
}

/// Fits `kind` on `data`. `with_propensity` requests a separate propensity
/// network for TNet and SNet1; the other variants always carry one.
pub fn fit(
    kind: ArchitectureKind,
    data: &ObservationalDataset,
    config: &ArchConfig,
    with_propensity: bool,
) -> Result<NuisanceModel> {
    config.validate()?;
    data.require_both_groups(&format!("fitting {kind}"))?;
    let plans = build(kind, data, config, with_propensity)?;
    let (_, outcome_loss) = outcome_activation(config);
    let task = NuisanceTask {
        x: data.x().to_owned(),
        y: data.y().to_owned(),
        w: data.w_f64(),
        outcome_loss,
    };
    let mut nets = Vec::with_capacity(plans.len());
    for plan in plans {
        let train_seed = seed::derive_str(config.train.seed, &format!("{}/train", plan.role));
        let tc = config.train.with_seed(train_seed);
        let (net, log) = match &plan.rows {
            None => train(plan.net, &task, &tc)?,
            Some(rows) => {
                let sub = NuisanceTask {
                    x: task.x.select(Axis(0), rows),
                    y: task.y.select(Axis(0), rows),
                    w: task.w.select(Axis(0), rows),
                    outcome_loss,
                };
                train(plan.net, &sub, &tc)?
            }
        };
        nets.push(FittedNet {
            role: plan.role.to_owned(),
            net,
            log,
            train_seed,
        });
    }
    let find = |name: &str| -> Option<HeadRef> {
        nets.iter().enumerate().find_map(|(i, f)| {
            f.net.head_index(name).map(|h| HeadRef { net: i, head: h })
        })
    };
    Ok(NuisanceModel {
        kind,
        config: config.clone(),
        seed: config.train.seed,
        mu0: find("mu0").expect("every variant has a mu0 head"),
        mu1: find("mu1").expect("every variant has a mu1 head"),
        pi: find("pi"),
        nets,
    })
}

pub fn fit_tnet(data: &ObservationalDataset, config: &ArchConfig, with_propensity: bool) -> Result<NuisanceModel> {
    fit(ArchitectureKind::TNet, data, config, with_propensity)
}

pub fn fit_snet1(data: &ObservationalDataset, config: &ArchConfig, with_propensity: bool) -> Result<NuisanceModel> {
    fit(ArchitectureKind::SNet1, data, config, with_propensity)
}

pub fn fit_snet2(data: &ObservationalDataset, config: &ArchConfig) -> Result<NuisanceModel> {
    fit(ArchitectureKind::SNet2, data, config, true)
}

pub fn fit_snet3(data: &ObservationalDataset, config: &ArchConfig) -> Result<NuisanceModel> {
    fit(ArchitectureKind::SNet3, data, config, true)
}

pub fn fit_snet_full(data: &ObservationalDataset, config: &ArchConfig) -> Result<NuisanceModel> {
    fit(ArchitectureKind::SNetFull, data, config, true)
}
