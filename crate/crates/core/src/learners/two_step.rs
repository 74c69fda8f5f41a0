//! First-stage fitting strategies, second-stage regression and the fitted CATE model.

use std::path::Path;

use ndarray::{Array1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::nuisance::{Nuisance, NuisanceFitter};
use super::pseudo::pseudo_outcomes;
use super::{FittingStrategy, Learner, MetaLearnerSpec};
use crate::arch::{fit, ArchConfig, ArchitectureKind, NuisanceModel, NuisancePredictions};
use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::nn::{train, Activation, DenseNet, Supervised, TrainLog};
use crate::seed;

/// One nuisance fit: what it estimates and which rows it saw.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitRecord {
    pub label: String,
    pub seed: u64,
    pub train_rows: Vec<usize>,
}

/// Nuisance predictions for the rows that receive pseudo-outcomes.
pub struct FirstStage {
    pub strategy: FittingStrategy,
    pub seed: u64,
    pub fits: Vec<FitRecord>,
    /// Rows with pseudo-outcomes, in the order of `predictions`.
    pub scored_rows: Vec<usize>,
    /// Per scored row (same order), the fits whose predictions it used.
    pub scored_by: Vec<Vec<usize>>,
    pub predictions: NuisancePredictions,
}

impl FirstStage {
    /// Wraps an already fitted full-sample model.
    pub fn from_full_fit(model: &dyn Nuisance, data: &ObservationalDataset, need_pi: bool, label: &str, seed: u64) -> Result<Self> {
        let predictions = model.predict(data.x(), need_pi)?;
        Ok(FirstStage {
            strategy: FittingStrategy::FullSample,
            seed,
            fits: vec![FitRecord {
                label: label.to_owned(),
                seed,
                train_rows: (0..data.n()).collect(),
            }],
            scored_rows: (0..data.n()).collect(),
            scored_by: vec![vec![0]; data.n()],
            predictions,
        })
    }
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seed::rng(seed::derive_str(seed, "folds")));
    idx
}

fn check_groups(data: &ObservationalDataset, rows: &[usize], context: &str) -> Result<()> {
    for g in [0u8, 1] {
        if !rows.iter().any(|&i| data.w()[i] == g) {
            return Err(Error::EmptyGroup {
                group: g,
                context: format!(" ({context})"),
            });
        }
    }
    Ok(())
}

fn sorted(mut rows: Vec<usize>) -> Vec<usize> {
    rows.sort_unstable();
    rows
}

/// Runs the first stage of `strategy`.
pub fn first_stage(
    data: &ObservationalDataset,
    strategy: FittingStrategy,
    separate_propensity_sample: bool,
    fitter: &dyn NuisanceFitter,
    need_pi: bool,
    seed: u64,
) -> Result<FirstStage> {
    strategy.validate()?;
    let n = data.n();
    match strategy {
        FittingStrategy::FullSample => {
            if separate_propensity_sample {
                return Err(Error::Config("separate propensity sub-samples need split-half fitting".into()));
            }
            check_groups(data, &(0..n).collect::<Vec<_>>(), "full sample")?;
            let s = seed::derive(seed, 0);
            let model = fitter.fit(data, need_pi, s)?;
            FirstStage::from_full_fit(model.as_ref(), data, need_pi, "nuisance", s)
        }
        FittingStrategy::SplitHalf => {
            let perm = permutation(n, seed);
            let (d1, d2) = perm.split_at(n / 2);
            let (d1, d2) = (sorted(d1.to_vec()), sorted(d2.to_vec()));
            if d2.is_empty() {
                return Err(Error::Dataset(format!("cannot split {n} rows into halves")));
            }
            let x2 = data.x().select(Axis(0), &d2);
            let mut fits = Vec::new();
            let predictions = if separate_propensity_sample && need_pi {
                let (a, b) = d1.split_at(d1.len() / 2);
                let (a, b) = (a.to_vec(), b.to_vec());
                check_groups(data, &a, "outcome half of the nuisance sample")?;
                check_groups(data, &b, "propensity half of the nuisance sample")?;
                let (sa, sb) = (seed::derive(seed, 0), seed::derive(seed, 1));
                let outcome = fitter.fit(&data.subset(&a), false, sa)?.predict(x2.view(), false)?;
                let prop = fitter.fit(&data.subset(&b), true, sb)?.predict(x2.view(), true)?;
                fits.push(FitRecord { label: "outcome".into(), seed: sa, train_rows: a });
                fits.push(FitRecord { label: "propensity".into(), seed: sb, train_rows: b });
                NuisancePredictions {
                    mu0: outcome.mu0,
                    mu1: outcome.mu1,
                    pi: prop.pi,
                }
            } else {
                check_groups(data, &d1, "nuisance half")?;
                let s = seed::derive(seed, 0);
                let p = fitter.fit(&data.subset(&d1), need_pi, s)?.predict(x2.view(), need_pi)?;
                fits.push(FitRecord { label: "nuisance".into(), seed: s, train_rows: d1 });
                p
            };
            let used: Vec<usize> = (0..fits.len()).collect();
            Ok(FirstStage {
                strategy,
                seed,
                fits,
                scored_by: vec![used; d2.len()],
                scored_rows: d2,
                predictions,
            })
        }
        FittingStrategy::CrossFit(k) => {
            if k > n {
                return Err(Error::Config(format!("{k} folds for {n} rows")));
            }
            if separate_propensity_sample {
                return Err(Error::Config("separate propensity sub-samples need split-half fitting".into()));
            }
            let perm = permutation(n, seed);
            let folds: Vec<Vec<usize>> = (0..k)
                .map(|f| sorted(perm[f * n / k..(f + 1) * n / k].to_vec()))
                .collect();
            let mut fits = Vec::with_capacity(k);
            let mut scored_rows = Vec::with_capacity(n);
            let mut scored_by = Vec::with_capacity(n);
            let (mut mu0, mut mu1, mut pi) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for (f, fold) in folds.iter().enumerate() {
                let rest: Vec<usize> = folds
                    .iter()
                    .enumerate()
                    .filter(|&(g, _)| g != f)
                    .flat_map(|(_, r)| r.iter().copied())
                    .collect();
                let rest = sorted(rest);
                check_groups(data, &rest, &format!("training rows for fold {f}"))?;
                let s = seed::derive(seed, f as u64);
                let p = fitter
                    .fit(&data.subset(&rest), need_pi, s)?
                    .predict(data.x().select(Axis(0), fold).view(), need_pi)?;
                mu0.extend(p.mu0.iter());
                mu1.extend(p.mu1.iter());
                if let Some(p) = &p.pi {
                    pi.extend(p.iter());
                }
                scored_rows.extend(fold.iter().copied());
                scored_by.extend(std::iter::repeat_n(vec![f], fold.len()));
                fits.push(FitRecord {
                    label: format!("fold {f}"),
                    seed: s,
                    train_rows: rest,
                });
            }
            Ok(FirstStage {
                strategy,
                seed,
                fits,
                scored_rows,
                scored_by,
                predictions: NuisancePredictions {
                    mu0: Array1::from(mu0),
                    mu1: Array1::from(mu1),
                    pi: need_pi.then(|| Array1::from(pi)),
                },
            })
        }
    }
}

/// Row bookkeeping of a fitted CATE model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub spec: MetaLearnerSpec,
    pub nuisance_seed: u64,
    pub second_stage_seed: Option<u64>,
    pub fits: Vec<FitRecord>,
    pub scored_rows: Vec<usize>,
    pub scored_by: Vec<Vec<usize>>,
}

impl Provenance {
    /// Scored rows whose pseudo-outcome used a model trained on that row.
    pub fn leaking_rows(&self) -> Vec<usize> {
        let train_sets: Vec<std::collections::HashSet<usize>> = self
            .fits
            .iter()
            .map(|f| f.train_rows.iter().copied().collect())
            .collect();
        self.scored_rows
            .iter()
            .zip(&self.scored_by)
            .filter(|(row, by)| by.iter().any(|&f| train_sets[f].contains(row)))
            .map(|(&row, _)| row)
            .collect()
    }

    pub fn is_leakage_free(&self) -> bool {
        self.leaking_rows().is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CateModel {
    PlugIn {
        model: Box<NuisanceModel>,
        provenance: Provenance,
    },
    TwoStep {
        regressor: DenseNet,
        log: TrainLog,
        provenance: Provenance,
    },
}

impl CateModel {
    /// A plug-in learner around an existing nuisance fit.
    pub fn plug_in(model: NuisanceModel, data_rows: usize) -> Self {
        let spec = MetaLearnerSpec::new(Learner::PlugIn, model.kind());
        let seed = model.seed();
        CateModel::PlugIn {
            provenance: Provenance {
                spec,
                nuisance_seed: seed,
                second_stage_seed: None,
                fits: vec![FitRecord {
                    label: "nuisance".into(),
                    seed,
                    train_rows: (0..data_rows).collect(),
                }],
                scored_rows: vec![],
                scored_by: vec![],
            },
            model: Box::new(model),
        }
    }

    pub fn predict_tau(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match self {
            CateModel::PlugIn { model, .. } => {
                let p = model.predict_all(x)?;
                Ok(p.mu1 - p.mu0)
            }
            CateModel::TwoStep { regressor, .. } => Ok(regressor.forward(x)?.column(0).to_owned()),
        }
    }

    pub fn provenance(&self) -> &Provenance {
        match self {
            CateModel::PlugIn { provenance, .. } | CateModel::TwoStep { provenance, .. } => provenance,
        }
    }

    pub fn spec(&self) -> &MetaLearnerSpec {
        &self.provenance().spec
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

/// The second-stage regressor: an unshared trunk and head of the first-stage sizes.
pub fn second_stage_net(d: usize, config: &ArchConfig, seed: u64) -> Result<DenseNet> {
    let mut widths = vec![config.solo_units; config.rep_layers];
    widths.extend(std::iter::repeat_n(config.head_units, config.head_layers));
    widths.push(1);
    DenseNet::new(d, &widths, Activation::Elu, Activation::Identity, seed)
}

/// Fits the plug-in learner `mu1_hat - mu0_hat`.
pub fn run_plugin(
    data: &ObservationalDataset,
    architecture: ArchitectureKind,
    config: &ArchConfig,
) -> Result<CateModel> {
    let model = fit(architecture, data, config, false)?;
    Ok(CateModel::plug_in(model, data.n()))
}

/// Second stage on an existing first stage.
pub fn run_two_step_with(
    data: &ObservationalDataset,
    spec: &MetaLearnerSpec,
    first: &FirstStage,
    config: &ArchConfig,
    second_stage_seed: u64,
) -> Result<CateModel> {
    spec.validate()?;
    let Learner::TwoStep(kind) = spec.learner else {
        return Err(Error::Config("run_two_step needs an RA, PW or DR learner".into()));
    };
    if first.strategy != spec.strategy {
        return Err(Error::Config(format!(
            "first stage used {} but the spec asks for {}",
            first.strategy, spec.strategy
        )));
    }
    let rows = &first.scored_rows;
    let sub = data.subset(rows);
    let p = &first.predictions;
    let pseudo = pseudo_outcomes(
        kind,
        sub.y(),
        sub.w(),
        p.mu0.view(),
        p.mu1.view(),
        p.pi.as_ref().map(|a| a.view()),
        spec.clip,
    )?;
    let net = second_stage_net(data.d(), config, seed::derive_str(second_stage_seed, "init"))?;
    let task = Supervised::regression(sub.x(), pseudo.as_slice().expect("contiguous"))?;
    let (regressor, log) = train(net, &task, &config.train.with_seed(second_stage_seed))?;
    Ok(CateModel::TwoStep {
        regressor,
        log,
        provenance: Provenance {
            spec: spec.clone(),
            nuisance_seed: first.seed,
            second_stage_seed: Some(second_stage_seed),
            fits: first.fits.clone(),
            scored_rows: first.scored_rows.clone(),
            scored_by: first.scored_by.clone(),
        },
    })
}

/// Fits a two-step learner end to end. Nuisance and second-stage seeds are
/// derived from `seed`.
pub fn run_two_step(
    data: &ObservationalDataset,
    spec: &MetaLearnerSpec,
    fitter: &dyn NuisanceFitter,
    config: &ArchConfig,
    seed: u64,
) -> Result<CateModel> {
    spec.validate()?;
    let need_pi = spec.learner.needs_propensity();
    let first = first_stage(
        data,
        spec.strategy,
        spec.separate_propensity_sample,
        fitter,
        need_pi,
        seed::derive_str(seed, "nuisance"),
    )?;
    run_two_step_with(data, spec, &first, config, seed::derive_str(seed, "second_stage"))
}
