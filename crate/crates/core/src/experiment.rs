//! Declarative benchmark runs.
//!
//! A run crosses every cell (learner, architecture, fitting strategy) with
//! every data setting, sample size and replicate. Replicate `r` of a
//! setting and size shares its data across cells; all seeds are hashes of
//! the master seed and the indices involved, so results do not depend on
//! execution order or worker count.
//!
//! ```toml
//! master_seed = 1
//! replicates = 5
//! n = [500, 2000]
//! scale = "reduced"        # or "full"
//! workers = 4
//! output = "results/learners"
//! record_wall_time = true
//! save_models = false
//!
//! [data]
//! source = "simulate"      # or "ihdp" with `dir` and `realizations`
//! settings = ["i", "ii", "iii"]
//!
//! [dgp]                    # optional overrides of the simulation constants
//! xi = 3.0
//!
//! [arch]                   # optional overrides of the architecture sizes
//! ortho_gamma = 0.01
//! train = { max_epochs = 200 }
//!
//! [[cells]]
//! learner = "dr"           # plugin | ra | pw | dr
//! architecture = "tnet"    # tnet | snet1 | snet2 | snet3 | snet
//! strategy = "full"        # full | split | crossfit5
//! ```

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{ArchConfig, ArchitectureKind};
use crate::data::{
    load_ihdp, rescale_ihdp, save_results, table, BenchmarkReport, DetailRecord, ObservationalDataset,
    ResultFormat,
};
use crate::dgp::{generate, DgpSpec, Setting};
use crate::error::{Error, Result};
use crate::learners::{
    first_stage, run_two_step_with, ArchitectureFitter, CateModel, FirstStage, FittingStrategy, Learner,
    MetaLearnerSpec,
};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Reduced,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataSource {
    Simulate {
        settings: Vec<Setting>,
    },
    Ihdp {
        dir: PathBuf,
        realizations: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub learner: Learner,
    pub architecture: ArchitectureKind,
    #[serde(default)]
    pub strategy: FittingStrategy,
    #[serde(default)]
    pub clip: Option<f64>,
    #[serde(default)]
    pub separate_propensity_sample: bool,
}

impl CellSpec {
    pub fn spec(&self) -> Result<MetaLearnerSpec> {
        let mut s = MetaLearnerSpec::new(self.learner, self.architecture).with_strategy(self.strategy);
        if let Some(c) = self.clip {
            s.clip = crate::learners::ClipBound::new(c)?;
        }
        s.separate_propensity_sample = self.separate_propensity_sample;
        s.validate()?;
        Ok(s)
    }

    /// Learner column of the result files; non-default strategies are appended after `@`.
    pub fn learner_label(&self) -> String {
        match self.strategy {
            FittingStrategy::FullSample => self.learner.to_string(),
            s => format!("{}@{s}", self.learner),
        }
    }
}

fn default_replicates() -> usize {
    1
}

fn default_workers() -> usize {
    1
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Training sizes for simulated data; ignored for benchmark files.
    #[serde(default)]
    pub n: Vec<usize>,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub output: PathBuf,
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
    #[serde(default)]
    pub save_models: bool,
    pub data: DataSource,
    #[serde(default)]
    pub dgp: Option<toml::Table>,
    #[serde(default)]
    pub arch: Option<toml::Table>,
    pub cells: Vec<CellSpec>,
}

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

fn overlay<T: Clone + Serialize + for<'de> Deserialize<'de>>(base: &T, over: Option<&toml::Table>, what: &str) -> Result<T> {
    let Some(over) = over else {
        return Ok(base.clone());
    };
    let mut table = toml::Table::try_from(base).map_err(|e| Error::Config(format!("{what}: {e}")))?;
    merge(&mut table, over);
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(format!("{what}: {e}")))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut c = Self::from_toml(&text)?;
        if let Some(dir) = std::env::var_os(OUTPUT_ENV) {
            c.output = PathBuf::from(dir);
        }
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.cells.is_empty() {
            return Err(Error::Config("no cells to run".into()));
        }
        match &self.data {
            DataSource::Simulate { settings } => {
                if settings.is_empty() || self.n.is_empty() {
                    return Err(Error::Config("simulated runs need settings and n values".into()));
                }
                for &setting in settings {
                    for &n in &self.n {
                        DgpSpec { setting, n_train: n, ..self.dgp_base()? }.validate()?;
                    }
                }
            }
            DataSource::Ihdp { realizations, .. } => {
                if realizations.is_empty() {
                    return Err(Error::Config("no benchmark realizations listed".into()));
                }
            }
        }
        for c in &self.cells {
            c.spec()?;
        }
        self.arch_config()?.validate()
    }

    pub fn arch_config(&self) -> Result<ArchConfig> {
        let base = match self.scale {
            Scale::Reduced => ArchConfig::reduced(),
            Scale::Full => ArchConfig::full(),
        };
        overlay(&base, self.arch.as_ref(), "[arch]")
    }

    pub fn dgp_base(&self) -> Result<DgpSpec> {
        overlay(&DgpSpec::default(), self.dgp.as_ref(), "[dgp]")
    }
}

/// Environment variable overriding the output directory.
pub const OUTPUT_ENV: &str = "METACATE_OUTPUT";

/// A cell that failed on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub learner: String,
    pub architecture: String,
    pub setting: String,
    pub n: usize,
    pub replicate: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOutcome {
    pub report: BenchmarkReport,
    pub failures: Vec<CellFailure>,
    pub warnings: Vec<String>,
}

/// Root-mean-squared difference.
pub fn rmse(estimate: ArrayView1<f64>, truth: ArrayView1<f64>) -> f64 {
    let n = truth.len() as f64;
    (estimate
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
}

/// RMSE of a CATE model against the oracle of `data`.
pub fn evaluate(model: &CateModel, data: &ObservationalDataset) -> Result<f64> {
    let oracle = data
        .oracle()
        .ok_or(Error::MissingOracle("the RMSE of the CATE (PEHE) needs the true tau"))?;
    Ok(rmse(model.predict_tau(data.x())?.view(), oracle.tau.view()))
}

/// One (data setting, n, replicate): the samples every cell sees.
struct Replicate {
    setting: String,
    replicate: usize,
    data_seed: u64,
    train: ObservationalDataset,
    test: ObservationalDataset,
}

fn load_replicate(config: &ExperimentConfig, setting_index: usize, n_index: usize, r: usize) -> Result<Replicate> {
    match &config.data {
        DataSource::Simulate { settings } => {
            let setting = settings[setting_index];
            let n = config.n[n_index];
            let data_seed = seed::derive_str(
                seed::derive(seed::derive(seed::derive_str(config.master_seed, "data"), n as u64), r as u64),
                &setting.to_string(),
            );
            let spec = DgpSpec {
                setting,
                n_train: n,
                seed: data_seed,
                ..config.dgp_base()?
            };
            let g = generate(&spec)?;
            Ok(Replicate {
                setting: setting.to_string(),
                replicate: r,
                data_seed,
                train: g.train,
                test: g.test,
            })
        }
        DataSource::Ihdp { dir, realizations } => {
            let index = realizations[r % realizations.len()];
            let (train, test) = load_ihdp(dir, index)?;
            let (train, test, _) = rescale_ihdp(&train, &test)?;
            Ok(Replicate {
                setting: "ihdp".into(),
                replicate: r,
                data_seed: index as u64,
                train,
                test,
            })
        }
    }
}

struct Job {
    setting_index: usize,
    n_index: usize,
    replicate: usize,
}

type CellResult = (usize, std::result::Result<(DetailRecord, Option<CateModel>), CellFailure>);

fn nuisance_seed(config: &ExperimentConfig, rep: &Replicate, arch: ArchitectureKind, strategy: FittingStrategy) -> u64 {
    seed::derive_str(
        seed::derive_str(seed::derive_str(rep.data_seed ^ config.master_seed, "nuisance"), &arch.to_string()),
        &strategy.to_string(),
    )
}

fn run_job(config: &ExperimentConfig, arch_config: &ArchConfig, job: &Job) -> Vec<CellResult> {
    let n_label = match &config.data {
        DataSource::Simulate { .. } => config.n[job.n_index],
        DataSource::Ihdp { .. } => 0,
    };
    let rep = match load_replicate(config, job.setting_index, job.n_index, job.replicate) {
        Ok(r) => r,
        Err(e) => {
            let setting = match &config.data {
                DataSource::Simulate { settings } => settings[job.setting_index].to_string(),
                DataSource::Ihdp { .. } => "ihdp".into(),
            };
            return config
                .cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    (
                        i,
                        Err(CellFailure {
                            learner: c.learner_label(),
                            architecture: c.architecture.to_string(),
                            setting: setting.clone(),
                            n: n_label,
                            replicate: job.replicate,
                            error: e.to_string(),
                        }),
                    )
                })
                .collect();
        }
    };
    let n = rep.train.n();

    // Cells sharing (architecture, strategy) share one first stage.
    let mut groups: Vec<(ArchitectureKind, FittingStrategy, bool)> = Vec::new();
    for c in &config.cells {
        let strategy = if c.learner == Learner::PlugIn { FittingStrategy::FullSample } else { c.strategy };
        if c.separate_propensity_sample {
            continue;
        }
        match groups.iter_mut().find(|g| g.0 == c.architecture && g.1 == strategy) {
            Some(g) => g.2 |= c.learner.needs_propensity(),
            None => groups.push((c.architecture, strategy, c.learner.needs_propensity())),
        }
    }

    struct Stage {
        arch: ArchitectureKind,
        strategy: FittingStrategy,
        result: std::result::Result<(FirstStage, Option<crate::arch::NuisanceModel>), String>,
        seconds: f64,
    }
    let mut stages: Vec<Stage> = Vec::new();
    for &(arch, strategy, need_pi) in &groups {
        let start = Instant::now();
        let fitter = ArchitectureFitter::new(arch, arch_config.clone());
        let s = nuisance_seed(config, &rep, arch, strategy);
        let result = if strategy == FittingStrategy::FullSample {
            let fit_seed = seed::derive(s, 0);
            fitter.fit_model(&rep.train, need_pi, fit_seed).and_then(|m| {
                FirstStage::from_full_fit(&m, &rep.train, need_pi, "nuisance", fit_seed).map(|fs| {
                    let mut fs = fs;
                    fs.seed = s;
                    (fs, Some(m))
                })
            })
        } else {
            first_stage(&rep.train, strategy, false, &fitter, need_pi, s).map(|fs| (fs, None))
        };
        stages.push(Stage {
            arch,
            strategy,
            result: result.map_err(|e| e.to_string()),
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let mut out = Vec::with_capacity(config.cells.len());
    for (i, cell) in config.cells.iter().enumerate() {
        let start = Instant::now();
        let fail = |error: String| CellFailure {
            learner: cell.learner_label(),
            architecture: cell.architecture.to_string(),
            setting: rep.setting.clone(),
            n,
            replicate: rep.replicate,
            error,
        };
        let second_seed = seed::derive_str(
            nuisance_seed(config, &rep, cell.architecture, cell.strategy),
            &format!("second_stage/{}", cell.learner),
        );
        let result: std::result::Result<(CateModel, f64), String> = (|| {
            let spec = cell.spec().map_err(|e| e.to_string())?;
            if cell.separate_propensity_sample {
                let fitter = ArchitectureFitter::new(cell.architecture, arch_config.clone());
                let s = seed::derive_str(nuisance_seed(config, &rep, cell.architecture, cell.strategy), "separate");
                let fs = first_stage(&rep.train, cell.strategy, true, &fitter, true, s).map_err(|e| e.to_string())?;
                let m = run_two_step_with(&rep.train, &spec, &fs, arch_config, second_seed).map_err(|e| e.to_string())?;
                return Ok((m, 0.0));
            }
            let strategy = if cell.learner == Learner::PlugIn { FittingStrategy::FullSample } else { cell.strategy };
            let stage = stages
                .iter()
                .find(|s| s.arch == cell.architecture && s.strategy == strategy)
                .expect("every cell has a stage");
            let (fs, model) = stage.result.as_ref().map_err(Clone::clone)?;
            let m = match cell.learner {
                Learner::PlugIn => {
                    let model = model.clone().expect("plug-in stages are full-sample fits");
                    CateModel::plug_in(model, n)
                }
                Learner::TwoStep(_) => {
                    run_two_step_with(&rep.train, &spec, fs, arch_config, second_seed).map_err(|e| e.to_string())?
                }
            };
            Ok((m, stage.seconds))
        })();
        let record = result.and_then(|(model, nuisance_seconds)| {
            let rmse_in = evaluate(&model, &rep.train).map_err(|e| e.to_string())?;
            let rmse_out = evaluate(&model, &rep.test).map_err(|e| e.to_string())?;
            let wall = start.elapsed().as_secs_f64() + nuisance_seconds;
            Ok((
                DetailRecord {
                    learner: cell.learner_label(),
                    architecture: cell.architecture.to_string(),
                    setting: rep.setting.clone(),
                    n,
                    seed: rep.data_seed,
                    rmse_in,
                    rmse_out,
                    wall_seconds: config.record_wall_time.then_some(wall),
                },
                config.save_models.then_some(model),
            ))
        });
        out.push((i, record.map_err(fail)));
    }
    out
}

/// Executes every cell, setting, size and replicate; per-cell failures are
/// collected rather than aborting the sweep.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let arch_config = config.arch_config()?;
    let (n_settings, n_sizes, n_reps) = match &config.data {
        DataSource::Simulate { settings } => (settings.len(), config.n.len(), config.replicates),
        DataSource::Ihdp { realizations, .. } => (1, 1, realizations.len()),
    };
    let mut jobs = Vec::new();
    for s in 0..n_settings {
        for k in 0..n_sizes {
            for r in 0..n_reps {
                jobs.push(Job {
                    setting_index: s,
                    n_index: k,
                    replicate: r,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    let results: Vec<Vec<CellResult>> = pool.install(|| jobs.par_iter().map(|j| run_job(config, &arch_config, j)).collect());

    // Order details by cell, then setting, size and replicate.
    let mut ordered: Vec<(usize, usize, CellResult)> = Vec::new();
    for (j, res) in results.into_iter().enumerate() {
        for r in res {
            ordered.push((r.0, j, r));
        }
    }
    ordered.sort_by_key(|(cell, job, _)| (*cell, *job));

    let mut outcome = RunOutcome::default();
    let mut details = Vec::new();
    for (_, job, (_, r)) in ordered {
        match r {
            Ok((rec, model)) => {
                if let Some(m) = model {
                    let dir = config.output.join("models");
                    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                    let name = format!(
                        "{}_{}_{}_n{}_r{}.json",
                        rec.learner.replace('@', "-"),
                        rec.architecture,
                        rec.setting.replace(':', "-"),
                        rec.n,
                        jobs[job].replicate
                    );
                    m.save(&dir.join(name))?;
                }
                details.push(rec);
            }
            Err(f) => outcome.failures.push(f),
        }
    }
    for c in &config.cells {
        for w in c.spec()?.warnings() {
            if !outcome.warnings.contains(&w) {
                outcome.warnings.push(w);
            }
        }
    }
    outcome.report = BenchmarkReport::from_details(details);
    Ok(outcome)
}

/// Writes `details.csv`, `report.csv`, `report.json`, `table.txt` and, when
/// there are failures, `failures.json` under the configured output directory.
pub fn write_outputs(config: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    let dir = &config.output;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let details_only = BenchmarkReport {
        details: outcome.report.details.clone(),
        aggregates: vec![],
    };
    save_results(&details_only, &dir.join("details.csv"), ResultFormat::Csv)?;
    save_results(&outcome.report, &dir.join("report.csv"), ResultFormat::Csv)?;
    save_results(&outcome.report, &dir.join("report.json"), ResultFormat::Json)?;
    let t = dir.join("table.txt");
    std::fs::write(&t, table(&outcome.report)).map_err(|e| Error::io(&t, e))?;
    let f = dir.join("failures.json");
    if outcome.failures.is_empty() {
        if f.exists() {
            std::fs::remove_file(&f).map_err(|e| Error::io(&f, e))?;
        }
    } else {
        std::fs::write(&f, serde_json::to_string_pretty(&outcome.failures)?).map_err(|e| Error::io(&f, e))?;
    }
    Ok(())
}
