use std::path::Path;
use std::process::{Command, Output};

use metacate::arch::ArchitectureKind;
use metacate::data::{export_csv, load_csv, CsvSchema, ObservationalDataset, Oracle};
use metacate::learners::{CateModel, Learner, MetaLearnerSpec, Provenance, PseudoOutcomeKind};
use metacate::nn::{Activation, DenseLayer, DenseNet, TrainLog};
use ndarray::{Array1, Array2};

fn metacate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metacate")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, setting: &str, seed: &str) -> Output {
    metacate(&[
        "simulate", "--setting", setting, "--n", "1000", "--seed", seed, "--out", dir.to_str().unwrap(),
    ])
}

#[test]
fn simulate_writes_oracle_columns_deterministically() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = simulate(a.path(), "i", "7");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("realized treated fraction"));
    assert!(simulate(b.path(), "i", "7").status.success());
    for f in ["train.csv", "test.csv"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let text = std::fs::read_to_string(a.path().join("train.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.starts_with("y,w,x0,x1,") && header.ends_with(",x24,mu0,mu1,pi,cate"));
    assert_eq!(text.lines().count(), 1001);
    assert_eq!(std::fs::read_to_string(a.path().join("test.csv")).unwrap().lines().count(), 501);
    let ds = load_csv(&a.path().join("train.csv"), &CsvSchema::default()).unwrap();
    assert!(ds.oracle().unwrap().tau.iter().all(|&t| t == 0.0));
}

#[test]
fn setting_three_files_have_constant_propensity() {
    let dir = tempfile::tempdir().unwrap();
    assert!(simulate(dir.path(), "iii", "1").status.success());
    let ds = load_csv(&dir.path().join("train.csv"), &CsvSchema::default()).unwrap();
    assert!(ds.oracle().unwrap().pi.as_ref().unwrap().iter().all(|&p| p == 0.5));
}

#[test]
fn bad_arguments_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(simulate(dir.path(), "iv", "1").status.code(), Some(2));
    assert_eq!(metacate(&["run", "/nonexistent/config.toml"]).status.code(), Some(2));
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "output = \"x\"\nunknown_key = 3\n").unwrap();
    assert_eq!(metacate(&["run", cfg.to_str().unwrap()]).status.code(), Some(2));
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("config.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn run_smoke_emits_one_detail_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            "n = [500]\noutput = \"{}\"\n[data]\nsource = \"simulate\"\nsettings = [\"i\"]\n[[cells]]\nlearner = \"plugin\"\narchitecture = \"tnet\"\n",
            out.display()
        ),
    );
    let o = metacate(&["run", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("hold-out"));
    let details = std::fs::read_to_string(out.join("details.csv")).unwrap();
    assert_eq!(details.lines().count(), 2);
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().filter(|l| l.starts_with("aggregate,")).count(), 1);
}

#[test]
fn failed_cells_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "output = \"{}\"\n[data]\nsource = \"ihdp\"\ndir = \"{}\"\nrealizations = [42]\n[[cells]]\nlearner = \"plugin\"\narchitecture = \"tnet\"\n",
            dir.path().join("out").display(),
            dir.path().display()
        ),
    );
    let o = metacate(&["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("failed"));
    assert!(dir.path().join("out/failures.json").exists());
}

#[test]
fn output_flag_overrides_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "n = [200]\noutput = \"ignored\"\n[data]\nsource = \"simulate\"\nsettings = [\"iii\"]\n[arch]\ntrain = { max_epochs = 3 }\n[[cells]]\nlearner = \"ra\"\narchitecture = \"tnet\"\n",
    );
    let out = dir.path().join("elsewhere");
    let o = metacate(&["run", &cfg, "--output", out.to_str().unwrap(), "--workers", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("report.json").exists());
}

/// A two-step model whose regressor is the linear map `x -> coef . x + bias`.
fn linear_model(coef: &[f64], bias: f64) -> CateModel {
    let mut layer = DenseLayer::zeros(coef.len(), 1, Activation::Identity);
    layer.weights.column_mut(0).assign(&Array1::from(coef.to_vec()));
    layer.bias[0] = bias;
    CateModel::TwoStep {
        regressor: DenseNet::from_layers(vec![layer]).unwrap(),
        log: TrainLog { epochs: vec![], best_epoch: 0, best_val_loss: 0.0 },
        provenance: Provenance {
            spec: MetaLearnerSpec::new(Learner::TwoStep(PseudoOutcomeKind::Ra), ArchitectureKind::TNet),
            nuisance_seed: 0,
            second_stage_seed: None,
            fits: vec![],
            scored_rows: vec![],
            scored_by: vec![],
        },
    }
}

fn rmse_line(o: &Output) -> f64 {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    stdout(o).lines().find_map(|l| l.strip_prefix("rmse: ")).unwrap().parse().unwrap()
}

#[test]
fn evaluate_reports_pehe() {
    let dir = tempfile::tempdir().unwrap();
    let coef = [0.5, -2.0, 0.25];
    let x = Array2::from_shape_fn((40, 3), |(i, j)| ((i * 7 + j * 3) % 17) as f64 / 4.0 - 2.0);
    let tau = x.dot(&Array1::from(coef.to_vec()));
    let data = ObservationalDataset::new(
        x,
        (0..40).map(|i| (i % 2) as u8).collect(),
        Array1::zeros(40),
        Some(Oracle::new(Array1::zeros(40), tau, None)),
    )
    .unwrap();
    let data_path = dir.path().join("data.csv");
    export_csv(&data, &data_path).unwrap();

    let exact = dir.path().join("exact.json");
    linear_model(&coef, 0.0).save(&exact).unwrap();
    let shifted = dir.path().join("shifted.json");
    linear_model(&coef, 1.0).save(&shifted).unwrap();
    let d = data_path.to_str().unwrap();

    let first = metacate(&["evaluate", "--model", exact.to_str().unwrap(), "--data", d]);
    assert_eq!(rmse_line(&first), 0.0);
    assert!(stdout(&first).contains("rows: 40"));
    assert_eq!(rmse_line(&metacate(&["evaluate", "--model", shifted.to_str().unwrap(), "--data", d])), 1.0);
    assert_eq!(stdout(&metacate(&["evaluate", "--model", exact.to_str().unwrap(), "--data", d])), stdout(&first));

    let bare = dir.path().join("bare.csv");
    std::fs::write(&bare, "y,w,x0,x1,x2\n1,0,0,0,0\n2,1,1,1,1\n").unwrap();
    let o = metacate(&["evaluate", "--model", exact.to_str().unwrap(), "--data", bare.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("true tau"));
}

#[test]
fn saved_plug_in_models_evaluate_to_their_head_difference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_config(
        dir.path(),
        &format!(
            "n = [300]\noutput = \"{}\"\nsave_models = true\n[dgp]\nnoise_sd = 0.0\n[data]\nsource = \"simulate\"\nsettings = [\"i\"]\n[arch]\ntrain = {{ max_epochs = 20 }}\n[[cells]]\nlearner = \"plugin\"\narchitecture = \"tnet\"\n",
            out.display()
        ),
    );
    assert!(metacate(&["run", &cfg]).status.success());
    let model_path = std::fs::read_dir(out.join("models")).unwrap().next().unwrap().unwrap().path();
    assert!(simulate(dir.path(), "i", "99").status.success());
    let test_path = dir.path().join("test.csv");

    let model = CateModel::load(&model_path).unwrap();
    let CateModel::PlugIn { model: nuisance, .. } = &model else { panic!("plug-in model expected") };
    let data = load_csv(&test_path, &CsvSchema::default()).unwrap();
    let diff = nuisance.predict_mu1(data.x()).unwrap() - nuisance.predict_mu0(data.x()).unwrap();
    let by_hand = (diff.mapv(|v| v * v).sum() / diff.len() as f64).sqrt();
    let reported = rmse_line(&metacate(&[
        "evaluate", "--model", model_path.to_str().unwrap(), "--data", test_path.to_str().unwrap(),
    ]));
    assert!((reported - by_hand).abs() <= 1e-12 * by_hand.max(1.0), "{reported} vs {by_hand}");
}

#[test]
fn verify_passes_and_prints_a_table() {
    let o = metacate(&["verify", "--quick"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    assert!(text.lines().next().unwrap().starts_with("status"));
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() > 10);
    assert!(!text.contains("FAIL"));
}
