use std::path::{Path, PathBuf};

use metacate::data::{
    aggregate, export_csv, load_csv, load_ihdp, load_results, rescale_ihdp, save_results, to_csv_string,
    write_csv, AggregateRecord, BenchmarkReport, CsvSchema, DetailRecord, ObservationalDataset, Oracle,
    ResultFormat,
};
use metacate::dgp::{generate, DgpSpec, Setting};
use metacate::Error;
use ndarray::{array, Array1, Array2};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn same_fields(a: &ObservationalDataset, b: &ObservationalDataset) {
    assert_eq!(a.x(), b.x());
    assert_eq!(a.w(), b.w());
    assert_eq!(a.y(), b.y());
    assert_eq!(a.oracle(), b.oracle());
    assert_eq!(a.columns(), b.columns());
}

#[test]
fn three_row_fixture_is_read_exactly() {
    let path = fixture("three_rows.csv");
    let ds = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(ds.n(), 3);
    assert_eq!(ds.columns(), ["x0", "x1"]);
    assert_eq!(ds.y(), array![1.5, -0.125, 2.0]);
    assert_eq!(ds.w(), [1, 0, 1]);
    assert_eq!(ds.x(), array![[0.25, -3.0], [1e-3, 7.0], [-1.75, 0.0]]);
    let o = ds.oracle().unwrap();
    assert_eq!(o.mu0, array![1.0, 0.0, 0.5]);
    assert_eq!(o.mu1, array![2.0, 0.5, 2.5]);
    assert_eq!(o.pi, Some(array![0.75, 0.5, 0.25]));
    assert_eq!(o.tau, array![1.0, 0.5, 2.0]);
    assert_eq!(ds.provenance(), path.display().to_string());

    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("copy.csv");
    std::fs::write(&copy, &buf).unwrap();
    same_fields(&load_csv(&copy, &CsvSchema::default()).unwrap(), &ds);
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

#[test]
fn bad_files_are_rejected_with_context() {
    let dir = tempfile::tempdir().unwrap();
    let schema = CsvSchema::default();

    let p = write(dir.path(), "w2.csv", "y,w,x0\n1,0,0\n2,1,0\n3,2,0\n");
    match load_csv(&p, &schema) {
        Err(Error::Parse { row: 3, column, .. }) => assert_eq!(column, "w"),
        other => panic!("{other:?}"),
    }

    let p = write(dir.path(), "nan.csv", "y,w,x0\n1,0,0\nNaN,1,0\n");
    match load_csv(&p, &schema) {
        Err(Error::Parse { row: 2, column, .. }) => assert_eq!(column, "y"),
        other => panic!("{other:?}"),
    }

    let p = write(dir.path(), "text.csv", "y,w,x0\n1,0,abc\n");
    assert!(matches!(load_csv(&p, &schema), Err(Error::Parse { row: 1, .. })));

    let p = write(dir.path(), "noy.csv", "out,w,x0\n1,0,0\n");
    match load_csv(&p, &schema) {
        Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "y"),
        other => panic!("{other:?}"),
    }

    let p = write(dir.path(), "nooracle.csv", "y,w,x0\n1,0,0\n");
    assert!(load_csv(&p, &schema).unwrap().oracle().is_none());
    let strict = CsvSchema { require_oracle: true, ..CsvSchema::default() };
    assert!(matches!(load_csv(&p, &strict), Err(Error::MissingColumn { .. })));

    let missing = dir.path().join("absent.csv");
    assert!(matches!(load_csv(&missing, &schema), Err(Error::Io { .. })));
}

#[test]
fn custom_schema_and_unknown_propensity() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "custom.csv",
        "treat,outcome,age,dose,mu0,mu1,pi\n1,3.5,40,1,1,3,\n0,1,35,0,1,2,\n",
    );
    let schema = CsvSchema {
        outcome: "outcome".into(),
        treatment: "treat".into(),
        covariates: vec!["dose".into(), "age".into()],
        ..CsvSchema::default()
    };
    let ds = load_csv(&p, &schema).unwrap();
    assert_eq!(ds.columns(), ["dose", "age"]);
    assert_eq!(ds.x(), array![[1.0, 40.0], [0.0, 35.0]]);
    assert_eq!(ds.oracle().unwrap().pi, None);
    assert_eq!(ds.oracle().unwrap().tau, array![2.0, 1.0]);
}

#[test]
fn export_then_load_is_bit_equal() {
    let s = generate(&DgpSpec::new(Setting::I, 300, 1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("train.csv");
    export_csv(&s.train, &p).unwrap();
    same_fields(&load_csv(&p, &CsvSchema::default()).unwrap(), &s.train);

    let odd = ObservationalDataset::new(
        array![[f64::MIN_POSITIVE, -0.1], [1e300, 1.0 / 3.0]],
        vec![0, 1],
        array![f64::EPSILON, -2.0f64.sqrt()],
        Some(Oracle::new(array![0.1, 0.2], array![0.3, 0.7], None)),
    )
    .unwrap();
    export_csv(&odd, &p).unwrap();
    same_fields(&load_csv(&p, &CsvSchema::default()).unwrap(), &odd);
}

/// Oracle dataset with the given effects; every value is dyadic so the
/// rescaling arithmetic is exact.
fn with_effects(tau: &[f64]) -> ObservationalDataset {
    let n = tau.len();
    let mu0 = Array1::from_iter((0..n).map(|i| i as f64 * 0.5 - 1.0));
    let mu1 = &mu0 + &Array1::from(tau.to_vec());
    let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let noise = Array1::from_iter((0..n).map(|i| (i as f64 - 2.0) * 0.25));
    let y = Array1::from_iter((0..n).map(|i| if w[i] == 1 { mu1[i] } else { mu0[i] } + noise[i]));
    let x = Array2::from_shape_fn((n, 2), |(i, j)| (i + j) as f64);
    ObservationalDataset::new(x, w, y, Some(Oracle::new(mu0, mu1, None))).unwrap()
}

fn residuals(d: &ObservationalDataset) -> Vec<f64> {
    let o = d.oracle().unwrap();
    (0..d.n()).map(|i| d.y()[i] - if d.w()[i] == 1 { o.mu1[i] } else { o.mu0[i] }).collect()
}

#[test]
fn rescaling_follows_the_cate_spread() {
    let small = with_effects(&[0.5, -0.5, 0.5, -0.5]);
    let (a, b, dec) = rescale_ihdp(&small, &small).unwrap();
    assert!(!dec.applied);
    assert_eq!(dec.sigma_cate, 0.5);
    assert_eq!((a, b), (small.clone(), small));

    let constant = with_effects(&[3.0; 6]);
    let (a, _, dec) = rescale_ihdp(&constant, &constant).unwrap();
    assert!(!dec.applied && dec.sigma_cate == 0.0);
    assert_eq!(a, constant);

    let wide = with_effects(&[4.0, -4.0, 4.0, -4.0, 4.0, -4.0]);
    let test = with_effects(&[8.0, 0.0, -8.0, 2.0]);
    let (a, b, dec) = rescale_ihdp(&wide, &test).unwrap();
    assert!(dec.applied);
    assert_eq!(dec.sigma_cate, 4.0);
    assert_eq!(metacate::data::population_sd(&a.oracle().unwrap().tau), 1.0);
    assert_eq!(a.oracle().unwrap().mu0, wide.oracle().unwrap().mu0.mapv(|v| v / 4.0));
    assert_eq!(b.oracle().unwrap().tau, array![2.0, 0.0, -2.0, 0.5]);
    assert_eq!(residuals(&a), residuals(&wide));
    assert_eq!(residuals(&b), residuals(&test));
    assert_eq!(a.x(), wide.x());
    assert_eq!(a.w(), wide.w());

    let (a2, b2, dec2) = rescale_ihdp(&a, &b).unwrap();
    assert!(!dec2.applied);
    assert_eq!((a2, b2), (a, b));

    let bare = ObservationalDataset::new(Array2::zeros((2, 1)), vec![0, 1], Array1::zeros(2), None).unwrap();
    assert!(matches!(rescale_ihdp(&bare, &wide), Err(Error::MissingOracle(_))));
    assert!(matches!(rescale_ihdp(&wide, &bare), Err(Error::MissingOracle(_))));
}

#[test]
fn ihdp_fixture_loads_and_rescales() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/ihdp");
    let (train, test) = load_ihdp(&dir, 1).unwrap();
    assert!(train.oracle().is_some() && test.oracle().is_some());
    assert_eq!(train.d(), test.d());
    let (a, _, dec) = rescale_ihdp(&train, &test).unwrap();
    assert!(dec.applied);
    assert_eq!(metacate::data::population_sd(&a.oracle().unwrap().tau), 1.0);
    assert_eq!(residuals(&a), residuals(&train));
    assert!(load_ihdp(&dir, 99).is_err());
}

fn detail(learner: &str, seed: u64, rmse: f64) -> DetailRecord {
    DetailRecord {
        learner: learner.into(),
        architecture: "tnet".into(),
        setting: "i".into(),
        n: 500,
        seed,
        rmse_in: rmse,
        rmse_out: rmse + 0.5,
        wall_seconds: Some(0.25 * seed as f64),
    }
}

#[test]
fn empty_report_is_header_only() {
    let text = to_csv_string(&BenchmarkReport::default());
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("record,learner,architecture,setting,n,seed,rmse_in,rmse_out,wall_seconds"));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("empty.csv");
    save_results(&BenchmarkReport::default(), &p, ResultFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&p).unwrap(), text);
    assert_eq!(load_results(&p, ResultFormat::Csv).unwrap(), BenchmarkReport::default());
}

#[test]
fn ten_runs_give_ten_details_and_one_aggregate() {
    let details: Vec<DetailRecord> = (0..10).map(|s| detail("dr", s, 1.0 + s as f64 / 8.0)).collect();
    let report = BenchmarkReport::from_details(details);
    let text = to_csv_string(&report);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.iter().filter(|r| r.starts_with("detail,")).count(), 10);
    assert_eq!(rows.iter().filter(|r| r.starts_with("aggregate,")).count(), 1);

    let agg = &report.aggregates[0];
    let values: Vec<f64> = (0..10).map(|s| 1.0 + s as f64 / 8.0).collect();
    let mean = values.iter().sum::<f64>() / 10.0;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
    assert_eq!(agg.replicates, 10);
    assert!((agg.rmse_in - mean).abs() < 1e-12);
    assert!((agg.rmse_in_se.unwrap() - sd / 10f64.sqrt()).abs() < 1e-12);
    assert!((agg.rmse_out - mean - 0.5).abs() < 1e-12);
}

#[test]
fn csv_and_json_round_trip_to_the_same_records() {
    let mut details: Vec<DetailRecord> = (0..4).map(|s| detail("ra", s, 0.1 * s as f64 + 1.0 / 3.0)).collect();
    details.extend((0..3).map(|s| detail("plugin", s, 2.0f64.sqrt() * s as f64)));
    details.push(DetailRecord { wall_seconds: None, ..detail("pw", 0, 7.0) });
    let report = BenchmarkReport::from_details(details);
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let json = dir.path().join("r.json");
    save_results(&report, &csv, ResultFormat::from_path(&csv)).unwrap();
    save_results(&report, &json, ResultFormat::from_path(&json)).unwrap();
    let a = load_results(&csv, ResultFormat::Csv).unwrap();
    let b = load_results(&json, ResultFormat::Json).unwrap();
    assert_eq!(a, report);
    assert_eq!(b, report);
    let pw: &AggregateRecord = report.find("pw", "tnet", "i", 500).unwrap();
    assert_eq!((pw.replicates, pw.rmse_in_se), (1, None));
    assert_eq!(aggregate(&report.details), report.aggregates);
}

#[test]
fn unwritable_path_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("missing/dir/r.csv");
    assert!(matches!(
        save_results(&BenchmarkReport::default(), &p, ResultFormat::Csv),
        Err(Error::Io { .. })
    ));
}
