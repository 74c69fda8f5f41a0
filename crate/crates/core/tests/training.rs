use metacate::nn::{train, Activation, DenseNet, LossKind, Supervised, TrainConfig, Trainable};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

fn linear_data(n: usize, seed: u64) -> (Array2<f64>, Vec<f64>) {
    let mut rng = metacate::seed::rng(seed);
    let x = Array2::from_shape_simple_fn((n, 2), || rng.sample(StandardNormal));
    let y = x
        .rows()
        .into_iter()
        .map(|r| 2.0 * r[0] - r[1] + 0.01 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x, y)
}

/// Ordinary least squares with intercept via the 3x3 normal equations.
fn ols(x: &Array2<f64>, y: &[f64]) -> [f64; 3] {
    let n = x.nrows();
    let design = ndarray::concatenate(Axis(1), &[Array2::ones((n, 1)).view(), x.view()]).unwrap();
    let xtx = design.t().dot(&design);
    let xty = design.t().dot(&Array1::from(y.to_vec()));
    let mut a = [[0.0; 4]; 3];
    for i in 0..3 {
        for (j, v) in a[i].iter_mut().take(3).enumerate() {
            *v = xtx[[i, j]];
        }
        a[i][3] = xty[i];
    }
    for c in 0..3 {
        let p = a[c][c];
        for v in &mut a[c][c..] {
            *v /= p;
        }
        for r in 0..3 {
            if r != c {
                let f = a[r][c];
                let pivot = a[c];
                for (v, q) in a[r][c..].iter_mut().zip(&pivot[c..]) {
                    *v -= f * q;
                }
            }
        }
    }
    [a[0][3], a[1][3], a[2][3]]
}

fn mse(pred: &Array2<f64>, y: &[f64]) -> f64 {
    pred.column(0).iter().zip(y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / y.len() as f64
}

#[test]
fn fits_constant_zero_targets() {
    let mut rng = metacate::seed::rng(1);
    let x = Array2::from_shape_simple_fn((200, 3), || rng.sample(StandardNormal));
    let data = Supervised::regression(x.view(), &[0.0; 200]).unwrap();
    let net = DenseNet::new(3, &[8, 1], Activation::Elu, Activation::Identity, 2).unwrap();
    let config = TrainConfig {
        learning_rate: 1e-2,
        max_epochs: 300,
        ..TrainConfig::default()
    };
    let (net, _) = train(net, &data, &config).unwrap();
    let pred = net.forward(x.view()).unwrap();
    assert!(mse(&pred, &[0.0; 200]) <= 1e-3);
}

#[test]
fn linear_target_matches_least_squares_oracle() {
    let (x, y) = linear_data(1000, 3);
    let (xt, yt) = linear_data(500, 4);
    let beta = ols(&x, &y);
    assert!((beta[1] - 2.0).abs() < 0.01 && (beta[2] + 1.0).abs() < 0.01 && beta[0].abs() < 0.01);
    let oracle_mse = xt
        .rows()
        .into_iter()
        .zip(&yt)
        .map(|(r, t)| (beta[0] + beta[1] * r[0] + beta[2] * r[1] - t).powi(2))
        .sum::<f64>()
        / 500.0;
    assert!(oracle_mse < 1e-3);

    let data = Supervised::regression(x.view(), &y).unwrap();
    let net = DenseNet::new(2, &[16, 16, 1], Activation::Elu, Activation::Identity, 5).unwrap();
    let config = TrainConfig {
        learning_rate: 3e-3,
        max_epochs: 400,
        l2_lambda: 0.0,
        ..TrainConfig::default()
    };
    let (net, log) = train(net, &data, &config).unwrap();
    let held_out = mse(&net.forward(xt.view()).unwrap(), &yt);
    assert!(held_out <= 0.01, "held-out MSE {held_out} (least squares: {oracle_mse}), {} epochs", log.epochs.len());
}

#[test]
fn zero_patience_stops_at_first_non_improving_epoch() {
    let (x, y) = linear_data(300, 6);
    let data = Supervised::regression(x.view(), &y).unwrap();
    let net = DenseNet::new(2, &[4, 1], Activation::Elu, Activation::Identity, 1).unwrap();
    let config = TrainConfig {
        patience: 0,
        learning_rate: 0.3,
        max_epochs: 500,
        ..TrainConfig::default()
    };
    let (_, log) = train(net, &data, &config).unwrap();
    let v: Vec<f64> = log.epochs.iter().map(|e| e.val_loss).collect();
    let last = v.len() - 1;
    assert!(last < 499, "should stop early");
    for k in 1..last {
        assert!(v[k] < v[..k].iter().copied().fold(f64::INFINITY, f64::min));
    }
    assert!(v[last] >= v[..last].iter().copied().fold(f64::INFINITY, f64::min));
}

#[test]
fn returned_parameters_have_the_best_validation_loss() {
    let (x, y) = linear_data(300, 8);
    let data = Supervised::regression(x.view(), &y).unwrap();
    let net = DenseNet::new(2, &[10, 1], Activation::Elu, Activation::Identity, 3).unwrap();
    let config = TrainConfig {
        patience: 5,
        max_epochs: 60,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let (trained, log) = train(net, &data, &config).unwrap();
    let (_, val) = config.split(300).unwrap();
    let v = trained.evaluate(&data, &val, config.l2_lambda, false).unwrap().0.objective;
    assert_eq!(v, log.best_val_loss);
    assert!(log.epochs.iter().all(|e| v <= e.val_loss));
    assert_eq!(log.epochs[log.best_epoch - 1].val_loss, log.best_val_loss);
}

#[test]
fn training_is_deterministic() {
    let (x, y) = linear_data(250, 9);
    let data = Supervised::regression(x.view(), &y).unwrap();
    let make = || DenseNet::new(2, &[6, 6, 1], Activation::Elu, Activation::Identity, 4).unwrap();
    let config = TrainConfig {
        max_epochs: 20,
        seed: 77,
        ..TrainConfig::default()
    };
    let (a, la) = train(make(), &data, &config).unwrap();
    let (b, lb) = train(make(), &data, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
    let (c, _) = train(make(), &data, &config.with_seed(78)).unwrap();
    assert_ne!(a, c);
}

#[test]
fn log_serializes_as_json_lines() {
    let (x, y) = linear_data(100, 10);
    let data = Supervised::regression(x.view(), &y).unwrap();
    let net = DenseNet::new(2, &[1], Activation::Identity, Activation::Identity, 4).unwrap();
    let (_, log) = train(net, &data, &TrainConfig { max_epochs: 3, ..TrainConfig::default() }).unwrap();
    let text = log.to_json_lines();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    let v: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(v["epoch"], 1);
    assert!(v["train_loss"].is_f64() && v["val_loss"].is_f64());
}

#[test]
fn nan_targets_abort_with_context() {
    let (x, mut y) = linear_data(50, 11);
    y[3] = f64::NAN;
    let data = Supervised::new(x.clone(), Array2::from_shape_vec((50, 1), y).unwrap(), LossKind::Mse).unwrap();
    let net = DenseNet::new(2, &[1], Activation::Identity, Activation::Identity, 4).unwrap();
    let err = train(net, &data, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, metacate::Error::Training { epoch: 1, .. }), "{err}");
}

#[test]
fn split_needs_both_parts() {
    let c = TrainConfig::default();
    assert!(c.split(1).is_err());
    let (tr, va) = c.split(10).unwrap();
    assert_eq!((tr.len(), va.len()), (7, 3));
    let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
    all.sort();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
}
