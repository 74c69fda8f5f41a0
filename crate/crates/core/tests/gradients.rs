use metacate::arch::{build, ArchConfig, ArchitectureKind, MultiHeadNet, NuisanceTask};
use metacate::data::ObservationalDataset;
use metacate::nn::{
    flatten_grads, flatten_params, set_params, Activation, DenseNet, LossKind, Supervised, Trainable,
};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Worst elementwise relative error between the analytic gradient and central differences.
fn check<M: Trainable>(model: &M, data: &M::Data, rows: &[usize], l2: f64) -> f64 {
    let (_, grads) = model.evaluate(data, rows, l2, true).unwrap();
    let analytic = flatten_grads(&grads.unwrap());
    let theta = flatten_params(model);
    assert_eq!(analytic.len(), theta.len());
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut p = theta.clone();
        p[i] = theta[i] + H;
        set_params(&mut probe, &p);
        let up = probe.evaluate(data, rows, l2, false).unwrap().0.objective;
        p[i] = theta[i] - H;
        set_params(&mut probe, &p);
        let down = probe.evaluate(data, rows, l2, false).unwrap().0.objective;
        let numeric = (up - down) / (2.0 * H);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

fn normal(rng: &mut impl Rng, shape: (usize, usize)) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.sample::<f64, _>(StandardNormal))
}

#[test]
fn dense_nets_match_finite_differences() {
    let mut rng = metacate::seed::rng(11);
    let acts = [Activation::Elu, Activation::Sigmoid, Activation::Identity];
    for case in 0..12 {
        let d = rng.random_range(1..5);
        let depth = rng.random_range(1..=3);
        let mut widths: Vec<usize> = (0..depth - 1).map(|_| rng.random_range(1..=10)).collect();
        widths.push(rng.random_range(1..=3));
        let hidden = acts[case % 3];
        let (output, loss) = if case % 4 == 3 {
            (Activation::Sigmoid, LossKind::CrossEntropy)
        } else {
            (acts[(case + 1) % 3], LossKind::Mse)
        };
        let out_dim = *widths.last().unwrap();
        let net = DenseNet::new(d, &widths, hidden, output, 100 + case as u64).unwrap();
        let n = 7;
        let x = normal(&mut rng, (n, d));
        let target = match loss {
            LossKind::CrossEntropy => Array2::from_shape_fn((n, out_dim), |_| f64::from(rng.random_bool(0.5) as u8)),
            LossKind::Mse => normal(&mut rng, (n, out_dim)),
        };
        let data = Supervised::new(x, target, loss).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let err = check(&net, &data, &rows, 0.03);
        assert!(err <= TOL, "case {case}: relative error {err:e}");
    }
}

fn small_config(binary: bool) -> ArchConfig {
    let mut c = ArchConfig::reduced();
    c.rep_layers = 2;
    c.head_layers = 1;
    c.head_units = 4;
    c.solo_units = 5;
    c.snet_units = 6;
    c.snet3.outcome = 2;
    c.snet3.confounder = 3;
    c.snet3.treatment = 2;
    c.snet.outcome = 2;
    c.snet.confounder = 2;
    c.snet.treatment = 3;
    c.snet.mu0 = 2;
    c.snet.mu1 = 1;
    c.ortho_gamma = 0.05;
    c.binary_outcome = binary;
    c
}

fn toy(rng: &mut impl Rng, n: usize, d: usize, binary: bool) -> ObservationalDataset {
    let x = normal(rng, (n, d));
    let w: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let y = Array1::from_shape_fn(n, |_| {
        if binary {
            f64::from(rng.random_bool(0.4) as u8)
        } else {
            rng.sample(StandardNormal)
        }
    });
    ObservationalDataset::new(x, w, y, None).unwrap()
}

#[test]
fn every_architecture_matches_finite_differences() {
    let mut rng = metacate::seed::rng(29);
    let mut checked = 0;
    for binary in [false, true] {
        for kind in ArchitectureKind::ALL {
            let data = toy(&mut rng, 9, 4, binary);
            let mut config = small_config(binary);
            config.train.seed = 5 + checked;
            let task = NuisanceTask {
                x: data.x().to_owned(),
                y: data.y().to_owned(),
                w: data.w_f64(),
                outcome_loss: if binary { LossKind::CrossEntropy } else { LossKind::Mse },
            };
            for plan in build(kind, &data, &config, true).unwrap() {
                let net: MultiHeadNet = plan.net;
                let rows: Vec<usize> = (0..data.n()).collect();
                let err = check(&net, &task, &rows, 0.02);
                assert!(err <= TOL, "{kind} {} binary={binary}: relative error {err:e}", plan.role);
                checked += 1;
            }
        }
    }
    assert!(checked >= 10);
}

#[test]
fn ortho_penalty_contributes_to_objective_and_gradient() {
    let mut rng = metacate::seed::rng(3);
    let data = toy(&mut rng, 6, 3, false);
    let mut config = small_config(false);
    config.ortho_gamma = 0.0;
    let task = NuisanceTask {
        x: data.x().to_owned(),
        y: data.y().to_owned(),
        w: data.w_f64(),
        outcome_loss: LossKind::Mse,
    };
    let rows: Vec<usize> = (0..6).collect();
    let off = build(ArchitectureKind::SNet3, &data, &config, true).unwrap().remove(0).net;
    let (terms_off, _) = off.loss_terms(&task, &rows, 1e-4, false).unwrap();
    assert_eq!(terms_off.ortho, 0.0);
    config.ortho_gamma = 0.5;
    let on = build(ArchitectureKind::SNet3, &data, &config, true).unwrap().remove(0).net;
    let (terms_on, _) = on.loss_terms(&task, &rows, 1e-4, false).unwrap();
    assert_eq!(terms_on.outcome, terms_off.outcome);
    assert_eq!(terms_on.propensity, terms_off.propensity);
    assert_eq!(terms_on.ortho, 0.5 * on.ortho_raw());
    let v = terms_on.value();
    assert_eq!(v.objective, v.data_term + v.penalty_term);
    assert!(check(&on, &task, &rows, 1e-4) <= TOL);
}
