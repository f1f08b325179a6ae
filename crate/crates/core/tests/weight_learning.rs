use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wntk::weights::*;
use wntk::*;

struct Split {
    stack_t: LayerKernelStack,
    stack_v: LayerKernelStack,
    y_t: DMatrix<f64>,
    y_v: DMatrix<f64>,
}

fn split(n_t: usize, n_v: usize, depth: usize, seed: u64) -> Split {
    let x = wntk::synthetic::unit_sphere(n_t + n_v, 5, seed) * 5f64.sqrt();
    let shape = NetworkShape::new(5, depth, ActivationKind::Relu).unwrap();
    let stack = analytic_layer_kernels(&x, &x, &shape).unwrap();
    let t: Vec<usize> = (0..n_t).collect();
    let v: Vec<usize> = (n_t..n_t + n_v).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = DMatrix::from_fn(n_t + n_v, 2, |_, _| rng.random_range(-1.0..1.0));
    Split {
        stack_t: stack.select(&t, &t),
        stack_v: stack.select(&t, &v),
        y_t: wntk::linalg::select_rows(&y, &t),
        y_v: wntk::linalg::select_rows(&y, &v),
    }
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

#[test]
fn closed_form_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for instance in 0..20u64 {
        let depth = 1 + (instance as usize % 4);
        let s = split(14, 6, depth, instance);
        let w = LayerWeights::new((0..depth).map(|_| rng.random_range(0.3..2.0)).collect()).unwrap();
        let g = layer_weight_gradient(&s.stack_t, &s.stack_v, &w, &s.y_t, 0.1).unwrap();
        let analytic = g.loss_gradient(&s.y_v);
        let fd = finite_diff_weight_gradient(&s.stack_t, &s.stack_v, &w, &s.y_t, &s.y_v, 0.1, 1e-4).unwrap();
        let err = rel_err(&analytic, &fd);
        assert!(err < 1e-5, "instance {instance}: relative error {err}, {analytic:?} vs {fd:?}");
        let loss = validation_loss(&s.stack_t, &s.stack_v, &w, &s.y_t, &s.y_v, 0.1).unwrap();
        assert!((g.validation_loss(&s.y_v) - loss).abs() <= 1e-12 * loss.max(1.0));
    }
}

#[test]
fn single_layer_gradient_vanishes_without_ridge() {
    let s = split(4, 3, 1, 3);
    let w = LayerWeights::new(vec![1.7]).unwrap();
    let g = layer_weight_gradient(&s.stack_t, &s.stack_v, &w, &s.y_t, 0.0).unwrap();
    let scale = g.prediction.amax();
    assert!(g.layer_derivatives[0].amax() < 1e-8 * scale);
}

#[test]
fn finite_difference_step_is_bounded() {
    let s = split(8, 3, 2, 1);
    let w = LayerWeights::ones(2);
    for h in [1e-8, 1e-2] {
        assert!(finite_diff_weight_gradient(&s.stack_t, &s.stack_v, &w, &s.y_t, &s.y_v, 0.1, h).is_err());
    }
}

fn planted(n: usize, depth: usize, layer: usize, seed: u64) -> (LayerKernelStack, DMatrix<f64>) {
    let shape = NetworkShape::new(8, depth, ActivationKind::Relu).unwrap();
    let x = wntk::synthetic::unit_sphere(n, 8, seed) * 8f64.sqrt();
    let t = wntk::synthetic::planted_layer_targets(&x, &shape, layer, seed + 100).unwrap();
    let stack = analytic_layer_kernels(&x, &x, &shape).unwrap();
    (stack, DMatrix::from_column_slice(n, 1, t.as_slice()))
}

#[test]
fn zero_step_keeps_initial_weights() {
    let (stack, y) = planted(40, 3, 2, 0);
    let mut cfg = WeightLearnerConfig::new(3);
    cfg.eta_w = 0.0;
    cfg.max_iters = 5;
    cfg.patience = 10;
    cfg.init_weights = LayerWeights::new(vec![0.5, 1.0, 2.0]).unwrap();
    let trace = algorithm1_update_loop(&stack, &y, &cfg).unwrap();
    assert_eq!(trace.iterations.len(), 5);
    for r in &trace.iterations {
        assert_eq!(r.weights, vec![0.5, 1.0, 2.0]);
    }
    assert_eq!(trace.final_weights, cfg.init_weights);
    assert_eq!(trace.termination, Termination::MaxIters);
}

#[test]
fn fixed_split_loss_does_not_increase() {
    let (stack, y) = planted(60, 3, 2, 1);
    let mut cfg = WeightLearnerConfig::new(3);
    cfg.resample_each_iter = false;
    cfg.eta_w = 1e-3;
    cfg.max_iters = 10;
    cfg.patience = 100;
    let trace = algorithm1_update_loop(&stack, &y, &cfg).unwrap();
    assert_eq!(trace.iterations.len(), 10);
    for w in trace.iterations.windows(2) {
        assert!(w[1].val_loss <= w[0].val_loss, "{} -> {}", w[0].val_loss, w[1].val_loss);
    }
}

#[test]
fn update_loop_is_deterministic_and_writes_jsonl() {
    let (stack, y) = planted(40, 3, 1, 2);
    let cfg = WeightLearnerConfig::new(3);
    let a = algorithm1_update_loop(&stack, &y, &cfg).unwrap();
    let b = algorithm1_update_loop(&stack, &y, &cfg).unwrap();
    assert_eq!(a, b);
    let mut buf = Vec::new();
    a.write_jsonl(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), a.iterations.len());
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["iteration", "weights", "val_loss", "grad_norm"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn config_validation() {
    let (stack, y) = planted(20, 3, 1, 3);
    let mut cfg = WeightLearnerConfig::new(3);
    cfg.ratio = 1.0;
    assert!(algorithm1_update_loop(&stack, &y, &cfg).is_err());
    let mut cfg = WeightLearnerConfig::new(3);
    cfg.eta_w = -1.0;
    assert!(algorithm1_update_loop(&stack, &y, &cfg).is_err());
    let cfg = WeightLearnerConfig::new(2);
    assert!(algorithm1_update_loop(&stack, &y, &cfg).is_err());
    let mut cfg = WeightLearnerConfig::new(3);
    cfg.ratio = 0.01;
    assert!(algorithm1_update_loop(&stack, &y, &cfg).is_err());
}

#[test]
fn planted_layer_usually_gets_the_largest_weight() {
    let mut wins = 0;
    for seed in 0..10u64 {
        let (stack, y) = planted(400, 3, 2, seed);
        let mut cfg = WeightLearnerConfig::new(3);
        cfg.patience = 1000;
        cfg.max_iters = 200;
        cfg.seed = seed;
        let w = algorithm1_update_loop(&stack, &y, &cfg).unwrap().final_weights;
        let w = w.as_slice();
        if w[1] > w[0] && w[1] > w[2] {
            wins += 1;
        }
    }
    assert!(wins >= 7, "planted layer won {wins}/10");
}
