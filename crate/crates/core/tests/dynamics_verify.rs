use nalgebra::{DMatrix, DVector};
use wntk::dynamics::*;
use wntk::*;

fn small(widths: Vec<usize>, depth: usize) -> SweepConfig {
    let mut c = SweepConfig::lazy_default();
    c.widths = widths;
    c.depth = depth;
    c.seeds = 2;
    c.steps = 20;
    c.data.n = 8;
    c.data.probes = 4;
    c
}

#[test]
fn eta_critical_examples() {
    assert!((estimate_eta_critical(&DMatrix::identity(4, 4)).unwrap() - 1.0).abs() < 1e-15);
    let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
    assert!((estimate_eta_critical(&d).unwrap() - 0.5).abs() < 1e-15);

    let t = 0.7f64;
    let q = DMatrix::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()]);
    let rotated = &q * &d * q.transpose();
    assert!((estimate_eta_critical(&rotated).unwrap() - 0.5).abs() < 1e-14);

    let singular = DMatrix::from_element(2, 2, 1.0);
    assert!(matches!(
        estimate_eta_critical(&singular),
        Err(WntkError::NonPositiveDefinite { .. })
    ));
}

#[test]
fn summary_statistics() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
    assert_eq!(median(&[4.0, 1.0, f64::NAN, 2.0, 3.0]), Some(2.5));
    assert_eq!(median(&[f64::INFINITY]), None);
    let xs = [64.0, 256.0, 1024.0];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(-0.5)).collect();
    assert!((loglog_slope(&xs, &ys).unwrap() + 0.5).abs() < 1e-12);
    assert_eq!(loglog_slope(&xs, &[1.0, 0.0, 1.0]), None);
    assert_eq!(loglog_slope(&[1.0], &[1.0]), None);
}

#[test]
fn plot_csv_layout() {
    let rows = vec![
        WidthMedian { width: 64, median: Some(0.5) },
        WidthMedian { width: 128, median: None },
    ];
    let text = plot_csv(&rows);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("width,median"));
    let (w, v) = lines.next().unwrap().split_once(',').unwrap();
    assert_eq!((w, v.parse::<f64>().unwrap()), ("64", 0.5));
    assert_eq!(lines.next(), Some("128,"));
}

#[test]
fn linearized_iterate_basics() {
    let m = init_mlp(&[4, 64, 64, 1], Parameterization::Ntk, ActivationKind::Relu, 1.0, 1).unwrap();
    let (x, y) = wntk::synthetic::sphere_regression(6, 4, 2);
    let z = wntk::synthetic::unit_sphere(3, 4, 3);
    let rates = PerParameterRates::uniform(3, 0.1).unwrap();
    let none = linearized_iterate(&m, &x, &y, &rates, 0, &z).unwrap();
    assert_eq!(none.train, vec![m.forward(&x).unwrap()]);
    assert_eq!(none.probe, vec![m.forward(&z).unwrap()]);

    let a = m.layer_kernels(&x, &x).unwrap().sum();
    let eta = 0.5 * estimate_eta_critical(&a).unwrap();
    let trace = linearized_iterate(&m, &x, &y, &PerParameterRates::uniform(3, eta).unwrap(), 500, &z).unwrap();
    assert_eq!(trace.train.len(), 501);
    assert!((&trace.train[500] - &y).amax() < 1e-6);

    let lambda_max = *wntk::linalg::symmetric_eigenvalues(&a).unwrap().last().unwrap();
    let too_big = PerParameterRates::uniform(3, 2.5 / lambda_max).unwrap();
    assert!(matches!(
        linearized_iterate(&m, &x, &y, &too_big, 10, &z),
        Err(WntkError::NumericalDivergence { step: 0 })
    ));
}

#[test]
fn linear_single_layer_network_has_no_lazy_gap() {
    let mut c = small(vec![16, 32], 1);
    c.activation = ActivationKind::Identity;
    let r = verify_lazy(&c).unwrap();
    for cell in &r.cells {
        assert!(!cell.diverged);
        assert!(cell.terminal_gap.unwrap() < 1e-12, "gap {:?}", cell.terminal_gap);
    }
}

#[test]
fn zero_step_sweeps_report_no_drift() {
    let mut c = small(vec![16, 32], 2);
    c.steps = 0;
    let s = verify_stability(&c).unwrap();
    assert!(s.cells.iter().all(|cell| cell.terminal_drift == Some(0.0)));
    let l = verify_lazy(&c).unwrap();
    assert!(l.cells.iter().all(|cell| cell.terminal_gap == Some(0.0)));
}

#[test]
fn sweeps_are_deterministic() {
    let c = small(vec![32, 64], 2);
    let a = verify_stability(&c).unwrap();
    let b = verify_stability(&c).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_eq!(a.cells.len(), 4);
    assert_eq!(a.medians.len(), 2);
}

#[test]
fn sweep_config_validation() {
    let mut c = small(vec![64, 32], 2);
    assert!(verify_stability(&c).is_err());
    c.widths = vec![32, 64];
    c.rates = Some(LayerWeights::ones(3));
    assert!(verify_stability(&c).is_err());
    c.rates = None;
    c.eta0 = StepSize::CriticalFraction(1.5);
    assert!(matches!(verify_lazy(&c), Err(WntkError::InvalidArgument(_))));
    c.eta0 = StepSize::Absolute(-1.0);
    assert!(c.validate().is_err());
}

#[test]
fn absolute_step_above_critical_is_rejected() {
    let mut c = small(vec![16, 32], 2);
    c.eta0 = StepSize::Absolute(1e6);
    assert!(c.resolve_eta0(&c.data.generate().0).is_err());
}

#[test]
fn lipschitz_ratio_edge_cases() {
    let m = init_mlp(&[3, 32, 32, 1], Parameterization::Standard, ActivationKind::Tanh, 1.0, 0).unwrap();
    let x = wntk::synthetic::unit_sphere(4, 3, 1);
    assert_eq!(lipschitz_ratio(&m, &m, &x, 32).unwrap(), 0.0);

    let lin = init_mlp(&[3, 1], Parameterization::Ntk, ActivationKind::Identity, 1.0, 0).unwrap();
    let other = init_mlp(&[3, 1], Parameterization::Ntk, ActivationKind::Identity, 1.0, 1).unwrap();
    assert_eq!(lipschitz_ratio(&lin, &other, &x, 1).unwrap(), 0.0);
}

#[test]
fn lipschitz_probe_stays_bounded_across_widths() {
    let c = LipschitzConfig {
        widths: vec![64, 256],
        seeds: 2,
        perturbations: 2,
        ..Default::default()
    };
    let r = jacobian_lipschitz_probe(&c).unwrap();
    assert_eq!(r.max_ratio.len(), 2);
    let spread = r.spread.unwrap();
    assert!(spread.is_finite() && (1.0..10.0).contains(&spread), "spread {spread}");
}
