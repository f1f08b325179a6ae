use approx::assert_abs_diff_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use wntk::dynamics::loglog_slope;
use wntk::linalg::symmetric_eigenvalues;
use wntk::*;

fn inputs(n: usize, d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * d).prop_map(move |v| {
        let mut x = DMatrix::from_row_slice(n, d, &v);
        // Keep every row away from the origin.
        for i in 0..n {
            x[(i, 0)] += if x[(i, 0)] >= 0.0 { 0.5 } else { -0.5 };
        }
        x
    })
}

fn instance() -> impl Strategy<Value = (DMatrix<f64>, usize, Vec<f64>)> {
    (1usize..=8, 1usize..=4, 1usize..=5).prop_flat_map(|(n, d, depth)| {
        (inputs(n, d), Just(depth), prop::collection::vec(0.0..3.0f64, depth))
    })
}

fn assert_psd(m: &DMatrix<f64>) {
    let floor = -1e-8 * m.trace().abs().max(1e-300);
    let lo = symmetric_eigenvalues(m).unwrap()[0];
    assert!(lo >= floor, "min eigenvalue {lo} below {floor}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_symmetric_and_psd((x, depth, w) in instance()) {
        let shape = NetworkShape::new(x.ncols(), depth, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        let stack = layer_kernels_from_stack(&s);
        let weights = LayerWeights::new(w).unwrap();
        let wntk = wntk_recursion(&s, &weights).unwrap();
        let ntk = ntk_from_stack(&s);
        let mut all = vec![ntk, wntk];
        all.extend(stack.layers().iter().cloned());
        for l in 1..=depth {
            all.push(s.sigma(l).clone());
            if l >= 2 {
                all.push(s.sigma_dot(l).clone());
            }
        }
        for m in &all {
            prop_assert_eq!(m, &m.transpose());
            assert_psd(m);
        }
    }

    #[test]
    fn layer_sum_and_unrolling_identities((x, depth, w) in instance()) {
        let shape = NetworkShape::new(x.ncols(), depth, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        let stack = layer_kernels_from_stack(&s);
        prop_assert!(linalg::max_abs_diff(&stack.sum(), &ntk_from_stack(&s)) < 1e-10);
        let weights = LayerWeights::new(w.iter().map(|v| v - 1.0).collect()).unwrap();
        let unrolled = wntk_recursion(&s, &weights).unwrap();
        prop_assert!(linalg::max_abs_diff(&unrolled, &wntk_weighted_sum(&stack, &weights).unwrap()) < 1e-10);
    }

    #[test]
    fn unit_weights_reduce_to_ntk_bitwise((x, depth, _w) in instance()) {
        let shape = NetworkShape::new(x.ncols(), depth, ActivationKind::Relu).unwrap();
        let stack = analytic_layer_kernels(&x, &x, &shape).unwrap();
        prop_assert_eq!(stack.weighted_sum(&LayerWeights::ones(depth)).unwrap(), stack.sum());
    }

    #[test]
    fn relu_diagonal_law(x in inputs(4, 3), depth in 1usize..=8) {
        // Rescale rows so that Σ^(1)(x, x) = ‖x‖²/d₀ = 1.
        let mut x = x;
        for mut row in x.row_iter_mut() {
            let norm = row.norm();
            row *= 3f64.sqrt() / norm;
        }
        let shape = NetworkShape::new(3, depth, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        let ntk = ntk_from_stack(&s);
        for i in 0..4 {
            for l in 1..=depth {
                let expected = 2f64.powi(1 - l as i32);
                prop_assert!((s.sigma(l)[(i, i)] - expected).abs() < 1e-12);
            }
            let expected = depth as f64 * 2f64.powi(1 - depth as i32);
            prop_assert!((ntk[(i, i)] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_kernels_agree_with_joint_kernel(x in inputs(6, 3), depth in 1usize..=4) {
        let shape = NetworkShape::new(3, depth, ActivationKind::Relu).unwrap();
        let joint = analytic_layer_kernels(&x, &x, &shape).unwrap();
        let a = x.rows(0, 2).into_owned();
        let b = x.rows(2, 4).into_owned();
        let cross = analytic_layer_kernels(&a, &b, &shape).unwrap();
        let sel = joint.select(&[0, 1], &[2, 3, 4, 5]);
        for l in 1..=depth {
            prop_assert!(linalg::max_abs_diff(cross.layer(l), sel.layer(l)) < 1e-14);
        }
    }
}

#[test]
fn closed_form_moments_match_quadrature() {
    for lambda in [-0.999, -0.5, 0.0, 0.5, 0.999] {
        for (c1, c2) in [(1.0, 1.0), (0.3, 2.5)] {
            let m = BivariateMoment::new(c1, c2, lambda).unwrap();
            let (v, d) = quadrature_moment(m, ActivationKind::Relu, 64).unwrap();
            assert_abs_diff_eq!(v, relu_moment(m), epsilon = 1e-8);
            assert_abs_diff_eq!(d, relu_dot_moment(m), epsilon = 1e-8);
        }
    }
}

#[test]
fn tanh_recursion_is_symmetric_and_sums() {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 0.8, 0.2, -1.1]);
    let shape = NetworkShape::new(2, 3, ActivationKind::Tanh).unwrap();
    let s = sigma_recursion(&x, &x, &shape).unwrap();
    let stack = layer_kernels_from_stack(&s);
    assert!(linalg::max_abs_diff(&stack.sum(), &ntk_from_stack(&s)) < 1e-10);
    assert_eq!(ntk_from_stack(&s), ntk_from_stack(&s).transpose());
}

#[test]
fn mc_depth_one_is_exact_gram() {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 0.8, 0.2, -1.1]);
    let shape = NetworkShape::new(2, 1, ActivationKind::Relu).unwrap();
    let est = mc_kernel_oracle(&x, &shape, 64, 2, 3).unwrap();
    let gram = &x * x.transpose() / 2.0;
    assert!(linalg::max_abs_diff(&est.ntk_mean, &gram) < 1e-14);
    assert_eq!(est.ntk_stderr.amax(), 0.0);
}

#[test]
fn mc_is_deterministic_and_validates() {
    let x = wntk::synthetic::unit_sphere(4, 3, 1);
    let shape = NetworkShape::new(3, 2, ActivationKind::Relu).unwrap();
    let a = mc_kernel_oracle(&x, &shape, 128, 3, 9).unwrap();
    let b = mc_kernel_oracle(&x, &shape, 128, 3, 9).unwrap();
    assert_eq!(a, b);
    assert!(mc_kernel_oracle(&x, &shape, 32, 3, 9).is_err());
    assert!(mc_kernel_oracle(&x, &shape, 128, 0, 9).is_err());
}

#[test]
fn mc_hidden_covariances_track_sigma() {
    let x = wntk::synthetic::unit_sphere(5, 4, 2) * 2.0;
    let shape = NetworkShape::new(4, 3, ActivationKind::Relu).unwrap();
    let s = sigma_recursion(&x, &x, &shape).unwrap();
    let est = mc_kernel_oracle(&x, &shape, 2048, 4, 0).unwrap();
    for l in 2..=3 {
        let rel = (est.sigma(l) - s.sigma(l)).amax() / s.sigma(l).amax();
        assert!(rel < 0.1, "sigma({l}) relative deviation {rel}");
        let rel_dot = (est.sigma_dot(l) - s.sigma_dot(l)).amax() / s.sigma_dot(l).amax();
        assert!(rel_dot < 0.1, "sigma_dot({l}) relative deviation {rel_dot}");
    }
}

#[test]
fn mc_deviation_shrinks_with_width() {
    let x = wntk::synthetic::unit_sphere(8, 4, 5) * 2.0;
    let shape = NetworkShape::new(4, 2, ActivationKind::Relu).unwrap();
    let exact = ntk_from_stack(&sigma_recursion(&x, &x, &shape).unwrap());
    let widths = [256.0, 1024.0, 4096.0];
    let devs: Vec<f64> = widths
        .iter()
        .map(|&w| {
            let est = mc_kernel_oracle(&x, &shape, w as usize, 4, 11).unwrap();
            linalg::max_abs_diff(&est.ntk_mean, &exact)
        })
        .collect();
    let slope = loglog_slope(&widths, &devs).unwrap();
    assert!((-0.8..=-0.2).contains(&slope), "slope {slope}, deviations {devs:?}");
}
