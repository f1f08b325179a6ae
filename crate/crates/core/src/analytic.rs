//! Infinite-width kernels of fully connected networks.
//!
//! The recursion tracks, for every layer `l`, the Gaussian-process covariance
//! `Σ^(l)` of the pre-activations and the derivative covariance `Σ̇^(l)`:
//!
//! ```text
//! Σ^(1)(x, x') = v · xᵀx' / d₀
//! Σ^(l)(x, x') = E[σ(u) σ(v)],   (u, v) ~ N(0, Σ^(l−1) restricted to {x, x'})
//! Σ̇^(l)(x, x') = E[σ̇(u) σ̇(v)]
//! ```
//!
//! From the stack the NTK, the per-layer kernels and the weighted kernel
//! follow by entrywise products. ReLU uses the arc-cosine closed forms; other
//! activations use [`BivariateGaussQuadrature`].

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::activation::ActivationKind;
use crate::error::{Result, WntkError};
use crate::layers::{check_depth, LayerKernelStack, LayerWeights};
use crate::linalg::KernelMatrix;
use crate::quadrature::BivariateGaussQuadrature;

/// Quadrature order used by the recursion for non-ReLU activations.
pub const DEFAULT_QUADRATURE_ORDER: usize = 32;

/// Input dimension, depth and nonlinearity of a scalar-output network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub depth: usize,
    pub activation: ActivationKind,
    /// Parameter variance; multiplies `Σ^(1)`.
    pub variance: f64,
}

impl NetworkShape {
    pub fn new(input_dim: usize, depth: usize, activation: ActivationKind) -> Result<Self> {
        if input_dim == 0 || depth == 0 {
            return Err(WntkError::InvalidArgument(format!(
                "network shape needs d0 >= 1 and L >= 1, got d0={input_dim}, L={depth}"
            )));
        }
        Ok(Self {
            input_dim,
            depth,
            activation,
            variance: 1.0,
        })
    }

    pub fn with_variance(mut self, variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(WntkError::InvalidArgument(format!("variance must be positive, got {variance}")));
        }
        self.variance = variance;
        Ok(self)
    }
}

/// A centered bivariate Gaussian parameterized by standard deviations and
/// correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BivariateMoment {
    pub c1: f64,
    pub c2: f64,
    pub lambda: f64,
}

impl BivariateMoment {
    /// Validates without clamping: `c1, c2 >= 0` and `|λ| <= 1`.
    pub fn new(c1: f64, c2: f64, lambda: f64) -> Result<Self> {
        if !(c1 >= 0.0 && c2 >= 0.0 && c1.is_finite() && c2.is_finite()) {
            return Err(WntkError::InvalidArgument(format!(
                "standard deviations must be finite and nonnegative, got ({c1}, {c2})"
            )));
        }
        if lambda.is_nan() || lambda.abs() > 1.0 {
            return Err(WntkError::InvalidArgument(format!("correlation {lambda} outside [-1, 1]")));
        }
        Ok(Self { c1, c2, lambda })
    }

    /// From a 2×2 covariance; λ is clamped into `[−1, 1]`.
    pub fn from_covariance(var1: f64, var2: f64, cov: f64) -> Self {
        let c1c2 = (var1 * var2).sqrt();
        let c1 = var1.sqrt();
        let c2 = var2.sqrt();
        let lambda = if c1c2 > 0.0 { (cov / c1c2).clamp(-1.0, 1.0) } else { 0.0 };
        Self { c1, c2, lambda }
    }
}

fn arccos_factor(lambda: f64) -> f64 {
    PI - lambda.clamp(-1.0, 1.0).acos()
}

fn relu_moment_scaled(lambda: f64, c1c2: f64) -> f64 {
    let lambda = lambda.clamp(-1.0, 1.0);
    let root = (1.0 - lambda * lambda).max(0.0).sqrt();
    (lambda * arccos_factor(lambda) + root) / (2.0 * PI) * c1c2
}

/// `E[relu(u) relu(v)] = (λ(π − arccos λ) + √(1 − λ²)) / (2π) · c1 c2`.
pub fn relu_moment(m: BivariateMoment) -> f64 {
    relu_moment_scaled(m.lambda, m.c1 * m.c2)
}

/// `E[relu'(u) relu'(v)] = (π − arccos λ) / (2π)`.
pub fn relu_dot_moment(m: BivariateMoment) -> f64 {
    arccos_factor(m.lambda) / (2.0 * PI)
}

/// `(E[σ(u)σ(v)], E[σ̇(u)σ̇(v)])` by numerical quadrature.
pub fn quadrature_moment(m: BivariateMoment, activation: ActivationKind, order: usize) -> Result<(f64, f64)> {
    let m = BivariateMoment::new(m.c1, m.c2, m.lambda)?;
    let rule = BivariateGaussQuadrature::new(order)?;
    Ok(quadrature_pair(&rule, activation, m.c1, m.c2, m.lambda))
}

fn quadrature_pair(rule: &BivariateGaussQuadrature, act: ActivationKind, c1: f64, c2: f64, lambda: f64) -> (f64, f64) {
    let [value, derivative] = rule.expectation(c1, c2, lambda, |u, v| {
        [act.apply(u) * act.apply(v), act.derivative(u) * act.derivative(v)]
    });
    (value, derivative)
}

enum MomentRule {
    Relu,
    Quadrature(BivariateGaussQuadrature, ActivationKind),
}

impl MomentRule {
    fn for_activation(act: ActivationKind, order: usize) -> Result<Self> {
        match act {
            ActivationKind::Relu => Ok(MomentRule::Relu),
            other => Ok(MomentRule::Quadrature(BivariateGaussQuadrature::new(order)?, other)),
        }
    }

    /// Next-layer `(Σ, Σ̇)` entry from the current self-variances and covariance.
    fn cross(&self, var1: f64, var2: f64, cov: f64) -> (f64, f64) {
        let c1c2 = (var1 * var2).sqrt();
        let lambda = (cov / c1c2).clamp(-1.0, 1.0);
        match self {
            MomentRule::Relu => (relu_moment_scaled(lambda, c1c2), arccos_factor(lambda) / (2.0 * PI)),
            MomentRule::Quadrature(rule, act) => quadrature_pair(rule, *act, var1.sqrt(), var2.sqrt(), lambda),
        }
    }

    fn diagonal(&self, var: f64) -> f64 {
        match self {
            MomentRule::Relu => relu_moment_scaled(1.0, var),
            MomentRule::Quadrature(rule, act) => {
                let c = var.sqrt();
                quadrature_pair(rule, *act, c, c, 1.0).0
            }
        }
    }
}

/// `Σ^(l)` for `l = 1..=L` and `Σ̇^(l)` for `l = 2..=L` on a pair of sample sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaStack {
    shape: NetworkShape,
    sigma: Vec<KernelMatrix>,
    sigma_dot: Vec<KernelMatrix>,
}

impl SigmaStack {
    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn depth(&self) -> usize {
        self.sigma.len()
    }

    /// `Σ^(l)`, `1 <= l <= L`.
    pub fn sigma(&self, l: usize) -> &KernelMatrix {
        &self.sigma[l - 1]
    }

    /// `Σ̇^(l)`, `2 <= l <= L`.
    pub fn sigma_dot(&self, l: usize) -> &KernelMatrix {
        assert!(l >= 2, "Σ̇ is defined from layer 2 upwards");
        &self.sigma_dot[l - 2]
    }
}

fn check_inputs(x: &DMatrix<f64>, shape: &NetworkShape, which: &str) -> Result<()> {
    if x.ncols() != shape.input_dim {
        return Err(WntkError::ShapeMismatch(format!(
            "{which} has {} columns, network expects d0 = {}",
            x.ncols(),
            shape.input_dim
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(WntkError::InvalidArgument(format!("{which} contains non-finite entries")));
    }
    Ok(())
}

/// Runs the covariance recursion with the default quadrature order.
pub fn sigma_recursion(x1: &DMatrix<f64>, x2: &DMatrix<f64>, shape: &NetworkShape) -> Result<SigmaStack> {
    sigma_recursion_with_order(x1, x2, shape, DEFAULT_QUADRATURE_ORDER)
}

/// Runs the covariance recursion; rows of `x1`, `x2` are samples.
///
/// When `x1 == x2` only the upper triangle is computed and mirrored, so every
/// matrix of the stack is exactly symmetric. A vanishing self-variance at a
/// layer that feeds a moment fails with [`WntkError::ZeroNormInput`]; rows of
/// `x2` are reported after the rows of `x1`.
pub fn sigma_recursion_with_order(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    shape: &NetworkShape,
    quadrature_order: usize,
) -> Result<SigmaStack> {
    check_inputs(x1, shape, "first sample set")?;
    check_inputs(x2, shape, "second sample set")?;
    let symmetric = x1 == x2;
    let (n1, n2) = (x1.nrows(), x2.nrows());
    let scale = shape.variance / shape.input_dim as f64;

    let row_dot = |a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize| -> f64 {
        let mut acc = 0.0;
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(j, k)];
        }
        acc * scale
    };

    let mut sigma1 = DMatrix::zeros(n1, n2);
    fill(&mut sigma1, symmetric, |i, j| row_dot(x1, i, x2, j));
    let mut diag1: Vec<f64> = (0..n1).map(|i| row_dot(x1, i, x1, i)).collect();
    let mut diag2: Vec<f64> = (0..n2).map(|j| row_dot(x2, j, x2, j)).collect();

    let rule = MomentRule::for_activation(shape.activation, quadrature_order)?;
    let mut sigma = vec![sigma1];
    let mut sigma_dot = Vec::with_capacity(shape.depth.saturating_sub(1));

    for layer in 2..=shape.depth {
        let feeding = layer - 1;
        if let Some(row) = diag1.iter().position(|v| *v <= 0.0) {
            return Err(WntkError::ZeroNormInput { row, layer: feeding });
        }
        if let Some(row) = diag2.iter().position(|v| *v <= 0.0) {
            return Err(WntkError::ZeroNormInput { row: n1 + row, layer: feeding });
        }
        let prev = sigma.last().expect("nonempty");
        let mut next = DMatrix::zeros(n1, n2);
        let mut next_dot = DMatrix::zeros(n1, n2);
        for j in 0..n2 {
            let lo = if symmetric { j } else { 0 };
            for i in lo..n1 {
                let (v, vd) = rule.cross(diag1[i], diag2[j], prev[(i, j)]);
                next[(i, j)] = v;
                next_dot[(i, j)] = vd;
                if symmetric {
                    next[(j, i)] = v;
                    next_dot[(j, i)] = vd;
                }
            }
        }
        diag1 = diag1.iter().map(|v| rule.diagonal(*v)).collect();
        diag2 = if symmetric {
            diag1.clone()
        } else {
            diag2.iter().map(|v| rule.diagonal(*v)).collect()
        };
        sigma.push(next);
        sigma_dot.push(next_dot);
    }

    Ok(SigmaStack {
        shape: *shape,
        sigma,
        sigma_dot,
    })
}

fn fill(m: &mut DMatrix<f64>, symmetric: bool, f: impl Fn(usize, usize) -> f64) {
    let (n1, n2) = m.shape();
    for j in 0..n2 {
        let lo = if symmetric { j } else { 0 };
        for i in lo..n1 {
            let v = f(i, j);
            m[(i, j)] = v;
            if symmetric {
                m[(j, i)] = v;
            }
        }
    }
}

/// `Θ^(L)` from `Θ^(1) = Σ^(1)`, `Θ^(l) = Θ^(l−1) ⊙ Σ̇^(l) + Σ^(l)`.
pub fn ntk_from_stack(stack: &SigmaStack) -> KernelMatrix {
    let mut theta = stack.sigma(1).clone();
    for l in 2..=stack.depth() {
        theta.component_mul_assign(stack.sigma_dot(l));
        theta += stack.sigma(l);
    }
    theta
}

/// `Θ_l = Σ^(l) ⊙ Π_{l' > l} Σ̇^(l')` for every layer.
pub fn layer_kernels_from_stack(stack: &SigmaStack) -> LayerKernelStack {
    let depth = stack.depth();
    let mut layers = vec![DMatrix::zeros(0, 0); depth];
    let mut suffix: Option<KernelMatrix> = None;
    for l in (1..=depth).rev() {
        layers[l - 1] = match &suffix {
            None => stack.sigma(l).clone(),
            Some(prod) => stack.sigma(l).component_mul(prod),
        };
        if l >= 2 {
            suffix = Some(match suffix {
                None => stack.sigma_dot(l).clone(),
                Some(prod) => prod.component_mul(stack.sigma_dot(l)),
            });
        }
    }
    LayerKernelStack::new(layers).expect("layers share one shape")
}

/// `A^(1) = μ₁ Σ^(1)`, `A^(l) = A^(l−1) ⊙ Σ̇^(l) + μ_l Σ^(l)`.
pub fn wntk_recursion(stack: &SigmaStack, weights: &LayerWeights) -> Result<KernelMatrix> {
    check_depth(stack.depth(), weights)?;
    let mut acc = stack.sigma(1) * weights.get(1);
    for l in 2..=stack.depth() {
        acc.component_mul_assign(stack.sigma_dot(l));
        acc += stack.sigma(l) * weights.get(l);
    }
    Ok(acc)
}

/// Analytic per-layer kernels for a pair of sample sets.
pub fn analytic_layer_kernels(x1: &DMatrix<f64>, x2: &DMatrix<f64>, shape: &NetworkShape) -> Result<LayerKernelStack> {
    Ok(layer_kernels_from_stack(&sigma_recursion(x1, x2, shape)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(c1: f64, c2: f64, l: f64) -> BivariateMoment {
        BivariateMoment::new(c1, c2, l).unwrap()
    }

    #[test]
    fn relu_moment_examples() {
        assert_eq!(relu_moment(m(1.0, 1.0, 1.0)), 0.5);
        assert!((relu_moment(m(1.0, 1.0, 0.0)) - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(relu_moment(m(1.0, 1.0, -1.0)), 0.0);
    }

    #[test]
    fn relu_dot_moment_examples() {
        assert_eq!(relu_dot_moment(m(1.0, 1.0, 1.0)), 0.5);
        assert_eq!(relu_dot_moment(m(3.0, 0.2, 0.0)), 0.25);
        assert_eq!(relu_dot_moment(m(1.0, 1.0, -1.0)), 0.0);
    }

    #[test]
    fn moment_validation() {
        assert!(BivariateMoment::new(1.0, 1.0, 1.0 + 1e-12).is_err());
        assert!(BivariateMoment::new(-1.0, 1.0, 0.0).is_err());
        let clamped = BivariateMoment::from_covariance(1.0, 1.0, 1.0 + 1e-13);
        assert_eq!(clamped.lambda, 1.0);
    }

    #[test]
    fn quadrature_identity_activation() {
        let (v, d) = quadrature_moment(m(1.0, 1.0, 0.3), ActivationKind::Identity, 16).unwrap();
        assert!((v - 0.3).abs() < 1e-13);
        assert!((d - 1.0).abs() < 1e-13);
    }

    #[test]
    fn quadrature_relu_matches_closed_form_at_zero() {
        let mm = m(1.0, 1.0, 0.0);
        let (v, d) = quadrature_moment(mm, ActivationKind::Relu, 64).unwrap();
        assert!((v - relu_moment(mm)).abs() < 1e-8);
        assert!((d - relu_dot_moment(mm)).abs() < 1e-8);
    }

    #[test]
    fn quadrature_rejects_bad_inputs() {
        let bad = BivariateMoment { c1: 1.0, c2: 1.0, lambda: 1.5 };
        assert!(quadrature_moment(bad, ActivationKind::Tanh, 16).is_err());
        assert!(quadrature_moment(m(1.0, 1.0, 0.0), ActivationKind::Tanh, 4).is_err());
    }

    #[test]
    fn single_row_depth_two() {
        let x = DMatrix::from_element(1, 4, 1.0);
        let shape = NetworkShape::new(4, 2, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        assert_eq!(s.sigma(1)[(0, 0)], 1.0);
        assert_eq!(s.sigma(2)[(0, 0)], 0.5);
        assert_eq!(s.sigma_dot(2)[(0, 0)], 0.5);
        assert_eq!(ntk_from_stack(&s)[(0, 0)], 1.0);
    }

    #[test]
    fn orthogonal_pair_depth_two() {
        let x1 = DMatrix::from_row_slice(1, 2, &[2.0f64.sqrt(), 0.0]);
        let x2 = DMatrix::from_row_slice(1, 2, &[0.0, 2.0f64.sqrt()]);
        let shape = NetworkShape::new(2, 2, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x1, &x2, &shape).unwrap();
        assert!((s.sigma(2)[(0, 0)] - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert_eq!(s.sigma_dot(2)[(0, 0)], 0.25);
        assert!((ntk_from_stack(&s)[(0, 0)] - 1.0 / (2.0 * PI)).abs() < 1e-15);
        let layers = layer_kernels_from_stack(&s);
        assert_eq!(layers.layer(1)[(0, 0)], 0.0);
        assert!((layers.layer(2)[(0, 0)] - 1.0 / (2.0 * PI)).abs() < 1e-15);
    }

    #[test]
    fn depth_one_is_scaled_gram() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let shape = NetworkShape::new(3, 1, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        let gram = &x * x.transpose() / 3.0;
        assert!((ntk_from_stack(&s) - &gram).amax() < 1e-15);
        assert_eq!(layer_kernels_from_stack(&s).sum(), ntk_from_stack(&s));
    }

    #[test]
    fn zero_row_rejected_beyond_first_layer() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let deep = NetworkShape::new(2, 2, ActivationKind::Relu).unwrap();
        assert!(matches!(
            sigma_recursion(&x, &x, &deep),
            Err(WntkError::ZeroNormInput { row: 0, layer: 1 })
        ));
        let shallow = NetworkShape::new(2, 1, ActivationKind::Relu).unwrap();
        assert!(sigma_recursion(&x, &x, &shallow).is_ok());
    }

    #[test]
    fn weighted_examples_depth_two() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.4, 1.1, 0.3, 0.3]);
        let shape = NetworkShape::new(2, 2, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        let k = layer_kernels_from_stack(&s);
        let top = wntk_recursion(&s, &LayerWeights::new(vec![0.0, 1.0]).unwrap()).unwrap();
        assert_eq!(top, *s.sigma(2));
        let bottom = k.weighted_sum(&LayerWeights::new(vec![2.0, 0.0]).unwrap()).unwrap();
        let expected = s.sigma(1).component_mul(s.sigma_dot(2)) * 2.0;
        assert!((bottom - expected).amax() < 1e-15);
        let zero = wntk_recursion(&s, &LayerWeights::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert_eq!(zero.amax(), 0.0);
    }

    #[test]
    fn unit_weight_recursion_is_the_ntk_bitwise() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.2, -0.4, 1.1, 0.3, 0.3]);
        let shape = NetworkShape::new(2, 4, ActivationKind::Relu).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        assert_eq!(wntk_recursion(&s, &LayerWeights::ones(4)).unwrap(), ntk_from_stack(&s));
    }

    #[test]
    fn variance_scales_first_layer() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let shape = NetworkShape::new(2, 1, ActivationKind::Relu).unwrap().with_variance(2.0).unwrap();
        let s = sigma_recursion(&x, &x, &shape).unwrap();
        assert_eq!(s.sigma(1)[(0, 0)], 2.0);
    }
}
