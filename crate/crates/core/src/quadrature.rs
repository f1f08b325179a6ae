//! Gaussian quadrature rules and expectations under a centered bivariate
//! normal law.
//!
//! Expectations `E[g(u, v)]` with `u = c1·z1`, `v = c2·(λ z1 + √(1−λ²) z2)`
//! are computed in polar coordinates of the whitened pair `(z1, z2)`:
//! the angular integral runs over `[0, π)` split at the rays where `u = 0`
//! or `v = 0`, and the radial integral pairs `r` with `−r` so that, after
//! the substitution `s = r²/2`, it becomes a plain Gauss–Laguerre integral.
//! Kinks of activations at the origin lie exactly on the split rays, which
//! keeps ReLU-type integrands piecewise smooth on every angular panel.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, WntkError};

/// Nodes and weights of a one-dimensional Gauss rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }
}

// Golub–Welsch: nodes are the eigenvalues of the Jacobi matrix, weights are
// mu0 times the squared first eigenvector components.
fn golub_welsch(diag: &[f64], offdiag: &[f64], mu0: f64) -> GaussRule {
    let n = diag.len();
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 0..n {
        jacobi[(i, i)] = diag[i];
        if i + 1 < n {
            jacobi[(i, i + 1)] = offdiag[i];
            jacobi[(i + 1, i)] = offdiag[i];
        }
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    GaussRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Legendre rule on `[−1, 1]`.
pub fn gauss_legendre(order: usize) -> GaussRule {
    let diag = vec![0.0; order];
    let offdiag: Vec<f64> = (1..order)
        .map(|i| {
            let i = i as f64;
            i / (4.0 * i * i - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&diag, &offdiag, 2.0)
}

/// Gauss–Laguerre rule for the weight `e^{−s}` on `[0, ∞)`.
pub fn gauss_laguerre(order: usize) -> GaussRule {
    let diag: Vec<f64> = (0..order).map(|i| 2.0 * i as f64 + 1.0).collect();
    let offdiag: Vec<f64> = (1..order).map(|i| i as f64).collect();
    golub_welsch(&diag, &offdiag, 1.0)
}

/// Reusable product rule for bivariate Gaussian expectations.
#[derive(Debug, Clone)]
pub struct BivariateGaussQuadrature {
    angular: GaussRule,
    radial: GaussRule,
}

pub const MIN_ORDER: usize = 8;

impl BivariateGaussQuadrature {
    pub fn new(order: usize) -> Result<Self> {
        if order < MIN_ORDER {
            return Err(WntkError::InvalidArgument(format!(
                "quadrature order must be at least {MIN_ORDER}, got {order}"
            )));
        }
        Ok(Self {
            angular: gauss_legendre(order),
            radial: gauss_laguerre(order),
        })
    }

    pub fn order(&self) -> usize {
        self.angular.order()
    }

    /// Evaluates `E[g(u, v)]` for every component of the vector-valued `g`.
    /// `lambda` must already lie in `[−1, 1]`.
    pub fn expectation<const K: usize>(
        &self,
        c1: f64,
        c2: f64,
        lambda: f64,
        g: impl Fn(f64, f64) -> [f64; K],
    ) -> [f64; K] {
        let mu = (1.0 - lambda * lambda).max(0.0).sqrt();
        let mut cuts = vec![0.0, PI / 2.0, PI];
        let mut zero_v = f64::atan2(-lambda, mu);
        if zero_v < 0.0 {
            zero_v += PI;
        }
        if zero_v > 0.0 && zero_v < PI {
            cuts.push(zero_v);
        }
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

        // Radii are shared by every angle.
        let radii: Vec<f64> = self.radial.nodes.iter().map(|s| (2.0 * s).sqrt()).collect();

        let mut total = [0.0; K];
        for panel in cuts.windows(2) {
            let (lo, hi) = (panel[0], panel[1]);
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (t, wt) in self.angular.nodes.iter().zip(&self.angular.weights) {
                let phi = mid + half * t;
                let (sin, cos) = phi.sin_cos();
                let a = c1 * cos;
                let b = c2 * (lambda * cos + mu * sin);
                let mut radial = [0.0; K];
                for (r, wr) in radii.iter().zip(&self.radial.weights) {
                    let plus = g(r * a, r * b);
                    let minus = g(-r * a, -r * b);
                    for k in 0..K {
                        radial[k] += wr * (plus[k] + minus[k]);
                    }
                }
                for k in 0..K {
                    total[k] += wt * half * radial[k];
                }
            }
        }
        for v in total.iter_mut() {
            *v /= 2.0 * PI;
        }
        total
    }
}
