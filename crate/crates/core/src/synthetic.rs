//! Seeded synthetic datasets used by the sweeps, tests and CLI.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::analytic::{analytic_layer_kernels, NetworkShape};
use crate::data::Dataset;
use crate::error::{Result, WntkError};

fn gaussian_vector(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| StandardNormal.sample(rng))
}

/// `n` points drawn uniformly on the unit sphere in `ℝ^d`, one per row.
pub fn unit_sphere(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, d);
    for i in 0..n {
        let mut v = gaussian_vector(d, &mut rng);
        while v.norm() == 0.0 {
            v = gaussian_vector(d, &mut rng);
        }
        v /= v.norm();
        x.set_row(i, &v.transpose());
    }
    x
}

/// Sphere inputs with targets `sin(2 u·x) + ½ cos(3 v·x)` for fixed random
/// unit directions `u`, `v`.
pub fn sphere_regression(n: usize, d: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let x = unit_sphere(n, d, seed);
    let dirs = unit_sphere(2, d, seed ^ 0x9e37_79b9_7f4a_7c15);
    let u = dirs.row(0).transpose();
    let v = dirs.row(1).transpose();
    let y = DVector::from_fn(n, |i, _| {
        let xi = x.row(i).transpose();
        (2.0 * u.dot(&xi)).sin() + 0.5 * (3.0 * v.dot(&xi)).cos()
    });
    (x, y)
}

/// Isotropic unit-variance Gaussian blobs centered at `separation · e_c`
/// (cycling through coordinates), rows ordered by class.
pub fn gaussian_blobs(per_class: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Dataset> {
    if classes < 2 || per_class == 0 || dim == 0 {
        return Err(WntkError::InvalidArgument(format!(
            "blobs need >= 2 classes, >= 1 row per class and dim >= 1 (got {classes}, {per_class}, {dim})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = per_class * classes;
    let mut x = DMatrix::zeros(n, dim);
    let mut y = Vec::with_capacity(n);
    for c in 0..classes {
        for k in 0..per_class {
            let i = c * per_class + k;
            for j in 0..dim {
                let z: f64 = StandardNormal.sample(&mut rng);
                x[(i, j)] = z;
            }
            let axis = c % dim;
            let sign = if (c / dim).is_multiple_of(2) { 1.0 } else { -1.0 };
            x[(i, axis)] += sign * separation;
            y.push(c);
        }
    }
    Dataset::new(
        x,
        y,
        (0..classes).map(|c| format!("c{c}")).collect(),
        (0..dim).map(|j| format!("x{j}")).collect(),
        format!("synthetic:blobs(per_class={per_class},classes={classes},dim={dim},sep={separation},seed={seed})"),
    )
}

/// A Gaussian-process sample whose covariance is the analytic layer-`layer`
/// kernel of a ReLU network of the given shape, on unit-sphere inputs
/// scaled to `‖x‖² = d`.
pub fn planted_layer_targets(x: &DMatrix<f64>, shape: &NetworkShape, layer: usize, seed: u64) -> Result<DVector<f64>> {
    if layer == 0 || layer > shape.depth {
        return Err(WntkError::InvalidArgument(format!("layer {layer} outside 1..={}", shape.depth)));
    }
    let stack = analytic_layer_kernels(x, x, shape)?;
    let mut k = stack.layer(layer).clone();
    let jitter = 1e-10 * k.diagonal().amax().max(1.0);
    for i in 0..k.nrows() {
        k[(i, i)] += jitter;
    }
    let eig = nalgebra::SymmetricEigen::new(k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = gaussian_vector(x.nrows(), &mut rng);
    let scaled = DVector::from_fn(x.nrows(), |i, _| eig.eigenvalues[i].max(0.0).sqrt() * z[i]);
    Ok(&eig.eigenvectors * scaled)
}

/// Planted-kernel classification data: `sign` of a layer-`layer` GP sample.
pub fn planted_layer_dataset(n: usize, shape: &NetworkShape, layer: usize, seed: u64) -> Result<Dataset> {
    let d = shape.input_dim;
    let x = unit_sphere(n, d, seed) * (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target_seed: u64 = rng.random();
    let t = planted_layer_targets(&x, shape, layer, target_seed)?;
    let y = t.iter().map(|&v| usize::from(v >= 0.0)).collect();
    Dataset::new(
        x,
        y,
        vec!["neg".into(), "pos".into()],
        (0..d).map(|j| format!("x{j}")).collect(),
        format!("synthetic:planted(n={n},d={d},depth={},layer={layer},seed={seed})", shape.depth),
    )
}
