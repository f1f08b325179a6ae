//! Gradient descent on the layer weights of a WNTK ridge estimator.
//!
//! For `A = Σ_l a_l Θ_{T,l} + λ I` on training rows and `A_V = Σ_l a_l Θ_{V,l}`
//! between training and validation rows, the validation prediction is
//! `f⋆ = A_Vᵀ A^{-1} Y_T` and
//! `∂f⋆/∂a_l = Θ_{V,l}ᵀ A^{-1} Y_T − A_Vᵀ A^{-1} Θ_{T,l} A^{-1} Y_T`.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::train_val_split;
use crate::error::{Result, WntkError};
use crate::layers::{check_depth, LayerKernelStack, LayerWeights};
use crate::linalg::{FactorizationKind, SymmetricSolver};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightLearnerConfig {
    pub init_weights: LayerWeights,
    pub eta_w: f64,
    /// Validation fraction `r`.
    pub ratio: f64,
    pub ridge: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub patience: usize,
    pub seed: u64,
    pub resample_each_iter: bool,
}

impl WeightLearnerConfig {
    pub fn new(depth: usize) -> Self {
        Self {
            init_weights: LayerWeights::ones(depth),
            eta_w: 0.01,
            ratio: 0.2,
            ridge: 0.1,
            max_iters: 50,
            tol: 1e-5,
            patience: 3,
            seed: 0,
            resample_each_iter: true,
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let bad = |m: String| Err(WntkError::InvalidArgument(m));
        if !(self.eta_w.is_finite() && self.eta_w >= 0.0) {
            return bad(format!("eta_w must be finite and >= 0, got {}", self.eta_w));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return bad(format!("ratio must lie in (0, 1), got {}", self.ratio));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return bad(format!("ridge must be finite and >= 0, got {}", self.ridge));
        }
        if self.max_iters == 0 || self.patience == 0 {
            return bad("max_iters and patience must be positive".into());
        }
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return bad(format!("tol must be finite and >= 0, got {}", self.tol));
        }
        let val = (self.ratio * n as f64).round() as usize;
        if val < 1 || n - val.min(n) < self.init_weights.len() {
            return bad(format!(
                "{n} rows at ratio {} leave {val} validation and {} training rows (need >= 1 and >= {})",
                self.ratio,
                n - val.min(n),
                self.init_weights.len()
            ));
        }
        Ok(())
    }
}

/// Validation prediction and its derivatives with respect to each layer weight.
#[derive(Debug, Clone)]
pub struct WeightGradient {
    /// `f⋆(X_V)`, `n_V × c`.
    pub prediction: DMatrix<f64>,
    /// `∂f⋆(X_V)/∂a_l`, each `n_V × c`.
    pub layer_derivatives: Vec<DMatrix<f64>>,
    pub factorization: FactorizationKind,
}

impl WeightGradient {
    /// `‖f⋆ − Y_V‖²_F`.
    pub fn validation_loss(&self, y_val: &DMatrix<f64>) -> f64 {
        (&self.prediction - y_val).norm_squared()
    }

    /// `Δ_l = 2 ⟨f⋆ − Y_V, ∂f⋆/∂a_l⟩`.
    pub fn loss_gradient(&self, y_val: &DMatrix<f64>) -> Vec<f64> {
        let r = &self.prediction - y_val;
        self.layer_derivatives.iter().map(|d| 2.0 * r.dot(d)).collect()
    }
}

fn check_stacks(
    stack_t: &LayerKernelStack,
    stack_v: &LayerKernelStack,
    weights: &LayerWeights,
    y_t: &DMatrix<f64>,
) -> Result<()> {
    check_depth(stack_t.depth(), weights)?;
    if stack_v.depth() != stack_t.depth() {
        return Err(WntkError::ShapeMismatch("train and validation stacks differ in depth".into()));
    }
    if stack_t.nrows() != stack_t.ncols() || stack_v.nrows() != stack_t.nrows() || y_t.nrows() != stack_t.nrows() {
        return Err(WntkError::ShapeMismatch(format!(
            "train stack {}x{}, validation stack {}x{}, {} targets",
            stack_t.nrows(),
            stack_t.ncols(),
            stack_v.nrows(),
            stack_v.ncols(),
            y_t.nrows()
        )));
    }
    Ok(())
}

fn system(stack_t: &LayerKernelStack, weights: &LayerWeights, ridge: f64) -> Result<DMatrix<f64>> {
    let mut a = stack_t.weighted_sum(weights)?;
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    Ok(a)
}

/// Closed-form per-layer derivatives of the validation prediction.
/// `stack_v` holds the train × validation kernels.
pub fn layer_weight_gradient(
    stack_t: &LayerKernelStack,
    stack_v: &LayerKernelStack,
    weights: &LayerWeights,
    y_t: &DMatrix<f64>,
    ridge: f64,
) -> Result<WeightGradient> {
    check_stacks(stack_t, stack_v, weights, y_t)?;
    let a = system(stack_t, weights, ridge)?;
    let (solver, alpha) = SymmetricSolver::solve_checked(&a, y_t)?;
    let a_v = stack_v.weighted_sum(weights)?;
    // G = A^{-1} A_V, so the second term is Gᵀ Θ_{T,l} α.
    let g = solver.solve(&a_v);
    let prediction = a_v.tr_mul(&alpha);
    let layer_derivatives = stack_t
        .layers()
        .iter()
        .zip(stack_v.layers())
        .map(|(theta_t, theta_v)| theta_v.tr_mul(&alpha) - g.tr_mul(&(theta_t * &alpha)))
        .collect();
    Ok(WeightGradient {
        prediction,
        layer_derivatives,
        factorization: solver.kind(),
    })
}

/// `‖f⋆(X_V) − Y_V‖²_F` for the given weights.
pub fn validation_loss(
    stack_t: &LayerKernelStack,
    stack_v: &LayerKernelStack,
    weights: &LayerWeights,
    y_t: &DMatrix<f64>,
    y_v: &DMatrix<f64>,
    ridge: f64,
) -> Result<f64> {
    check_stacks(stack_t, stack_v, weights, y_t)?;
    let a = system(stack_t, weights, ridge)?;
    let (_, alpha) = SymmetricSolver::solve_checked(&a, y_t)?;
    let pred = stack_v.weighted_sum(weights)?.tr_mul(&alpha);
    Ok((pred - y_v).norm_squared())
}

/// Central differences of the validation loss in each layer weight.
pub fn finite_diff_weight_gradient(
    stack_t: &LayerKernelStack,
    stack_v: &LayerKernelStack,
    weights: &LayerWeights,
    y_t: &DMatrix<f64>,
    y_v: &DMatrix<f64>,
    ridge: f64,
    h: f64,
) -> Result<Vec<f64>> {
    if !(1e-7..=1e-3).contains(&h) {
        return Err(WntkError::InvalidArgument(format!("step must lie in [1e-7, 1e-3], got {h}")));
    }
    (0..weights.len())
        .map(|l| {
            let mut plus = weights.as_slice().to_vec();
            let mut minus = plus.clone();
            plus[l] += h;
            minus[l] -= h;
            let lp = validation_loss(stack_t, stack_v, &LayerWeights::new(plus)?, y_t, y_v, ridge)?;
            let lm = validation_loss(stack_t, stack_v, &LayerWeights::new(minus)?, y_t, y_v, ridge)?;
            Ok((lp - lm) / (2.0 * h))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Weights at which the loss and gradient were evaluated.
    pub weights: Vec<f64>,
    pub val_loss: f64,
    pub gradient: Vec<f64>,
    pub eta_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIters,
    Converged,
    /// A singular system persisted after halving the step once.
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightTrace {
    pub iterations: Vec<IterationRecord>,
    pub final_weights: LayerWeights,
    pub termination: Termination,
    /// Iterations at which a singular system forced the step to be halved.
    pub halvings: Vec<usize>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    iteration: usize,
    weights: &'a [f64],
    val_loss: f64,
    grad_norm: f64,
}

impl WeightTrace {
    /// One JSON object per iteration: iteration, weights, val_loss, grad_norm.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.iterations {
            let line = TraceLine {
                iteration: r.iteration,
                weights: &r.weights,
                val_loss: r.val_loss,
                grad_norm: r.gradient.iter().map(|g| g * g).sum::<f64>().sqrt(),
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Runs the layer-weight descent on a precomputed kernel stack over all rows.
///
/// Each iteration splits the rows (once, or afresh when resampling),
/// evaluates the validation loss and its gradient at the current weights and
/// takes a step `a ← a − η_w Δ`. Iteration stops after `max_iters`, or when
/// the best validation loss has not improved by more than `tol` for
/// `patience` consecutive iterations. If a step lands on a singular system
/// it is retaken once with half the step size.
pub fn algorithm1_update_loop(stack: &LayerKernelStack, y: &DMatrix<f64>, cfg: &WeightLearnerConfig) -> Result<WeightTrace> {
    if stack.nrows() != stack.ncols() || y.nrows() != stack.nrows() {
        return Err(WntkError::ShapeMismatch(format!(
            "stack is {}x{}, targets have {} rows",
            stack.nrows(),
            stack.ncols(),
            y.nrows()
        )));
    }
    check_depth(stack.depth(), &cfg.init_weights)?;
    cfg.validate(stack.nrows())?;
    let all: Vec<usize> = (0..stack.nrows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut split = train_val_split(&all, cfg.ratio, rng.random())?;

    let mut weights = cfg.init_weights.clone();
    let mut eta = cfg.eta_w;
    let mut previous: Option<(LayerWeights, Vec<f64>)> = None;
    let mut iterations = Vec::new();
    let mut halvings = Vec::new();
    let mut best = f64::INFINITY;
    let mut stall = 0;
    let mut termination = Termination::MaxIters;

    let mut it = 0;
    while it < cfg.max_iters {
        if cfg.resample_each_iter && it > 0 && halvings.last() != Some(&it) {
            split = train_val_split(&all, cfg.ratio, rng.random())?;
        }
        let (train, val) = &split;
        let stack_t = stack.select(train, train);
        let stack_v = stack.select(train, val);
        let y_t = crate::linalg::select_rows(y, train);
        let y_v = crate::linalg::select_rows(y, val);
        let grad = match layer_weight_gradient(&stack_t, &stack_v, &weights, &y_t, cfg.ridge) {
            Ok(g) => g,
            Err(WntkError::SingularKernel { .. }) => match (&previous, halvings.is_empty()) {
                (Some((prev_w, prev_delta)), true) => {
                    eta *= 0.5;
                    halvings.push(it);
                    weights = step(prev_w, prev_delta, eta)?;
                    continue;
                }
                _ => {
                    termination = Termination::Aborted;
                    break;
                }
            },
            Err(e) => return Err(e),
        };
        let loss = grad.validation_loss(&y_v);
        let delta = grad.loss_gradient(&y_v);
        iterations.push(IterationRecord {
            iteration: it,
            weights: weights.as_slice().to_vec(),
            val_loss: loss,
            gradient: delta.clone(),
            eta_w: eta,
        });
        let next = step(&weights, &delta, eta)?;
        previous = Some((std::mem::replace(&mut weights, next), delta));
        it += 1;

        if loss < best - cfg.tol {
            best = loss;
            stall = 0;
        } else {
            stall += 1;
            if stall >= cfg.patience {
                termination = Termination::Converged;
                break;
            }
        }
    }
    let final_weights = match termination {
        // The last step produced the singular system; report the weights it
        // was taken from.
        Termination::Aborted => previous.map(|(w, _)| w).unwrap_or(weights),
        _ => weights,
    };
    Ok(WeightTrace {
        iterations,
        final_weights,
        termination,
        halvings,
    })
}

fn step(weights: &LayerWeights, delta: &[f64], eta: f64) -> Result<LayerWeights> {
    if eta == 0.0 {
        return Ok(weights.clone());
    }
    LayerWeights::new(weights.as_slice().iter().zip(delta).map(|(a, d)| a - eta * d).collect())
}
