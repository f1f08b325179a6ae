//! Finite-width fully connected networks without biases.
//!
//! Layer `l` maps `in_l ∈ ℝ^{d_{l−1}}` to `h_l = s_l · W_l · in_l` with
//! `in_1 = x`, `in_{l+1} = σ(h_l)` and output `f(x) = κ · h_L`. Under the NTK
//! parameterization `W_l` has standard normal entries and `s_l = 1/√d_{l−1}`;
//! under the standard parameterization `W_l ~ N(0, σ_w²/d_{l−1})` and `s_l = 1`.
//!
//! Samples are passed as rows; internally activations are stored one sample
//! per column so that every layer is a single matrix product.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Result, WntkError};
use crate::layers::{check_depth, LayerKernelStack, LayerWeights};
use crate::linalg::KernelMatrix;

/// Per-layer inputs (`d_{l-1} × n`) and pre-activations (`d_l × n`).
type ForwardCache = (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Ntk,
    Standard,
}

impl Parameterization {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ntk" => Ok(Parameterization::Ntk),
            "standard" | "sp" => Ok(Parameterization::Standard),
            other => Err(WntkError::InvalidArgument(format!(
                "unknown parameterization '{other}' (expected ntk or standard)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Parameterization::Ntk => "ntk",
            Parameterization::Standard => "standard",
        }
    }
}

/// Everything needed to draw a network except the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub parameterization: Parameterization,
    pub activation: ActivationKind,
    pub kappa: f64,
    pub sigma_w: f64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, parameterization: Parameterization, activation: ActivationKind, kappa: f64) -> Self {
        Self {
            widths,
            parameterization,
            activation,
            kappa,
            sigma_w: 1.0,
        }
    }

    /// `[d0, width, …, width, 1]` with `depth − 1` hidden layers.
    pub fn uniform(
        input_dim: usize,
        width: usize,
        depth: usize,
        parameterization: Parameterization,
        activation: ActivationKind,
        kappa: f64,
    ) -> Self {
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat_n(width, depth.saturating_sub(1)));
        widths.push(1);
        Self::new(widths, parameterization, activation, kappa)
    }

    fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(WntkError::InvalidArgument("a network needs at least one layer".into()));
        }
        if self.widths.contains(&0) {
            return Err(WntkError::InvalidArgument(format!("widths must be positive, got {:?}", self.widths)));
        }
        if *self.widths.last().expect("nonempty") != 1 {
            return Err(WntkError::InvalidArgument("the output layer must have width 1".into()));
        }
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(WntkError::InvalidArgument(format!("output scale must be positive, got {}", self.kappa)));
        }
        if !(self.sigma_w.is_finite() && self.sigma_w > 0.0) {
            return Err(WntkError::InvalidArgument(format!("sigma_w must be positive, got {}", self.sigma_w)));
        }
        Ok(())
    }

    pub fn init(&self, seed: u64) -> Result<Mlp> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = self
            .widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = match self.parameterization {
                    Parameterization::Ntk => 1.0,
                    Parameterization::Standard => self.sigma_w / (fan_in as f64).sqrt(),
                };
                let mut m = DMatrix::zeros(fan_out, fan_in);
                for v in m.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = std * z;
                }
                m
            })
            .collect();
        Ok(Mlp {
            widths: self.widths.clone(),
            weights,
            parameterization: self.parameterization,
            activation: self.activation,
            kappa: self.kappa,
            sigma_w: self.sigma_w,
        })
    }
}

/// Draws a network; deterministic in `seed`.
pub fn init_mlp(
    widths: &[usize],
    parameterization: Parameterization,
    activation: ActivationKind,
    kappa: f64,
    seed: u64,
) -> Result<Mlp> {
    MlpSpec::new(widths.to_vec(), parameterization, activation, kappa).init(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    weights: Vec<DMatrix<f64>>,
    parameterization: Parameterization,
    activation: ActivationKind,
    kappa: f64,
    sigma_w: f64,
}

/// Per-layer quantities of a forward/backward pass over a batch.
pub(crate) struct Pass {
    /// `in_l`, `d_{l−1} × n`.
    pub inputs: Vec<DMatrix<f64>>,
    /// `h_l`, `d_l × n`.
    pub preacts: Vec<DMatrix<f64>>,
    /// `∂f/∂h_l` including κ, `d_l × n`.
    pub deltas: Vec<DMatrix<f64>>,
}

impl Pass {
    pub fn outputs(&self, kappa: f64) -> DVector<f64> {
        let top = self.preacts.last().expect("at least one layer");
        DVector::from_iterator(top.ncols(), top.row(0).iter().map(|v| kappa * v))
    }
}

impl Mlp {
    /// Assembles a network from explicit weights (e.g. a checkpoint).
    pub fn from_parts(
        widths: Vec<usize>,
        weights: Vec<DMatrix<f64>>,
        parameterization: Parameterization,
        activation: ActivationKind,
        kappa: f64,
        sigma_w: f64,
    ) -> Result<Self> {
        let spec = MlpSpec {
            widths: widths.clone(),
            parameterization,
            activation,
            kappa,
            sigma_w,
        };
        spec.validate()?;
        if weights.len() + 1 != widths.len() {
            return Err(WntkError::ShapeMismatch(format!(
                "{} weight matrices for {} layers",
                weights.len(),
                widths.len() - 1
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            if w.shape() != (widths[l + 1], widths[l]) {
                return Err(WntkError::ShapeMismatch(format!(
                    "layer {} weights are {:?}, expected {:?}",
                    l + 1,
                    w.shape(),
                    (widths[l + 1], widths[l])
                )));
            }
        }
        Ok(Self {
            widths,
            weights,
            parameterization,
            activation,
            kappa,
            sigma_w,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn weights(&self) -> &[DMatrix<f64>] {
        &self.weights
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn activation(&self) -> ActivationKind {
        self.activation
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn sigma_w(&self) -> f64 {
        self.sigma_w
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(WntkError::InvalidArgument(format!("output scale must be positive, got {kappa}")));
        }
        let mut m = self.clone();
        m.kappa = kappa;
        Ok(m)
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// Column ranges of each layer inside the flattened parameter vector.
    /// Layer blocks are stored row-major (`W_l[a, b]` at `a · d_{l−1} + b`).
    pub fn layer_spans(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.weights
            .iter()
            .map(|w| {
                let span = start..start + w.len();
                start = span.end;
                span
            })
            .collect()
    }

    /// Forward multiplier `s_l` of layer `l` (1-based).
    pub fn layer_scale(&self, l: usize) -> f64 {
        match self.parameterization {
            Parameterization::Ntk => 1.0 / (self.widths[l - 1] as f64).sqrt(),
            Parameterization::Standard => 1.0,
        }
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(WntkError::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn forward_only(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let depth = self.depth();
        let mut inputs = Vec::with_capacity(depth);
        let mut preacts = Vec::with_capacity(depth);
        let mut current = x.transpose();
        for (l, w) in self.weights.iter().enumerate() {
            let mut h = w * &current;
            h *= self.layer_scale(l + 1);
            inputs.push(current);
            if l + 1 < depth {
                current = h.map(|v| self.activation.apply(v));
            } else {
                current = DMatrix::zeros(0, 0);
            }
            preacts.push(h);
        }
        Ok((inputs, preacts))
    }

    pub(crate) fn pass(&self, x: &DMatrix<f64>) -> Result<Pass> {
        let (inputs, preacts) = self.forward_only(x)?;
        let n = x.nrows();
        let depth = self.depth();
        let mut deltas = vec![DMatrix::zeros(0, 0); depth];
        deltas[depth - 1] = DMatrix::from_element(1, n, self.kappa);
        for l in (1..depth).rev() {
            // δ_{l} = s_{l+1} (W_{l+1}ᵀ δ_{l+1}) ⊙ σ̇(h_l), computed as (δᵀ W)ᵀ.
            let upstream = &deltas[l];
            let mut back = (upstream.transpose() * &self.weights[l]).transpose();
            back *= self.layer_scale(l + 1);
            back.zip_apply(&preacts[l - 1], |b, h| *b *= self.activation.derivative(h));
            deltas[l - 1] = back;
        }
        Ok(Pass {
            inputs,
            preacts,
            deltas,
        })
    }

    /// Network outputs, one per row of `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        let (_, preacts) = self.forward_only(x)?;
        let top = preacts.last().expect("at least one layer");
        Ok(DVector::from_iterator(top.ncols(), top.row(0).iter().map(|v| self.kappa * v)))
    }

    /// Dense Jacobian of the output w.r.t. every weight, one row per sample.
    pub fn jacobian(&self, x: &DMatrix<f64>) -> Result<JacobianMatrix> {
        let pass = self.pass(x)?;
        let spans = self.layer_spans();
        let n = x.nrows();
        let mut values = DMatrix::zeros(n, self.parameter_count());
        for (l, span) in spans.iter().enumerate() {
            let s = self.layer_scale(l + 1);
            let delta = &pass.deltas[l];
            let input = &pass.inputs[l];
            let fan_in = input.nrows();
            for i in 0..n {
                for a in 0..delta.nrows() {
                    let da = s * delta[(a, i)];
                    let base = span.start + a * fan_in;
                    for b in 0..fan_in {
                        values[(i, base + b)] = da * input[(b, i)];
                    }
                }
            }
        }
        Ok(JacobianMatrix { values, layer_spans: spans })
    }

    /// Empirical per-layer kernels `Θ_l(x, x') = s_l² (δ_l·δ'_l)(in_l·in'_l)`
    /// without materializing the Jacobian.
    pub fn layer_kernels(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<LayerKernelStack> {
        let p1 = self.pass(x1)?;
        let same = x1 == x2;
        let p2_owned;
        let p2 = if same {
            &p1
        } else {
            p2_owned = self.pass(x2)?;
            &p2_owned
        };
        let layers = (0..self.depth())
            .map(|l| {
                let s = self.layer_scale(l + 1);
                let dd = p1.deltas[l].tr_mul(&p2.deltas[l]);
                let ii = p1.inputs[l].tr_mul(&p2.inputs[l]);
                let mut k = dd.component_mul(&ii);
                k *= s * s;
                if same {
                    symmetrize(&mut k);
                }
                k
            })
            .collect();
        LayerKernelStack::new(layers)
    }

    /// Empirical WNTK `Σ_l a_l Θ_l` on a pair of sample sets.
    pub fn wntk(&self, x1: &DMatrix<f64>, x2: &DMatrix<f64>, weights: &LayerWeights) -> Result<KernelMatrix> {
        self.layer_kernels(x1, x2)?.weighted_sum(weights)
    }

    /// Empirical `Σ^(l)` (l ≥ 2) and `Σ̇^(l)` from hidden activations, indexed from layer 2.
    pub(crate) fn hidden_covariances(&self, x: &DMatrix<f64>) -> Result<(Vec<KernelMatrix>, Vec<KernelMatrix>)> {
        let (inputs, preacts) = self.forward_only(x)?;
        let mut sigma = Vec::new();
        let mut sigma_dot = Vec::new();
        for l in 1..self.depth() {
            let width = self.widths[l] as f64;
            let act = &inputs[l];
            sigma.push(act.tr_mul(act) / width);
            let der = preacts[l - 1].map(|v| self.activation.derivative(v));
            sigma_dot.push(der.tr_mul(&der) / width);
        }
        Ok((sigma, sigma_dot))
    }

    /// Squared-loss value and per-layer weight gradients.
    pub(crate) fn loss_and_gradients(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<(f64, Vec<DMatrix<f64>>)> {
        if y.len() != x.nrows() {
            return Err(WntkError::ShapeMismatch(format!("{} targets for {} samples", y.len(), x.nrows())));
        }
        let pass = self.pass(x)?;
        let residual = pass.outputs(self.kappa) - y;
        let loss = 0.5 * residual.norm_squared();
        let grads = (0..self.depth())
            .map(|l| {
                let mut weighted = pass.deltas[l].clone();
                for (mut col, r) in weighted.column_iter_mut().zip(residual.iter()) {
                    col *= *r;
                }
                let mut g = weighted * pass.inputs[l].transpose();
                g *= self.layer_scale(l + 1);
                g
            })
            .collect();
        Ok((loss, grads))
    }

    /// Squared loss `½ Σ (f(x_i) − y_i)²`.
    pub fn loss(&self, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
        let out = self.forward(x)?;
        if out.len() != y.len() {
            return Err(WntkError::ShapeMismatch(format!("{} targets for {} samples", y.len(), out.len())));
        }
        Ok(0.5 * (out - y).norm_squared())
    }

    /// One adjusted gradient step in place; returns the loss before the step.
    pub fn step_in_place(&mut self, x: &DMatrix<f64>, y: &DVector<f64>, rates: &PerParameterRates) -> Result<f64> {
        let (loss, grads) = self.checked_gradients(x, y, rates)?;
        self.apply_gradients(grads, rates);
        Ok(loss)
    }

    fn checked_gradients(
        &self,
        x: &DMatrix<f64>,
        y: &DVector<f64>,
        rates: &PerParameterRates,
    ) -> Result<(f64, Vec<DMatrix<f64>>)> {
        check_depth(self.depth(), &rates.layer_rates)?;
        let (loss, grads) = self.loss_and_gradients(x, y)?;
        if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(WntkError::NumericalDivergence { step: 0 });
        }
        Ok((loss, grads))
    }

    fn apply_gradients(&mut self, grads: Vec<DMatrix<f64>>, rates: &PerParameterRates) {
        for (l, (w, g)) in self.weights.iter_mut().zip(grads).enumerate() {
            let step = rates.layer_step(l + 1);
            if step != 0.0 {
                w.zip_apply(&g, |a, b| *a -= step * b);
            }
        }
    }

    /// `θ + scale · direction`, with `direction` laid out like the weights.
    pub fn perturbed(&self, direction: &[DMatrix<f64>], scale: f64) -> Result<Self> {
        if direction.len() != self.depth() || direction.iter().zip(&self.weights).any(|(d, w)| d.shape() != w.shape()) {
            return Err(WntkError::ShapeMismatch("perturbation does not match the weight layout".into()));
        }
        let mut m = self.clone();
        for (w, d) in m.weights.iter_mut().zip(direction) {
            w.zip_apply(d, |a, b| *a += scale * b);
        }
        Ok(m)
    }

    /// `‖θ − θ'‖₂` over all weights.
    pub fn parameter_distance(&self, other: &Self) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    /// `‖J(θ) − J(θ')‖_F` on `x`, from per-layer outer-product factors:
    /// `δ inᵀ − δ' in'ᵀ = (δ − δ') inᵀ + δ' (in − in')ᵀ`.
    pub fn jacobian_distance(&self, other: &Self, x: &DMatrix<f64>) -> Result<f64> {
        let p = self.pass(x)?;
        let q = other.pass(x)?;
        let mut total = 0.0;
        for l in 0..self.depth() {
            let s2 = self.layer_scale(l + 1).powi(2);
            for i in 0..x.nrows() {
                let dp = p.deltas[l].column(i);
                let dq = q.deltas[l].column(i);
                let ip = p.inputs[l].column(i);
                let iq = q.inputs[l].column(i);
                let dd = dp - dq;
                let di = ip - iq;
                let sq = dd.norm_squared() * ip.norm_squared()
                    + dq.norm_squared() * di.norm_squared()
                    + 2.0 * dd.dot(&dq) * ip.dot(&di);
                total += s2 * sq.max(0.0);
            }
        }
        Ok(total.sqrt())
    }

    /// `‖J(θ)‖_F` on `x`.
    pub fn jacobian_norm(&self, x: &DMatrix<f64>) -> Result<f64> {
        let p = self.pass(x)?;
        let mut total = 0.0;
        for l in 0..self.depth() {
            let s2 = self.layer_scale(l + 1).powi(2);
            for i in 0..x.nrows() {
                total += s2 * p.deltas[l].column(i).norm_squared() * p.inputs[l].column(i).norm_squared();
            }
        }
        Ok(total.sqrt())
    }
}

fn symmetrize(k: &mut DMatrix<f64>) {
    let n = k.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
}

/// Dense `n × P` Jacobian with the column range of each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub values: DMatrix<f64>,
    pub layer_spans: Vec<Range<usize>>,
}

impl JacobianMatrix {
    pub fn block(&self, l: usize) -> nalgebra::DMatrixView<'_, f64> {
        let span = &self.layer_spans[l - 1];
        self.values.columns(span.start, span.len())
    }
}

/// `Θ_l = J1_l · J2_lᵀ` for each layer block.
pub fn empirical_layer_kernels(j1: &JacobianMatrix, j2: &JacobianMatrix) -> Result<LayerKernelStack> {
    if j1.layer_spans != j2.layer_spans {
        return Err(WntkError::ShapeMismatch("Jacobians have different layer spans".into()));
    }
    let layers = (1..=j1.layer_spans.len())
        .map(|l| j1.block(l) * j2.block(l).transpose())
        .collect();
    LayerKernelStack::new(layers)
}

/// `J1 · diag(a) · J2ᵀ` with `a` constant inside each layer block.
pub fn empirical_wntk(j1: &JacobianMatrix, j2: &JacobianMatrix, weights: &LayerWeights) -> Result<KernelMatrix> {
    empirical_layer_kernels(j1, j2)?.weighted_sum(weights)
}

/// Layer-wise learning-rate multipliers `a_l` and the base rate `η`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerParameterRates {
    pub layer_rates: LayerWeights,
    pub base_rate: f64,
}

impl PerParameterRates {
    pub fn new(layer_rates: LayerWeights, base_rate: f64) -> Result<Self> {
        if !(base_rate.is_finite() && base_rate >= 0.0) {
            return Err(WntkError::InvalidArgument(format!("base rate must be finite and >= 0, got {base_rate}")));
        }
        Ok(Self { layer_rates, base_rate })
    }

    pub fn uniform(depth: usize, base_rate: f64) -> Result<Self> {
        Self::new(LayerWeights::ones(depth), base_rate)
    }

    /// `η · a_l`.
    pub fn layer_step(&self, l: usize) -> f64 {
        self.base_rate * self.layer_rates.get(l)
    }

    pub fn a_max(&self) -> f64 {
        self.layer_rates.max()
    }
}

/// `θ ← θ − η (a ⊙ ∇_θ L)` for the squared loss; returns the updated network.
pub fn adjusted_gd_step(m: &Mlp, x: &DMatrix<f64>, y: &DVector<f64>, rates: &PerParameterRates) -> Result<Mlp> {
    let mut next = m.clone();
    next.step_in_place(x, y, rates)?;
    Ok(next)
}

/// Runs up to `steps` adjusted gradient steps.
///
/// The returned trace holds the loss at every visited parameter vector,
/// including the final one. Training stops early once the loss drops to
/// `stop_loss`; a non-finite `stop_loss` disables early stopping.
pub fn train_adjusted_gd(
    m: &Mlp,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    rates: &PerParameterRates,
    steps: usize,
    stop_loss: f64,
) -> Result<(Mlp, Vec<f64>)> {
    if steps == 0 {
        return Err(WntkError::InvalidArgument("training needs at least one step".into()));
    }
    let mut net = m.clone();
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let (loss, grads) = net.checked_gradients(x, y, rates).map_err(|e| match e {
            WntkError::NumericalDivergence { .. } => WntkError::NumericalDivergence { step },
            other => other,
        })?;
        trace.push(loss);
        if stop_loss.is_finite() && loss <= stop_loss {
            return Ok((net, trace));
        }
        net.apply_gradients(grads, rates);
    }
    let last = net.loss(x, y)?;
    if !last.is_finite() {
        return Err(WntkError::NumericalDivergence { step: steps });
    }
    trace.push(last);
    Ok((net, trace))
}

/// Result of [`pretrain_to_threshold`].
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub mlp: Mlp,
    pub epochs: usize,
    pub val_accuracy: f64,
    /// False when the threshold was not reached; `mlp` is then the best
    /// network seen.
    pub reached: bool,
}

/// Fraction of rows whose output sign matches the ±1 label (`sign(0) = +1`).
pub fn sign_accuracy(m: &Mlp, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    let out = m.forward(x)?;
    if out.len() != y.len() || out.is_empty() {
        return Err(WntkError::ShapeMismatch("accuracy needs matching, nonempty outputs and labels".into()));
    }
    let hits = out
        .iter()
        .zip(y.iter())
        .filter(|(o, t)| (**o >= 0.0) == (**t >= 0.0))
        .count();
    Ok(hits as f64 / out.len() as f64)
}

/// Full-batch gradient descent on ±1 targets until the validation sign
/// accuracy reaches `threshold` or `max_epochs` steps were taken.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_to_threshold(
    m: &Mlp,
    x_train: &DMatrix<f64>,
    y_train: &DVector<f64>,
    x_val: &DMatrix<f64>,
    y_val: &DVector<f64>,
    threshold: f64,
    max_epochs: usize,
    rate: f64,
) -> Result<PretrainOutcome> {
    if !(threshold > 0.5 && threshold < 1.0) {
        return Err(WntkError::InvalidArgument(format!("threshold must lie in (0.5, 1), got {threshold}")));
    }
    let rates = PerParameterRates::uniform(m.depth(), rate)?;
    let mut net = m.clone();
    let mut acc = sign_accuracy(&net, x_val, y_val)?;
    let mut best = (acc, net.clone(), 0);
    let mut epochs = 0;
    while acc < threshold && epochs < max_epochs {
        net.step_in_place(x_train, y_train, &rates)
            .map_err(|_| WntkError::NumericalDivergence { step: epochs })?;
        epochs += 1;
        acc = sign_accuracy(&net, x_val, y_val)?;
        if acc > best.0 {
            best = (acc, net.clone(), epochs);
        }
    }
    if acc >= threshold {
        Ok(PretrainOutcome {
            mlp: net,
            epochs,
            val_accuracy: acc,
            reached: true,
        })
    } else {
        Ok(PretrainOutcome {
            mlp: best.1,
            epochs: best.2,
            val_accuracy: best.0,
            reached: false,
        })
    }
}
