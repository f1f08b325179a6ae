//! Width sweeps comparing finite-network training with its kernel description.
//!
//! Three harnesses share one configuration type: kernel drift during
//! training, the gap between a network and its linearization, and the gap
//! between a fully trained network and initial-output-corrected kernel
//! regression. A fourth probe measures the local Lipschitz constant of the
//! Jacobian. Every report is a deterministic function of its configuration.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::error::{Result, WntkError};
use crate::layers::{LayerKernelStack, LayerWeights};
use crate::linalg::{symmetric_eigenvalues, KernelMatrix};
use crate::network::{train_adjusted_gd, Mlp, MlpSpec, Parameterization, PerParameterRates};
use crate::regression::fit_krr;
use crate::synthetic::sphere_regression;

/// `2 / (λ_min + λ_max)` of a positive definite kernel.
pub fn estimate_eta_critical(a: &KernelMatrix) -> Result<f64> {
    let eig = symmetric_eigenvalues(a)?;
    let (lo, hi) = match (eig.first(), eig.last()) {
        (Some(lo), Some(hi)) => (*lo, *hi),
        _ => return Err(WntkError::InvalidArgument("empty kernel".into())),
    };
    if lo <= 0.0 {
        return Err(WntkError::NonPositiveDefinite { min_eigenvalue: lo });
    }
    Ok(2.0 / (lo + hi))
}

fn max_eigenvalue(a: &KernelMatrix) -> Result<f64> {
    symmetric_eigenvalues(a)?
        .last()
        .copied()
        .ok_or_else(|| WntkError::InvalidArgument("empty kernel".into()))
}

/// Median of finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Least-squares slope of `ln y` against `ln x`; `None` unless every value is
/// positive and finite and at least two points are given.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    if xs.iter().chain(ys).any(|v| !(v.is_finite() && *v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

fn sup_norm(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// How the base step size `η₀` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum StepSize {
    Absolute(f64),
    /// Fraction of `2/(λ_min + λ_max)` of the normalized initial kernel.
    CriticalFraction(f64),
    /// Fraction of `1/λ_max` of the normalized initial kernel.
    MaxEigenFraction(f64),
}

/// Inputs on the unit sphere with smooth targets; the first `n` rows train,
/// the remaining `probes` rows are held out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub probes: usize,
    pub input_dim: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn generate(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
        let (x, y) = sphere_regression(self.n + self.probes, self.input_dim, self.seed);
        let train = x.rows(0, self.n).into_owned();
        let probe = x.rows(self.n, self.probes).into_owned();
        (train, y.rows(0, self.n).into_owned(), probe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub widths: Vec<usize>,
    pub seeds: usize,
    pub steps: usize,
    pub eta0: StepSize,
    /// Layer rates `a_l`; `None` trains with plain gradient descent and the
    /// unweighted NTK.
    pub rates: Option<LayerWeights>,
    pub depth: usize,
    pub parameterization: Parameterization,
    pub activation: ActivationKind,
    pub kappa: f64,
    pub data: SyntheticSpec,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl SweepConfig {
    fn base(widths: Vec<usize>, seeds: usize, steps: usize, eta0: StepSize, depth: usize) -> Self {
        Self {
            widths,
            seeds,
            steps,
            eta0,
            rates: None,
            depth,
            parameterization: Parameterization::Ntk,
            activation: ActivationKind::Relu,
            kappa: 1.0,
            data: SyntheticSpec {
                n: 16,
                probes: 16,
                input_dim: 8,
                seed: 7,
            },
            checkpoint_every: 10,
            seed: 0,
        }
    }

    /// Standard parameterization, `η = η₀/d`, depth 4, widths 64 to 1024.
    pub fn stability_default() -> Self {
        let mut c = Self::base(vec![64, 128, 256, 512, 1024], 5, 200, StepSize::CriticalFraction(0.5), 4);
        c.parameterization = Parameterization::Standard;
        c
    }

    /// NTK parameterization, depth 3, widths 128 to 2048.
    pub fn lazy_default() -> Self {
        Self::base(vec![128, 512, 2048], 3, 200, StepSize::CriticalFraction(0.5), 3)
    }

    /// NTK parameterization, `κ = 10⁻²`, depth 2, widths 256 to 4096, n = 20.
    pub fn equivalence_default() -> Self {
        let mut c = Self::base(vec![256, 1024, 4096], 5, 20_000, StepSize::MaxEigenFraction(0.3), 2);
        c.kappa = 1e-2;
        c.data.n = 20;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(WntkError::InvalidArgument(m));
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("widths must be positive and nonempty, got {:?}", self.widths));
        }
        if self.widths.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("widths must be strictly increasing, got {:?}", self.widths));
        }
        if self.seeds == 0 || self.depth == 0 || self.checkpoint_every == 0 {
            return bad("seeds, depth and checkpoint interval must be positive".into());
        }
        if self.data.n == 0 || self.data.input_dim == 0 {
            return bad("synthetic data needs n >= 1 and input_dim >= 1".into());
        }
        if let Some(r) = &self.rates {
            if r.len() != self.depth {
                return bad(format!("{} rates for depth {}", r.len(), self.depth));
            }
        }
        match self.eta0 {
            StepSize::Absolute(v) | StepSize::CriticalFraction(v) | StepSize::MaxEigenFraction(v) => {
                if !(v.is_finite() && v > 0.0) {
                    return bad(format!("step size must be positive, got {v}"));
                }
            }
        }
        Ok(())
    }

    pub fn layer_rates(&self) -> LayerWeights {
        self.rates.clone().unwrap_or_else(|| LayerWeights::ones(self.depth))
    }

    pub fn mlp_spec(&self, width: usize) -> MlpSpec {
        MlpSpec::uniform(
            self.data.input_dim,
            width,
            self.depth,
            self.parameterization,
            self.activation,
            self.kappa,
        )
    }

    /// Network seeds, shared across widths.
    pub fn cell_seeds(&self) -> Vec<u64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        (0..self.seeds).map(|_| rng.random()).collect()
    }

    /// `d` under the standard parameterization, where kernels grow with width.
    fn normalizer(&self, width: usize) -> f64 {
        match self.parameterization {
            Parameterization::Standard => width as f64,
            Parameterization::Ntk => 1.0,
        }
    }

    fn kernel(&self, net: &Mlp, x1: &DMatrix<f64>, x2: &DMatrix<f64>) -> Result<KernelMatrix> {
        combine(&net.layer_kernels(x1, x2)?, self.rates.as_ref())
    }

    /// Resolves `η₀` on the seed-0 network at the largest width and checks
    /// it against that network's critical step.
    pub fn resolve_eta0(&self, x: &DMatrix<f64>) -> Result<f64> {
        let width = *self.widths.last().expect("validated");
        let net = self.mlp_spec(width).init(self.cell_seeds()[0])?;
        let a = self.kernel(&net, x, x)? / self.normalizer(width);
        let critical = estimate_eta_critical(&a)?;
        let eta0 = match self.eta0 {
            StepSize::Absolute(v) => v,
            StepSize::CriticalFraction(f) => f * critical,
            StepSize::MaxEigenFraction(f) => f / max_eigenvalue(&a)?,
        };
        if eta0 >= critical {
            return Err(WntkError::InvalidArgument(format!(
                "eta0 = {eta0:.4e} is not below the critical step {critical:.4e} at width {width}"
            )));
        }
        Ok(eta0)
    }

    fn rates_for(&self, width: usize, eta0: f64) -> Result<PerParameterRates> {
        PerParameterRates::new(self.layer_rates(), eta0 / self.normalizer(width))
    }
}

fn combine(stack: &LayerKernelStack, rates: Option<&LayerWeights>) -> Result<KernelMatrix> {
    match rates {
        Some(r) => stack.weighted_sum(r),
        None => Ok(stack.sum()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthMedian {
    pub width: usize,
    pub median: Option<f64>,
}

fn width_medians<C>(widths: &[usize], cells: &[C], width_of: impl Fn(&C) -> usize, metric: impl Fn(&C) -> Option<f64>) -> Vec<WidthMedian> {
    widths
        .iter()
        .map(|&w| {
            let vals: Vec<f64> = cells.iter().filter(|c| width_of(c) == w).filter_map(&metric).collect();
            WidthMedian { width: w, median: median(&vals) }
        })
        .collect()
}

fn medians_slope(m: &[WidthMedian]) -> Option<f64> {
    let xs: Vec<f64> = m.iter().map(|w| w.width as f64).collect();
    let ys: Option<Vec<f64>> = m.iter().map(|w| w.median).collect();
    loglog_slope(&xs, &ys?)
}

/// `width,median` rows for external plotting.
pub fn plot_csv(medians: &[WidthMedian]) -> String {
    let mut s = String::from("width,median\n");
    for m in medians {
        match m.median {
            Some(v) => s.push_str(&format!("{},{:e}\n", m.width, v)),
            None => s.push_str(&format!("{},\n", m.width)),
        }
    }
    s
}

fn check_divergence(diverged: usize, total: usize) -> Result<()> {
    if diverged * 5 >= total && diverged > 0 {
        return Err(WntkError::NumericalDivergence { step: 0 });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCell {
    pub width: usize,
    pub seed: u64,
    pub eta: f64,
    pub diverged: bool,
    /// `(step, ‖A₀ − A_t‖_F / ‖A₀‖_F)` at each checkpoint.
    pub drift: Vec<(usize, f64)>,
    pub terminal_drift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub config: SweepConfig,
    pub eta0: f64,
    pub a_max: f64,
    pub cells: Vec<StabilityCell>,
    pub medians: Vec<WidthMedian>,
    pub slope: Option<f64>,
}

/// Trains each (width, seed) cell by adjusted gradient descent and records
/// the relative Frobenius drift of the empirical WNTK on the training set.
pub fn verify_stability(cfg: &SweepConfig) -> Result<StabilityReport> {
    cfg.validate()?;
    let (x, y, _) = cfg.data.generate();
    let eta0 = cfg.resolve_eta0(&x)?;
    let mut cells = Vec::new();
    for &width in &cfg.widths {
        let rates = cfg.rates_for(width, eta0)?;
        for seed in cfg.cell_seeds() {
            let mut net = cfg.mlp_spec(width).init(seed)?;
            let a0 = cfg.kernel(&net, &x, &x)?;
            let a0_norm = a0.norm();
            let mut drift = vec![(0, 0.0)];
            let mut diverged = false;
            for step in 1..=cfg.steps {
                if net.step_in_place(&x, &y, &rates).is_err() {
                    diverged = true;
                    break;
                }
                if step % cfg.checkpoint_every == 0 || step == cfg.steps {
                    let at = cfg.kernel(&net, &x, &x)?;
                    let d = (&a0 - at).norm() / a0_norm;
                    if !d.is_finite() {
                        diverged = true;
                        break;
                    }
                    drift.push((step, d));
                }
            }
            cells.push(StabilityCell {
                width,
                seed,
                eta: rates.base_rate,
                diverged,
                terminal_drift: (!diverged).then(|| drift.last().map(|d| d.1).unwrap_or(0.0)),
                drift,
            });
        }
    }
    check_divergence(cells.iter().filter(|c| c.diverged).count(), cells.len())?;
    let medians = width_medians(&cfg.widths, &cells, |c| c.width, |c| c.terminal_drift);
    Ok(StabilityReport {
        config: cfg.clone(),
        eta0,
        a_max: cfg.layer_rates().max(),
        slope: medians_slope(&medians),
        medians,
        cells,
    })
}

/// Predictions of the linearized network on the training and probe sets.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedTrace {
    /// `f^lin_k(X)` for `k = 0..=steps`.
    pub train: Vec<DVector<f64>>,
    /// `f^lin_k(Z)` for `k = 0..=steps`.
    pub probe: Vec<DVector<f64>>,
}

/// Iterates the linearization of `m₀` under adjusted gradient descent.
///
/// Because the linear model's outputs move along the frozen WNTK, the
/// parameter update `θ_{k+1} = θ_k − η (a ⊙ J₀ᵀ)(f^lin_k(X) − Y)` is carried
/// out in function space as `f_{k+1}(·) = f_k(·) − η A₀(·, X)(f_k(X) − Y)`.
pub fn linearized_iterate(
    m0: &Mlp,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    rates: &PerParameterRates,
    steps: usize,
    probes: &DMatrix<f64>,
) -> Result<LinearizedTrace> {
    if y.len() != x.nrows() {
        return Err(WntkError::ShapeMismatch(format!("{} targets for {} samples", y.len(), x.nrows())));
    }
    let a_xx = m0.wntk(x, x, &rates.layer_rates)?;
    let a_zx = m0.wntk(probes, x, &rates.layer_rates)?;
    let eta = rates.base_rate;
    if steps > 0 && eta * max_eigenvalue(&a_xx)? >= 2.0 {
        return Err(WntkError::NumericalDivergence { step: 0 });
    }
    let mut fx = m0.forward(x)?;
    let mut fz = m0.forward(probes)?;
    let mut train = Vec::with_capacity(steps + 1);
    let mut probe = Vec::with_capacity(steps + 1);
    train.push(fx.clone());
    probe.push(fz.clone());
    for _ in 0..steps {
        let r = &fx - y;
        fx -= (&a_xx * &r) * eta;
        fz -= (&a_zx * &r) * eta;
        train.push(fx.clone());
        probe.push(fz.clone());
    }
    Ok(LinearizedTrace { train, probe })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazyCell {
    pub width: usize,
    pub seed: u64,
    pub eta: f64,
    pub diverged: bool,
    /// `(step, sup-norm gap on training points, sup-norm gap on probes)`.
    pub gaps: Vec<(usize, f64, f64)>,
    pub terminal_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LazyReport {
    pub config: SweepConfig,
    pub eta0: f64,
    pub cells: Vec<LazyCell>,
    pub medians: Vec<WidthMedian>,
    pub slope: Option<f64>,
    pub strictly_decreasing: bool,
}

/// Runs the network and its linearization from the same initialization and
/// records their sup-norm gap on training and probe points.
pub fn verify_lazy(cfg: &SweepConfig) -> Result<LazyReport> {
    cfg.validate()?;
    let (x, y, z) = cfg.data.generate();
    let eta0 = cfg.resolve_eta0(&x)?;
    let mut cells = Vec::new();
    for &width in &cfg.widths {
        let rates = cfg.rates_for(width, eta0)?;
        for seed in cfg.cell_seeds() {
            let net0 = cfg.mlp_spec(width).init(seed)?;
            let lin = match linearized_iterate(&net0, &x, &y, &rates, cfg.steps, &z) {
                Ok(l) => l,
                Err(WntkError::NumericalDivergence { .. }) => {
                    cells.push(LazyCell {
                        width,
                        seed,
                        eta: rates.base_rate,
                        diverged: true,
                        gaps: Vec::new(),
                        terminal_gap: None,
                    });
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut net = net0;
            let mut gaps = vec![(0, 0.0, 0.0)];
            let mut diverged = false;
            for step in 1..=cfg.steps {
                if net.step_in_place(&x, &y, &rates).is_err() {
                    diverged = true;
                    break;
                }
                if step % cfg.checkpoint_every == 0 || step == cfg.steps {
                    let gt = sup_norm(&net.forward(&x)?, &lin.train[step]);
                    let gz = sup_norm(&net.forward(&z)?, &lin.probe[step]);
                    if !(gt.is_finite() && gz.is_finite()) {
                        diverged = true;
                        break;
                    }
                    gaps.push((step, gt, gz));
                }
            }
            cells.push(LazyCell {
                width,
                seed,
                eta: rates.base_rate,
                diverged,
                terminal_gap: (!diverged).then(|| gaps.last().map(|g| g.1.max(g.2)).unwrap_or(0.0)),
                gaps,
            });
        }
    }
    check_divergence(cells.iter().filter(|c| c.diverged).count(), cells.len())?;
    let medians = width_medians(&cfg.widths, &cells, |c| c.width, |c| c.terminal_gap);
    let strictly_decreasing = medians.windows(2).all(|w| match (w[0].median, w[1].median) {
        (Some(a), Some(b)) => b < a,
        _ => false,
    });
    Ok(LazyReport {
        config: cfg.clone(),
        eta0,
        slope: medians_slope(&medians),
        strictly_decreasing,
        medians,
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceOptions {
    /// Ridge values relative to the mean diagonal of `A₀`, tried in order.
    pub ridge_schedule: Vec<f64>,
    pub target_loss: f64,
    /// Times the step may be halved and training restarted after divergence.
    pub max_halvings: usize,
}

impl Default for EquivalenceOptions {
    fn default() -> Self {
        Self {
            ridge_schedule: vec![1e-4, 1e-6, 1e-8, 0.0],
            target_loss: 1e-8,
            max_halvings: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeGap {
    pub ridge: f64,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCell {
    pub width: usize,
    pub seed: u64,
    pub eta: f64,
    pub halvings: usize,
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub converged: bool,
    pub gaps: Vec<RidgeGap>,
    /// Gap at the smallest ridge that solved.
    pub gap: Option<f64>,
    /// Sup-norm difference between the corrected and uncorrected kernel
    /// predictions at that ridge.
    pub correction_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub config: SweepConfig,
    pub options: EquivalenceOptions,
    pub eta0: f64,
    pub cells: Vec<EquivalenceCell>,
    pub medians: Vec<WidthMedian>,
    pub nonincreasing: bool,
}

/// Trains each cell to `target_loss` (or the step cap) and compares the
/// network's probe outputs with initial-output-corrected kernel regression on
/// the initial empirical WNTK.
pub fn verify_equivalence(cfg: &SweepConfig, opts: &EquivalenceOptions) -> Result<EquivalenceReport> {
    cfg.validate()?;
    if opts.ridge_schedule.is_empty() || opts.ridge_schedule.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(WntkError::InvalidArgument("ridge schedule must be nonempty and nonnegative".into()));
    }
    let (x, y, z) = cfg.data.generate();
    let ymat = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let eta0 = cfg.resolve_eta0(&x)?;
    let mut cells = Vec::new();
    for &width in &cfg.widths {
        let base = cfg.rates_for(width, eta0)?;
        for seed in cfg.cell_seeds() {
            let net0 = cfg.mlp_spec(width).init(seed)?;
            let a_xx = cfg.kernel(&net0, &x, &x)?;
            let a_zx = cfg.kernel(&net0, &z, &x)?;
            let f0x = net0.forward(&x)?;
            let f0z = net0.forward(&z)?;
            let initial_loss = 0.5 * (&f0x - &y).norm_squared();

            let mut trained = None;
            let mut halvings = 0;
            let mut rates = base.clone();
            loop {
                match train_adjusted_gd(&net0, &x, &y, &rates, cfg.steps.max(1), opts.target_loss) {
                    Ok((net, trace)) if trace.last().is_some_and(|l| *l <= initial_loss) => {
                        trained = Some((net, trace));
                        break;
                    }
                    Ok(_) | Err(WntkError::NumericalDivergence { .. }) => {}
                    Err(e) => return Err(e),
                }
                if halvings == opts.max_halvings {
                    break;
                }
                halvings += 1;
                rates = PerParameterRates::new(rates.layer_rates.clone(), rates.base_rate * 0.5)?;
            }

            let Some((net, trace)) = trained else {
                cells.push(EquivalenceCell {
                    width,
                    seed,
                    eta: rates.base_rate,
                    halvings,
                    steps: 0,
                    final_loss: None,
                    converged: false,
                    gaps: Vec::new(),
                    gap: None,
                    correction_size: None,
                });
                continue;
            };
            let final_loss = *trace.last().expect("nonempty trace");
            let nn = net.forward(&z)?;
            let scale = a_xx.diagonal().mean();
            let mut gaps = Vec::new();
            let mut best = None;
            for &rel in &opts.ridge_schedule {
                let fitted = fit_krr(&a_xx, &ymat, rel * scale)
                    .and_then(|r| r.with_initial_outputs(DMatrix::from_column_slice(f0x.len(), 1, f0x.as_slice())));
                let gap = match fitted {
                    Ok(reg) => {
                        let f0 = DMatrix::from_column_slice(f0z.len(), 1, f0z.as_slice());
                        let corrected = reg.predict_with_initial_correction(&a_zx, &f0)?.scores.column(0).into_owned();
                        let plain = reg.predict(&a_zx)?.scores.column(0).into_owned();
                        let g = sup_norm(&corrected, &nn);
                        best = Some((g, sup_norm(&corrected, &plain)));
                        Some(g)
                    }
                    Err(WntkError::SingularKernel { .. }) => None,
                    Err(e) => return Err(e),
                };
                gaps.push(RidgeGap { ridge: rel * scale, gap });
            }
            cells.push(EquivalenceCell {
                width,
                seed,
                eta: rates.base_rate,
                halvings,
                steps: trace.len() - 1,
                final_loss: Some(final_loss),
                converged: final_loss <= opts.target_loss,
                gaps,
                gap: best.map(|b| b.0),
                correction_size: best.map(|b| b.1),
            });
        }
    }
    let medians = width_medians(&cfg.widths, &cells, |c| c.width, |c| c.gap);
    let nonincreasing = medians.windows(2).all(|w| match (w[0].median, w[1].median) {
        (Some(a), Some(b)) => b <= a,
        _ => false,
    });
    Ok(EquivalenceReport {
        config: cfg.clone(),
        options: opts.clone(),
        eta0,
        cells,
        medians,
        nonincreasing,
    })
}

/// Perturbation directions for the Lipschitz probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeDirection {
    /// Isotropic Gaussian directions in parameter space.
    Gaussian,
    /// `J(θ₀)ᵀ u` for Gaussian `u ∈ ℝⁿ`, the span gradient descent moves in.
    Gradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    pub widths: Vec<usize>,
    pub depth: usize,
    pub parameterization: Parameterization,
    pub activation: ActivationKind,
    /// Ball radius `C`; perturbations have norm at most `C / √d`.
    pub radius: f64,
    pub seeds: usize,
    pub perturbations: usize,
    pub directions: ProbeDirection,
    pub data: SyntheticSpec,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        Self {
            widths: vec![128, 512, 2048],
            depth: 3,
            parameterization: Parameterization::Standard,
            activation: ActivationKind::Tanh,
            radius: 1.0,
            seeds: 3,
            perturbations: 4,
            directions: ProbeDirection::Gradient,
            data: SyntheticSpec {
                n: 16,
                probes: 0,
                input_dim: 8,
                seed: 7,
            },
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub config: LipschitzConfig,
    /// Per width, the largest `d^{-1/2} ‖J(θ) − J(θ′)‖_F / ‖θ − θ′‖₂` seen.
    pub max_ratio: Vec<(usize, f64)>,
    /// Largest over smallest per-width maximum.
    pub spread: Option<f64>,
}

/// `d^{-1/2} ‖J(θ) − J(θ′)‖_F / ‖θ − θ′‖₂`, defined as 0 when `θ = θ′`.
pub fn lipschitz_ratio(a: &Mlp, b: &Mlp, x: &DMatrix<f64>, width: usize) -> Result<f64> {
    let dist = a.parameter_distance(b);
    if dist == 0.0 {
        return Ok(0.0);
    }
    Ok(a.jacobian_distance(b, x)? / dist / (width as f64).sqrt())
}

/// Samples random perturbations inside `B(θ₀, C d^{-1/2})` and records the
/// normalized Jacobian Lipschitz ratio.
pub fn jacobian_lipschitz_probe(cfg: &LipschitzConfig) -> Result<LipschitzReport> {
    if cfg.widths.is_empty() || cfg.seeds == 0 || cfg.perturbations == 0 || cfg.radius.is_nan() || cfg.radius <= 0.0 {
        return Err(WntkError::InvalidArgument("probe needs widths, seeds, perturbations and a positive radius".into()));
    }
    let (x, _, _) = cfg.data.generate();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds: Vec<u64> = (0..cfg.seeds).map(|_| rng.random()).collect();
    let mut max_ratio = Vec::new();
    for &width in &cfg.widths {
        let spec = MlpSpec::uniform(cfg.data.input_dim, width, cfg.depth, cfg.parameterization, cfg.activation, 1.0);
        let mut worst: f64 = 0.0;
        for &seed in &seeds {
            let net = spec.init(seed)?;
            let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 0x5851_f42d_4c95_7f2d);
            for _ in 0..cfg.perturbations {
                let mut dir: Vec<DMatrix<f64>> = match cfg.directions {
                    ProbeDirection::Gaussian => net
                        .weights()
                        .iter()
                        .map(|w| DMatrix::from_fn(w.nrows(), w.ncols(), |_, _| StandardNormal.sample(&mut prng)))
                        .collect(),
                    ProbeDirection::Gradient => {
                        let u = DVector::from_fn(x.nrows(), |_, _| StandardNormal.sample(&mut prng));
                        let f = net.forward(&x)?;
                        net.loss_and_gradients(&x, &(f - u))?.1
                    }
                };
                let norm = dir.iter().map(|d| d.norm_squared()).sum::<f64>().sqrt();
                let u: f64 = 1.0 - prng.random::<f64>();
                let scale = cfg.radius * u / (width as f64).sqrt() / norm;
                for d in &mut dir {
                    *d *= scale;
                }
                let moved = net.perturbed(&dir, 1.0)?;
                worst = worst.max(lipschitz_ratio(&net, &moved, &x, width)?);
            }
        }
        max_ratio.push((width, worst));
    }
    let lo = max_ratio.iter().map(|m| m.1).fold(f64::INFINITY, f64::min);
    let hi = max_ratio.iter().map(|m| m.1).fold(0.0, f64::max);
    Ok(LipschitzReport {
        config: cfg.clone(),
        spread: (lo > 0.0).then(|| hi / lo),
        max_ratio,
    })
}
