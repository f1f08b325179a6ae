//! k-fold evaluation of analytic NTK/WNTK ridge classifiers.
//!
//! Each fold standardizes with statistics from its own training rows,
//! computes the analytic layer kernels, fits on the training rows and
//! scores the held-out rows.

use serde::{Deserialize, Serialize};

use crate::activation::ActivationKind;
use crate::analytic::{analytic_layer_kernels, NetworkShape};
use crate::data::{kfold_split, standardize_fit_transform, Dataset};
use crate::error::{Result, WntkError};
use crate::layers::{LayerKernelStack, LayerWeights};
use crate::linalg::FactorizationKind;
use crate::regression::{fit_krr, score_accuracy, LabelEncoding, ANALYTIC_RIDGE};
use crate::weights::{algorithm1_update_loop, Termination, WeightLearnerConfig, WeightTrace};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_DEPTH: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub depth: usize,
    pub activation: ActivationKind,
    pub ridge: f64,
    pub folds: usize,
    pub seed: u64,
    /// Layer weights; `None` evaluates the plain NTK.
    pub weights: Option<LayerWeights>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            depth: DEFAULT_DEPTH,
            activation: ActivationKind::Relu,
            ridge: ANALYTIC_RIDGE,
            folds: DEFAULT_FOLDS,
            seed: 0,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub factorization: FactorizationKind,
    pub training_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub folds: Vec<FoldAccuracy>,
    pub mean_accuracy: f64,
    /// Population standard deviation over folds.
    pub std_accuracy: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

struct Fold {
    train: Vec<usize>,
    test: Vec<usize>,
    stack: LayerKernelStack,
}

fn folds(ds: &Dataset, cfg: &EvalConfig) -> Result<Vec<Fold>> {
    if ds.class_count() < 2 {
        return Err(WntkError::InvalidArgument("classification needs at least two classes".into()));
    }
    let shape = NetworkShape::new(ds.feature_count(), cfg.depth, cfg.activation)?;
    if let Some(w) = &cfg.weights {
        crate::layers::check_depth(cfg.depth, w)?;
    }
    let plan = kfold_split(ds.len(), cfg.folds, cfg.seed)?;
    (0..plan.len())
        .map(|k| {
            let train = plan.train_indices(k);
            let test = plan.test_indices(k).to_vec();
            let (_, z) = standardize_fit_transform(&ds.x, &train)?;
            let stack = analytic_layer_kernels(&z, &z, &shape)?;
            Ok(Fold { train, test, stack })
        })
        .collect()
}

fn fold_accuracy(
    fold: &Fold,
    ds: &Dataset,
    encoding: LabelEncoding,
    weights: &LayerWeights,
    ridge: f64,
) -> Result<(f64, FactorizationKind, f64)> {
    let y_train: Vec<usize> = fold.train.iter().map(|&i| ds.y[i]).collect();
    let y_test: Vec<usize> = fold.test.iter().map(|&i| ds.y[i]).collect();
    let targets = encoding.encode(&y_train)?;
    let a = fold.stack.select(&fold.train, &fold.train).weighted_sum(weights)?;
    let reg = fit_krr(&a, &targets, ridge)?;
    let cross = fold.stack.select(&fold.test, &fold.train).weighted_sum(weights)?;
    let acc = score_accuracy(&reg.predict(&cross)?, &y_test)?;
    Ok((acc, reg.factorization(), reg.training_residual(&targets)))
}

/// Cross-validated accuracy of the analytic NTK (or fixed-weight WNTK).
pub fn cross_validate(ds: &Dataset, cfg: &EvalConfig) -> Result<CvReport> {
    let encoding = LabelEncoding::for_classes(ds.class_count())?;
    let weights = cfg.weights.clone().unwrap_or_else(|| LayerWeights::ones(cfg.depth));
    let results = folds(ds, cfg)?
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let (accuracy, factorization, training_residual) = fold_accuracy(f, ds, encoding, &weights, cfg.ridge)?;
            Ok(FoldAccuracy {
                fold: k,
                train_size: f.train.len(),
                test_size: f.test.len(),
                accuracy,
                factorization,
                training_residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean_accuracy, std_accuracy) = mean_std(&results.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    Ok(CvReport {
        folds: results,
        mean_accuracy,
        std_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnFold {
    pub fold: usize,
    pub ntk_accuracy: f64,
    pub wntk_accuracy: f64,
    pub learned_weights: LayerWeights,
    pub termination: Termination,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnReport {
    pub folds: Vec<LearnFold>,
    pub ntk_mean: f64,
    pub wntk_mean: f64,
    /// `wntk_mean − ntk_mean`.
    pub delta: f64,
}

/// Per fold: learns layer weights on the training rows, then compares the
/// held-out accuracy of the NTK with that of the learned WNTK. The learner
/// seed is offset by the fold index. Returns the report and each fold's trace.
pub fn cross_validate_learned(
    ds: &Dataset,
    cfg: &EvalConfig,
    learner: &WeightLearnerConfig,
) -> Result<(LearnReport, Vec<WeightTrace>)> {
    let encoding = LabelEncoding::for_classes(ds.class_count())?;
    let ones = LayerWeights::ones(cfg.depth);
    let mut out = Vec::new();
    let mut traces = Vec::new();
    for (k, f) in folds(ds, cfg)?.iter().enumerate() {
        let y_train: Vec<usize> = f.train.iter().map(|&i| ds.y[i]).collect();
        let targets = encoding.encode(&y_train)?;
        let train_stack = f.stack.select(&f.train, &f.train);
        let mut lc = learner.clone();
        lc.ridge = cfg.ridge;
        lc.seed = learner.seed.wrapping_add(k as u64);
        let trace = algorithm1_update_loop(&train_stack, &targets, &lc)?;
        let (ntk_accuracy, _, _) = fold_accuracy(f, ds, encoding, &ones, cfg.ridge)?;
        let (wntk_accuracy, _, _) = fold_accuracy(f, ds, encoding, &trace.final_weights, cfg.ridge)?;
        out.push(LearnFold {
            fold: k,
            ntk_accuracy,
            wntk_accuracy,
            learned_weights: trace.final_weights.clone(),
            termination: trace.termination,
            iterations: trace.iterations.len(),
        });
        traces.push(trace);
    }
    let ntk_mean = out.iter().map(|f| f.ntk_accuracy).sum::<f64>() / out.len() as f64;
    let wntk_mean = out.iter().map(|f| f.wntk_accuracy).sum::<f64>() / out.len() as f64;
    Ok((
        LearnReport {
            folds: out,
            ntk_mean,
            wntk_mean,
            delta: wntk_mean - ntk_mean,
        },
        traces,
    ))
}

/// Benchmark tables shipped with the crate.
pub const BUNDLED_DATASETS: [(&str, &str); 3] = [
    ("iris", include_str!("../data/iris.csv")),
    ("wine", include_str!("../data/wine.csv")),
    ("breast_cancer", include_str!("../data/breast_cancer.csv")),
];

pub fn bundled_dataset(name: &str) -> Result<Dataset> {
    let (_, text) = BUNDLED_DATASETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| WntkError::InvalidArgument(format!("no bundled dataset named '{name}'")))?;
    crate::data::read_csv(text.as_bytes(), &Default::default(), format!("bundled:{name}"))
}
