//! Kernel ridge regression on (weighted) tangent kernels, with the
//! correction for nonzero initial network outputs.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, WntkError};
use crate::linalg::{FactorizationKind, KernelMatrix, SymmetricSolver};

/// Ridge default for analytic kernels.
pub const ANALYTIC_RIDGE: f64 = 0.1;
/// Ridge default for empirical kernels of finite networks.
pub const EMPIRICAL_RIDGE: f64 = 1.0;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Target encoding for class labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LabelEncoding {
    /// Class 0 maps to −1 and class 1 to +1.
    Binary,
    OneHot { classes: usize },
}

impl LabelEncoding {
    pub fn for_classes(classes: usize) -> Result<Self> {
        match classes {
            0 | 1 => Err(WntkError::InvalidArgument(format!("need at least two classes, got {classes}"))),
            2 => Ok(LabelEncoding::Binary),
            c => Ok(LabelEncoding::OneHot { classes: c }),
        }
    }

    pub fn columns(&self) -> usize {
        match self {
            LabelEncoding::Binary => 1,
            LabelEncoding::OneHot { classes } => *classes,
        }
    }

    pub fn encode(&self, labels: &[usize]) -> Result<DMatrix<f64>> {
        let c = match self {
            LabelEncoding::Binary => 2,
            LabelEncoding::OneHot { classes } => *classes,
        };
        if let Some(bad) = labels.iter().find(|&&y| y >= c) {
            return Err(WntkError::InvalidArgument(format!("label {bad} out of range for {c} classes")));
        }
        Ok(match self {
            LabelEncoding::Binary => {
                DMatrix::from_iterator(labels.len(), 1, labels.iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }))
            }
            LabelEncoding::OneHot { classes } => {
                DMatrix::from_fn(labels.len(), *classes, |i, j| if labels[i] == j { 1.0 } else { 0.0 })
            }
        })
    }
}

/// Decodes score rows: one column by sign (`≥ 0` is class 1), several
/// columns by argmax with the lowest index winning ties.
pub fn decode_scores(scores: &DMatrix<f64>) -> Vec<usize> {
    if scores.ncols() == 1 {
        return scores.column(0).iter().map(|&s| usize::from(s >= 0.0)).collect();
    }
    scores
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for j in 1..row.len() {
                if row[j] > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: DMatrix<f64>,
    pub labels: Vec<usize>,
}

impl Prediction {
    pub fn from_scores(scores: DMatrix<f64>) -> Self {
        let labels = decode_scores(&scores);
        Self { scores, labels }
    }
}

/// Fraction of predicted labels equal to `truth`.
pub fn score_accuracy(p: &Prediction, truth: &[usize]) -> Result<f64> {
    if p.labels.len() != truth.len() {
        return Err(WntkError::ShapeMismatch(format!(
            "{} predictions for {} labels",
            p.labels.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(WntkError::EmptyDataset);
    }
    let hits = p.labels.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

#[derive(Debug, Clone)]
struct InitialOutputs {
    train: DMatrix<f64>,
    coefficients: DMatrix<f64>,
}

/// A solved system `(A + λ I) α = Y`.
#[derive(Debug, Clone)]
pub struct KernelRegressor {
    train_kernel: KernelMatrix,
    ridge: f64,
    alpha: DMatrix<f64>,
    solver: SymmetricSolver,
    initial: Option<InitialOutputs>,
}

fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(WntkError::ShapeMismatch(format!("kernel is {}x{}, expected square", a.nrows(), a.ncols())));
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    for j in 0..a.ncols() {
        for i in (j + 1)..a.nrows() {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(WntkError::InvalidArgument(format!("kernel is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

fn regularized(a: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let mut m = a.clone();
    if ridge != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += ridge;
        }
    }
    m
}

/// Fits kernel ridge regression, falling back to a floored symmetric
/// eigendecomposition when Cholesky fails.
pub fn fit_krr(a: &KernelMatrix, y: &DMatrix<f64>, ridge: f64) -> Result<KernelRegressor> {
    check_symmetric(a)?;
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(WntkError::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    if y.nrows() != a.nrows() {
        return Err(WntkError::ShapeMismatch(format!("{} targets for a {}-sample kernel", y.nrows(), a.nrows())));
    }
    if a.nrows() == 0 {
        return Err(WntkError::EmptyTrainSplit);
    }
    let (solver, alpha) = SymmetricSolver::solve_checked(&regularized(a, ridge), y)?;
    Ok(KernelRegressor {
        train_kernel: a.clone(),
        ridge,
        alpha,
        solver,
        initial: None,
    })
}

impl KernelRegressor {
    pub fn train_kernel(&self) -> &KernelMatrix {
        &self.train_kernel
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.alpha
    }

    pub fn factorization(&self) -> FactorizationKind {
        self.solver.kind()
    }

    pub fn train_size(&self) -> usize {
        self.train_kernel.nrows()
    }

    pub fn has_initial_outputs(&self) -> bool {
        self.initial.is_some()
    }

    /// Stores `f₀(X)` and solves for its kernel coefficients.
    pub fn with_initial_outputs(mut self, f0_train: DMatrix<f64>) -> Result<Self> {
        if f0_train.shape() != self.alpha.shape() {
            return Err(WntkError::ShapeMismatch(format!(
                "initial outputs are {:?}, targets are {:?}",
                f0_train.shape(),
                self.alpha.shape()
            )));
        }
        let coefficients = self.solver.solve(&f0_train);
        self.initial = Some(InitialOutputs {
            train: f0_train,
            coefficients,
        });
        Ok(self)
    }

    pub fn initial_outputs(&self) -> Option<&DMatrix<f64>> {
        self.initial.as_ref().map(|i| &i.train)
    }

    /// `‖A α − Y‖_F` on the training set (ridge term excluded).
    pub fn training_residual(&self, y: &DMatrix<f64>) -> f64 {
        (&self.train_kernel * &self.alpha - y).norm()
    }

    fn check_cross(&self, a_cross: &DMatrix<f64>) -> Result<()> {
        if a_cross.ncols() != self.train_size() {
            return Err(WntkError::ShapeMismatch(format!(
                "cross kernel has {} columns, training set has {} samples",
                a_cross.ncols(),
                self.train_size()
            )));
        }
        Ok(())
    }

    /// Scores `A(x, X) α` for each row of the cross kernel.
    pub fn predict(&self, a_cross: &DMatrix<f64>) -> Result<Prediction> {
        self.check_cross(a_cross)?;
        Ok(Prediction::from_scores(a_cross * &self.alpha))
    }

    /// `A(x, X) α + f₀(x) − A(x, X)(A + λI)^{-1} f₀(X)`.
    pub fn predict_with_initial_correction(&self, a_cross: &DMatrix<f64>, f0_test: &DMatrix<f64>) -> Result<Prediction> {
        let initial = self.initial.as_ref().ok_or(WntkError::MissingInitialOutputs)?;
        self.check_cross(a_cross)?;
        if f0_test.shape() != (a_cross.nrows(), self.alpha.ncols()) {
            return Err(WntkError::ShapeMismatch(format!(
                "test initial outputs are {:?}, expected {:?}",
                f0_test.shape(),
                (a_cross.nrows(), self.alpha.ncols())
            )));
        }
        let base = a_cross * &self.alpha;
        let correction = f0_test - a_cross * &initial.coefficients;
        Ok(Prediction::from_scores(base + correction))
    }

    pub fn to_record(&self) -> RegressorRecord {
        RegressorRecord {
            kernel_sha256: kernel_hash(&self.train_kernel),
            ridge: self.ridge,
            factorization: self.solver.kind(),
            rows: self.alpha.nrows(),
            cols: self.alpha.ncols(),
            alpha: row_major(&self.alpha),
            initial_outputs: self.initial.as_ref().map(|i| row_major(&i.train)),
        }
    }

    /// Rebuilds a regressor from a record and the kernel it was fitted on.
    pub fn from_record(record: &RegressorRecord, train_kernel: &KernelMatrix) -> Result<Self> {
        if kernel_hash(train_kernel) != record.kernel_sha256 {
            return Err(WntkError::Format("training kernel does not match the record's hash".into()));
        }
        if record.alpha.len() != record.rows * record.cols || record.rows != train_kernel.nrows() {
            return Err(WntkError::Format("coefficient block has the wrong size".into()));
        }
        let m = regularized(train_kernel, record.ridge);
        let solver = match record.factorization {
            FactorizationKind::Cholesky => SymmetricSolver::factorize(&m)?,
            FactorizationKind::SymmetricEigen => SymmetricSolver::eigen(&m),
        };
        let reg = KernelRegressor {
            train_kernel: train_kernel.clone(),
            ridge: record.ridge,
            alpha: DMatrix::from_row_slice(record.rows, record.cols, &record.alpha),
            solver,
            initial: None,
        };
        match &record.initial_outputs {
            Some(f0) if f0.len() == record.alpha.len() => {
                reg.with_initial_outputs(DMatrix::from_row_slice(record.rows, record.cols, f0))
            }
            Some(_) => Err(WntkError::Format("initial outputs have the wrong size".into())),
            None => Ok(reg),
        }
    }
}

/// Serializable form of a fitted regressor. The training kernel itself is
/// identified by its SHA-256 digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorRecord {
    pub kernel_sha256: String,
    pub ridge: f64,
    pub factorization: FactorizationKind,
    pub rows: usize,
    pub cols: usize,
    pub alpha: Vec<f64>,
    pub initial_outputs: Option<Vec<f64>>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// SHA-256 over the dimensions and little-endian row-major entries.
pub fn kernel_hash(m: &DMatrix<f64>) -> String {
    let mut h = Sha256::new();
    h.update((m.nrows() as u64).to_le_bytes());
    h.update((m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            h.update(m[(i, j)].to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
