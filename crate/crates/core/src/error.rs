use thiserror::Error;

/// Errors produced by kernel construction, fitting and the training harnesses.
#[derive(Debug, Error)]
pub enum WntkError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A self-covariance needed to normalize λ vanished.
    #[error("input row {row} has zero self-covariance at layer {layer}")]
    ZeroNormInput { row: usize, layer: usize },

    #[error("kernel system is singular (relative residual {residual:.3e})")]
    SingularKernel { residual: f64 },

    #[error("kernel is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NonPositiveDefinite { min_eigenvalue: f64 },

    #[error("training diverged at step {step}")]
    NumericalDivergence { step: usize },

    #[error("regressor carries no initial outputs")]
    MissingInitialOutputs,

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("malformed container: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse error classes, shared by the CLI exit codes and the C ABI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Io,
}

impl WntkError {
    pub fn class(&self) -> ErrorClass {
        match self {
            WntkError::InvalidArgument(_)
            | WntkError::ShapeMismatch(_)
            | WntkError::ZeroNormInput { .. }
            | WntkError::MissingInitialOutputs
            | WntkError::EmptyTrainSplit
            | WntkError::EmptyDataset => ErrorClass::Config,
            WntkError::SingularKernel { .. }
            | WntkError::NonPositiveDefinite { .. }
            | WntkError::NumericalDivergence { .. } => ErrorClass::Numerical,
            WntkError::Parse { .. } | WntkError::Format(_) | WntkError::Io(_) => ErrorClass::Io,
        }
    }

    /// Process exit code: 2 config, 3 numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Io => 4,
        }
    }
}

impl From<csv::Error> for WntkError {
    fn from(e: csv::Error) -> Self {
        let (row, column) = e
            .position()
            .map(|p| (p.line() as usize, 0))
            .unwrap_or((0, 0));
        WntkError::Parse {
            row,
            column,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for WntkError {
    fn from(e: serde_json::Error) -> Self {
        WntkError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, WntkError>;
