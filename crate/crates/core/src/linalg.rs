//! Dense symmetric solves and spectral helpers shared by the regression,
//! weight-learning and dynamics modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Result, WntkError};

/// Kernel (Gram) matrices are plain dense `f64` matrices; rows index the
/// first sample set and columns the second.
pub type KernelMatrix = DMatrix<f64>;

/// Relative eigenvalue floor used by the eigen fallback.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Relative backward-error tolerance accepted from a solve.
pub const SOLVE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorizationKind {
    Cholesky,
    SymmetricEigen,
}

#[derive(Debug, Clone)]
enum Factor {
    Cholesky(Cholesky<f64, Dyn>),
    Eigen {
        vectors: DMatrix<f64>,
        inverse_values: DVector<f64>,
    },
}

/// A factorized symmetric system `M x = b`.
///
/// Positive definite matrices go through Cholesky. Anything else (indefinite
/// weighted kernels, rank-deficient unregularized kernels) is solved through
/// the symmetric eigendecomposition, treating eigenvalues with
/// `|e| <= EIGEN_FLOOR * max|e|` as zero.
#[derive(Debug, Clone)]
pub struct SymmetricSolver {
    matrix: DMatrix<f64>,
    factor: Factor,
}

impl SymmetricSolver {
    /// Factorizes `matrix`, falling back to the eigen route when Cholesky
    /// fails. Residual checks happen in [`SymmetricSolver::solve_checked`].
    pub fn factorize(matrix: &DMatrix<f64>) -> Result<Self> {
        check_square(matrix)?;
        match Cholesky::new(matrix.clone()) {
            Some(chol) => Ok(Self {
                matrix: matrix.clone(),
                factor: Factor::Cholesky(chol),
            }),
            None => Ok(Self::eigen(matrix)),
        }
    }

    /// Factorizes through the symmetric eigendecomposition unconditionally.
    pub fn eigen(matrix: &DMatrix<f64>) -> Self {
        let eig = SymmetricEigen::new(matrix.clone());
        let scale = eig.eigenvalues.amax();
        let floor = EIGEN_FLOOR * scale;
        let inverse_values = eig
            .eigenvalues
            .map(|e| if e.abs() <= floor { 0.0 } else { 1.0 / e });
        Self {
            matrix: matrix.clone(),
            factor: Factor::Eigen {
                vectors: eig.eigenvectors,
                inverse_values,
            },
        }
    }

    pub fn kind(&self) -> FactorizationKind {
        match self.factor {
            Factor::Cholesky(_) => FactorizationKind::Cholesky,
            Factor::Eigen { .. } => FactorizationKind::SymmetricEigen,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.factor {
            Factor::Cholesky(chol) => chol.solve(rhs),
            Factor::Eigen {
                vectors,
                inverse_values,
            } => {
                let mut projected = vectors.tr_mul(rhs);
                for (mut row, inv) in projected.row_iter_mut().zip(inverse_values.iter()) {
                    row *= *inv;
                }
                vectors * projected
            }
        }
    }

    /// Relative backward error `‖M x − b‖ / (‖M‖‖x‖ + ‖b‖)` of a candidate solution.
    pub fn relative_residual(&self, solution: &DMatrix<f64>, rhs: &DMatrix<f64>) -> f64 {
        let residual = (&self.matrix * solution - rhs).norm();
        let scale = self.matrix.norm() * solution.norm() + rhs.norm();
        if scale == 0.0 {
            0.0
        } else {
            residual / scale
        }
    }

    /// Factorizes and solves, retrying through the eigen route when the
    /// Cholesky solution fails the residual check.
    pub fn solve_checked(matrix: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<(Self, DMatrix<f64>)> {
        if rhs.nrows() != matrix.nrows() {
            return Err(WntkError::ShapeMismatch(format!(
                "right-hand side has {} rows, system has {}",
                rhs.nrows(),
                matrix.nrows()
            )));
        }
        let first = Self::factorize(matrix)?;
        let x = first.solve(rhs);
        let res = first.relative_residual(&x, rhs);
        if res.is_finite() && res <= SOLVE_TOLERANCE {
            return Ok((first, x));
        }
        if first.kind() == FactorizationKind::SymmetricEigen {
            return Err(WntkError::SingularKernel { residual: res });
        }
        let fallback = Self::eigen(matrix);
        let x = fallback.solve(rhs);
        let res = fallback.relative_residual(&x, rhs);
        if res.is_finite() && res <= SOLVE_TOLERANCE {
            Ok((fallback, x))
        } else {
            Err(WntkError::SingularKernel { residual: res })
        }
    }
}

fn check_square(m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(WntkError::ShapeMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_square(m)?;
    let mut values: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn extreme_eigenvalues(m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let values = symmetric_eigenvalues(m)?;
    match (values.first(), values.last()) {
        (Some(lo), Some(hi)) => Ok((*lo, *hi)),
        _ => Err(WntkError::InvalidArgument("empty matrix".into())),
    }
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Rows of `m` selected by `rows` and columns by `cols`, in the given order.
pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_path_for_spd() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (solver, x) = SymmetricSolver::solve_checked(&a, &b).unwrap();
        assert_eq!(solver.kind(), FactorizationKind::Cholesky);
        assert!((&a * &x - &b).norm() < 1e-14);
    }

    #[test]
    fn indefinite_goes_through_eigen() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -2.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let (solver, x) = SymmetricSolver::solve_checked(&a, &b).unwrap();
        assert_eq!(solver.kind(), FactorizationKind::SymmetricEigen);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn inconsistent_singular_system_is_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        assert!(matches!(
            SymmetricSolver::solve_checked(&a, &b),
            Err(WntkError::SingularKernel { .. })
        ));
    }

    #[test]
    fn consistent_singular_system_uses_pseudo_inverse() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[2.0, 2.0]);
        let (_, x) = SymmetricSolver::solve_checked(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extreme_eigs_of_diag() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        assert_eq!(extreme_eigenvalues(&a).unwrap(), (1.0, 3.0));
    }
}
