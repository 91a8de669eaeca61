//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{EioError, Result};

/// Condition-number ceiling for unregularized Gram systems.
pub const MAX_CONDITION: f64 = 1e12;

/// Returns `(m + m^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// nonincreasing order; columns of the returned matrix are the matching
/// eigenvectors.
pub fn sym_eigen_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(d, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    sym_eigen_sorted(m).0
}

/// Largest absolute eigenvalue of a symmetric matrix.
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Spectral norm of an arbitrary matrix.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let gram = m.transpose() * m;
    sym_op_norm(&gram).max(0.0).sqrt()
}

/// `v^T m v`.
pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    v.dot(&(m * v))
}

/// Solves `m x = rhs` for symmetric positive-definite `m` by Cholesky.
///
/// When `check_condition` is set, `m` is additionally required to have a
/// condition number below [`MAX_CONDITION`]; this is used for unregularized
/// Gram systems where positive-definiteness alone is not meaningful.
pub fn solve_spd(
    m: DMatrix<f64>,
    rhs: &DVector<f64>,
    check_condition: bool,
    context: &'static str,
) -> Result<DVector<f64>> {
    let m = symmetrize(&m);
    if check_condition {
        let ev = sym_eigenvalues(&m);
        let max = ev[0];
        let min = ev[ev.len() - 1];
        if !(min > 0.0) || max / min >= MAX_CONDITION {
            return Err(EioError::SingularSystem { context });
        }
    }
    let chol = m
        .cholesky()
        .ok_or(EioError::SingularSystem { context })?;
    let x = chol.solve(rhs);
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(EioError::SingularSystem { context })
    }
}

/// Symmetric positive semi-definite square root via eigen-decomposition.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen_sorted(m);
    let roots = values.map(|v| v.max(0.0).sqrt());
    &vectors * DMatrix::from_diagonal(&roots) * vectors.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sorted_eigen_is_descending_and_reconstructs() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 1.0]);
        let (vals, vecs) = sym_eigen_sorted(&m);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let back = &vecs * DMatrix::from_diagonal(&vals) * vecs.transpose();
        assert_relative_eq!(back, m, epsilon = 1e-12);
    }

    #[test]
    fn spd_solve_matches_known_solution() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let rhs = &m * &x;
        let got = solve_spd(m, &rhs, true, "test").unwrap();
        assert_relative_eq!(got, x, epsilon = 1e-14);
    }

    #[test]
    fn singular_system_rejected_under_condition_check() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let rhs = DVector::from_vec(vec![1.0, 1.0]);
        assert!(matches!(
            solve_spd(m, &rhs, true, "test"),
            Err(EioError::SingularSystem { .. })
        ));
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = psd_sqrt(&m);
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
        assert_relative_eq!(op_norm(&m), sym_op_norm(&m), epsilon = 1e-12);
    }
}
