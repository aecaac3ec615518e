//! Symmetric-matrix helpers shared by the estimators: eigendecompositions,
//! PSD checks with eigenvalue clamping, positive-definite solves and matrix
//! square roots.

use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue tolerance for positive-semidefiniteness checks.
///
/// Eigenvalues of a candidate PSD matrix are allowed down to
/// `-PSD_TOL * trace`; values in `[-tol, 0)` are clamped to zero, anything
/// more negative is reported as a violation.
pub const PSD_TOL: f64 = 1e-10;

/// Relative tolerance below which a positive-definite solve is refused
/// (smallest eigenvalue measured against the largest diagonal entry).
pub const PD_TOL: f64 = 1e-10;

/// Reciprocal-condition-number threshold below which a general square
/// system is declared singular.
pub const RCOND_TOL: f64 = 1e-12;

/// Eigendecomposition of the symmetrized input, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    // nalgebra does not order eigenvalues; sort ascending for stable
    // rank/threshold logic downstream.
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vecs.set_column(dst, &eig.eigenvectors.column(src));
    }
    (vals, vecs)
}

/// Smallest eigenvalue of the symmetrized input.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).0[0]
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Absolute eigenvalue floor used when clamping an (n x n) candidate PSD
/// matrix: `PSD_TOL * max(trace, 0)` with a tiny additive cushion so exact
/// zero matrices tolerate representation noise.
fn psd_floor(m: &DMatrix<f64>) -> f64 {
    PSD_TOL * m.trace().max(0.0) + 1e-14
}

/// Clamps slightly negative eigenvalues to zero; returns `Err` with the
/// offending eigenvalue when the input is negative beyond tolerance.
pub fn psd_project(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let tol = psd_floor(m);
    let (vals, vecs) = sym_eigen(m);
    let min = vals[0];
    if min < -tol {
        return Err(min);
    }
    if min >= 0.0 {
        return Ok((m + m.transpose()) * 0.5);
    }
    let clamped = vals.map(|v| v.max(0.0));
    Ok(&vecs * DMatrix::from_diagonal(&clamped) * vecs.transpose())
}

/// True when the symmetrized input is PSD within the clamping tolerance.
pub fn is_psd(m: &DMatrix<f64>) -> bool {
    min_eigenvalue(m) >= -psd_floor(m)
}

/// True when `a - b` is PSD within tolerance scaled by the traces involved.
pub fn psd_dominates(a: &DMatrix<f64>, b: &DMatrix<f64>) -> bool {
    let diff = a - b;
    let scale = PSD_TOL * (a.trace().abs() + b.trace().abs()) + 1e-14;
    min_eigenvalue(&diff) >= -scale
}

/// Solution of a symmetric positive-definite system together with its
/// reciprocal condition number.
pub struct SpdSolution {
    pub x: DVector<f64>,
    /// `lambda_min / lambda_max` of the system matrix, in `[0, 1]`.
    pub rcond: f64,
}

/// Error from [`spd_solve`]: the system's smallest eigenvalue, which fell
/// at or below the positive-definiteness tolerance.
#[derive(Debug, Clone, Copy)]
pub struct NotPositiveDefinite {
    pub min_eigenvalue: f64,
}

/// Solves `m x = rhs` for symmetric positive-definite `m`.
///
/// Refuses (rather than silently regularizing) when the smallest eigenvalue
/// is at or below `PD_TOL * max_diag`; near-singular systems signal that the
/// requested estimator is outside its valid regime.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<SpdSolution, NotPositiveDefinite> {
    let (vals, vecs) = sym_eigen(m);
    let n = m.nrows();
    let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(m[(i, i)].abs()));
    let tol = PD_TOL * max_diag.max(1e-300);
    let min = vals[0];
    if min <= tol {
        return Err(NotPositiveDefinite {
            min_eigenvalue: min,
        });
    }
    let max = vals[n - 1];
    let coeffs = vecs.transpose() * rhs;
    let scaled = DVector::from_iterator(n, coeffs.iter().zip(vals.iter()).map(|(c, v)| c / v));
    Ok(SpdSolution {
        x: &vecs * scaled,
        rcond: (min / max).clamp(0.0, 1.0),
    })
}

/// Symmetric PSD square root via eigendecomposition, clamping eigenvalues in
/// `[-tol, 0)` to zero. `Err` carries the eigenvalue when the input is
/// negative beyond tolerance.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let tol = psd_floor(m);
    let (vals, vecs) = sym_eigen(m);
    if vals[0] < -tol {
        return Err(vals[0]);
    }
    let roots = vals.map(|v| v.max(0.0).sqrt());
    Ok(&vecs * DMatrix::from_diagonal(&roots) * vecs.transpose())
}

/// Symmetric inverse square root; requires the input to be positive definite
/// relative to `PD_TOL * max_diag`. `Err` carries the smallest eigenvalue.
pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let (vals, vecs) = sym_eigen(m);
    let n = m.nrows();
    let max_diag = (0..n).fold(0.0f64, |acc, i| acc.max(m[(i, i)].abs()));
    if vals[0] <= PD_TOL * max_diag.max(1e-300) {
        return Err(vals[0]);
    }
    let roots = vals.map(|v| 1.0 / v.sqrt());
    Ok(&vecs * DMatrix::from_diagonal(&roots) * vecs.transpose())
}

/// Reciprocal condition number of a general square matrix (smallest over
/// largest singular value), in `[0, 1]`.
pub fn rcond(m: &DMatrix<f64>) -> f64 {
    let svd = m.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if max == 0.0 {
        0.0
    } else {
        (min / max).clamp(0.0, 1.0)
    }
}

/// Numerical rank of a symmetric matrix: eigenvalues above
/// `PSD_TOL * max(|lambda|)` in magnitude.
pub fn sym_rank(m: &DMatrix<f64>) -> usize {
    let (vals, _) = sym_eigen(m);
    let max = vals.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max == 0.0 {
        return 0;
    }
    vals.iter().filter(|v| v.abs() > PSD_TOL * max).count()
}
