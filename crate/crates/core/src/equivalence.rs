//! Dense, oracle-scale check that the projection-corrected subspace step is
//! the solution of a regularized problem with `R = D (P - I)`.
//!
//! Everything here builds explicit N x N matrices and is meant for N in the
//! low hundreds at most.

use nalgebra::{DMatrix, DVector};

use crate::data_terms::QuadraticModel;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{max_abs, Cholesky};
use crate::solver::{project, solve_projected, Damping, SubspaceBasis};

pub const MAX_DENSE_N: usize = 256;

/// Eigenvalues of `A^T A` below this fraction of the largest are treated as zero.
const PINV_TOLERANCE: f64 = 1e-12;

/// Dense-system residual above which an instance counts as inconsistent.
const CONSISTENCY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DenseRegularizedSystem {
    pub d_mat: DMatrix<f64>,
    pub r_mat: DMatrix<f64>,
    pub d_vec: DVector<f64>,
    pub x: DVector<f64>,
}

pub fn basis_matrix(basis: &SubspaceBasis) -> DMatrix<f64> {
    DMatrix::from_column_slice(basis.n(), basis.k(), basis.data())
}

/// Explicit `P = V (V^T V)^{-1} V^T`.
pub fn projection_matrix(basis: &SubspaceBasis) -> Result<DMatrix<f64>> {
    let v = basis_matrix(basis);
    let gram_inv = (v.transpose() * &v)
        .try_inverse()
        .ok_or_else(|| Error::RankDeficientBasis("Gram matrix is singular".into()))?;
    Ok(&v * gram_inv * v.transpose())
}

/// Builds `d` so that `dx = V c0` solves `(D + R) dx = -(d + R x)` exactly.
pub fn build_consistent_instance(
    basis: &SubspaceBasis,
    h: &[f64],
    c0: &[f64],
    x: &[f64],
) -> Result<DenseRegularizedSystem> {
    let n = basis.n();
    if n > MAX_DENSE_N {
        return Err(Error::invalid(format!("dense oracle limited to N <= {MAX_DENSE_N}")));
    }
    if h.len() != n || x.len() != n || c0.len() != basis.k() {
        return Err(Error::invalid("instance dimensions disagree with the basis"));
    }
    if h.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::invalid("diagonal D must be positive"));
    }
    let d_mat = DMatrix::from_diagonal(&DVector::from_column_slice(h));
    let p = projection_matrix(basis)?;
    let r_mat = &d_mat * (p - DMatrix::identity(n, n));
    let (_, r) = project(basis, x)?;
    let vc0 = basis.apply(c0);
    let d_vec = DVector::from_iterator(n, (0..n).map(|i| -h[i] * r[i] - h[i] * vc0[i]));
    Ok(DenseRegularizedSystem {
        d_mat,
        r_mat,
        d_vec,
        x: DVector::from_column_slice(x),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropositionReport {
    /// Coefficients of the least-norm dense solution.
    pub c_dense: Vec<f64>,
    /// Coefficients from the projection-corrected subspace formula.
    pub c_sub: Vec<f64>,
    pub max_abs_diff: f64,
    /// `|(D + R) dx + d + R x|_inf` of the dense solution.
    pub dense_residual: f64,
}

pub fn verify_proposition(sys: &DenseRegularizedSystem, basis: &SubspaceBasis) -> Result<PropositionReport> {
    let n = basis.n();
    if sys.x.len() != n || sys.d_mat.nrows() != n {
        return Err(Error::invalid("system and basis dimensions disagree"));
    }
    let a = &sys.d_mat + &sys.r_mat;
    let rhs = -(&sys.d_vec + &sys.r_mat * &sys.x);
    let dx = least_norm_solve(&a, &rhs);
    let residual = (&a * &dx - &rhs).amax();
    let scale = rhs.amax().max(1.0);
    if residual > CONSISTENCY_TOLERANCE * scale {
        return Err(Error::InconsistentInstance { residual });
    }

    // c_dense = (V^T V)^{-1} V^T dx
    let gram = Cholesky::factor(&basis.gram())
        .map_err(|_| Error::RankDeficientBasis("Gram matrix is singular".into()))?;
    let c_dense = gram.solve(&basis.transpose_apply(dx.as_slice()));

    let h: Vec<f64> = sys.d_mat.diagonal().iter().copied().collect();
    let q = QuadraticModel::new(
        Grid::from_vec(n, 1, 1, sys.d_vec.as_slice().to_vec())?,
        Grid::from_vec(n, 1, 1, h)?,
        0.0,
    )?;
    let (_, report) = solve_projected(&q, basis, sys.x.as_slice(), Damping::Absolute(0.0))?;
    let c_sub = report.coefficients;
    let diff: Vec<f64> = c_dense.iter().zip(&c_sub).map(|(a, b)| a - b).collect();
    Ok(PropositionReport {
        max_abs_diff: max_abs(&diff),
        c_dense,
        c_sub,
        dense_residual: residual,
    })
}

/// Minimum-norm least-squares solution of `a z = b`, via the symmetric
/// eigendecomposition of `a^T a`.
fn least_norm_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let eig = (a.transpose() * a).symmetric_eigen();
    let atb = a.transpose() * b;
    let cutoff = PINV_TOLERANCE * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let mut z = DVector::zeros(a.ncols());
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > cutoff {
            let v = eig.eigenvectors.column(i);
            z += v * (v.dot(&atb) / lambda);
        }
    }
    z
}

/// `V^T R x` without forming `R`: `(V^T D V)(V^T V)^{-1} V^T x - V^T D x`.
pub fn fast_vtrx(basis: &SubspaceBasis, h: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if h.len() != basis.n() || x.len() != basis.n() {
        return Err(Error::invalid("vector lengths disagree with the basis"));
    }
    let gram = Cholesky::factor(&basis.gram())
        .map_err(|_| Error::RankDeficientBasis("Gram matrix is singular".into()))?;
    let coords = gram.solve(&basis.transpose_apply(x));
    let first = basis.weighted_gram(h).mul_vec(&coords);
    let dx: Vec<f64> = h.iter().zip(x).map(|(a, b)| a * b).collect();
    let second = basis.transpose_apply(&dx);
    Ok(first.iter().zip(&second).map(|(a, b)| a - b).collect())
}
