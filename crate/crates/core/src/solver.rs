//! Subspace-constrained minimization of a per-pixel quadratic model.
//!
//! With a basis `V` (N x K), the increment is restricted to
//! `dx = r + V c`, where `r = (P - I) x` moves the current solution onto
//! `span(V)` and `c` minimizes the quadratic model along the subspace:
//!
//! ```text
//! c = -(V^T D V + lambda I)^{-1} V^T (d + D r)
//! ```
//!
//! `D` is diagonal (scalar tasks) or 2x2 block-diagonal (flow), so every
//! product with it is a column-wise scaling and no N x N matrix is formed.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data_terms::QuadraticModel;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::{dot, norm2, Cholesky, SmallMatrix};

/// Minimum ratio of smallest to largest Gram eigenvalue for a valid basis.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Damping retries after the first Cholesky failure.
pub const MAX_DAMPING_RETRIES: usize = 5;

/// Dense N x K basis stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    n: usize,
    k: usize,
    v: Vec<f64>,
}

impl SubspaceBasis {
    /// Wraps columns as given after checking that they are linearly independent.
    pub fn from_columns(n: usize, k: usize, v: Vec<f64>) -> Result<Self> {
        check_len(n, k, &v)?;
        let basis = Self { n, k, v };
        let gram = basis.gram();
        let m = DMatrix::from_column_slice(k, k, gram.entries());
        let eig = SymmetricEigen::new(m).eigenvalues;
        let max = eig.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.iter().cloned().fold(f64::MAX, f64::min);
        if !(max > 0.0) || min < RANK_TOLERANCE * max {
            return Err(Error::RankDeficientBasis(format!(
                "Gram eigenvalues span [{min:e}, {max:e}]"
            )));
        }
        Ok(basis)
    }

    /// Orthonormalizes the columns with two passes of modified Gram-Schmidt.
    pub fn orthonormalized(n: usize, k: usize, mut v: Vec<f64>) -> Result<Self> {
        check_len(n, k, &v)?;
        for j in 0..k {
            let (done, rest) = v.split_at_mut(j * n);
            let col = &mut rest[..n];
            let original = norm2(col);
            for _pass in 0..2 {
                for i in 0..j {
                    let q = &done[i * n..(i + 1) * n];
                    let proj = dot(q, col);
                    for (c, &qv) in col.iter_mut().zip(q) {
                        *c -= proj * qv;
                    }
                }
            }
            let norm = norm2(col);
            if !(original > 0.0) || norm <= RANK_TOLERANCE * original {
                return Err(Error::RankDeficientBasis(format!(
                    "column {j} is linearly dependent on earlier columns"
                )));
            }
            for c in col.iter_mut() {
                *c /= norm;
            }
        }
        Ok(Self { n, k, v })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.v[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.v.chunks_exact(self.n)
    }

    /// Column-major storage.
    pub fn data(&self) -> &[f64] {
        &self.v
    }

    /// `V c`
    pub fn apply(&self, c: &[f64]) -> Vec<f64> {
        assert_eq!(c.len(), self.k);
        let mut out = vec![0.0; self.n];
        for (col, &cj) in self.columns().zip(c) {
            for (o, &v) in out.iter_mut().zip(col) {
                *o += v * cj;
            }
        }
        out
    }

    /// `V^T x`
    pub fn transpose_apply(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        self.columns().map(|col| dot(col, x)).collect()
    }

    /// `V^T V`
    pub fn gram(&self) -> SmallMatrix {
        self.cross_weighted(self, None)
    }

    /// `V^T diag(h) V`
    pub fn weighted_gram(&self, h: &[f64]) -> SmallMatrix {
        self.cross_weighted(self, Some(h))
    }

    /// `V^T diag(h) W` for another basis `W` over the same pixels.
    pub fn cross_weighted(&self, other: &SubspaceBasis, h: Option<&[f64]>) -> SmallMatrix {
        assert_eq!(self.n, other.n);
        let mut out = SmallMatrix::zeros(self.k, other.k);
        let mut scaled = vec![0.0; self.n];
        for (j, wcol) in other.columns().enumerate() {
            match h {
                Some(h) => {
                    for ((s, &w), &hv) in scaled.iter_mut().zip(wcol).zip(h) {
                        *s = w * hv;
                    }
                }
                None => scaled.copy_from_slice(wcol),
            }
            for (i, vcol) in self.columns().enumerate() {
                out[(i, j)] = dot(vcol, &scaled);
            }
        }
        out
    }
}

fn check_len(n: usize, k: usize, v: &[f64]) -> Result<()> {
    if n == 0 || k == 0 || k > n {
        return Err(Error::invalid(format!("basis must satisfy 1 <= K <= N, got N={n}, K={k}")));
    }
    if v.len() != n * k {
        return Err(Error::invalid(format!("basis data {} != {n}x{k}", v.len())));
    }
    Ok(())
}

/// Independent subspaces for the horizontal and vertical flow components.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBasisPair {
    pub u: SubspaceBasis,
    pub v: SubspaceBasis,
}

impl FlowBasisPair {
    pub fn new(u: SubspaceBasis, v: SubspaceBasis) -> Result<Self> {
        if u.n() != v.n() {
            return Err(Error::invalid("flow bases cover different pixel counts"));
        }
        Ok(Self { u, v })
    }

    pub fn n(&self) -> usize {
        self.u.n()
    }
}

/// Levenberg-style damping added to the diagonal of the subspace system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Damping {
    /// Fixed `lambda`.
    Absolute(f64),
    /// `lambda = factor * trace(A) / K`.
    RelativeTrace(f64),
}

impl Default for Damping {
    fn default() -> Self {
        Damping::RelativeTrace(1e-6)
    }
}

impl Damping {
    fn initial(&self, a: &SmallMatrix) -> Result<f64> {
        let lambda = match *self {
            Damping::Absolute(l) => l,
            Damping::RelativeTrace(f) => f * a.trace().max(0.0) / a.rows() as f64,
        };
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("damping must be finite and >= 0, got {lambda}")));
        }
        Ok(lambda)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    /// `c` (scalar tasks) or `[c_u, c_v]` (flow).
    pub coefficients: Vec<f64>,
    /// Quadratic-model value at `dx = r` minus its value at `dx = r + V c`.
    pub predicted_decrease: f64,
    pub damping_used: f64,
    /// `|(I - P)(x + dx)|`
    pub projection_residual_norm: f64,
}

/// Solves `(a + lambda I) z = b`, escalating `lambda` tenfold on failure.
fn solve_damped(a: &SmallMatrix, b: &[f64], damping: Damping) -> Result<(Vec<f64>, f64)> {
    let mut lambda = damping.initial(a)?;
    for attempt in 0..=MAX_DAMPING_RETRIES {
        let mut damped = a.clone();
        damped.add_to_diagonal(lambda);
        match Cholesky::factor(&damped) {
            Ok(chol) => return Ok((chol.solve(b), lambda)),
            Err(Error::NotPositiveDefinite { .. }) if attempt < MAX_DAMPING_RETRIES => {
                lambda = if lambda > 0.0 {
                    lambda * 10.0
                } else {
                    (1e-9 * a.trace().abs() / a.rows() as f64).max(1e-10)
                };
            }
            Err(Error::NotPositiveDefinite { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Err(Error::IndefiniteSystem { damping: lambda })
}

/// Projection of `x` onto `span(V)` and the residual `r = P x - x`.
pub fn project(basis: &SubspaceBasis, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.len() != basis.n() {
        return Err(Error::invalid(format!(
            "vector length {} != basis rows {}",
            x.len(),
            basis.n()
        )));
    }
    let gram = basis.gram();
    let chol = Cholesky::factor(&gram)
        .map_err(|_| Error::RankDeficientBasis("Gram matrix is singular".into()))?;
    let coeffs = chol.solve(&basis.transpose_apply(x));
    let px = basis.apply(&coeffs);
    let r = px.iter().zip(x).map(|(p, xv)| p - xv).collect();
    Ok((px, r))
}

fn scalar_model_value(q: &QuadraticModel, dx: &[f64]) -> f64 {
    q.d.data()
        .iter()
        .zip(q.h.data())
        .zip(dx)
        .map(|((&d, &h), &s)| d * s + 0.5 * h * s * s)
        .sum()
}

fn check_scalar(q: &QuadraticModel, basis: &SubspaceBasis) -> Result<()> {
    if q.is_flow() {
        return Err(Error::invalid("scalar solve given a flow model"));
    }
    if q.pixel_count() != basis.n() {
        return Err(Error::invalid(format!(
            "model has {} pixels but basis has {} rows",
            q.pixel_count(),
            basis.n()
        )));
    }
    Ok(())
}

/// `c = argmin 1/2 c^T V^T D V c + d^T V c` (no projection correction).
pub fn solve_subspace(q: &QuadraticModel, basis: &SubspaceBasis, damping: Damping) -> Result<SolveReport> {
    check_scalar(q, basis)?;
    let zero = vec![0.0; basis.n()];
    let (_, report) = solve_with_residual(q, basis, &zero, damping)?;
    Ok(SolveReport {
        projection_residual_norm: 0.0,
        ..report
    })
}

/// Projection-corrected subspace step: returns `dx = r + V c`.
pub fn solve_projected(
    q: &QuadraticModel,
    basis: &SubspaceBasis,
    x: &[f64],
    damping: Damping,
) -> Result<(Vec<f64>, SolveReport)> {
    check_scalar(q, basis)?;
    let (_, r) = project(basis, x)?;
    let (dx, mut report) = solve_with_residual(q, basis, &r, damping)?;
    let updated: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
    let (_, off) = project(basis, &updated)?;
    report.projection_residual_norm = norm2(&off);
    Ok((dx, report))
}

fn solve_with_residual(
    q: &QuadraticModel,
    basis: &SubspaceBasis,
    r: &[f64],
    damping: Damping,
) -> Result<(Vec<f64>, SolveReport)> {
    let h = q.h.data();
    let a = basis.weighted_gram(h);
    let g: Vec<f64> = q
        .d
        .data()
        .iter()
        .zip(h)
        .zip(r)
        .map(|((&d, &hv), &rv)| d + hv * rv)
        .collect();
    let b: Vec<f64> = basis.transpose_apply(&g).into_iter().map(|v| -v).collect();
    let (c, lambda) = solve_damped(&a, &b, damping)?;
    let vc = basis.apply(&c);
    let dx: Vec<f64> = r.iter().zip(&vc).map(|(rv, v)| rv + v).collect();
    let predicted_decrease = scalar_model_value(q, r) - scalar_model_value(q, &dx);
    Ok((
        dx,
        SolveReport {
            coefficients: c,
            predicted_decrease,
            damping_used: lambda,
            projection_residual_norm: 0.0,
        },
    ))
}

fn flow_model_value(q: &QuadraticModel, du: &[f64], dv: &[f64]) -> f64 {
    let d = q.d.data();
    (0..du.len())
        .map(|p| {
            let [hxx, hxy, hyy] = q.block(p);
            let (a, b) = (du[p], dv[p]);
            d[2 * p] * a + d[2 * p + 1] * b + 0.5 * (hxx * a * a + 2.0 * hxy * a * b + hyy * b * b)
        })
        .sum()
}

/// Block-structured flow step with independent subspaces for `u` and `v`.
///
/// The projection correction is applied per component. The 2K x 2K system
/// couples the two subspaces through `H_xy`.
pub fn solve_flow_subspace(
    q: &QuadraticModel,
    pair: &FlowBasisPair,
    x: &Grid,
    damping: Damping,
) -> Result<(Grid, SolveReport)> {
    if !q.is_flow() {
        return Err(Error::invalid("flow solve given a scalar model"));
    }
    let n = pair.n();
    if q.pixel_count() != n || x.pixel_count() != n || x.channels() != 2 {
        return Err(Error::invalid("flow model, field and bases disagree in size"));
    }
    let (ku, kv) = (pair.u.k(), pair.v.k());
    let u = x.channel(0);
    let v = x.channel(1);
    let (_, ru) = project(&pair.u, &u)?;
    let (_, rv) = project(&pair.v, &v)?;

    let h = q.h.data();
    let hxx: Vec<f64> = (0..n).map(|p| h[3 * p]).collect();
    let hxy: Vec<f64> = (0..n).map(|p| h[3 * p + 1]).collect();
    let hyy: Vec<f64> = (0..n).map(|p| h[3 * p + 2]).collect();

    let auu = pair.u.weighted_gram(&hxx);
    let auv = pair.u.cross_weighted(&pair.v, Some(&hxy));
    let avv = pair.v.weighted_gram(&hyy);
    let mut a = SmallMatrix::zeros(ku + kv, ku + kv);
    for i in 0..ku {
        for j in 0..ku {
            a[(i, j)] = auu[(i, j)];
        }
        for j in 0..kv {
            a[(i, ku + j)] = auv[(i, j)];
            a[(ku + j, i)] = auv[(i, j)];
        }
    }
    for i in 0..kv {
        for j in 0..kv {
            a[(ku + i, ku + j)] = avv[(i, j)];
        }
    }

    let d = q.d.data();
    let gx: Vec<f64> = (0..n).map(|p| d[2 * p] + hxx[p] * ru[p] + hxy[p] * rv[p]).collect();
    let gy: Vec<f64> = (0..n).map(|p| d[2 * p + 1] + hxy[p] * ru[p] + hyy[p] * rv[p]).collect();
    let b: Vec<f64> = pair
        .u
        .transpose_apply(&gx)
        .into_iter()
        .chain(pair.v.transpose_apply(&gy))
        .map(|v| -v)
        .collect();
    let (c, lambda) = solve_damped(&a, &b, damping)?;

    let vcu = pair.u.apply(&c[..ku]);
    let vcv = pair.v.apply(&c[ku..]);
    let du: Vec<f64> = ru.iter().zip(&vcu).map(|(a, b)| a + b).collect();
    let dv: Vec<f64> = rv.iter().zip(&vcv).map(|(a, b)| a + b).collect();

    let predicted_decrease = flow_model_value(q, &ru, &rv) - flow_model_value(q, &du, &dv);
    let new_u: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + b).collect();
    let new_v: Vec<f64> = v.iter().zip(&dv).map(|(a, b)| a + b).collect();
    let (_, off_u) = project(&pair.u, &new_u)?;
    let (_, off_v) = project(&pair.v, &new_v)?;
    let projection_residual_norm = (dot(&off_u, &off_u) + dot(&off_v, &off_v)).sqrt();

    let delta = Grid::from_fn(x.width(), x.height(), 2, |px, py, ch| {
        let p = py * x.width() + px;
        if ch == 0 {
            du[p]
        } else {
            dv[p]
        }
    })?;
    Ok((
        delta,
        SolveReport {
            coefficients: c,
            predicted_decrease,
            damping_used: lambda,
            projection_residual_norm,
        },
    ))
}
