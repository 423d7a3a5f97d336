//! Small dense linear algebra: Cholesky solves for the K x K subspace
//! systems and 2 x 2 determinants for the per-pixel flow blocks.

use crate::error::{Error, Result};

/// A pivot must exceed this fraction of its original diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

/// Determinants at or below this magnitude make a 2x2 block singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl SmallMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_col_major(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix entries {} != {rows}x{cols}",
                entries.len()
            )));
        }
        Ok(Self { rows, cols, entries })
    }

    /// Builds from row-major nested slices, which reads naturally in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::invalid("ragged rows"));
        }
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn add_to_diagonal(&mut self, value: f64) {
        for i in 0..self.rows.min(self.cols) {
            self[(i, i)] += value;
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &vj) in v.iter().enumerate() {
            let col = &self.entries[j * self.rows..(j + 1) * self.rows];
            for (o, &a) in out.iter_mut().zip(col) {
                *o += a * vj;
            }
        }
        out
    }
}

impl std::ops::Index<(usize, usize)> for SmallMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.entries[c * self.rows + r]
    }
}

impl std::ops::IndexMut<(usize, usize)> for SmallMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.entries[c * self.rows + r]
    }
}

/// Lower-triangular Cholesky factor `L` with `A = L L^T`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: SmallMatrix,
}

impl Cholesky {
    /// Factorizes a symmetric matrix; only the lower triangle is read.
    pub fn factor(a: &SmallMatrix) -> Result<Self> {
        if a.rows != a.cols {
            return Err(Error::invalid(format!(
                "Cholesky needs a square matrix, got {}x{}",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut l = SmallMatrix::zeros(n, n);
        for j in 0..n {
            let mut diag = a[(j, j)];
            for k in 0..j {
                diag -= l[(j, k)] * l[(j, k)];
            }
            if !(diag > PIVOT_TOLERANCE * a[(j, j)]) || diag <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: diag,
                });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows;
        assert_eq!(b.len(), n, "right-hand side length");
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[(i, k)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * z[k];
            }
            z[i] = s / self.l[(i, i)];
        }
        z
    }

    pub fn factor_matrix(&self) -> &SmallMatrix {
        &self.l
    }
}

/// Solves `a z = b` for symmetric positive-definite `a`.
pub fn cholesky_solve(a: &SmallMatrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows {
        return Err(Error::invalid(format!(
            "rhs length {} != matrix order {}",
            b.len(),
            a.rows
        )));
    }
    Ok(Cholesky::factor(a)?.solve(b))
}

/// 2x2 matrix in row-major order `[[a, b], [c, d]]`.
pub type Mat2 = [[f64; 2]; 2];

#[inline]
pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// Cramer's rule: each unknown is the determinant with its column replaced
/// by `s`, divided by `det(h)`.
pub fn cramer2(h: &Mat2, s: [f64; 2]) -> Result<[f64; 2]> {
    let det = det2(h);
    if det.abs() <= SINGULAR_DET {
        return Err(Error::SingularBlock { det });
    }
    let det_x = det2(&[[s[0], h[0][1]], [s[1], h[1][1]]]);
    let det_y = det2(&[[h[0][0], s[0]], [h[1][0], s[1]]]);
    Ok([det_x / det, det_y / det])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
