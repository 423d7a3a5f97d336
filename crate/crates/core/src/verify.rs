//! Self-check suites comparing the solver against explicit dense oracles.
//!
//! Each suite draws random instances from a seeded generator, so a run is
//! reproducible, and reports its worst error against a fixed tolerance.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::basis::build_cramer_context;
use crate::data_terms::{
    correspondence_energy, flow_quadratic, labeling_energy, labeling_quadratic, stereo_quadratic,
    LabelProbabilities, QuadraticModel,
};
use crate::equivalence::{basis_matrix, build_consistent_instance, fast_vtrx, projection_matrix, verify_proposition};
use crate::error::Result;
use crate::grid::Grid;
use crate::linalg::{cramer2, norm2};
use crate::solver::{solve_flow_subspace, solve_projected, Damping, FlowBasisPair, SubspaceBasis};

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

pub fn run_all(seed: u64) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        solver_oracle(seed, 200)?,
        subspace_constraint(seed + 1, 100)?,
        proposition(seed + 2, 100)?,
        fast_vtrx_identity(seed + 3, 100)?,
        labeling_gradient(seed + 4, 50)?,
        stereo_gradient(seed + 5, 50)?,
        flow_gradient(seed + 6, 50)?,
        cramer_contexts(seed + 7, 20)?,
    ])
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn random_basis(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Result<SubspaceBasis> {
    SubspaceBasis::from_columns(n, k, uniform(rng, n * k, -1.0, 1.0))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Dense `r = P x - x`.
fn dense_residual(basis: &SubspaceBasis, x: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(projection_matrix(basis)? * x - x)
}

fn scalar_oracle(q: &QuadraticModel, basis: &SubspaceBasis, x: &[f64]) -> Result<Vec<f64>> {
    let v = basis_matrix(basis);
    let d = DMatrix::from_diagonal(&DVector::from_column_slice(q.h.data()));
    let r = dense_residual(basis, &DVector::from_column_slice(x))?;
    let a = v.transpose() * &d * &v;
    let b = -(v.transpose() * (DVector::from_column_slice(q.d.data()) + &d * r));
    Ok(a.lu().solve(&b).expect("oracle system is nonsingular").as_slice().to_vec())
}

fn flow_oracle(q: &QuadraticModel, pair: &FlowBasisPair, x: &Grid) -> Result<Vec<f64>> {
    let n = pair.n();
    let (ku, kv) = (pair.u.k(), pair.v.k());
    // unknowns ordered [u_0..u_n, v_0..v_n]
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    let mut g = DVector::zeros(2 * n);
    for p in 0..n {
        let [hxx, hxy, hyy] = q.block(p);
        h[(p, p)] = hxx;
        h[(p, n + p)] = hxy;
        h[(n + p, p)] = hxy;
        h[(n + p, n + p)] = hyy;
        g[p] = q.d.data()[2 * p];
        g[n + p] = q.d.data()[2 * p + 1];
    }
    let mut b = DMatrix::zeros(2 * n, ku + kv);
    b.view_mut((0, 0), (n, ku)).copy_from(&basis_matrix(&pair.u));
    b.view_mut((n, ku), (n, kv)).copy_from(&basis_matrix(&pair.v));
    let ru = dense_residual(&pair.u, &DVector::from_vec(x.channel(0)))?;
    let rv = dense_residual(&pair.v, &DVector::from_vec(x.channel(1)))?;
    let r = DVector::from_iterator(2 * n, ru.iter().chain(rv.iter()).copied());
    let a = b.transpose() * &h * &b;
    let rhs = -(b.transpose() * (g + &h * r));
    Ok(a.lu().solve(&rhs).expect("oracle system is nonsingular").as_slice().to_vec())
}

fn random_scalar_model(rng: &mut ChaCha8Rng, n: usize) -> Result<QuadraticModel> {
    QuadraticModel::new(
        Grid::from_vec(n, 1, 1, uniform(rng, n, -1.0, 1.0))?,
        Grid::from_vec(n, 1, 1, uniform(rng, n, 0.1, 2.0))?,
        0.0,
    )
}

fn random_flow_model(rng: &mut ChaCha8Rng, n: usize) -> Result<QuadraticModel> {
    let mut h = Vec::with_capacity(3 * n);
    for _ in 0..n {
        let (a, b, c) = (rng.gen_range(0.3..1.5), rng.gen_range(-0.5..0.5), rng.gen_range(0.3..1.5));
        // J^T J of J = [[a, b], [0, c]] plus a ridge keeps blocks definite
        h.extend([a * a + 0.1, a * b, b * b + c * c + 0.1]);
    }
    QuadraticModel::new(
        Grid::from_vec(n, 1, 2, uniform(rng, 2 * n, -1.0, 1.0))?,
        Grid::from_vec(n, 1, 3, h)?,
        0.0,
    )
}

/// Subspace coefficients against explicit dense solves, scalar and flow.
pub fn solver_oracle(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let n = rng.gen_range(8..=64);
        let k = rng.gen_range(1..=8);
        if i % 4 == 3 {
            let q = random_flow_model(&mut rng, n)?;
            let pair = FlowBasisPair::new(random_basis(&mut rng, n, k)?, random_basis(&mut rng, n, k)?)?;
            let x = Grid::from_vec(n, 1, 2, uniform(&mut rng, 2 * n, -1.0, 1.0))?;
            let (_, rep) = solve_flow_subspace(&q, &pair, &x, Damping::Absolute(0.0))?;
            worst = worst.max(max_diff(&rep.coefficients, &flow_oracle(&q, &pair, &x)?));
        } else {
            let q = random_scalar_model(&mut rng, n)?;
            let basis = random_basis(&mut rng, n, k)?;
            let x = uniform(&mut rng, n, -1.0, 1.0);
            let (_, rep) = solve_projected(&q, &basis, &x, Damping::Absolute(0.0))?;
            worst = worst.max(max_diff(&rep.coefficients, &scalar_oracle(&q, &basis, &x)?));
        }
    }
    Ok(SuiteReport {
        name: "solver-oracle",
        cases,
        max_error: worst,
        tolerance: 1e-7,
        elapsed: start.elapsed(),
    })
}

/// `x + dx` lies in the subspace after every projected solve.
pub fn subspace_constraint(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for i in 0..cases {
        let n = rng.gen_range(8..=64);
        let k = rng.gen_range(1..=8);
        if i % 4 == 3 {
            let q = random_flow_model(&mut rng, n)?;
            let pair = FlowBasisPair::new(random_basis(&mut rng, n, k)?, random_basis(&mut rng, n, k)?)?;
            let x = Grid::from_vec(n, 1, 2, uniform(&mut rng, 2 * n, -1.0, 1.0))?;
            let (dx, _) = solve_flow_subspace(&q, &pair, &x, Damping::default())?;
            for (ch, b) in [(0, &pair.u), (1, &pair.v)] {
                let xc = DVector::from_vec(x.channel(ch)) + DVector::from_vec(dx.channel(ch));
                let off = dense_residual(b, &xc)?;
                worst = worst.max(off.norm() / xc.norm().max(1e-300));
            }
        } else {
            let q = random_scalar_model(&mut rng, n)?;
            let basis = random_basis(&mut rng, n, k)?;
            let x = uniform(&mut rng, n, -1.0, 1.0);
            let (dx, _) = solve_projected(&q, &basis, &x, Damping::default())?;
            let updated = DVector::from_iterator(n, x.iter().zip(&dx).map(|(a, b)| a + b));
            let off = dense_residual(&basis, &updated)?;
            worst = worst.max(off.norm() / updated.norm().max(1e-300));
        }
    }
    Ok(SuiteReport {
        name: "subspace-constraint",
        cases,
        max_error: worst,
        tolerance: 1e-9,
        elapsed: start.elapsed(),
    })
}

/// The projection-corrected step solves the dense system regularized by
/// `R = D (P - I)`.
pub fn proposition(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(8..=64);
        let k = rng.gen_range(1..=8);
        let basis = random_basis(&mut rng, n, k)?;
        let h = uniform(&mut rng, n, 0.2, 3.0);
        let c0 = uniform(&mut rng, k, -2.0, 2.0);
        let x = uniform(&mut rng, n, -1.0, 1.0);
        let sys = build_consistent_instance(&basis, &h, &c0, &x)?;
        let rep = verify_proposition(&sys, &basis)?;
        worst = worst.max(rep.max_abs_diff);
    }
    Ok(SuiteReport {
        name: "proposition",
        cases,
        max_error: worst,
        tolerance: 1e-7,
        elapsed: start.elapsed(),
    })
}

/// `V^T R x` computed without `R` against the dense product.
pub fn fast_vtrx_identity(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let n = rng.gen_range(8..=64);
        let k = rng.gen_range(1..=8);
        let basis = random_basis(&mut rng, n, k)?;
        let h = uniform(&mut rng, n, 0.2, 3.0);
        let x = uniform(&mut rng, n, -1.0, 1.0);
        let v = basis_matrix(&basis);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&h));
        let r = &d * (projection_matrix(&basis)? - DMatrix::identity(n, n));
        let dense = v.transpose() * r * DVector::from_column_slice(&x);
        worst = worst.max(max_diff(&fast_vtrx(&basis, &h, &x)?, dense.as_slice()));
    }
    Ok(SuiteReport {
        name: "fast-vtrx",
        cases,
        max_error: worst,
        tolerance: 1e-9,
        elapsed: start.elapsed(),
    })
}

/// Central difference with step `eps` of `f` at `x[idx]`.
fn central(mut f: impl FnMut(&Grid) -> Result<f64>, x: &Grid, idx: usize, eps: f64) -> Result<f64> {
    let mut plus = x.clone();
    plus.data_mut()[idx] += eps;
    let mut minus = x.clone();
    minus.data_mut()[idx] -= eps;
    Ok((f(&plus)? - f(&minus)?) / (2.0 * eps))
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// `d` is half the energy gradient (the squared-residual factor 2 is dropped).
pub fn labeling_gradient(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (w, h) = (rng.gen_range(3..10), rng.gen_range(3..10));
        let alpha = Grid::from_vec(w, h, 1, uniform(&mut rng, w * h, 0.02, 0.98))?;
        let probs = LabelProbabilities::from_alpha(alpha)?;
        let x = Grid::from_vec(w, h, 1, uniform(&mut rng, w * h, -2.0, 2.0))?;
        let q = labeling_quadratic(&x, &probs)?;
        let p = rng.gen_range(0..w * h);
        let fd = central(|g| labeling_energy(g, &probs), &x, p, 1e-5)?;
        worst = worst.max(relative_error(q.d.data()[p], 0.5 * fd));
    }
    Ok(SuiteReport {
        name: "gradient-labeling",
        cases: trials,
        max_error: worst,
        tolerance: 1e-4,
        elapsed: start.elapsed(),
    })
}

fn random_features(rng: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Result<Grid> {
    Grid::from_vec(w, h, c, uniform(rng, w * h * c, -1.0, 1.0))
}

/// Offset in `(-2, 2)` whose target position stays at least `0.05` away
/// from lattice lines and inside the grid.
fn non_lattice_offset(rng: &mut ChaCha8Rng, p: usize, len: usize) -> f64 {
    loop {
        let off: f64 = rng.gen_range(-2.0..2.0);
        let pos = p as f64 + off;
        let frac = pos - pos.floor();
        if pos > 0.0 && pos < len as f64 - 1.0 && (0.05..0.95).contains(&frac) {
            return off;
        }
    }
}

pub fn stereo_gradient(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (w, h, c) = (rng.gen_range(6..12), rng.gen_range(3..8), rng.gen_range(1..5));
        let src = random_features(&mut rng, w, h, c)?;
        let tgt = random_features(&mut rng, w, h, c)?;
        let x = Grid::from_fn(w, h, 1, |px, _, _| non_lattice_offset(&mut rng, px, w))?;
        let q = stereo_quadratic(&src, &tgt, &x, 1)?.model;
        let p = rng.gen_range(0..w * h);
        let fd = central(|g| correspondence_energy(&src, &tgt, g), &x, p, 1e-6)?;
        worst = worst.max(relative_error(q.d.data()[p], 0.5 * fd));
    }
    Ok(SuiteReport {
        name: "gradient-stereo",
        cases: trials,
        max_error: worst,
        tolerance: 1e-3,
        elapsed: start.elapsed(),
    })
}

pub fn flow_gradient(seed: u64, trials: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let (w, h, c) = (rng.gen_range(6..12), rng.gen_range(6..12), rng.gen_range(1..5));
        let src = random_features(&mut rng, w, h, c)?;
        let tgt = random_features(&mut rng, w, h, c)?;
        let x = Grid::from_fn(w, h, 2, |px, py, ch| {
            if ch == 0 {
                non_lattice_offset(&mut rng, px, w)
            } else {
                non_lattice_offset(&mut rng, py, h)
            }
        })?;
        let q = flow_quadratic(&src, &tgt, &x, 1)?.model;
        let idx = rng.gen_range(0..2 * w * h);
        let fd = central(|g| correspondence_energy(&src, &tgt, g), &x, idx, 1e-6)?;
        worst = worst.max(relative_error(q.d.data()[idx], 0.5 * fd));
    }
    Ok(SuiteReport {
        name: "gradient-flow",
        cases: trials,
        max_error: worst,
        tolerance: 1e-3,
        elapsed: start.elapsed(),
    })
}

/// Determinant ratios of the flow context against per-group 2x2 solves.
pub fn cramer_contexts(seed: u64, cases: usize) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let m = rng.gen_range(1..5);
        let (w, h) = (rng.gen_range(4..10), rng.gen_range(4..10));
        let src = random_features(&mut rng, w, h, 2 * m)?;
        let tgt = random_features(&mut rng, w, h, 2 * m)?;
        let x = Grid::from_vec(w, h, 2, uniform(&mut rng, 2 * w * h, -1.5, 1.5))?;
        let grouped = flow_quadratic(&src, &tgt, &x, m)?.grouped;
        let ctx = build_cramer_context(&grouped)?;
        for p in 0..w * h {
            for g in 0..m {
                let det = ctx.det_full.data()[p * m + g];
                if det.abs() <= 1e-6 {
                    continue;
                }
                let f = &grouped.first.data()[p * 2 * m + 2 * g..p * 2 * m + 2 * g + 2];
                let s = &grouped.second.data()[p * 3 * m + 3 * g..p * 3 * m + 3 * g + 3];
                let z = cramer2(&[[s[0], s[1]], [s[1], s[2]]], [f[0], f[1]])?;
                let ratio = [ctx.det_x.data()[p * m + g] / det, ctx.det_y.data()[p * m + g] / det];
                let scale = 1.0 + norm2(&z);
                worst = worst.max(max_diff(&ratio, &z) / scale);
            }
        }
    }
    Ok(SuiteReport {
        name: "cramer-contexts",
        cases,
        max_error: worst,
        tolerance: 1e-9,
        elapsed: start.elapsed(),
    })
}
