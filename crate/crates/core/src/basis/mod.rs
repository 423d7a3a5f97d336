//! Subspace bases: deterministic analytic families and the learned-basis
//! generation pipeline driven by externally supplied weights.

mod context;
mod generator;

pub use context::{
    build_cramer_context, build_min_context, labeling_groups, normalize_solution, CramerContext,
    MinimizationContext,
};
pub use generator::{
    default_pool_kernels, generate_basis, generate_basis_traced, pool_multiscale, AffineLayer,
    GeneratorWeights, LevelShape, LevelWeights, PipelineTrace, RESIDUAL_BLOCKS, POOL_SCALES,
};

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::solver::{FlowBasisPair, SubspaceBasis};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticKind {
    /// Leading 2D DCT-II modes in zigzag order, starting with the constant.
    ConstantDct,
    /// Overlapping bilinear hat functions on a coarse control grid.
    BilinearPatches,
}

/// Orthonormal analytic basis over a `width x height` level.
pub fn analytic_basis(width: usize, height: usize, k: usize, kind: AnalyticKind) -> Result<SubspaceBasis> {
    let n = width * height;
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "basis dimension {k} must be in 1..={n} for a {width}x{height} level"
        )));
    }
    let columns = match kind {
        AnalyticKind::ConstantDct => dct_columns(width, height, k),
        AnalyticKind::BilinearPatches => {
            let (gx, gy) = patch_grid(width, height, k).ok_or_else(|| {
                Error::invalid(format!(
                    "no {k}-node control grid fits a {width}x{height} level"
                ))
            })?;
            patch_columns(width, height, gx, gy)
        }
    };
    SubspaceBasis::orthonormalized(n, k, columns)
}

/// Same analytic basis for both flow components.
pub fn analytic_flow_pair(width: usize, height: usize, k: usize, kind: AnalyticKind) -> Result<FlowBasisPair> {
    let b = analytic_basis(width, height, k, kind)?;
    FlowBasisPair::new(b.clone(), b)
}

/// Frequency pairs `(fx, fy)` in JPEG zigzag order, restricted to the level.
pub fn zigzag_modes(width: usize, height: usize, k: usize) -> Vec<(usize, usize)> {
    let mut modes = Vec::with_capacity(k);
    let mut diag = 0;
    while modes.len() < k && diag < width + height {
        // even diagonals run from high fy to low fy, odd ones the other way
        let cells: Vec<(usize, usize)> = (0..=diag).map(|fx| (fx, diag - fx)).collect();
        let ordered: Box<dyn Iterator<Item = &(usize, usize)>> = if diag % 2 == 0 {
            Box::new(cells.iter())
        } else {
            Box::new(cells.iter().rev())
        };
        for &(fx, fy) in ordered {
            if fx < width && fy < height && modes.len() < k {
                modes.push((fx, fy));
            }
        }
        diag += 1;
    }
    modes
}

fn dct_columns(width: usize, height: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(width * height * k);
    for (fx, fy) in zigzag_modes(width, height, k) {
        for y in 0..height {
            let cy = (PI * (y as f64 + 0.5) * fy as f64 / height as f64).cos();
            for x in 0..width {
                let cx = (PI * (x as f64 + 0.5) * fx as f64 / width as f64).cos();
                out.push(cx * cy);
            }
        }
    }
    out
}

/// Control grid `gx x gy = k` whose aspect best matches the level.
///
/// Only grids with at most one node per pixel along each axis qualify; more
/// nodes than pixels would make the hat functions linearly dependent.
pub fn patch_grid(width: usize, height: usize, k: usize) -> Option<(usize, usize)> {
    let aspect = (width as f64 / height as f64).ln();
    (1..=k)
        .filter(|gx| k % gx == 0)
        .map(|gx| (gx, k / gx))
        .filter(|&(gx, gy)| gx <= width && gy <= height)
        .min_by(|a, b| {
            let ea = ((a.0 as f64 / a.1 as f64).ln() - aspect).abs();
            let eb = ((b.0 as f64 / b.1 as f64).ln() - aspect).abs();
            // ties prefer more columns
            ea.total_cmp(&eb).then(b.0.cmp(&a.0))
        })
}

fn hat(len: usize, nodes: usize, i: usize, pos: usize) -> f64 {
    if nodes == 1 {
        return 1.0;
    }
    let spacing = (len as f64 - 1.0) / (nodes as f64 - 1.0);
    if spacing <= 0.0 {
        return if i == 0 { 1.0 } else { 0.0 };
    }
    let t = (pos as f64 - i as f64 * spacing).abs() / spacing;
    (1.0 - t).max(0.0)
}

/// Hat functions before orthonormalization; they sum to one at every pixel.
pub fn patch_columns(width: usize, height: usize, gx: usize, gy: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(width * height * gx * gy);
    for j in 0..gy {
        for i in 0..gx {
            for y in 0..height {
                let wy = hat(height, gy, j, y);
                for x in 0..width {
                    out.push(hat(width, gx, i, x) * wy);
                }
            }
        }
    }
    out
}
