use crate::data_terms::{GroupedDerivatives, QuadraticModel};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linalg::det2;

/// Optimization-state input to the basis generator.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimizationContext {
    /// Per-group first derivatives, `m` channels.
    pub grouped_first: Grid,
    /// Per-group second derivatives, `m` channels.
    pub grouped_second: Grid,
    /// Current solution normalized to zero mean and unit variance.
    pub normalized_x: Grid,
}

impl MinimizationContext {
    pub fn groups(&self) -> usize {
        self.grouped_first.channels()
    }
}

/// Zero-mean, unit-variance copy of a single-channel field; constant fields map to zeros.
pub fn normalize_solution(x: &Grid) -> Result<Grid> {
    if x.channels() != 1 {
        return Err(Error::invalid("solution normalization expects one channel"));
    }
    let n = x.pixel_count() as f64;
    let mean = x.data().iter().sum::<f64>() / n;
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return Grid::zeros(x.width(), x.height(), 1);
    }
    Ok(x.map(|v| (v - mean) / std))
}

pub fn build_min_context(grouped: &GroupedDerivatives, x: &Grid) -> Result<MinimizationContext> {
    let m = grouped.groups;
    if grouped.first.channels() != m || grouped.second.channels() != m {
        return Err(Error::invalid(
            "scalar minimization context needs m first- and m second-order channels",
        ));
    }
    if x.width() != grouped.first.width() || x.height() != grouped.first.height() {
        return Err(Error::invalid("solution and derivative grids differ in size"));
    }
    Ok(MinimizationContext {
        grouped_first: grouped.first.clone(),
        grouped_second: grouped.second.clone(),
        normalized_x: normalize_solution(x)?,
    })
}

/// Splits a labeling model evenly into `m` groups.
///
/// The labeling term has no feature channels to group, so each group carries
/// `1/m` of the derivatives; the groups still sum to the full model.
pub fn labeling_groups(model: &QuadraticModel, m: usize) -> Result<GroupedDerivatives> {
    if model.is_flow() || m == 0 {
        return Err(Error::invalid("labeling groups need a scalar model and m >= 1"));
    }
    let (w, h) = (model.d.width(), model.d.height());
    let share = 1.0 / m as f64;
    let first = Grid::from_fn(w, h, m, |x, y, _| model.d.get(x, y, 0) * share)?;
    let second = Grid::from_fn(w, h, m, |x, y, _| model.h.get(x, y, 0) * share)?;
    Ok(GroupedDerivatives {
        groups: m,
        first,
        second,
    })
}

/// Per-group determinants of the 2x2 flow systems.
#[derive(Debug, Clone, PartialEq)]
pub struct CramerContext {
    /// `det(H_g)` per group.
    pub det_full: Grid,
    /// `det` of `H_g` with its first column replaced by `d_g`.
    pub det_x: Grid,
    /// `det` of `H_g` with its second column replaced by `d_g`.
    pub det_y: Grid,
}

impl CramerContext {
    /// Context for the horizontal subspace: `(det_x, det)`.
    pub fn u_context(&self, normalized_u: Grid) -> MinimizationContext {
        MinimizationContext {
            grouped_first: self.det_x.clone(),
            grouped_second: self.det_full.clone(),
            normalized_x: normalized_u,
        }
    }

    /// Context for the vertical subspace: `(det_y, det)`.
    pub fn v_context(&self, normalized_v: Grid) -> MinimizationContext {
        MinimizationContext {
            grouped_first: self.det_y.clone(),
            grouped_second: self.det_full.clone(),
            normalized_x: normalized_v,
        }
    }
}

/// Determinant contexts from grouped flow derivatives. No division happens
/// here, so singular (aperture) blocks are recorded with `det = 0`.
pub fn build_cramer_context(grouped: &GroupedDerivatives) -> Result<CramerContext> {
    let m = grouped.groups;
    if grouped.first.channels() != 2 * m || grouped.second.channels() != 3 * m {
        return Err(Error::invalid(
            "flow Cramer context needs 2m first- and 3m second-order channels",
        ));
    }
    let (w, h) = (grouped.first.width(), grouped.first.height());
    let mut det_full = Grid::zeros(w, h, m)?;
    let mut det_x = Grid::zeros(w, h, m)?;
    let mut det_y = Grid::zeros(w, h, m)?;
    for y in 0..h {
        for x in 0..w {
            let f = grouped.first.pixel(x, y);
            let s = grouped.second.pixel(x, y);
            for g in 0..m {
                let (dx, dy) = (f[2 * g], f[2 * g + 1]);
                let (hxx, hxy, hyy) = (s[3 * g], s[3 * g + 1], s[3 * g + 2]);
                det_full.set(x, y, g, det2(&[[hxx, hxy], [hxy, hyy]]));
                det_x.set(x, y, g, det2(&[[dx, hxy], [dy, hyy]]));
                det_y.set(x, y, g, det2(&[[hxx, dx], [hxy, dy]]));
            }
        }
    }
    Ok(CramerContext {
        det_full,
        det_x,
        det_y,
    })
}
