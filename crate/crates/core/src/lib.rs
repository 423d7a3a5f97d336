//! Learned-subspace minimization for low-level vision.
//!
//! Tasks (interactive and video segmentation, stereo, optical flow) are
//! solved coarse to fine by repeatedly linearizing a data term and taking a
//! Gauss-Newton step restricted to a low-dimensional subspace of the
//! solution field.

pub mod basis;
pub mod data_terms;
pub mod driver;
pub mod equivalence;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod pyramid;
pub mod solver;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
pub use grid::Grid;
