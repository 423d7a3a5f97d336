//! Deterministic synthetic scenes with known answers.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_terms::Scribbles;
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Smooth multi-frequency RGB texture defined on continuous coordinates, so
/// shifted copies are exact.
#[derive(Debug, Clone)]
pub struct Texture {
    waves: Vec<Wave>,
    /// When set, every wave is even about this column.
    mirror_axis: Option<f64>,
}

#[derive(Debug, Clone)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

impl Texture {
    pub fn new(seed: u64) -> Self {
        Self::build(seed, None)
    }

    /// Texture with `t(axis - u, y) = t(axis + u, y)`.
    pub fn mirrored(seed: u64, axis: f64) -> Self {
        Self::build(seed, Some(axis))
    }

    fn build(seed: u64, mirror_axis: Option<f64>) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves = (0..12)
            .map(|i| {
                // wavelengths from 150 px down to about 16 px, the finest
                // detail a stride-4 level still samples four times per period
                let wavelength = 150.0 * 0.816f64.powi(i);
                let theta = rng.gen_range(0.0..TAU);
                let k = TAU / wavelength;
                Wave {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.gen_range(0.0..TAU),
                    amp: std::array::from_fn(|_| rng.gen_range(0.3..1.0)),
                }
            })
            .collect();
        Self { waves, mirror_axis }
    }

    pub fn value(&self, x: f64, y: f64, ch: usize) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|w| {
                let a = w.amp[ch % 3];
                match self.mirror_axis {
                    None => a * (w.kx * x + w.ky * y + w.phase).sin(),
                    Some(c) => a * (w.kx * (x - c)).cos() * (w.ky * y + w.phase).sin(),
                }
            })
            .sum();
        0.5 + 0.08 * s
    }

    /// Image whose pixel `(x, y)` samples the texture at `(x - dx, y - dy)`.
    pub fn render(&self, width: usize, height: usize, dx: f64, dy: f64) -> Result<Grid> {
        Grid::from_fn(width, height, 3, |x, y, c| self.value(x as f64 - dx, y as f64 - dy, c))
    }
}

/// `(target, source)` with `source(p + shift) = target(p)`: a positive shift
/// moves the source content to the right.
pub fn shifted_pair(width: usize, height: usize, shift: f64, seed: u64) -> Result<(Grid, Grid)> {
    translated_pair(width, height, (shift, 0.0), seed)
}

/// `(target, source)` with `source(p + (u, v)) = target(p)`.
pub fn translated_pair(width: usize, height: usize, motion: (f64, f64), seed: u64) -> Result<(Grid, Grid)> {
    let t = Texture::new(seed);
    Ok((t.render(width, height, 0.0, 0.0)?, t.render(width, height, motion.0, motion.1)?))
}

/// `(left, right)` views of a texture that is even about the image centre,
/// displaced by `+shift/2` and `-shift/2`. The right-to-left problem is the
/// mirror image of the left-to-right one.
pub fn mirror_symmetric_pair(width: usize, height: usize, shift: f64, seed: u64) -> Result<(Grid, Grid)> {
    let t = Texture::mirrored(seed, (width as f64 - 1.0) / 2.0);
    Ok((
        t.render(width, height, 0.5 * shift, 0.0)?,
        t.render(width, height, -0.5 * shift, 0.0)?,
    ))
}

pub const FOREGROUND_COLOR: [f64; 3] = [0.85, 0.25, 0.2];
pub const BACKGROUND_COLOR: [f64; 3] = [0.15, 0.35, 0.8];

/// Two flat colours split by a vertical line: foreground on the left.
pub fn two_color_split(width: usize, height: usize) -> Result<(Grid, Grid)> {
    two_color(width, height, |x, _| x < width / 2)
}

/// Foreground disk on a background colour.
pub fn two_color_disk(width: usize, height: usize, cx: f64, cy: f64, radius: f64) -> Result<(Grid, Grid)> {
    two_color(width, height, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        dx * dx + dy * dy <= radius * radius
    })
}

/// `(image, ground-truth mask)` for a foreground predicate.
pub fn two_color(width: usize, height: usize, inside: impl Fn(usize, usize) -> bool) -> Result<(Grid, Grid)> {
    let mask = Grid::from_fn(width, height, 1, |x, y, _| if inside(x, y) { 1.0 } else { 0.0 })?;
    let image = Grid::from_fn(width, height, 3, |x, y, c| {
        if mask.get(x, y, 0) == 1.0 {
            FOREGROUND_COLOR[c]
        } else {
            BACKGROUND_COLOR[c]
        }
    })?;
    Ok((image, mask))
}

/// One short horizontal stroke inside each region of a split fixture.
pub fn split_scribbles(width: usize, height: usize) -> Scribbles {
    let y = height / 2;
    Scribbles {
        foreground: (width / 8..width / 4).map(|x| (x, y)).collect(),
        background: (3 * width / 4..7 * width / 8).map(|x| (x, y)).collect(),
    }
}

/// Intersection over union of two binary masks (values > 0.5 count as set).
pub fn iou(a: &Grid, b: &Grid) -> Result<f64> {
    if !a.same_shape(b) || a.channels() != 1 {
        return Err(Error::invalid("masks differ in shape"));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &q) in a.data().iter().zip(b.data()) {
        let (p, q) = (p > 0.5, q > 0.5);
        inter += usize::from(p && q);
        union += usize::from(p || q);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Mean endpoint error against a constant displacement, ignoring a border
/// of `margin` pixels. Single-channel fields are horizontal displacements.
pub fn mean_epe(field: &Grid, truth: (f64, f64), margin: usize) -> Result<f64> {
    let (w, h) = (field.width(), field.height());
    if field.channels() > 2 || 2 * margin >= w || 2 * margin >= h {
        return Err(Error::invalid("field must have 1 or 2 channels and exceed the margin"));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for y in margin..h - margin {
        for x in margin..w - margin {
            let u = field.get(x, y, 0) - truth.0;
            let v = if field.channels() == 2 {
                field.get(x, y, 1) - truth.1
            } else {
                0.0
            };
            sum += (u * u + v * v).sqrt();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shifted_pair_satisfies_convention() {
        let (t, s) = shifted_pair(40, 30, 3.0, 7).unwrap();
        for y in 0..30 {
            for x in 0..37 {
                for c in 0..3 {
                    assert!((s.get(x + 3, y, c) - t.get(x, y, c)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mirrored_texture_is_even() {
        let t = Texture::mirrored(3, 20.0);
        for u in [0.3, 4.0, 11.5] {
            assert!((t.value(20.0 - u, 7.0, 1) - t.value(20.0 + u, 7.0, 1)).abs() < 1e-12);
        }
    }

    #[test]
    fn iou_and_epe_basics() {
        let (_, m) = two_color_split(8, 4).unwrap();
        assert_eq!(iou(&m, &m).unwrap(), 1.0);
        let inv = m.map(|v| 1.0 - v);
        assert_eq!(iou(&m, &inv).unwrap(), 0.0);
        let f = Grid::filled(10, 10, 2, 1.0).unwrap();
        assert!((mean_epe(&f, (1.0, 0.0), 2).unwrap() - 1.0).abs() < 1e-12);
    }
}
