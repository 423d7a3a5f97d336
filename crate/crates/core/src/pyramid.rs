//! Multi-level feature pyramids and coarse-to-fine solution transfer.
//!
//! Each level is produced by Gaussian-blurring the input and sampling it at
//! the level's pixel centers, then expanding a fixed filter bank. Pixel `i`
//! of a level with stride `s` sits at input coordinate `(i + 0.5) * s - 0.5`,
//! and every resampling routine in this module keeps that alignment.

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const DEFAULT_STRIDES: [usize; 4] = [32, 16, 8, 4];
pub const DEFAULT_CHANNELS: [usize; 4] = [32, 32, 16, 16];

/// Number of raw responses in the handcrafted filter bank.
pub const FILTER_BANK_SIZE: usize = 11;

/// Smoothing scale (level pixels) of the oriented derivative-of-Gaussian responses.
const DOG_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    HandcraftedFilterBank,
    /// Feature grids supplied from an LSMF file instead of computed here.
    ExternalPrecomputed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PyramidConfig {
    /// Downsample factors, coarse to fine.
    pub strides: Vec<usize>,
    pub channels_per_level: Vec<usize>,
    pub feature_kind: FeatureKind,
    /// Blur standard deviation as a multiple of the level stride.
    pub blur_sigma: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            strides: DEFAULT_STRIDES.to_vec(),
            channels_per_level: DEFAULT_CHANNELS.to_vec(),
            feature_kind: FeatureKind::HandcraftedFilterBank,
            blur_sigma: 0.8,
        }
    }
}

impl PyramidConfig {
    /// Keeps the `n` finest levels of the default schedule.
    pub fn with_levels(n: usize) -> Result<Self> {
        if !(1..=DEFAULT_STRIDES.len()).contains(&n) {
            return Err(Error::invalid(format!(
                "level count must be in 1..={}, got {n}",
                DEFAULT_STRIDES.len()
            )));
        }
        let skip = DEFAULT_STRIDES.len() - n;
        Ok(Self {
            strides: DEFAULT_STRIDES[skip..].to_vec(),
            channels_per_level: DEFAULT_CHANNELS[skip..].to_vec(),
            ..Self::default()
        })
    }

    pub fn level_count(&self) -> usize {
        self.strides.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.strides.is_empty() || self.strides.len() != self.channels_per_level.len() {
            return Err(Error::invalid(
                "pyramid needs at least one level and one channel count per stride",
            ));
        }
        if self.strides.iter().any(|&s| s == 0) || self.channels_per_level.iter().any(|&c| c == 0) {
            return Err(Error::invalid("strides and channel counts must be positive"));
        }
        if self.strides.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::invalid("strides must decrease strictly coarse to fine"));
        }
        if !(self.blur_sigma > 0.0) {
            return Err(Error::invalid("blur_sigma must be positive"));
        }
        Ok(())
    }

    /// Level sizes for an input of the given size.
    pub fn level_sizes(&self, width: usize, height: usize) -> Vec<(usize, usize)> {
        self.strides
            .iter()
            .map(|&s| (width.div_ceil(s), height.div_ceil(s)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Grid>,
    strides: Vec<usize>,
}

impl FeaturePyramid {
    pub fn from_levels(levels: Vec<Grid>, strides: Vec<usize>) -> Result<Self> {
        if levels.len() != strides.len() || levels.is_empty() {
            return Err(Error::invalid("pyramid needs at least one level and one stride per level"));
        }
        if strides.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::invalid("strides must decrease strictly coarse to fine"));
        }
        Ok(Self { levels, strides })
    }

    pub fn levels(&self) -> &[Grid] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> &Grid {
        &self.levels[i]
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn channels(&self) -> Vec<usize> {
        self.levels.iter().map(Grid::channels).collect()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Checks that the levels fit an input of the given size under `cfg`.
    pub fn check_against(&self, cfg: &PyramidConfig, width: usize, height: usize) -> Result<()> {
        if self.strides != cfg.strides {
            return Err(Error::invalid("pyramid strides differ from configuration"));
        }
        for (lvl, (w, h)) in self.levels.iter().zip(cfg.level_sizes(width, height)) {
            if lvl.width() != w || lvl.height() != h {
                return Err(Error::invalid(format!(
                    "level is {}x{}, expected {w}x{h}",
                    lvl.width(),
                    lvl.height()
                )));
            }
        }
        Ok(())
    }
}

pub fn build_pyramid(image: &Grid, cfg: &PyramidConfig) -> Result<FeaturePyramid> {
    let mut out = build_pyramids(&[image], cfg)?;
    Ok(out.pop().expect("one pyramid per image"))
}

/// Pyramids for images that will be compared against each other. Each level
/// is normalized with statistics pooled over all images, so a translated
/// copy of an image gets translated features.
pub fn build_pyramids(images: &[&Grid], cfg: &PyramidConfig) -> Result<Vec<FeaturePyramid>> {
    cfg.validate()?;
    let first = images
        .first()
        .ok_or_else(|| Error::invalid("at least one image is required"))?;
    for image in images {
        if image.channels() != 1 && image.channels() != 3 {
            return Err(Error::invalid(format!(
                "images must have 1 or 3 channels, got {}",
                image.channels()
            )));
        }
        if image.width() != first.width() || image.height() != first.height() {
            return Err(Error::invalid("images of one pyramid set must share a size"));
        }
    }
    if cfg.feature_kind == FeatureKind::ExternalPrecomputed {
        return Err(Error::invalid(
            "external features are loaded from an LSMF file, not computed",
        ));
    }
    let rgbs: Vec<Grid> = images.iter().map(|im| to_rgb(im)).collect();
    let mut levels: Vec<Vec<Grid>> = vec![Vec::with_capacity(cfg.strides.len()); images.len()];
    for (&stride, &channels) in cfg.strides.iter().zip(&cfg.channels_per_level) {
        let banks = rgbs
            .iter()
            .map(|rgb| {
                let small = blur_subsample(rgb, stride, cfg.blur_sigma * stride as f64)?;
                let bank = filter_bank(&small)?;
                Grid::from_fn(bank.width(), bank.height(), channels, |x, y, c| {
                    bank.get(x, y, c % FILTER_BANK_SIZE)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Grid> = banks.iter().collect();
        let stats = channel_statistics(&refs);
        for (dst, bank) in levels.iter_mut().zip(&banks) {
            dst.push(apply_normalization(bank, &stats));
        }
    }
    levels
        .into_iter()
        .map(|l| FeaturePyramid::from_levels(l, cfg.strides.clone()))
        .collect()
}

fn to_rgb(image: &Grid) -> Grid {
    if image.channels() == 3 {
        return image.clone();
    }
    Grid::from_fn(image.width(), image.height(), 3, |x, y, _| image.get(x, y, 0))
        .expect("dimensions come from an existing grid")
}

/// Gaussian blur evaluated only at the level's pixel centers.
pub fn blur_subsample(image: &Grid, stride: usize, sigma: f64) -> Result<Grid> {
    let (w, h) = (image.width(), image.height());
    let (lw, lh) = (w.div_ceil(stride), h.div_ceil(stride));
    let xs = taps(w, lw, stride, sigma);
    let ys = taps(h, lh, stride, sigma);
    let c = image.channels();

    // horizontal pass at the needed columns, all rows
    let mut horiz = Grid::zeros(lw, h, c)?;
    for y in 0..h {
        for (lx, tap) in xs.iter().enumerate() {
            for ch in 0..c {
                let v: f64 = tap.iter().map(|&(ix, wt)| wt * image.get(ix, y, ch)).sum();
                horiz.set(lx, y, ch, v);
            }
        }
    }
    let mut out = Grid::zeros(lw, lh, c)?;
    for (ly, tap) in ys.iter().enumerate() {
        for lx in 0..lw {
            for ch in 0..c {
                let v: f64 = tap.iter().map(|&(iy, wt)| wt * horiz.get(lx, iy, ch)).sum();
                out.set(lx, ly, ch, v);
            }
        }
    }
    Ok(out)
}

/// Normalized Gaussian taps (clamped source index, weight) for each output sample.
fn taps(len: usize, out_len: usize, stride: usize, sigma: f64) -> Vec<Vec<(usize, f64)>> {
    let radius = (3.0 * sigma).ceil() as isize;
    (0..out_len)
        .map(|i| {
            let center = (i as f64 + 0.5) * stride as f64 - 0.5;
            let base = center.floor() as isize;
            let mut row: Vec<(usize, f64)> = (base - radius..=base + radius + 1)
                .map(|k| {
                    let d = k as f64 - center;
                    let idx = k.clamp(0, len as isize - 1) as usize;
                    (idx, (-d * d / (2.0 * sigma * sigma)).exp())
                })
                .collect();
            let total: f64 = row.iter().map(|t| t.1).sum();
            for t in &mut row {
                t.1 /= total;
            }
            row
        })
        .collect()
}

/// Raw handcrafted responses of an RGB level image.
///
/// Channel order: intensity, R, G, B, d/dx, d/dy, gradient magnitude, and
/// derivative-of-Gaussian responses at 0, 45, 90 and 135 degrees.
pub fn filter_bank(rgb: &Grid) -> Result<Grid> {
    let (w, h) = (rgb.width(), rgb.height());
    let intensity = Grid::from_fn(w, h, 1, |x, y, _| {
        (rgb.get(x, y, 0) + rgb.get(x, y, 1) + rgb.get(x, y, 2)) / 3.0
    })?;
    let (dx, dy) = central_differences(&intensity);
    let smooth = gaussian_blur(&intensity, DOG_SIGMA)?;
    let (sx, sy) = central_differences(&smooth);
    let angles = [0.0f64, 45.0, 90.0, 135.0].map(f64::to_radians);
    Grid::from_fn(w, h, FILTER_BANK_SIZE, |x, y, c| {
        let i = y * w + x;
        match c {
            0 => intensity.get(x, y, 0),
            1..=3 => rgb.get(x, y, c - 1),
            4 => dx[i],
            5 => dy[i],
            6 => dx[i].hypot(dy[i]),
            _ => {
                let a = angles[c - 7];
                a.cos() * sx[i] + a.sin() * sy[i]
            }
        }
    })
}

/// Central differences with clamped neighbours.
fn central_differences(g: &Grid) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (g.width(), g.height());
    let mut dx = vec![0.0; w * h];
    let mut dy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            dx[y * w + x] = 0.5 * (g.get(xr, y, 0) - g.get(xl, y, 0));
            dy[y * w + x] = 0.5 * (g.get(x, yd, 0) - g.get(x, yu, 0));
        }
    }
    (dx, dy)
}

fn gaussian_blur(g: &Grid, sigma: f64) -> Result<Grid> {
    blur_subsample(g, 1, sigma)
}

/// Zero-mean, unit-variance per channel; constant channels become zero.
pub fn normalize_channels(g: &Grid) -> Grid {
    apply_normalization(g, &channel_statistics(&[g]))
}

/// Per-channel `(mean, std)` pooled over same-shaped grids.
pub fn channel_statistics(grids: &[&Grid]) -> Vec<(f64, f64)> {
    let c = grids[0].channels();
    let n: f64 = grids.iter().map(|g| g.pixel_count() as f64).sum();
    (0..c)
        .map(|ch| {
            let mean = grids.iter().flat_map(|g| g.channel(ch)).sum::<f64>() / n;
            let var = grids
                .iter()
                .flat_map(|g| g.channel(ch))
                .map(|v| (v - mean) * (v - mean))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        })
        .collect()
}

fn apply_normalization(g: &Grid, stats: &[(f64, f64)]) -> Grid {
    let c = g.channels();
    let mut out = g.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        let (mean, std) = stats[i % c];
        *v = if std <= 1e-12 * mean.abs().max(1.0) {
            0.0
        } else {
            (*v - mean) / std
        };
    }
    out
}

/// How a solution field transforms when moving between levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldKind {
    /// Label logits: resampled but not rescaled.
    Labeling,
    /// Pixel displacements: rescaled with the resolution change.
    Displacement,
}

/// Bilinear resampling of a solution field to `target_w x target_h`.
///
/// `scale` is the resolution ratio target/source (2 between adjacent default
/// levels). Displacement fields are multiplied by `scale`.
pub fn upsample_solution(
    x: &Grid,
    target_w: usize,
    target_h: usize,
    scale: f64,
    kind: FieldKind,
) -> Result<Grid> {
    if !(scale > 0.0) {
        return Err(Error::invalid("scale must be positive"));
    }
    let gain = match kind {
        FieldKind::Labeling => 1.0,
        FieldKind::Displacement => scale,
    };
    Grid::from_fn(target_w, target_h, x.channels(), |tx, ty, ch| {
        let sx = (tx as f64 + 0.5) / scale - 0.5;
        let sy = (ty as f64 + 0.5) / scale - 0.5;
        gain * x.bilinear_sample(sx, sy, ch)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize, shift_x: f64, shift_y: f64) -> Grid {
        Grid::from_fn(w, h, 3, |x, y, c| {
            let (u, v) = (x as f64 - shift_x, y as f64 - shift_y);
            let base = (u / 9.0).sin() * (v / 13.0).cos() + 0.5 * ((u + 2.0 * v) / 17.0).sin();
            base + 0.2 * c as f64 * (v / 11.0).sin()
        })
        .unwrap()
    }

    #[test]
    fn level_sizes_use_ceiling_division() {
        let cfg = PyramidConfig::default();
        assert_eq!(
            cfg.level_sizes(512, 384),
            vec![(16, 12), (32, 24), (64, 48), (128, 96)]
        );
        assert_eq!(cfg.level_sizes(100, 33), vec![(4, 2), (7, 3), (13, 5), (25, 9)]);
        let pyr = build_pyramid(&textured(100, 33, 0.0, 0.0), &cfg).unwrap();
        for (lvl, (w, h)) in pyr.levels().iter().zip(cfg.level_sizes(100, 33)) {
            assert_eq!((lvl.width(), lvl.height()), (w, h));
        }
        assert_eq!(pyr.channels(), vec![32, 32, 16, 16]);
    }

    #[test]
    fn config_validation() {
        let mut cfg = PyramidConfig::default();
        cfg.strides = vec![8, 16];
        cfg.channels_per_level = vec![8, 8];
        assert!(cfg.validate().is_err());
        assert!(PyramidConfig::with_levels(0).is_err());
        assert_eq!(PyramidConfig::with_levels(1).unwrap().strides, vec![4]);
        assert_eq!(PyramidConfig::with_levels(3).unwrap().strides, vec![16, 8, 4]);
    }

    #[test]
    fn rejects_two_channel_images() {
        let img = Grid::zeros(8, 8, 2).unwrap();
        assert!(matches!(
            build_pyramid(&img, &PyramidConfig::default()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn constant_image_has_zero_derivatives() {
        let img = Grid::filled(64, 48, 3, 0.37).unwrap();
        let small = blur_subsample(&img, 4, 3.2).unwrap();
        let bank = filter_bank(&small).unwrap();
        for c in 4..FILTER_BANK_SIZE {
            assert!(bank.channel(c).iter().all(|&v| v == 0.0), "channel {c}");
        }
        let pyr = build_pyramid(&img, &PyramidConfig::default()).unwrap();
        assert!(pyr.levels().iter().all(|l| l.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn normalized_channels_have_unit_statistics() {
        let pyr = build_pyramid(&textured(160, 120, 0.0, 0.0), &PyramidConfig::default()).unwrap();
        for lvl in pyr.levels() {
            for ch in 0..lvl.channels() {
                let v = lvl.channel(ch);
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = (v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                assert!(mean.abs() <= 1e-6);
                assert!((std - 1.0).abs() <= 1e-6 || v.iter().all(|&a| a == 0.0));
            }
        }
    }

    #[test]
    fn translated_pair_is_consistent_at_true_warp() {
        // source = target shifted right by 8 px; at stride 4 that is 2 level px
        let cfg = PyramidConfig::default();
        let target = build_pyramid(&textured(256, 192, 0.0, 0.0), &cfg).unwrap();
        let source = build_pyramid(&textured(256, 192, 8.0, 0.0), &cfg).unwrap();
        let (t, s) = (target.level(3), source.level(3));
        let margin = 6;
        let mut total = 0.0;
        let mut n = 0.0;
        for y in margin..t.height() - margin {
            for x in margin..t.width() - margin {
                for c in 0..t.channels() {
                    total += (s.bilinear_sample(x as f64 + 2.0, y as f64, c) - t.get(x, y, c)).abs();
                    n += 1.0;
                }
            }
        }
        assert!(total / n < 0.05, "mean |residual| {}", total / n);
    }

    #[test]
    fn upsample_constant_fields() {
        let flow = Grid::from_fn(4, 3, 2, |_, _, c| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        let up = upsample_solution(&flow, 8, 6, 2.0, FieldKind::Displacement).unwrap();
        for p in up.data().chunks(2) {
            assert_eq!(p, &[2.0, 0.0]);
        }
        let label = Grid::filled(4, 3, 1, 0.7).unwrap();
        let up = upsample_solution(&label, 8, 6, 2.0, FieldKind::Labeling).unwrap();
        assert!(up.data().iter().all(|&v| v == 0.7));
    }

    #[test]
    fn upsampled_ramp_matches_analytic_ramp() {
        let ramp = |x: f64, y: f64| 0.3 * x - 0.7 * y + 1.1;
        let coarse = Grid::from_fn(10, 8, 1, |x, y, _| ramp(x as f64, y as f64)).unwrap();
        let fine = upsample_solution(&coarse, 20, 16, 2.0, FieldKind::Labeling).unwrap();
        // fine pixels whose coarse preimage lies inside the coarse lattice
        for y in 1..15 {
            for x in 1..19 {
                let (cx, cy) = ((x as f64 + 0.5) / 2.0 - 0.5, (y as f64 + 0.5) / 2.0 - 0.5);
                assert!((fine.get(x, y, 0) - ramp(cx, cy)).abs() <= 1e-6);
            }
        }
    }
}
