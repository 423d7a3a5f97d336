//! Task data terms and their per-pixel quadratic models.
//!
//! Correspondence terms use the residual `F_S(p + x_p) - F_T(p)` summed over
//! feature channels. Derivatives follow the usual Gauss-Newton convention of
//! dropping the factor 2: `d` is half the energy gradient and `h` half the
//! Gauss-Newton Hessian, so the Newton step `-h^{-1} d` is unchanged.

use crate::error::{Error, Result};
use crate::grid::{BilinearTap, Grid};

/// Guard added to every probability ratio denominator.
pub const PROBABILITY_EPS: f64 = 1e-12;

/// Per-pixel first and (approximate) second derivatives of a data term.
///
/// Scalar tasks: `d` and `h` have one channel. Flow: `d` holds `(d_x, d_y)`
/// and `h` holds the symmetric block entries `(h_xx, h_xy, h_yy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub d: Grid,
    pub h: Grid,
    /// Data-term value at the expansion point.
    pub energy: f64,
}

impl QuadraticModel {
    pub fn new(d: Grid, h: Grid, energy: f64) -> Result<Self> {
        let ok_shape = d.width() == h.width()
            && d.height() == h.height()
            && matches!((d.channels(), h.channels()), (1, 1) | (2, 3));
        if !ok_shape {
            return Err(Error::invalid(format!(
                "quadratic model needs 1/1 or 2/3 channels on equal grids, got {}/{}",
                d.channels(),
                h.channels()
            )));
        }
        Ok(Self { d, h, energy })
    }

    pub fn is_flow(&self) -> bool {
        self.d.channels() == 2
    }

    pub fn pixel_count(&self) -> usize {
        self.d.pixel_count()
    }

    /// `(h_xx, h_xy, h_yy)` at pixel index `p` of a flow model.
    #[inline]
    pub fn block(&self, p: usize) -> [f64; 3] {
        let h = self.h.data();
        [h[3 * p], h[3 * p + 1], h[3 * p + 2]]
    }
}

/// Derivatives accumulated per channel group.
///
/// Scalar tasks: `first` and `second` have `groups` channels. Flow: `first`
/// has `2 * groups` channels `(d_x, d_y)` per group and `second` has
/// `3 * groups` channels `(h_xx, h_xy, h_yy)` per group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDerivatives {
    pub groups: usize,
    pub first: Grid,
    pub second: Grid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceModel {
    pub model: QuadraticModel,
    pub grouped: GroupedDerivatives,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelProbabilities {
    alpha: Grid,
    beta: Grid,
}

impl LabelProbabilities {
    pub fn new(alpha: Grid, beta: Grid) -> Result<Self> {
        if !alpha.same_shape(&beta) || alpha.channels() != 1 {
            return Err(Error::invalid("alpha and beta must be equal single-channel grids"));
        }
        for (&a, &b) in alpha.data().iter().zip(beta.data()) {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || (a + b - 1.0).abs() > 1e-6 {
                return Err(Error::invalid(format!(
                    "invalid label probabilities ({a}, {b})"
                )));
            }
        }
        Ok(Self { alpha, beta })
    }

    /// Builds `beta = 1 - alpha`.
    pub fn from_alpha(alpha: Grid) -> Result<Self> {
        let beta = alpha.map(|a| 1.0 - a);
        Self::new(alpha, beta)
    }

    pub fn alpha(&self) -> &Grid {
        &self.alpha
    }

    pub fn beta(&self) -> &Grid {
        &self.beta
    }
}

/// Foreground and background scribble pixels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scribbles {
    pub foreground: Vec<(usize, usize)>,
    pub background: Vec<(usize, usize)>,
}

impl Scribbles {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.foreground.is_empty() || self.background.is_empty() {
            return Err(Error::invalid(
                "need at least one foreground and one background scribble",
            ));
        }
        let out = self
            .foreground
            .iter()
            .chain(&self.background)
            .find(|&&(x, y)| x >= width || y >= height);
        if let Some((x, y)) = out {
            return Err(Error::invalid(format!(
                "scribble ({x}, {y}) outside {width}x{height}"
            )));
        }
        Ok(())
    }

    /// Maps scribbles onto a level with the given stride, dropping duplicates.
    pub fn at_stride(&self, stride: usize) -> Scribbles {
        let map = |pts: &[(usize, usize)]| {
            let mut v: Vec<_> = pts.iter().map(|&(x, y)| (x / stride, y / stride)).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        Scribbles {
            foreground: map(&self.foreground),
            background: map(&self.background),
        }
    }
}

#[inline]
fn tanh_parts(x: f64) -> (f64, f64) {
    let t = x.tanh();
    (t, 1.0 - t * t)
}

pub fn labeling_energy(x: &Grid, probs: &LabelProbabilities) -> Result<f64> {
    check_label_shapes(x, probs)?;
    Ok(x
        .data()
        .iter()
        .zip(probs.alpha.data().iter().zip(probs.beta.data()))
        .map(|(&xp, (&a, &b))| {
            let t = xp.tanh();
            a * (t - 1.0) * (t - 1.0) + b * (t + 1.0) * (t + 1.0)
        })
        .sum())
}

/// Quadratic model of the binary labeling term with a tanh relaxation.
pub fn labeling_quadratic(x: &Grid, probs: &LabelProbabilities) -> Result<QuadraticModel> {
    check_label_shapes(x, probs)?;
    let (w, h) = (x.width(), x.height());
    let mut d = Vec::with_capacity(w * h);
    let mut hh = Vec::with_capacity(w * h);
    let mut energy = 0.0;
    for (&xp, (&a, &b)) in x
        .data()
        .iter()
        .zip(probs.alpha.data().iter().zip(probs.beta.data()))
    {
        let (t, dt) = tanh_parts(xp);
        d.push(((a + b) * t + (b - a)) * dt);
        hh.push((a + b) * dt * dt);
        energy += a * (t - 1.0) * (t - 1.0) + b * (t + 1.0) * (t + 1.0);
    }
    QuadraticModel::new(Grid::from_vec(w, h, 1, d)?, Grid::from_vec(w, h, 1, hh)?, energy)
}

fn check_label_shapes(x: &Grid, probs: &LabelProbabilities) -> Result<()> {
    if x.channels() != 1 || x.width() != probs.alpha.width() || x.height() != probs.alpha.height() {
        return Err(Error::invalid("labeling field and probabilities differ in shape"));
    }
    Ok(())
}

#[inline]
fn feature_distance_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Nonparametric foreground probability from scribble similarity.
///
/// Each class scores a pixel by the mean of its `top_k` largest Gaussian
/// feature affinities to that class's scribble pixels.
pub fn scribble_probabilities(
    features: &Grid,
    scribbles: &Scribbles,
    sigma: f64,
    top_k: usize,
) -> Result<LabelProbabilities> {
    scribbles.validate(features.width(), features.height())?;
    if !(sigma > 0.0) || top_k == 0 {
        return Err(Error::invalid("sigma must be positive and top_k >= 1"));
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    let gather = |pts: &[(usize, usize)]| -> Vec<&[f64]> {
        pts.iter().map(|&(x, y)| features.pixel(x, y)).collect()
    };
    let fg = gather(&scribbles.foreground);
    let bg = gather(&scribbles.background);
    let mut scratch = Vec::new();
    let mut score = |f: &[f64], class: &[&[f64]]| -> f64 {
        scratch.clear();
        scratch.extend(class.iter().map(|q| (-feature_distance_sq(f, q) * inv).exp()));
        scratch.sort_unstable_by(|a, b| b.total_cmp(a));
        let k = top_k.min(scratch.len());
        scratch[..k].iter().sum::<f64>() / k as f64
    };
    let alpha = Grid::from_fn(features.width(), features.height(), 1, |x, y, _| {
        let f = features.pixel(x, y);
        let sf = score(f, &fg);
        let sb = score(f, &bg);
        sf / (sf + sb + PROBABILITY_EPS)
    })?;
    LabelProbabilities::from_alpha(alpha)
}

/// Foreground probability from feature affinity to the previous frame's
/// labeled neighbours inside a `window x window` neighbourhood.
pub fn temporal_probabilities(
    features_cur: &Grid,
    features_prev: &Grid,
    mask_prev: &Grid,
    window: usize,
    sigma: f64,
) -> Result<LabelProbabilities> {
    if window == 0 || window % 2 == 0 {
        return Err(Error::invalid(format!("window must be odd, got {window}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma must be positive"));
    }
    if !features_cur.same_shape(features_prev)
        || mask_prev.channels() != 1
        || mask_prev.width() != features_cur.width()
        || mask_prev.height() != features_cur.height()
    {
        return Err(Error::invalid("frames and previous mask differ in shape"));
    }
    if mask_prev.data().iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::invalid("previous mask must be binary"));
    }
    let (w, h) = (features_cur.width(), features_cur.height());
    let half = window / 2;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let alpha = Grid::from_fn(w, h, 1, |x, y, _| {
        let f = features_cur.pixel(x, y);
        let mut fg = 0.0;
        let mut all = 0.0;
        for qy in y.saturating_sub(half)..=(y + half).min(h - 1) {
            for qx in x.saturating_sub(half)..=(x + half).min(w - 1) {
                let a = (-feature_distance_sq(f, features_prev.pixel(qx, qy)) * inv).exp();
                all += a;
                if mask_prev.get(qx, qy, 0) == 1.0 {
                    fg += a;
                }
            }
        }
        fg / (all + PROBABILITY_EPS)
    })?;
    LabelProbabilities::from_alpha(alpha)
}

fn check_correspondence(src: &Grid, tgt: &Grid, x: &Grid, x_channels: usize, groups: usize) -> Result<()> {
    if !src.same_shape(tgt) {
        return Err(Error::invalid(format!(
            "source {}x{}x{} and target {}x{}x{} differ",
            src.width(),
            src.height(),
            src.channels(),
            tgt.width(),
            tgt.height(),
            tgt.channels()
        )));
    }
    if x.width() != tgt.width() || x.height() != tgt.height() || x.channels() != x_channels {
        return Err(Error::invalid("solution field does not match the feature grids"));
    }
    if groups == 0 || src.channels() % groups != 0 {
        return Err(Error::invalid(format!(
            "{} channels cannot be split into {groups} groups",
            src.channels()
        )));
    }
    Ok(())
}

/// Data-term value `sum_p |F_S(p + x_p) - F_T(p)|^2` for a 1-channel
/// (horizontal disparity) or 2-channel (flow) field.
pub fn correspondence_energy(src: &Grid, tgt: &Grid, x: &Grid) -> Result<f64> {
    if x.channels() != 1 && x.channels() != 2 {
        return Err(Error::invalid("displacement field needs 1 or 2 channels"));
    }
    check_correspondence(src, tgt, x, x.channels(), 1)?;
    let (w, h, c) = (tgt.width(), tgt.height(), tgt.channels());
    let mut energy = 0.0;
    for py in 0..h {
        for px in 0..w {
            let u = x.get(px, py, 0);
            let v = if x.channels() == 2 { x.get(px, py, 1) } else { 0.0 };
            let tap = BilinearTap::new(w, h, px as f64 + u, py as f64 + v);
            for ch in 0..c {
                let r = tap.sample(src, ch) - tgt.get(px, py, ch);
                energy += r * r;
            }
        }
    }
    Ok(energy)
}

/// Stereo data term: horizontal warp of the source by the disparity field.
pub fn stereo_quadratic(src: &Grid, tgt: &Grid, x: &Grid, groups: usize) -> Result<CorrespondenceModel> {
    check_correspondence(src, tgt, x, 1, groups)?;
    let (w, h, c) = (tgt.width(), tgt.height(), tgt.channels());
    let group_size = c / groups;
    let mut first = Grid::zeros(w, h, groups)?;
    let mut second = Grid::zeros(w, h, groups)?;
    let mut d = Grid::zeros(w, h, 1)?;
    let mut hh = Grid::zeros(w, h, 1)?;
    let mut energy = 0.0;
    for py in 0..h {
        for px in 0..w {
            let tap = BilinearTap::new(w, h, px as f64 + x.get(px, py, 0), py as f64);
            let (mut d_sum, mut h_sum) = (0.0, 0.0);
            for g in 0..groups {
                let (mut dg, mut hg) = (0.0, 0.0);
                for ch in g * group_size..(g + 1) * group_size {
                    let (v, gx, _) = tap.sample_with_gradient(src, ch);
                    let r = v - tgt.get(px, py, ch);
                    dg += gx * r;
                    hg += gx * gx;
                    energy += r * r;
                }
                first.set(px, py, g, dg);
                second.set(px, py, g, hg);
                d_sum += dg;
                h_sum += hg;
            }
            d.set(px, py, 0, d_sum);
            hh.set(px, py, 0, h_sum);
        }
    }
    Ok(CorrespondenceModel {
        model: QuadraticModel::new(d, hh, energy)?,
        grouped: GroupedDerivatives {
            groups,
            first,
            second,
        },
    })
}

/// Optical-flow data term with 2x2 Gauss-Newton blocks `J^T J`.
pub fn flow_quadratic(src: &Grid, tgt: &Grid, x: &Grid, groups: usize) -> Result<CorrespondenceModel> {
    check_correspondence(src, tgt, x, 2, groups)?;
    let (w, h, c) = (tgt.width(), tgt.height(), tgt.channels());
    let group_size = c / groups;
    let mut first = Grid::zeros(w, h, 2 * groups)?;
    let mut second = Grid::zeros(w, h, 3 * groups)?;
    let mut d = Grid::zeros(w, h, 2)?;
    let mut hh = Grid::zeros(w, h, 3)?;
    let mut energy = 0.0;
    for py in 0..h {
        for px in 0..w {
            let tap = BilinearTap::new(
                w,
                h,
                px as f64 + x.get(px, py, 0),
                py as f64 + x.get(px, py, 1),
            );
            let mut acc = [0.0; 5];
            for g in 0..groups {
                let mut part = [0.0; 5];
                for ch in g * group_size..(g + 1) * group_size {
                    let (v, gx, gy) = tap.sample_with_gradient(src, ch);
                    let r = v - tgt.get(px, py, ch);
                    part[0] += gx * r;
                    part[1] += gy * r;
                    part[2] += gx * gx;
                    part[3] += gx * gy;
                    part[4] += gy * gy;
                    energy += r * r;
                }
                first.set(px, py, 2 * g, part[0]);
                first.set(px, py, 2 * g + 1, part[1]);
                for k in 0..3 {
                    second.set(px, py, 3 * g + k, part[2 + k]);
                }
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
            }
            d.set(px, py, 0, acc[0]);
            d.set(px, py, 1, acc[1]);
            for k in 0..3 {
                hh.set(px, py, k, acc[2 + k]);
            }
        }
    }
    Ok(CorrespondenceModel {
        model: QuadraticModel::new(d, hh, energy)?,
        grouped: GroupedDerivatives {
            groups,
            first,
            second,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_features(w: usize, h: usize, c: usize, seed: u64) -> Grid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params: Vec<[f64; 4]> = (0..c)
            .map(|_| {
                [
                    rng.gen_range(0.2..0.6),
                    rng.gen_range(0.2..0.6),
                    rng.gen_range(0.0..6.0),
                    rng.gen_range(0.5..1.5),
                ]
            })
            .collect();
        Grid::from_fn(w, h, c, |x, y, ch| {
            let [a, b, ph, amp] = params[ch];
            amp * (a * x as f64 + ph).sin() * (b * y as f64 - ph).cos()
        })
        .unwrap()
    }

    #[test]
    fn labeling_closed_form_values() {
        let x = Grid::filled(1, 1, 1, 0.0).unwrap();
        let probs = LabelProbabilities::from_alpha(Grid::filled(1, 1, 1, 1.0).unwrap()).unwrap();
        let q = labeling_quadratic(&x, &probs).unwrap();
        assert_eq!(q.d.get(0, 0, 0), -1.0);
        assert_eq!(q.h.get(0, 0, 0), 1.0);

        let balanced = LabelProbabilities::from_alpha(Grid::filled(5, 1, 1, 0.5).unwrap()).unwrap();
        let xs = Grid::from_vec(5, 1, 1, vec![0.0, 0.3, -1.2, 2.0, 0.01]).unwrap();
        let q = labeling_quadratic(&xs, &balanced).unwrap();
        for (i, &xv) in xs.data().iter().enumerate() {
            let t = xv.tanh();
            assert!((q.d.data()[i] - t * (1.0 - t * t)).abs() < 1e-15);
        }
        assert_eq!(q.d.data()[0], 0.0);
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let a = Grid::filled(2, 2, 1, 0.3).unwrap();
        let b = Grid::filled(2, 2, 1, 0.3).unwrap();
        assert!(LabelProbabilities::new(a, b).is_err());
    }

    #[test]
    fn identical_images_have_zero_model() {
        let f = smooth_features(9, 7, 8, 1);
        let zero1 = Grid::zeros(9, 7, 1).unwrap();
        let s = stereo_quadratic(&f, &f, &zero1, 2).unwrap();
        assert!(s.model.d.data().iter().all(|&v| v == 0.0));
        assert_eq!(s.model.energy, 0.0);
        let zero2 = Grid::zeros(9, 7, 2).unwrap();
        let fl = flow_quadratic(&f, &f, &zero2, 4).unwrap();
        assert!(fl.model.d.data().iter().all(|&v| v == 0.0));
        assert_eq!(fl.model.energy, 0.0);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let a = smooth_features(6, 6, 8, 1);
        let b = smooth_features(6, 6, 4, 2);
        let x = Grid::zeros(6, 6, 1).unwrap();
        assert!(matches!(stereo_quadratic(&a, &b, &x, 2), Err(Error::InvalidArgument(_))));
        assert!(matches!(stereo_quadratic(&a, &a, &x, 3), Err(Error::InvalidArgument(_))));
        let x2 = Grid::zeros(6, 6, 2).unwrap();
        assert!(matches!(flow_quadratic(&a, &b, &x2, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn vertical_stripes_make_singular_flow_blocks() {
        let f = Grid::from_fn(12, 10, 4, |x, _, c| ((x as f64) * 0.7 + c as f64).sin()).unwrap();
        let x = Grid::from_fn(12, 10, 2, |_, _, c| if c == 0 { 0.3 } else { -0.2 }).unwrap();
        let fl = flow_quadratic(&f, &f, &x, 2).unwrap();
        for p in 0..fl.model.pixel_count() {
            let [hxx, hxy, hyy] = fl.model.block(p);
            assert!(hxx >= 0.0);
            assert!(hxy.abs() < 1e-12 && hyy.abs() < 1e-12);
        }
    }

    #[test]
    fn grouped_partials_sum_to_full_model() {
        let src = smooth_features(10, 8, 8, 3);
        let tgt = smooth_features(10, 8, 8, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x1 = Grid::from_fn(10, 8, 1, |_, _, _| rng.gen_range(-1.5..1.5)).unwrap();
        let s = stereo_quadratic(&src, &tgt, &x1, 4).unwrap();
        for p in 0..80 {
            let sd: f64 = (0..4).map(|g| s.grouped.first.data()[p * 4 + g]).sum();
            let sh: f64 = (0..4).map(|g| s.grouped.second.data()[p * 4 + g]).sum();
            assert!((sd - s.model.d.data()[p]).abs() <= 1e-9);
            assert!((sh - s.model.h.data()[p]).abs() <= 1e-9);
        }
        let x2 = Grid::from_fn(10, 8, 2, |_, _, _| rng.gen_range(-1.5..1.5)).unwrap();
        let f = flow_quadratic(&src, &tgt, &x2, 2).unwrap();
        for p in 0..80 {
            for k in 0..2 {
                let s: f64 = (0..2).map(|g| f.grouped.first.data()[p * 4 + 2 * g + k]).sum();
                assert!((s - f.model.d.data()[p * 2 + k]).abs() <= 1e-9);
            }
            for k in 0..3 {
                let s: f64 = (0..2).map(|g| f.grouped.second.data()[p * 6 + 3 * g + k]).sum();
                assert!((s - f.model.h.data()[p * 3 + k]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn scribble_probability_cases() {
        // two disjoint clusters in feature space
        let feats = Grid::from_fn(6, 1, 2, |x, _, c| {
            let base = if x < 3 { 0.0 } else { 5.0 };
            base + 0.01 * (x + c) as f64
        })
        .unwrap();
        let scribbles = Scribbles {
            foreground: vec![(0, 0)],
            background: vec![(5, 0)],
        };
        let p = scribble_probabilities(&feats, &scribbles, 0.5, 5).unwrap();
        assert!(p.alpha().get(0, 0, 0) >= 0.99);
        assert!(p.alpha().get(1, 0, 0) >= 0.99);
        assert!(p.alpha().get(4, 0, 0) <= 0.01);

        // midpoint between the two scribble features
        let line = Grid::from_vec(3, 1, 1, vec![-1.0, 0.0, 1.0]).unwrap();
        let s = Scribbles {
            foreground: vec![(0, 0)],
            background: vec![(2, 0)],
        };
        let p = scribble_probabilities(&line, &s, 0.5, 5).unwrap();
        assert!((p.alpha().get(1, 0, 0) - 0.5).abs() <= 1e-6);

        let empty = Scribbles {
            foreground: vec![],
            background: vec![(0, 0)],
        };
        assert!(scribble_probabilities(&line, &empty, 0.5, 5).is_err());
    }

    #[test]
    fn temporal_probability_cases() {
        let feats = Grid::filled(7, 7, 3, 0.2).unwrap();
        let all_fg = Grid::filled(7, 7, 1, 1.0).unwrap();
        let p = temporal_probabilities(&feats, &feats, &all_fg, 9, 0.5).unwrap();
        assert!(p.alpha().data().iter().all(|&a| (a - 1.0).abs() < 1e-9));

        // uniform features: alpha is the foreground fraction of the window
        let half = Grid::from_fn(7, 7, 1, |x, _, _| if x < 3 { 1.0 } else { 0.0 }).unwrap();
        let p = temporal_probabilities(&feats, &feats, &half, 3, 0.5).unwrap();
        assert!((p.alpha().get(3, 3, 0) - 3.0 / 9.0).abs() < 1e-9);
        assert!((p.alpha().get(0, 0, 0) - 1.0).abs() < 1e-9);
        assert!((p.alpha().get(2, 2, 0) - 6.0 / 9.0).abs() < 1e-9);

        assert!(temporal_probabilities(&feats, &feats, &half, 4, 0.5).is_err());
        let nonbinary = Grid::filled(7, 7, 1, 0.5).unwrap();
        assert!(temporal_probabilities(&feats, &feats, &nonbinary, 3, 0.5).is_err());
    }
}
