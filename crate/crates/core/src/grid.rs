//! Dense row-major, channel-interleaved 2D grids.
//!
//! A [`Grid`] stores feature maps, solution fields and per-pixel derivative
//! maps alike. Sampling clamps to the border pixel, so any real coordinate is
//! valid input.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        check_dims(width, height, channels)?;
        Ok(Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        })
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "grid data length {} != {}x{}x{}",
                data.len(),
                width,
                height,
                channels
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grid by evaluating `f(x, y, ch)` at every entry.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        check_dims(width, height, channels)?;
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, ch: usize) -> usize {
        debug_assert!(x < self.width && y < self.height && ch < self.channels);
        (y * self.width + x) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[self.index(x, y, ch)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ch: usize, value: f64) {
        let i = self.index(x, y, ch);
        self.data[i] = value;
    }

    /// All channel values of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    /// Copies one channel out as a row-major vector of length `width * height`.
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        assert!(ch < self.channels, "channel {ch} out of range");
        self.data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .copied()
            .collect()
    }

    /// Single-channel grid holding channel `ch`.
    pub fn extract_channel(&self, ch: usize) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.channel(ch),
        }
    }

    /// Keeps the first `count` channels.
    pub fn leading_channels(&self, count: usize) -> Result<Grid> {
        if count == 0 || count > self.channels {
            return Err(Error::invalid(format!(
                "cannot take {count} of {} channels",
                self.channels
            )));
        }
        Grid::from_fn(self.width, self.height, count, |x, y, c| self.get(x, y, c))
    }

    /// Concatenates grids of identical spatial size along the channel axis.
    pub fn concat_channels(parts: &[&Grid]) -> Result<Grid> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("no grids to concatenate"))?;
        let (w, h) = (first.width, first.height);
        if parts.iter().any(|g| g.width != w || g.height != h) {
            return Err(Error::invalid("spatial size mismatch in channel concat"));
        }
        let channels: usize = parts.iter().map(|g| g.channels).sum();
        let mut data = Vec::with_capacity(w * h * channels);
        for p in 0..w * h {
            for g in parts {
                data.extend_from_slice(&g.data[p * g.channels..(p + 1) * g.channels]);
            }
        }
        Grid::from_vec(w, h, channels, data)
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Bilinear interpolation of channel `ch` at a subpixel location.
    ///
    /// Coordinates outside the grid clamp to the border pixel.
    pub fn bilinear_sample(&self, x: f64, y: f64, ch: usize) -> f64 {
        assert!(ch < self.channels, "channel {ch} out of range");
        BilinearTap::new(self.width, self.height, x, y).sample(self, ch)
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 || channels == 0 {
        return Err(Error::invalid(format!(
            "grid dimensions must be positive, got {width}x{height}x{channels}"
        )));
    }
    Ok(())
}

/// Precomputed bilinear weights for one sampling location.
///
/// Also carries the partial derivatives of the interpolant with respect to
/// the sampling coordinates; they are zero along an axis whose coordinate was
/// clamped, matching the flat extension beyond the border.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    fx: f64,
    fy: f64,
    x_active: bool,
    y_active: bool,
}

impl BilinearTap {
    pub fn new(width: usize, height: usize, x: f64, y: f64) -> Self {
        let (x0, x1, fx, x_active) = axis(width, x);
        let (y0, y1, fy, y_active) = axis(height, y);
        Self {
            x0,
            x1,
            y0,
            y1,
            fx,
            fy,
            x_active,
            y_active,
        }
    }

    #[inline]
    fn corners(&self, g: &Grid, ch: usize) -> (f64, f64, f64, f64) {
        (
            g.get(self.x0, self.y0, ch),
            g.get(self.x1, self.y0, ch),
            g.get(self.x0, self.y1, ch),
            g.get(self.x1, self.y1, ch),
        )
    }

    #[inline]
    pub fn sample(&self, g: &Grid, ch: usize) -> f64 {
        let (v00, v10, v01, v11) = self.corners(g, ch);
        let top = v00 + self.fx * (v10 - v00);
        let bottom = v01 + self.fx * (v11 - v01);
        top + self.fy * (bottom - top)
    }

    /// Value and exact partial derivatives `(v, dv/dx, dv/dy)` of the interpolant.
    #[inline]
    pub fn sample_with_gradient(&self, g: &Grid, ch: usize) -> (f64, f64, f64) {
        let (v00, v10, v01, v11) = self.corners(g, ch);
        let top = v00 + self.fx * (v10 - v00);
        let bottom = v01 + self.fx * (v11 - v01);
        let v = top + self.fy * (bottom - top);
        let gx = if self.x_active {
            (1.0 - self.fy) * (v10 - v00) + self.fy * (v11 - v01)
        } else {
            0.0
        };
        let gy = if self.y_active { bottom - top } else { 0.0 };
        (v, gx, gy)
    }
}

#[inline]
fn axis(len: usize, coord: f64) -> (usize, usize, f64, bool) {
    if len == 1 {
        return (0, 0, 0.0, false);
    }
    let max = (len - 1) as f64;
    // NaN falls through to the lower border.
    if !(coord > 0.0) {
        return (0, 0, 0.0, false);
    }
    if coord >= max {
        return (len - 1, len - 1, 0.0, false);
    }
    let i0 = coord.floor() as usize;
    (i0, i0 + 1, coord - i0 as f64, true)
}

/// Summed-area table, one per channel.
///
/// Entry `(x, y)` holds the sum over the inclusive rectangle `[0..=x] x [0..=y]`.
pub fn integral_image(g: &Grid) -> Grid {
    let (w, h, c) = (g.width, g.height, g.channels);
    let mut out = g.clone();
    for y in 0..h {
        let mut row = vec![0.0; c];
        for x in 0..w {
            for ch in 0..c {
                row[ch] += g.get(x, y, ch);
                let above = if y > 0 { out.get(x, y - 1, ch) } else { 0.0 };
                out.set(x, y, ch, row[ch] + above);
            }
        }
    }
    out
}

/// Per-pixel mean over a `kernel x kernel` window clipped at the borders.
///
/// `integral` must come from [`integral_image`]. The divisor is the clipped
/// window area, and the output keeps the input's spatial size.
pub fn box_mean(integral: &Grid, kernel: usize) -> Result<Grid> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::invalid(format!(
            "box kernel must be odd and >= 1, got {kernel}"
        )));
    }
    let (w, h, c) = (integral.width, integral.height, integral.channels);
    let half = kernel / 2;
    let mut out = Grid::zeros(w, h, c)?;
    for y in 0..h {
        let y_lo = y.saturating_sub(half);
        let y_hi = (y + half).min(h - 1);
        for x in 0..w {
            let x_lo = x.saturating_sub(half);
            let x_hi = (x + half).min(w - 1);
            let area = ((x_hi - x_lo + 1) * (y_hi - y_lo + 1)) as f64;
            for ch in 0..c {
                let mut s = integral.get(x_hi, y_hi, ch);
                if x_lo > 0 {
                    s -= integral.get(x_lo - 1, y_hi, ch);
                }
                if y_lo > 0 {
                    s -= integral.get(x_hi, y_lo - 1, ch);
                }
                if x_lo > 0 && y_lo > 0 {
                    s += integral.get(x_lo - 1, y_lo - 1, ch);
                }
                out.set(x, y, ch, s / area);
            }
        }
    }
    Ok(out)
}
