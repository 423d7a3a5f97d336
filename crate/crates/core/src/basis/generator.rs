//! Basis generation network executed with externally supplied weights.
//!
//! Per level with `c` feature channels, `m = c / 8` groups and `K` outputs:
//!
//! 1. `c -> m` channel mix of the image features (1x1 convolution)
//! 2. concatenate image context (m), minimization context (2m) and the
//!    normalized solution (1): `3m + 1` channels
//! 3. box-mean pooling at four kernel sizes through one integral image
//! 4. per-scale `(3m + 1) -> 2m` mixes, concatenated to `8m` channels
//! 5. four residual blocks `x + A2 relu(A1 x)` at width `8m`
//! 6. `8m -> K` mix; each output channel becomes one basis column

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::context::MinimizationContext;
use crate::error::{Error, Result};
use crate::grid::{box_mean, integral_image, Grid};
use crate::solver::SubspaceBasis;

pub const POOL_SCALES: usize = 4;
pub const RESIDUAL_BLOCKS: usize = 4;

/// Channel configuration of one pyramid level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelShape {
    pub c: usize,
    pub m: usize,
    pub k: usize,
}

impl LevelShape {
    /// Shape with the default group count `m = c / 8`.
    pub fn new(c: usize, k: usize) -> Result<Self> {
        if c < 8 || c % 8 != 0 || k == 0 {
            return Err(Error::invalid(format!(
                "level needs c divisible by 8 and K >= 1, got c={c}, K={k}"
            )));
        }
        Ok(Self { c, m: c / 8, k })
    }

    /// Channel counts along the pipeline: `[m, 2m, 3m + 1, 8m, K]`.
    pub fn schedule(&self) -> [usize; 5] {
        let m = self.m;
        [m, 2 * m, 3 * m + 1, POOL_SCALES * 2 * m, self.k]
    }

    fn pooled_in(&self) -> usize {
        3 * self.m + 1
    }

    fn hidden(&self) -> usize {
        POOL_SCALES * 2 * self.m
    }
}

/// Per-pixel affine map `y = W x + b` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineLayer {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl AffineLayer {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || weights.len() != rows * cols || bias.len() != rows {
            return Err(Error::InvalidWeights(format!(
                "layer {rows}x{cols} has {} weights and {} biases",
                weights.len(),
                bias.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    /// Rectangular identity with zero bias.
    pub fn identity(rows: usize, cols: usize) -> Self {
        let mut weights = vec![0.0; rows * cols];
        for i in 0..rows.min(cols) {
            weights[i * cols + i] = 1.0;
        }
        Self {
            rows,
            cols,
            weights,
            bias: vec![0.0; rows],
        }
    }

    pub fn constant(rows: usize, cols: usize, weight: f64, bias: f64) -> Self {
        Self {
            rows,
            cols,
            weights: vec![weight; rows * cols],
            bias: vec![bias; rows],
        }
    }

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let scale = (1.0 / cols as f64).sqrt();
        // rounded to f32 so the values survive a weight file unchanged
        let mut draw = |lim: f64| rng.gen_range(-lim..lim) as f32 as f64;
        Self {
            rows,
            cols,
            weights: (0..rows * cols).map(|_| draw(scale)).collect(),
            bias: (0..rows).map(|_| draw(0.1)).collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn apply(&self, input: &Grid) -> Result<Grid> {
        if input.channels() != self.cols {
            return Err(Error::InvalidWeights(format!(
                "layer expects {} input channels, got {}",
                self.cols,
                input.channels()
            )));
        }
        Grid::from_fn(input.width(), input.height(), self.rows, |x, y, r| {
            let px = input.pixel(x, y);
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            self.bias[r] + row.iter().zip(px).map(|(w, v)| w * v).sum::<f64>()
        })
    }
}

/// Weights of one level, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelWeights {
    shape: LevelShape,
    image_mix: AffineLayer,
    scale_mix: Vec<AffineLayer>,
    res_blocks: Vec<(AffineLayer, AffineLayer)>,
    final_mix: AffineLayer,
}

impl LevelWeights {
    /// Number of matrices stored per level.
    pub const LAYER_COUNT: usize = 1 + POOL_SCALES + 2 * RESIDUAL_BLOCKS + 1;

    /// Assembles a level from layers in file order and checks every shape.
    pub fn from_layers(shape: LevelShape, layers: Vec<AffineLayer>) -> Result<Self> {
        if layers.len() != Self::LAYER_COUNT {
            return Err(Error::InvalidWeights(format!(
                "expected {} layers per level, got {}",
                Self::LAYER_COUNT,
                layers.len()
            )));
        }
        let mut it = layers.into_iter();
        let mut next = || it.next().expect("length checked above");
        let image_mix = next();
        let scale_mix: Vec<_> = (0..POOL_SCALES).map(|_| next()).collect();
        let res_blocks: Vec<_> = (0..RESIDUAL_BLOCKS).map(|_| (next(), next())).collect();
        let final_mix = next();
        let lw = Self {
            shape,
            image_mix,
            scale_mix,
            res_blocks,
            final_mix,
        };
        lw.validate()?;
        Ok(lw)
    }

    fn validate(&self) -> Result<()> {
        let s = self.shape;
        let expect = |layer: &AffineLayer, rows: usize, cols: usize, what: &str| {
            if layer.rows != rows || layer.cols != cols {
                Err(Error::InvalidWeights(format!(
                    "{what} is {}x{}, expected {rows}x{cols}",
                    layer.rows, layer.cols
                )))
            } else {
                Ok(())
            }
        };
        expect(&self.image_mix, s.m, s.c, "image-context mix")?;
        for l in &self.scale_mix {
            expect(l, 2 * s.m, s.pooled_in(), "per-scale mix")?;
        }
        for (a, b) in &self.res_blocks {
            expect(a, s.hidden(), s.hidden(), "residual affine")?;
            expect(b, s.hidden(), s.hidden(), "residual affine")?;
        }
        expect(&self.final_mix, s.k, s.hidden(), "final mix")
    }

    pub fn shape(&self) -> LevelShape {
        self.shape
    }

    pub fn layers(&self) -> impl Iterator<Item = &AffineLayer> {
        std::iter::once(&self.image_mix)
            .chain(&self.scale_mix)
            .chain(self.res_blocks.iter().flat_map(|(a, b)| [a, b]))
            .chain(std::iter::once(&self.final_mix))
    }

    fn build(shape: LevelShape, mut make: impl FnMut(usize, usize) -> AffineLayer) -> Self {
        let h = shape.hidden();
        let image_mix = make(shape.m, shape.c);
        let scale_mix = (0..POOL_SCALES).map(|_| make(2 * shape.m, shape.pooled_in())).collect();
        let res_blocks = (0..RESIDUAL_BLOCKS).map(|_| (make(h, h), make(h, h))).collect();
        let final_mix = make(shape.k, h);
        Self {
            shape,
            image_mix,
            scale_mix,
            res_blocks,
            final_mix,
        }
    }

    pub fn identity(shape: LevelShape) -> Self {
        Self::build(shape, AffineLayer::identity)
    }

    pub fn constant(shape: LevelShape, weight: f64, bias: f64) -> Self {
        Self::build(shape, |r, c| AffineLayer::constant(r, c, weight, bias))
    }

    pub fn random(shape: LevelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(shape, |r, c| AffineLayer::random(r, c, &mut rng))
    }
}

/// Generator weights for every pyramid level, coarse to fine.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorWeights {
    pub levels: Vec<LevelWeights>,
}

impl GeneratorWeights {
    pub fn identity(shapes: &[LevelShape]) -> Self {
        Self {
            levels: shapes.iter().map(|&s| LevelWeights::identity(s)).collect(),
        }
    }

    pub fn random(shapes: &[LevelShape], seed: u64) -> Self {
        Self {
            levels: shapes
                .iter()
                .enumerate()
                .map(|(i, &s)| LevelWeights::random(s, seed.wrapping_add(i as u64)))
                .collect(),
        }
    }

    pub fn shapes(&self) -> Vec<LevelShape> {
        self.levels.iter().map(LevelWeights::shape).collect()
    }
}

/// Pooling kernels `{1, w/8, w/4, w/2}`, each rounded up to an odd size.
pub fn default_pool_kernels(width: usize) -> [usize; POOL_SCALES] {
    let odd = |v: usize| if v % 2 == 0 { v + 1 } else { v };
    [1, odd(width / 8), odd(width / 4), odd(width / 2)]
}

/// Box-mean pooled copies of `features`, sharing one integral image.
pub fn pool_multiscale(features: &Grid, kernels: &[usize]) -> Result<Vec<Grid>> {
    let ii = integral_image(features);
    kernels.iter().map(|&k| box_mean(&ii, k)).collect()
}

/// Channel counts observed while executing the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PipelineTrace {
    pub image_context: usize,
    pub min_context: usize,
    pub concatenated: usize,
    pub per_scale: [usize; POOL_SCALES],
    pub multiscale: usize,
    pub residual: [usize; RESIDUAL_BLOCKS],
    pub output: usize,
}

impl PipelineTrace {
    /// The trace in `[m, 2m, 3m + 1, 8m, K]` form.
    pub fn schedule(&self) -> [usize; 5] {
        [
            self.image_context,
            self.min_context,
            self.concatenated,
            self.multiscale,
            self.output,
        ]
    }
}

pub fn generate_basis(
    image_ctx: &Grid,
    min_ctx: &MinimizationContext,
    weights: &LevelWeights,
    k: usize,
) -> Result<SubspaceBasis> {
    generate_basis_traced(image_ctx, min_ctx, weights, k).map(|(b, _)| b)
}

pub fn generate_basis_traced(
    image_ctx: &Grid,
    min_ctx: &MinimizationContext,
    weights: &LevelWeights,
    k: usize,
) -> Result<(SubspaceBasis, PipelineTrace)> {
    let s = weights.shape;
    if s.k != k {
        return Err(Error::InvalidWeights(format!(
            "weights produce K={}, level asks for K={k}",
            s.k
        )));
    }
    if image_ctx.channels() != s.c || min_ctx.groups() != s.m || min_ctx.grouped_second.channels() != s.m {
        return Err(Error::InvalidWeights(format!(
            "weights expect c={}, m={}; got {} feature and {} context channels",
            s.c,
            s.m,
            image_ctx.channels(),
            min_ctx.groups()
        )));
    }
    let (w, h) = (image_ctx.width(), image_ctx.height());
    let sizes_match = [&min_ctx.grouped_first, &min_ctx.grouped_second, &min_ctx.normalized_x]
        .iter()
        .all(|g| g.width() == w && g.height() == h);
    if !sizes_match {
        return Err(Error::invalid("context grids differ in spatial size"));
    }

    let image = weights.image_mix.apply(image_ctx)?;
    let input = Grid::concat_channels(&[
        &image,
        &min_ctx.grouped_first,
        &min_ctx.grouped_second,
        &min_ctx.normalized_x,
    ])?;
    let pooled = pool_multiscale(&input, &default_pool_kernels(w))?;
    let projected = pooled
        .iter()
        .zip(&weights.scale_mix)
        .map(|(p, layer)| layer.apply(p))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Grid> = projected.iter().collect();
    let mut hidden = Grid::concat_channels(&refs)?;
    let multiscale = hidden.channels();

    let mut residual = [0; RESIDUAL_BLOCKS];
    for (i, (a1, a2)) in weights.res_blocks.iter().enumerate() {
        let inner = a1.apply(&hidden)?.map(|v| v.max(0.0));
        let branch = a2.apply(&inner)?;
        for (hv, bv) in hidden.data_mut().iter_mut().zip(branch.data()) {
            *hv += bv;
        }
        residual[i] = hidden.channels();
    }
    let out = weights.final_mix.apply(&hidden)?;

    let trace = PipelineTrace {
        image_context: image.channels(),
        min_context: min_ctx.grouped_first.channels() + min_ctx.grouped_second.channels(),
        concatenated: input.channels(),
        per_scale: std::array::from_fn(|i| projected[i].channels()),
        multiscale,
        residual,
        output: out.channels(),
    };
    let n = w * h;
    let columns: Vec<f64> = (0..k).flat_map(|ch| out.channel(ch)).collect();
    let basis = SubspaceBasis::orthonormalized(n, k, columns)?;
    Ok((basis, trace))
}
