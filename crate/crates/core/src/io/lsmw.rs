//! Generator weight files ("LSMW").
//!
//! Header: magic, version, level count, then `c, m, K` per level. Each level
//! stores its layers in pipeline order as `rows, cols, weights (row-major),
//! bias (rows)`. A CRC32 of everything before it closes the file.

use std::path::Path;

use super::{push_f32s, read_bytes, write_bytes, Reader};
use crate::basis::{AffineLayer, GeneratorWeights, LevelShape, LevelWeights};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"LSMW";
const VERSION: u32 = 1;

pub fn encode_lsmw(weights: &GeneratorWeights) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(weights.levels.len() as u32).to_le_bytes());
    for lw in &weights.levels {
        let s = lw.shape();
        for v in [s.c, s.m, s.k] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for lw in &weights.levels {
        for layer in lw.layers() {
            out.extend_from_slice(&(layer.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(layer.cols() as u32).to_le_bytes());
            push_f32s(&mut out, layer.weights());
            push_f32s(&mut out, layer.bias());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_lsmw(bytes: &[u8]) -> Result<GeneratorWeights> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad weight-file magic"));
    }
    if bytes.len() < 8 {
        return Err(Error::format(4, "truncated weight file"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(body);
    if stored != actual {
        return Err(Error::InvalidWeights(format!(
            "checksum mismatch: file says {stored:08x}, contents hash to {actual:08x}"
        )));
    }

    let mut r = Reader::new(body);
    r.take(4, "magic")?;
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported weight-file version {version}")));
    }
    let off = r.offset();
    let count = r.u32("level count")? as usize;
    if count == 0 || count > 16 {
        return Err(Error::format(off, format!("implausible level count {count}")));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let off = r.offset();
        let (c, m, k) = (r.u32("c")? as usize, r.u32("m")? as usize, r.u32("K")? as usize);
        let shape = LevelShape::new(c, k)
            .map_err(|e| Error::format(off, format!("bad level shape: {e}")))?;
        if shape.m != m {
            return Err(Error::InvalidWeights(format!("level declares m={m}, but c={c} implies m={}", shape.m)));
        }
        shapes.push(shape);
    }
    let mut levels = Vec::with_capacity(count);
    for shape in shapes {
        let mut layers = Vec::with_capacity(LevelWeights::LAYER_COUNT);
        for _ in 0..LevelWeights::LAYER_COUNT {
            let off = r.offset();
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            if rows == 0 || cols == 0 || rows > 1 << 16 || cols > 1 << 16 {
                return Err(Error::format(off, format!("implausible matrix shape {rows}x{cols}")));
            }
            let weights = r.f32s(rows * cols, "matrix")?;
            let bias = r.f32s(rows, "bias")?;
            layers.push(AffineLayer::new(rows, cols, weights, bias)?);
        }
        levels.push(LevelWeights::from_layers(shape, layers)?);
    }
    r.expect_end()?;
    Ok(GeneratorWeights { levels })
}

pub fn write_lsmw(path: impl AsRef<Path>, weights: &GeneratorWeights) -> Result<()> {
    write_bytes(path.as_ref(), &encode_lsmw(weights))
}

pub fn read_lsmw(path: impl AsRef<Path>) -> Result<GeneratorWeights> {
    decode_lsmw(&read_bytes(path.as_ref())?)
}
