//! Precomputed feature pyramids ("LSMF").

use std::path::Path;

use super::{dimension, push_f32s, read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::grid::Grid;

const MAGIC: &[u8; 4] = b"LSMF";
const VERSION: u32 = 1;

/// Levels coarse to fine, each stored row-major and channel-interleaved.
pub fn encode_lsmf(levels: &[Grid]) -> Result<Vec<u8>> {
    if levels.is_empty() {
        return Err(Error::invalid("feature file needs at least one level"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(levels.len() as u32).to_le_bytes());
    for g in levels {
        for v in [g.width(), g.height(), g.channels()] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
    }
    for g in levels {
        push_f32s(&mut out, g.data());
    }
    Ok(out)
}

pub fn decode_lsmf(bytes: &[u8]) -> Result<Vec<Grid>> {
    let mut r = Reader::new(bytes);
    if &r.array::<4>("magic")? != MAGIC {
        return Err(Error::format(0, "bad feature-file magic"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported feature-file version {version}")));
    }
    let off = r.offset();
    let count = r.u32("level count")? as usize;
    if count == 0 || count > 16 {
        return Err(Error::format(off, format!("implausible level count {count}")));
    }
    let mut dims = Vec::with_capacity(count);
    for _ in 0..count {
        let off = r.offset();
        let w = dimension(r.u32("width")? as i64, off, "width")?;
        let h = dimension(r.u32("height")? as i64, off + 4, "height")?;
        let c = dimension(r.u32("channels")? as i64, off + 8, "channel count")?;
        dims.push((w, h, c));
    }
    let levels = dims
        .into_iter()
        .map(|(w, h, c)| Grid::from_vec(w, h, c, r.f32s(w * h * c, "feature data")?))
        .collect::<Result<Vec<_>>>()?;
    r.expect_end()?;
    Ok(levels)
}

pub fn write_lsmf(path: impl AsRef<Path>, levels: &[Grid]) -> Result<()> {
    write_bytes(path.as_ref(), &encode_lsmf(levels)?)
}

pub fn read_lsmf(path: impl AsRef<Path>) -> Result<Vec<Grid>> {
    decode_lsmf(&read_bytes(path.as_ref())?)
}
