//! Middlebury optical flow files.

use std::path::Path;

use super::{dimension, push_f32s, read_bytes, write_bytes, Reader};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const FLO_MAGIC: f32 = 202021.25;

/// Encodes a 2-channel field; values are stored as f32.
pub fn encode_flo(flow: &Grid) -> Result<Vec<u8>> {
    if flow.channels() != 2 {
        return Err(Error::invalid("flow files hold exactly two channels"));
    }
    let mut out = Vec::with_capacity(12 + flow.data().len() * 4);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    push_f32s(&mut out, flow.data());
    Ok(out)
}

pub fn decode_flo(bytes: &[u8]) -> Result<Grid> {
    let mut r = Reader::new(bytes);
    let magic = r.f32("magic")?;
    if magic != FLO_MAGIC {
        return Err(Error::format(0, format!("bad .flo magic {magic}")));
    }
    let w = dimension(r.i32("width")? as i64, 4, "width")?;
    let h = dimension(r.i32("height")? as i64, 8, "height")?;
    let data = r.f32s(w * h * 2, "flow data")?;
    r.expect_end()?;
    Grid::from_vec(w, h, 2, data)
}

pub fn write_flo(path: impl AsRef<Path>, flow: &Grid) -> Result<()> {
    write_bytes(path.as_ref(), &encode_flo(flow)?)
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<Grid> {
    decode_flo(&read_bytes(path.as_ref())?)
}
