//! Single-channel Portable Float Map files.

use std::path::Path;

use super::{dimension, read_bytes, write_bytes};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Grayscale PFM, little-endian (negative scale), rows bottom to top.
pub fn encode_pfm(map: &Grid) -> Result<Vec<u8>> {
    if map.channels() != 1 {
        return Err(Error::invalid("PFM writer expects one channel"));
    }
    let (w, h) = (map.width(), map.height());
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&(map.get(x, y, 0) as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Reads a whitespace-delimited header token starting at `*pos`.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<(&'a str, u64)> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format(start as u64, "truncated PFM header"));
    }
    let text = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::format(start as u64, "non-ASCII PFM header"))?;
    Ok((text, start as u64))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Grid> {
    let mut pos = 0;
    let (kind, _) = token(bytes, &mut pos)?;
    match kind {
        "Pf" => {}
        "PF" => return Err(Error::format(0, "colour PFM is not a disparity map")),
        _ => return Err(Error::format(0, format!("bad PFM magic {kind:?}"))),
    }
    let parse_dim = |text: &str, off: u64, what: &str| -> Result<usize> {
        let v: i64 = text
            .parse()
            .map_err(|_| Error::format(off, format!("bad PFM {what} {text:?}")))?;
        dimension(v, off, what)
    };
    let (wt, wo) = token(bytes, &mut pos)?;
    let w = parse_dim(wt, wo, "width")?;
    let (ht, ho) = token(bytes, &mut pos)?;
    let h = parse_dim(ht, ho, "height")?;
    let (st, so) = token(bytes, &mut pos)?;
    let scale: f64 = st
        .parse()
        .map_err(|_| Error::format(so, format!("bad PFM scale {st:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format(so, "PFM scale must be finite and non-zero"));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::format(pos as u64, "missing newline after PFM scale"));
    }
    pos += 1;
    let need = w * h * 4;
    let raster = &bytes[pos..];
    if raster.len() != need {
        return Err(Error::format(
            pos as u64,
            format!("PFM raster has {} bytes, expected {need}", raster.len()),
        ));
    }
    let little = scale < 0.0;
    let mut grid = Grid::zeros(w, h, 1)?;
    for (i, chunk) in raster.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("chunk of 4");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (x, row) = (i % w, i / w);
        grid.set(x, h - 1 - row, 0, v as f64);
    }
    Ok(grid)
}

pub fn write_pfm(path: impl AsRef<Path>, map: &Grid) -> Result<()> {
    write_bytes(path.as_ref(), &encode_pfm(map)?)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Grid> {
    decode_pfm(&read_bytes(path.as_ref())?)
}
