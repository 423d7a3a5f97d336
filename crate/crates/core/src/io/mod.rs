//! File formats: optical flow (`.flo`), disparity (PFM), PNG images and
//! masks, precomputed feature pyramids (LSMF), generator weights (LSMW),
//! scribble polylines and JSON run reports.

mod flo;
mod lsmf;
mod lsmw;
mod pfm;
mod png;
mod report;
mod scribbles;

use std::path::Path;

pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC};
pub use lsmf::{decode_lsmf, encode_lsmf, read_lsmf, write_lsmf};
pub use lsmw::{decode_lsmw, encode_lsmw, read_lsmw, write_lsmw};
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm};
pub use png::{
    decode_mask_png, decode_png, encode_mask_png, encode_png, png_dimensions, read_png, read_png_mask,
    write_png, write_png_mask,
};
pub use report::{IterationReport, LevelReport, TaskReport};
pub use scribbles::{bresenham, Polylines};

use crate::error::{Error, Result};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor that reports byte offsets in its errors.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::format(self.offset(), format!("truncated while reading {what}"))),
        }
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("take returned N bytes"))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn i32(&mut self, what: &str) -> Result<i32> {
        Ok(i32::from_le_bytes(self.array(what)?))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array(what)?))
    }

    /// `count` little-endian floats widened to f64.
    fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(count.checked_mul(4).unwrap_or(usize::MAX), what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect())
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.offset(),
                format!("{} unexpected trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Checks a decoded dimension is usable, reporting the header offset on failure.
fn dimension(value: i64, offset: u64, what: &str) -> Result<usize> {
    if value <= 0 || value > (1 << 20) {
        return Err(Error::format(offset, format!("implausible {what} {value}")));
    }
    Ok(value as usize)
}
