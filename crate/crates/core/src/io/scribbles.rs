//! Scribble polylines as exchanged in JSON.

use serde::{Deserialize, Serialize};

use crate::data_terms::Scribbles;
use crate::error::{Error, Result};

/// `{"foreground": [[[x, y], ...], ...], "background": [...]}`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Polylines {
    #[serde(default)]
    pub foreground: Vec<Vec<[i64; 2]>>,
    #[serde(default)]
    pub background: Vec<Vec<[i64; 2]>>,
}

impl Polylines {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::invalid(format!("scribble JSON: {e}")))
    }

    pub fn is_empty(&self) -> bool {
        self.foreground.iter().chain(&self.background).all(Vec::is_empty)
    }

    /// Appends another batch of strokes.
    pub fn extend(&mut self, other: &Polylines) {
        self.foreground.extend(other.foreground.iter().cloned());
        self.background.extend(other.background.iter().cloned());
    }

    /// Rasterizes every stroke with Bresenham lines; points must lie inside
    /// the image.
    pub fn rasterize(&self, width: usize, height: usize) -> Result<Scribbles> {
        let draw = |lines: &[Vec<[i64; 2]>]| -> Result<Vec<(usize, usize)>> {
            let mut out = Vec::new();
            for line in lines {
                for &[x, y] in line {
                    if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
                        return Err(Error::invalid(format!(
                            "scribble point ({x}, {y}) outside {width}x{height}"
                        )));
                    }
                }
                match line.as_slice() {
                    [] => {}
                    [p] => out.push((p[0] as usize, p[1] as usize)),
                    pts => {
                        for (i, pair) in pts.windows(2).enumerate() {
                            let seg = bresenham((pair[0][0], pair[0][1]), (pair[1][0], pair[1][1]));
                            // consecutive segments share their joint
                            let skip = usize::from(i > 0);
                            out.extend(seg.into_iter().skip(skip).map(|(x, y)| (x as usize, y as usize)));
                        }
                    }
                }
            }
            Ok(out)
        };
        Ok(Scribbles {
            foreground: draw(&self.foreground)?,
            background: draw(&self.background)?,
        })
    }
}

/// Integer points on the segment from `a` to `b`, both ends included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - x).abs();
    let dy = -(b.1 - y).abs();
    let sx = if x < b.0 { 1 } else { -1 };
    let sy = if y < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx.max(-dy) + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}
