use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const FRAME_SIDE: usize = 16;

/// World half-extent covered by a frame.
const EXTENT: f64 = 1.1;

/// A 16×16 grayscale frame, row-major with row 0 at the top.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub pixels: Vec<f64>,
}

/// Soft rasterizer: each shape contributes `peak·exp(−d²/2σ²)` and pixels
/// keep the maximum contribution.
pub(crate) struct Canvas {
    pixels: Vec<f64>,
}

impl Canvas {
    pub(crate) fn new() -> Self {
        Canvas {
            pixels: vec![0.0; FRAME_SIDE * FRAME_SIDE],
        }
    }

    fn paint(&mut self, peak: f64, sigma: f64, dist: impl Fn(f64, f64) -> f64) {
        let cell = 2.0 * EXTENT / FRAME_SIDE as f64;
        for row in 0..FRAME_SIDE {
            let y = EXTENT - (row as f64 + 0.5) * cell;
            for col in 0..FRAME_SIDE {
                let x = -EXTENT + (col as f64 + 0.5) * cell;
                let d = dist(x, y);
                let v = peak * (-d * d / (2.0 * sigma * sigma)).exp();
                let p = &mut self.pixels[row * FRAME_SIDE + col];
                *p = p.max(v);
            }
        }
    }

    pub(crate) fn dot(&mut self, at: (f64, f64), peak: f64, sigma: f64) {
        self.paint(peak, sigma, |x, y| (x - at.0).hypot(y - at.1));
    }

    pub(crate) fn segment(&mut self, a: (f64, f64), b: (f64, f64), peak: f64, sigma: f64) {
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        self.paint(peak, sigma, |x, y| {
            let t = if len2 > 0.0 {
                (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (x - a.0 - t * dx).hypot(y - a.1 - t * dy)
        });
    }

    pub(crate) fn finish(self) -> Frame {
        Frame {
            pixels: self.pixels.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        }
    }
}

impl Frame {
    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{FRAME_SIDE} {FRAME_SIDE}\n255\n").into_bytes();
        out.extend(self.pixels.iter().map(|p| (p * 255.0).round() as u8));
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    /// Mean absolute per-pixel difference.
    pub fn distance(&self, other: &Frame) -> f64 {
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / self.pixels.len() as f64
    }
}
