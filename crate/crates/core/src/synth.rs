//! Procedural test clips.

use crate::image::Image;
use crate::io::FrameSequence;

/// Pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.y0..self.y1).contains(&row) && (self.x0..self.x1).contains(&col)
    }
}

/// Coverage of `[lo, hi]` over the unit pixel centered at `c`.
fn coverage(c: f64, lo: f64, hi: f64) -> f64 {
    ((hi.min(c + 0.5) - lo.max(c - 0.5)).max(0.0)).min(1.0)
}

fn background(width: usize, height: usize, row: usize, col: usize) -> [f64; 3] {
    let u = (col as f64 + 0.5) / width as f64;
    let v = (row as f64 + 0.5) / height as f64;
    [0.15 + 0.5 * u, 0.2 + 0.4 * v, 0.55 - 0.3 * u * v]
}

/// A box-filtered square of side `width / 4` moving left to right and down
/// across a smooth color gradient.
pub fn moving_square(width: usize, height: usize, frames: usize) -> FrameSequence {
    let side = (width.min(height) as f64 / 4.0).max(2.0);
    let color = [0.95, 0.85, 0.2];
    let seq = (0..frames)
        .map(|t| {
            let a = if frames > 1 {
                t as f64 / (frames - 1) as f64
            } else {
                0.0
            };
            let x0 = 0.15 * width as f64 + a * (0.55 * width as f64 - side * 0.5);
            let y0 = 0.2 * height as f64 + a * 0.35 * height as f64;
            let mut img = Image::zeros(width, height);
            for row in 0..height {
                for col in 0..width {
                    let cov = coverage(col as f64 + 0.5, x0, x0 + side)
                        * coverage(row as f64 + 0.5, y0, y0 + side);
                    let bg = background(width, height, row, col);
                    let px: [f32; 3] =
                        std::array::from_fn(|c| (bg[c] * (1.0 - cov) + color[c] * cov) as f32);
                    img.set_pixel(row, col, px);
                }
            }
            img
        })
        .collect();
    FrameSequence::new(seq, "synthetic:moving_square").expect("frames share a size")
}

/// Static smooth background with a single dynamic quadrant where a soft,
/// finely textured blob orbits. The texture travels with the blob, so the
/// quadrant needs many Gaussians. Returns the clip and the dynamic region.
pub fn dynamic_region(width: usize, height: usize, frames: usize) -> (FrameSequence, Region) {
    let region = Region {
        x0: width / 2,
        y0: height / 2,
        x1: width,
        y1: height,
    };
    let (rw, rh) = (
        (region.x1 - region.x0) as f64,
        (region.y1 - region.y0) as f64,
    );
    let sigma = rw.min(rh) / 7.0;
    let k = std::f64::consts::TAU / (rw.min(rh) / 5.0).max(3.0);
    let seq = (0..frames)
        .map(|t| {
            let phase = std::f64::consts::TAU * t as f64 / frames.max(1) as f64;
            let cx = region.x0 as f64 + rw * (0.5 + 0.28 * phase.cos());
            let cy = region.y0 as f64 + rh * (0.5 + 0.28 * phase.sin());
            let mut img = Image::zeros(width, height);
            for row in 0..height {
                for col in 0..width {
                    let bg = background(width, height, row, col);
                    let mut px = bg;
                    if region.contains(row, col) {
                        let dx = col as f64 + 0.5 - cx;
                        let dy = row as f64 + 0.5 - cy;
                        let w = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                        let tex = (k * dx).sin() * (k * dy).cos();
                        let fg = [0.5 + 0.45 * tex, 0.5 - 0.45 * tex, 0.3 + 0.2 * tex];
                        px = [0, 1, 2].map(|c| bg[c] * (1.0 - w) + fg[c] * w);
                    }
                    img.set_pixel(row, col, px.map(|v| v as f32));
                }
            }
            img
        })
        .collect();
    (
        FrameSequence::new(seq, "synthetic:dynamic_region").expect("frames share a size"),
        region,
    )
}

/// Static clip: every frame is the same smooth pattern.
pub fn static_clip(width: usize, height: usize, frames: usize) -> FrameSequence {
    let mut img = Image::zeros(width, height);
    for row in 0..height {
        for col in 0..width {
            let bg = background(width, height, row, col);
            img.set_pixel(row, col, bg.map(|v| v as f32));
        }
    }
    FrameSequence::new(vec![img; frames], "synthetic:static").expect("frames share a size")
}
