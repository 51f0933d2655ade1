//! Order-independent tile rasterizer for 2D Gaussians and its analytic
//! backward pass.
//!
//! A pixel's color is `sum_i c_i * exp(-1/2 (x - mu_i)^T Sigma_i^{-1} (x - mu_i))`
//! with no opacity and no sorting. Tiles are processed in parallel. Each
//! tile sums its Gaussians in ascending index order, so the forward pass is
//! bit-identical for any worker count. The backward pass keeps one private
//! accumulator per tile and folds the tiles together in tile-index order when
//! `deterministic` is set.

use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{cov_from_chol, inverse_grad_to_chol_raw, Gaussian2D, Sym2};
use crate::image::Image;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RasterConfig {
    pub tile_size: usize,
    /// Mahalanobis radius beyond which contributions are dropped. Any
    /// non-finite value disables truncation.
    pub cutoff_sigma: f64,
    /// Reduce backward tile buffers in fixed order. When unset, tiles are
    /// folded in completion order and results differ run to run by float
    /// reassociation (around 1e-6 relative in `f32`).
    pub deterministic: bool,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: 16,
            cutoff_sigma: 3.0,
            deterministic: true,
        }
    }
}

impl RasterConfig {
    pub fn untruncated() -> Self {
        Self {
            cutoff_sigma: f64::INFINITY,
            ..Self::default()
        }
    }

    pub fn truncates(&self) -> bool {
        self.cutoff_sigma.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidArgument("tile_size must be >= 1".into()));
        }
        if self.cutoff_sigma.is_finite() && self.cutoff_sigma <= 0.0 {
            return Err(Error::InvalidArgument("cutoff_sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Half-open rectangle of tile indices. Empty when `x0 >= x1` or `y0 >= y1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl TileRect {
    pub const EMPTY: TileRect = TileRect {
        x0: 0,
        y0: 0,
        x1: 0,
        y1: 0,
    };

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    pub fn count(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            (self.x1 - self.x0) * (self.y1 - self.y0)
        }
    }
}

/// Inclusive pixel rectangle `[c0, c1] x [r0, r1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct PixelRect {
    c0: usize,
    r0: usize,
    c1: usize,
    r1: usize,
}

/// Half extents `(ex, ey)` in pixels of the axis-aligned box bounding the
/// `cutoff`-sigma ellipse: `cutoff * sqrt(Sigma_xx)`, `cutoff * sqrt(Sigma_yy)`.
pub fn gaussian_extent<T: Real>(g: &Gaussian2D<T>, cutoff_sigma: f64) -> [f64; 2] {
    let cov = cov_from_chol(&g.chol_raw);
    [
        cutoff_sigma * cov.sigma.xx.as_f64().sqrt(),
        cutoff_sigma * cov.sigma.yy.as_f64().sqrt(),
    ]
}

fn pixel_rect<T: Real>(
    g: &Gaussian2D<T>,
    cfg: &RasterConfig,
    width: usize,
    height: usize,
) -> Option<PixelRect> {
    if width == 0 || height == 0 {
        return None;
    }
    if !cfg.truncates() {
        return Some(PixelRect {
            c0: 0,
            r0: 0,
            c1: width - 1,
            r1: height - 1,
        });
    }
    let [ex, ey] = gaussian_extent(g, cfg.cutoff_sigma);
    // A small pad keeps the box conservative under rounding.
    let pad = 1e-6;
    let mx = g.mean[0].as_f64();
    let my = g.mean[1].as_f64();
    let c0 = (mx - ex - 0.5 - pad).ceil();
    let c1 = (mx + ex - 0.5 + pad).floor();
    let r0 = (my - ey - 0.5 - pad).ceil();
    let r1 = (my + ey - 0.5 + pad).floor();
    let (w, h) = (width as f64, height as f64);
    if c1 < 0.0 || r1 < 0.0 || c0 > w - 1.0 || r0 > h - 1.0 || c0 > c1 || r0 > r1 {
        return None;
    }
    Some(PixelRect {
        c0: c0.max(0.0) as usize,
        r0: r0.max(0.0) as usize,
        c1: c1.min(w - 1.0) as usize,
        r1: r1.min(h - 1.0) as usize,
    })
}

/// Tiles the Gaussian can touch. Contains every tile holding a pixel whose
/// weight may exceed `exp(-cutoff^2 / 2)`.
pub fn gaussian_tile_range<T: Real>(
    g: &Gaussian2D<T>,
    cfg: &RasterConfig,
    width: usize,
    height: usize,
) -> TileRect {
    let ts = cfg.tile_size.max(1);
    match pixel_rect(g, cfg, width, height) {
        None => TileRect::EMPTY,
        Some(p) => TileRect {
            x0: p.c0 / ts,
            y0: p.r0 / ts,
            x1: p.c1 / ts + 1,
            y1: p.r1 / ts + 1,
        },
    }
}

/// Per-Gaussian quantities shared by every pixel.
#[derive(Clone, Copy)]
struct Splat<T> {
    mean: [T; 2],
    inv: Sym2<T>,
    color: [T; 3],
    rect: PixelRect,
}

struct Binning<T> {
    splats: Vec<Splat<T>>,
    /// Indices into `splats`, ascending, one list per tile (row-major).
    tiles: Vec<Vec<u32>>,
    /// Slot of each input Gaussian, `u32::MAX` when culled everywhere.
    slot_of: Vec<u32>,
    tiles_x: usize,
    tiles_y: usize,
}

fn bin<T: Real>(
    gaussians: &[Gaussian2D<T>],
    cfg: &RasterConfig,
    width: usize,
    height: usize,
) -> Result<Binning<T>> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!(
            "frame size {width}x{height}"
        )));
    }
    let ts = cfg.tile_size;
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let mut splats = Vec::with_capacity(gaussians.len());
    let mut slot_of = Vec::with_capacity(gaussians.len());
    for (i, g) in gaussians.iter().enumerate() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGaussian { index: i });
        }
        let Some(rect) = pixel_rect(g, cfg, width, height) else {
            slot_of.push(u32::MAX);
            continue;
        };
        let cov = cov_from_chol(&g.chol_raw);
        let slot = splats.len() as u32;
        slot_of.push(slot);
        splats.push(Splat {
            mean: g.mean,
            inv: cov.sigma_inv,
            color: g.color,
            rect,
        });
        for ty in rect.r0 / ts..=rect.r1 / ts {
            for tx in rect.c0 / ts..=rect.c1 / ts {
                tiles[ty * tiles_x + tx].push(slot);
            }
        }
    }
    Ok(Binning {
        splats,
        tiles,
        slot_of,
        tiles_x,
        tiles_y,
    })
}

/// Pixel bounds `[c0, c1) x [r0, r1)` of tile `t`.
fn tile_bounds(
    t: usize,
    tiles_x: usize,
    ts: usize,
    width: usize,
    height: usize,
) -> (usize, usize, usize, usize) {
    let tx = t % tiles_x;
    let ty = t / tiles_x;
    let c0 = tx * ts;
    let r0 = ty * ts;
    (c0, r0, (c0 + ts).min(width), (r0 + ts).min(height))
}

/// Rows/cols of the tile `[c0, c1) x [r0, r1)` covered by `rect`, or `None`.
#[inline]
fn clip(
    rect: &PixelRect,
    c0: usize,
    r0: usize,
    c1: usize,
    r1: usize,
) -> Option<(usize, usize, usize, usize)> {
    let a0 = rect.c0.max(c0);
    let a1 = (rect.c1 + 1).min(c1);
    let b0 = rect.r0.max(r0);
    let b1 = (rect.r1 + 1).min(r1);
    (a0 < a1 && b0 < b1).then_some((a0, b0, a1, b1))
}

#[inline(always)]
fn power<T: Real>(s: &Splat<T>, col: usize, row: usize) -> (T, T, T) {
    let dx = T::lit(col as f64 + 0.5) - s.mean[0];
    let dy = T::lit(row as f64 + 0.5) - s.mean[1];
    (s.inv.quad(dx, dy), dx, dy)
}

/// Renders `gaussians` into a `width x height` image. Output is not clamped.
pub fn render<T: Real>(
    gaussians: &[Gaussian2D<T>],
    cfg: &RasterConfig,
    width: usize,
    height: usize,
) -> Result<Image<T>> {
    let binning = bin(gaussians, cfg, width, height)?;
    let ts = cfg.tile_size;
    let q_max = T::lit(if cfg.truncates() {
        cfg.cutoff_sigma * cfg.cutoff_sigma
    } else {
        f64::INFINITY
    });
    let half = T::lit(0.5);

    let tile_pixels: Vec<Vec<T>> = (0..binning.tiles.len())
        .into_par_iter()
        .map(|t| {
            let (c0, r0, c1, r1) = tile_bounds(t, binning.tiles_x, ts, width, height);
            let tw = c1 - c0;
            let mut buf = vec![T::zero(); tw * (r1 - r0) * 3];
            for &slot in &binning.tiles[t] {
                let s = &binning.splats[slot as usize];
                let Some((a0, b0, a1, b1)) = clip(&s.rect, c0, r0, c1, r1) else {
                    continue;
                };
                for row in b0..b1 {
                    for col in a0..a1 {
                        let (q, _, _) = power(s, col, row);
                        if q > q_max {
                            continue;
                        }
                        let w = (-half * q).exp();
                        let o = ((row - r0) * tw + (col - c0)) * 3;
                        buf[o] += s.color[0] * w;
                        buf[o + 1] += s.color[1] * w;
                        buf[o + 2] += s.color[2] * w;
                    }
                }
            }
            buf
        })
        .collect();

    let mut img = Image::zeros(width, height);
    for (t, buf) in tile_pixels.iter().enumerate() {
        let (c0, r0, c1, r1) = tile_bounds(t, binning.tiles_x, ts, width, height);
        let tw = c1 - c0;
        for row in r0..r1 {
            let src = &buf[(row - r0) * tw * 3..(row - r0 + 1) * tw * 3];
            let dst = img.index(row, c0);
            img.data[dst..dst + tw * 3].copy_from_slice(src);
        }
    }
    debug_assert_eq!(binning.tiles_y * binning.tiles_x, binning.tiles.len());
    Ok(img)
}

/// Gradients of a scalar loss with respect to every input Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGrads<T> {
    pub d_mean: Vec<[T; 2]>,
    pub d_chol_raw: Vec<[T; 3]>,
    pub d_color: Vec<[T; 3]>,
}

impl<T: Real> RenderGrads<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_mean: vec![[T::zero(); 2]; n],
            d_chol_raw: vec![[T::zero(); 3]; n],
            d_color: vec![[T::zero(); 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_mean.is_empty()
    }

    /// Gradient of Gaussian `i` in `mean | chol_raw | color` order.
    pub fn get(&self, i: usize) -> [T; 8] {
        let (m, c, k) = (self.d_mean[i], self.d_chol_raw[i], self.d_color[i]);
        [m[0], m[1], c[0], c[1], c[2], k[0], k[1], k[2]]
    }

    pub fn is_finite(&self) -> bool {
        (0..self.len()).all(|i| self.get(i).iter().all(|v| v.is_finite()))
    }
}

/// Per-Gaussian accumulator: d_mean(2), d_inv(3: A, B, C), d_color(3).
type Acc<T> = [T; 8];

/// Backpropagates `d_image = dL/dImage` through [`render`].
pub fn render_backward<T: Real>(
    gaussians: &[Gaussian2D<T>],
    cfg: &RasterConfig,
    d_image: &Image<T>,
) -> Result<RenderGrads<T>> {
    let (width, height) = (d_image.width, d_image.height);
    if d_image.data.len() != width * height * 3 {
        return Err(Error::ShapeMismatch("dL/dImage buffer length".into()));
    }
    if !d_image.is_finite() {
        return Err(Error::NonFinite {
            what: "dL/dImage".into(),
        });
    }
    let binning = bin(gaussians, cfg, width, height)?;
    let ts = cfg.tile_size;
    let q_max = T::lit(if cfg.truncates() {
        cfg.cutoff_sigma * cfg.cutoff_sigma
    } else {
        f64::INFINITY
    });
    let half = T::lit(0.5);

    let tile_grads = |t: usize| -> Vec<Acc<T>> {
        let (c0, r0, c1, r1) = tile_bounds(t, binning.tiles_x, ts, width, height);
        let list = &binning.tiles[t];
        let mut acc = vec![[T::zero(); 8]; list.len()];
        for (k, &slot) in list.iter().enumerate() {
            let s = &binning.splats[slot as usize];
            let Some((a0, b0, a1, b1)) = clip(&s.rect, c0, r0, c1, r1) else {
                continue;
            };
            let a = &mut acc[k];
            for row in b0..b1 {
                for col in a0..a1 {
                    let (q, dx, dy) = power(s, col, row);
                    if q > q_max {
                        continue;
                    }
                    let gi = d_image.index(row, col);
                    let g = [d_image.data[gi], d_image.data[gi + 1], d_image.data[gi + 2]];
                    let w = (-half * q).exp();
                    a[5] += g[0] * w;
                    a[6] += g[1] * w;
                    a[7] += g[2] * w;
                    let dl_dw = g[0] * s.color[0] + g[1] * s.color[1] + g[2] * s.color[2];
                    let gw = dl_dw * w;
                    a[0] += gw * (s.inv.xx * dx + s.inv.xy * dy);
                    a[1] += gw * (s.inv.xy * dx + s.inv.yy * dy);
                    a[2] -= half * gw * dx * dx;
                    a[3] -= gw * dx * dy;
                    a[4] -= half * gw * dy * dy;
                }
            }
        }
        acc
    };

    let mut totals = vec![[T::zero(); 8]; binning.splats.len()];
    let fold = |totals: &mut [Acc<T>], t: usize, acc: &[Acc<T>]| {
        for (&slot, a) in binning.tiles[t].iter().zip(acc) {
            let dst = &mut totals[slot as usize];
            for (d, v) in dst.iter_mut().zip(a) {
                *d += *v;
            }
        }
    };
    if cfg.deterministic {
        let per_tile: Vec<Vec<Acc<T>>> = (0..binning.tiles.len())
            .into_par_iter()
            .map(tile_grads)
            .collect();
        for (t, acc) in per_tile.iter().enumerate() {
            fold(&mut totals, t, acc);
        }
    } else {
        let shared = Mutex::new(totals);
        (0..binning.tiles.len()).into_par_iter().for_each(|t| {
            let acc = tile_grads(t);
            let mut guard = shared.lock().expect("gradient accumulator poisoned");
            fold(&mut guard, t, &acc);
        });
        totals = shared.into_inner().expect("gradient accumulator poisoned");
    }

    let mut out = RenderGrads::zeros(gaussians.len());
    for (i, g) in gaussians.iter().enumerate() {
        let slot = binning.slot_of[i];
        if slot == u32::MAX {
            continue;
        }
        let a = totals[slot as usize];
        out.d_mean[i] = [a[0], a[1]];
        out.d_chol_raw[i] = inverse_grad_to_chol_raw(
            &g.chol_raw,
            &Sym2 {
                xx: a[2],
                xy: a[3],
                yy: a[4],
            },
        );
        out.d_color[i] = [a[5], a[6], a[7]];
    }
    Ok(out)
}
