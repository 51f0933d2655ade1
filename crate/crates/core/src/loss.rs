//! Reconstruction and regularization losses.

use crate::encoder::{Grid, PlaneSet};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;

/// Squared error summed over channels, averaged over pixels. Returns the
/// loss and `dL/dpred = 2 (pred - target) / (H W)`.
pub fn l2_loss<T: Real>(pred: &Image<T>, target: &Image<T>) -> Result<(f64, Image<T>)> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.width, pred.height, target.width, target.height
        )));
    }
    let pixels = (pred.width * pred.height) as f64;
    let scale = T::lit(2.0 / pixels);
    let mut sum = 0.0f64;
    let mut grad = Image::zeros(pred.width, pred.height);
    for ((g, p), t) in grad.data.iter_mut().zip(&pred.data).zip(&target.data) {
        let d = *p - *t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    Ok((sum / pixels, grad))
}

fn grid_tv<T: Real>(g: &Grid<T>, grad: Option<(&mut Grid<T>, T)>) -> f64 {
    let c = g.channels;
    let mut sum = 0.0f64;
    let mut grad = grad;
    let mut visit = |a: usize, b: usize, grad: &mut Option<(&mut Grid<T>, T)>| {
        for k in 0..c {
            let d = g.data[b + k] - g.data[a + k];
            sum += d.as_f64().abs();
            if let Some((gg, w)) = grad.as_mut() {
                let s = if d > T::zero() {
                    *w
                } else if d < T::zero() {
                    -*w
                } else {
                    T::zero()
                };
                gg.data[b + k] += s;
                gg.data[a + k] -= s;
            }
        }
    };
    for i in 0..g.rows {
        for j in 0..g.cols {
            if i + 1 < g.rows {
                visit(g.offset(i, j), g.offset(i + 1, j), &mut grad);
            }
            if j + 1 < g.cols {
                visit(g.offset(i, j), g.offset(i, j + 1), &mut grad);
            }
        }
    }
    sum
}

/// Anisotropic TV `sum |F(i+1,j) - F(i,j)| + |F(i,j+1) - F(i,j)|` over every
/// grid and channel, divided by the total number of grid entries.
pub fn tv_loss<T: Real>(planes: &PlaneSet<T>) -> f64 {
    let count = planes.num_grid_values();
    if count == 0 {
        return 0.0;
    }
    let raw: f64 = planes
        .levels
        .iter()
        .flat_map(|l| l.grids())
        .map(|g| grid_tv(g, None))
        .sum();
    raw / count as f64
}

/// Accumulates `weight * d tv_loss / d grid` into `grads` (subgradient 0 at
/// ties) and returns the loss.
pub fn tv_loss_backward<T: Real>(
    planes: &PlaneSet<T>,
    weight: f64,
    grads: &mut PlaneSet<T>,
) -> f64 {
    let count = planes.num_grid_values();
    if count == 0 {
        return 0.0;
    }
    let w = T::lit(weight / count as f64);
    let mut raw = 0.0;
    for (level, gl) in planes.levels.iter().zip(grads.levels.iter_mut()) {
        for (g, gg) in level.grids().into_iter().zip(gl.grids_mut()) {
            raw += grid_tv(g, Some((gg, w)));
        }
    }
    raw / count as f64
}

/// `recon + lambda * tv`.
pub fn total_loss(recon: f64, tv: f64, lambda: f64) -> f64 {
    recon + lambda * tv
}
