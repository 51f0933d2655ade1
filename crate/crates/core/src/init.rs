//! Gaussian placement before training.
//!
//! Temporal-gradient initialization accumulates `|I_{t+1} - I_t|` over the
//! clip (channels summed) and draws Gaussian centers with probability
//! proportional to that map plus a small uniform floor.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{Gaussian2D, GaussianCloud};
use crate::io::FrameSequence;
use crate::raster::{render, RasterConfig};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct TemporalMap {
    pub width: usize,
    pub height: usize,
    /// Row-major `height x width`, every entry `>= 0`.
    pub data: Vec<f64>,
    pub total: f64,
}

impl TemporalMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f64>) -> Self {
        let total = data.iter().sum();
        Self {
            width,
            height,
            data,
            total,
        }
    }
}

/// `M = sum_t |I_{t+1} - I_t|`, summed over the three channels.
pub fn temporal_gradient_map(video: &FrameSequence) -> TemporalMap {
    let (w, h) = (video.width(), video.height());
    let frames = &video.frames;
    let data: Vec<f64> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0f64;
            for pair in frames.windows(2) {
                for c in 0..3 {
                    let a = pair[0].data[p * 3 + c] as f64;
                    let b = pair[1].data[p * 3 + c] as f64;
                    acc += (b - a).abs();
                }
            }
            acc
        })
        .collect();
    TemporalMap::from_data(w, h, data)
}

/// Draws `n` centers i.i.d. from `p(pixel) ∝ map + floor_eps * mean(map)`
/// (uniform when the map is all zero), jittered uniformly inside the pixel.
pub fn sample_means(
    map: &TemporalMap,
    n: usize,
    floor_eps: f64,
    seed: u64,
) -> Result<Vec<[f64; 2]>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one Gaussian".into()));
    }
    if !(floor_eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "floor_eps must be >= 0, got {floor_eps}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = map.data.len();
    if count == 0 {
        return Err(Error::InvalidArgument("empty temporal map".into()));
    }
    let mean = map.total / count as f64;
    let pixel_dist = if map.total > 0.0 {
        let floor = floor_eps * mean;
        let weights: Vec<f64> = map.data.iter().map(|v| v + floor).collect();
        Some(WeightedIndex::new(&weights).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = match &pixel_dist {
            Some(d) => d.sample(&mut rng),
            None => rng.gen_range(0..count),
        };
        let (row, col) = (idx / map.width, idx % map.width);
        out.push([col as f64 + rng.gen::<f64>(), row as f64 + rng.gen::<f64>()]);
    }
    Ok(out)
}

/// Uniform centers over `[0, width) x [0, height)`.
pub fn random_means(n: usize, width: usize, height: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one Gaussian".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            [
                rng.gen::<f64>() * width as f64,
                rng.gen::<f64>() * height as f64,
            ]
        })
        .collect())
}

/// Initial isotropic scale `sqrt(H * W / N)` in pixels.
pub fn initial_scale(width: usize, height: usize, n: usize) -> f64 {
    ((width * height) as f64 / n as f64).sqrt()
}

/// Per-center scale `sqrt(1 / (N p))`, where `p` is the probability
/// `sample_means` gave the center's pixel. A uniform map gives
/// `initial_scale` everywhere.
pub fn density_scales(map: &TemporalMap, floor_eps: f64, means: &[[f64; 2]]) -> Vec<f64> {
    let count = map.data.len() as f64;
    let n = means.len() as f64;
    if !(map.total > 0.0) {
        return vec![(count / n).sqrt(); means.len()];
    }
    let floor = floor_eps * map.total / count;
    let mass = map.total + floor * count;
    means
        .iter()
        .map(|m| {
            let col = (m[0].floor().max(0.0) as usize).min(map.width - 1);
            let row = (m[1].floor().max(0.0) as usize).min(map.height - 1);
            (mass / (n * (map.at(row, col) + floor))).sqrt()
        })
        .collect()
}

/// Builds the base cloud: given centers, `Sigma ≈ diag(s^2, s^2)` with
/// `s = sqrt(H W / N)`, and color equal to the clip's temporal mean at the
/// nearest pixel.
pub fn init_cloud<T: Real>(video: &FrameSequence, means: &[[f64; 2]]) -> Result<GaussianCloud<T>> {
    let s = initial_scale(video.width(), video.height(), means.len().max(1));
    init_cloud_scaled(video, means, &vec![s; means.len()])
}

/// `init_cloud` with one isotropic scale per center.
pub fn init_cloud_scaled<T: Real>(
    video: &FrameSequence,
    means: &[[f64; 2]],
    scales: &[f64],
) -> Result<GaussianCloud<T>> {
    if means.is_empty() {
        return Err(Error::InvalidArgument("need at least one Gaussian".into()));
    }
    if scales.len() != means.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scales for {} centers",
            scales.len(),
            means.len()
        )));
    }
    let (w, h) = (video.width(), video.height());
    let temporal_mean = video.temporal_mean();
    let gaussians = means
        .iter()
        .zip(scales)
        .map(|(m, &s)| {
            let col = (m[0].floor().max(0.0) as usize).min(w - 1);
            let row = (m[1].floor().max(0.0) as usize).min(h - 1);
            let o = (row * w + col) * 3;
            let color = [temporal_mean[o], temporal_mean[o + 1], temporal_mean[o + 2]]
                .map(|v| T::lit(v as f64));
            Gaussian2D::from_cholesky(
                [T::lit(m[0]), T::lit(m[1])],
                T::lit(s),
                T::zero(),
                T::lit(s),
                color,
            )
        })
        .collect();
    Ok(GaussianCloud {
        gaussians,
        frame_width: w,
        frame_height: h,
        num_frames: video.len(),
    })
}

/// Divides each color by the summed unit-color weight of the whole cloud at
/// the Gaussian's pixel, when that sum exceeds one. Overlapping Gaussians
/// then start near the target brightness instead of a multiple of it.
pub fn normalize_colors<T: Real>(
    cloud: &mut GaussianCloud<T>,
    raster: &RasterConfig,
) -> Result<()> {
    let (w, h) = (cloud.frame_width, cloud.frame_height);
    let mut unit = cloud.gaussians.clone();
    for g in &mut unit {
        g.color = [T::one(); 3];
    }
    let coverage = render(&unit, raster, w, h)?;
    for g in &mut cloud.gaussians {
        let col = (g.mean[0].as_f64().floor().max(0.0) as usize).min(w - 1);
        let row = (g.mean[1].as_f64().floor().max(0.0) as usize).min(h - 1);
        let sum = coverage.pixel(row, col)[0].max(T::one());
        for c in &mut g.color {
            *c /= sum;
        }
    }
    Ok(())
}
