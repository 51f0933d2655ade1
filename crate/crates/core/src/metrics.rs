//! PSNR and MS-SSIM on images with values in `[0, 1]`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::real::Real;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub scales: usize,
}

fn check_shapes<A, B>(a: &Image<A>, b: &Image<B>) -> Result<()>
where
    A: Real,
    B: Real,
{
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// PSNR from a mean squared error, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// `10 log10(1 / MSE)` over all pixels and channels.
pub fn psnr<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Number of MS-SSIM scales for an image with shortest side `min_side`:
/// the largest `s <= 5` with `min_side >= 11 * 2^(s-1)`.
pub fn ms_ssim_scales(min_side: usize) -> usize {
    (1..=5)
        .rev()
        .find(|&s| min_side >= SSIM_WINDOW << (s - 1))
        .unwrap_or(0)
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Single-channel plane used by the MS-SSIM pyramid.
#[derive(Clone, Debug)]
struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn channel<T: Real>(img: &Image<T>, c: usize) -> Self {
        Self {
            w: img.width,
            h: img.height,
            data: img
                .data
                .iter()
                .skip(c)
                .step_by(3)
                .map(|v| v.as_f64())
                .collect(),
        }
    }

    /// 2x2 box average; odd edges replicate the last row/column.
    fn downsample(&self) -> Self {
        let (w2, h2) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let at = |r: usize, c: usize| self.data[r.min(self.h - 1) * self.w + c.min(self.w - 1)];
        let mut data = Vec::with_capacity(w2 * h2);
        for r in 0..h2 {
            for c in 0..w2 {
                let (r0, c0) = (2 * r, 2 * c);
                data.push(
                    0.25 * (at(r0, c0) + at(r0, c0 + 1) + at(r0 + 1, c0) + at(r0 + 1, c0 + 1)),
                );
            }
        }
        Self { w: w2, h: h2, data }
    }

    /// Valid-mode separable filtering with `k`.
    fn filter(&self, k: &[f64; SSIM_WINDOW]) -> Self {
        let n = SSIM_WINDOW;
        let (ow, oh) = (self.w + 1 - n, self.h + 1 - n);
        let mut tmp = vec![0.0; ow * self.h];
        for r in 0..self.h {
            let row = &self.data[r * self.w..(r + 1) * self.w];
            for c in 0..ow {
                tmp[r * ow + c] = k.iter().zip(&row[c..c + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; ow * oh];
        for r in 0..oh {
            for c in 0..ow {
                out[r * ow + c] = (0..n).map(|i| k[i] * tmp[(r + i) * ow + c]).sum();
            }
        }
        Self {
            w: ow,
            h: oh,
            data: out,
        }
    }

    fn map2(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            w: self.w,
            h: self.h,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_cs(x: &Plane, y: &Plane, k: &[f64; SSIM_WINDOW]) -> (f64, f64) {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let mx = x.filter(k);
    let my = y.filter(k);
    let sxx = x.map2(x, |a, b| a * b).filter(k);
    let syy = y.map2(y, |a, b| a * b).filter(k);
    let sxy = x.map2(y, |a, b| a * b).filter(k);
    let n = mx.data.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mx.data.len() {
        let (ux, uy) = (mx.data[i], my.data[i]);
        let vx = sxx.data[i] - ux * ux;
        let vy = syy.data[i] - uy * uy;
        let cov = sxy.data[i] - ux * uy;
        let cs_i = (2.0 * cov + c2) / (vx + vy + c2);
        cs += cs_i;
        ssim += cs_i * (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
    }
    (ssim / n, cs / n)
}

/// MS-SSIM with the scale count chosen from the image size; weights of the
/// retained scales are renormalized to sum to 1. Each channel is scored
/// separately and the channel scores are averaged.
pub fn ms_ssim<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<(f64, usize)> {
    check_shapes(a, b)?;
    let scales = ms_ssim_scales(a.width.min(a.height));
    if scales == 0 {
        return Err(Error::ImageTooSmall {
            width: a.width,
            height: a.height,
        });
    }
    let wsum: f64 = MS_SSIM_WEIGHTS[..scales].iter().sum();
    let weights: Vec<f64> = MS_SSIM_WEIGHTS[..scales].iter().map(|w| w / wsum).collect();
    let k = gaussian_window();
    let mut total = 0.0;
    for c in 0..3 {
        let mut x = Plane::channel(a, c);
        let mut y = Plane::channel(b, c);
        let mut value = 1.0;
        for (s, w) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&x, &y, &k);
            let term = if s + 1 == scales { ssim } else { cs };
            value *= term.max(0.0).powf(*w);
            if s + 1 < scales {
                x = x.downsample();
                y = y.downsample();
            }
        }
        total += value;
    }
    Ok((total / 3.0, scales))
}

pub fn compare<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<MetricReport> {
    let psnr_db = psnr(a, b)?;
    let (ms_ssim, scales) = ms_ssim(a, b)?;
    Ok(MetricReport {
        psnr_db,
        ms_ssim,
        scales,
    })
}

/// Per-frame reports plus their averages.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SequenceReport {
    pub frames: Vec<MetricReport>,
    pub mean_psnr_db: f64,
    pub mean_ms_ssim: f64,
}

/// Compares two frame lists pairwise (in parallel); frames are clamped to
/// `[0, 1]` first.
pub fn compare_sequences<T: Real>(
    reference: &[Image<T>],
    test: &[Image<T>],
) -> Result<SequenceReport> {
    if reference.len() != test.len() || reference.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} reference frames vs {} test frames",
            reference.len(),
            test.len()
        )));
    }
    let frames = reference
        .par_iter()
        .zip(test.par_iter())
        .map(|(r, t)| compare(&r.clamped(), &t.clamped()))
        .collect::<Result<Vec<_>>>()?;
    let n = frames.len() as f64;
    let mean_psnr_db = frames.iter().map(|f| f.psnr_db).sum::<f64>() / n;
    let mean_ms_ssim = frames.iter().map(|f| f.ms_ssim).sum::<f64>() / n;
    Ok(SequenceReport {
        frames,
        mean_psnr_db,
        mean_ms_ssim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_cap() {
        let a = Image::filled(16, 16, [0.3f64, 0.5, 0.7]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let (v, s) = ms_ssim(&a, &a).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(s, 1);
    }

    #[test]
    fn psnr_of_known_mse() {
        let a = Image::filled(4, 4, [0.5f64; 3]);
        let b = Image::filled(4, 4, [0.6f64; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let gray = Image::filled(4, 4, [0.5f64; 3]);
        let black = Image::<f64>::zeros(4, 4);
        assert!((psnr(&gray, &black).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn scale_rule() {
        assert_eq!(ms_ssim_scales(10), 0);
        assert_eq!(ms_ssim_scales(11), 1);
        assert_eq!(ms_ssim_scales(22), 2);
        assert_eq!(ms_ssim_scales(64), 3);
        assert_eq!(ms_ssim_scales(175), 4);
        assert_eq!(ms_ssim_scales(176), 5);
        assert_eq!(ms_ssim_scales(4000), 5);
    }

    #[test]
    fn too_small_rejected() {
        let a = Image::<f64>::zeros(10, 40);
        assert!(matches!(ms_ssim(&a, &a), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn window_sums_to_one() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(w[0], w[10]);
    }

    #[test]
    fn downsample_odd_edge() {
        let p = Plane {
            w: 3,
            h: 1,
            data: vec![1.0, 3.0, 5.0],
        };
        let d = p.downsample();
        assert_eq!((d.w, d.h), (2, 1));
        assert_eq!(d.data, vec![2.0, 5.0]);
    }
}
