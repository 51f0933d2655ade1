//! The 2D Gaussian primitive and its covariance parameterization.
//!
//! Pixel `(row i, column j)` has its center at `(x, y) = (j + 0.5, i + 0.5)`;
//! the origin is the top-left corner of the frame. Every module uses this
//! convention.

use crate::real::{inverse_softplus, sigmoid, softplus, Real};

/// Floor added to the softplus'd Cholesky diagonal.
pub const CHOL_EPS: f64 = 1e-4;

/// A single Gaussian: 2 mean + 3 covariance + 3 color parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Gaussian2D<T> {
    /// Center in pixel units.
    pub mean: [T; 2],
    /// Raw `(l1, l2, l3)`; see [`cholesky_factor`].
    pub chol_raw: [T; 3],
    /// Unconstrained RGB, nominally in `[0, 1]`.
    pub color: [T; 3],
}

impl<T: Real> Gaussian2D<T> {
    pub const NUM_PARAMS: usize = 8;

    pub fn new(mean: [T; 2], chol_raw: [T; 3], color: [T; 3]) -> Self {
        Self {
            mean,
            chol_raw,
            color,
        }
    }

    /// Builds a Gaussian whose effective Cholesky factor is
    /// `[[l11, 0], [l21, l22]]`. Diagonal entries must exceed [`CHOL_EPS`].
    pub fn from_cholesky(mean: [T; 2], l11: T, l21: T, l22: T, color: [T; 3]) -> Self {
        let eps = T::lit(CHOL_EPS);
        Self {
            mean,
            chol_raw: [
                inverse_softplus(l11 - eps),
                l21,
                inverse_softplus(l22 - eps),
            ],
            color,
        }
    }

    /// Parameters in storage order `mean | chol_raw | color`.
    pub fn to_array(&self) -> [T; 8] {
        [
            self.mean[0],
            self.mean[1],
            self.chol_raw[0],
            self.chol_raw[1],
            self.chol_raw[2],
            self.color[0],
            self.color[1],
            self.color[2],
        ]
    }

    pub fn from_array(a: &[T]) -> Self {
        Self {
            mean: [a[0], a[1]],
            chol_raw: [a[2], a[3], a[4]],
            color: [a[5], a[6], a[7]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Gaussian2D<U> {
        let a = self.to_array().map(|v| U::lit(v.as_f64()));
        Gaussian2D::from_array(&a)
    }
}

/// A symmetric 2x2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym2<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Real> Sym2<T> {
    pub fn det(&self) -> T {
        self.xx * self.yy - self.xy * self.xy
    }

    /// `d^T M d`.
    #[inline(always)]
    pub fn quad(&self, dx: T, dy: T) -> T {
        self.xx * dx * dx + T::lit(2.0) * self.xy * dx * dy + self.yy * dy * dy
    }
}

/// Covariance, its inverse and `ln det Sigma` for one Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Covariance<T> {
    pub sigma: Sym2<T>,
    pub sigma_inv: Sym2<T>,
    pub logdet: T,
}

/// Effective lower-triangular factor `(L11, L21, L22)` for raw parameters.
#[inline]
pub fn cholesky_factor<T: Real>(chol_raw: &[T; 3]) -> (T, T, T) {
    let eps = T::lit(CHOL_EPS);
    (
        softplus(chol_raw[0]) + eps,
        chol_raw[1],
        softplus(chol_raw[2]) + eps,
    )
}

/// `Sigma = L L^T` with `L = [[softplus(l1)+eps, 0], [l2, softplus(l3)+eps]]`.
pub fn cov_from_chol<T: Real>(chol_raw: &[T; 3]) -> Covariance<T> {
    let (l11, l21, l22) = cholesky_factor(chol_raw);
    let sigma = Sym2 {
        xx: l11 * l11,
        xy: l11 * l21,
        yy: l21 * l21 + l22 * l22,
    };
    let sigma_inv = inverse_from_factor(l11, l21, l22);
    let logdet = T::lit(2.0) * (l11.ln() + l22.ln());
    Covariance {
        sigma,
        sigma_inv,
        logdet,
    }
}

/// `Sigma^{-1} = L^{-T} L^{-1}` computed from the factor.
#[inline]
pub fn inverse_from_factor<T: Real>(l11: T, l21: T, l22: T) -> Sym2<T> {
    let m11 = T::one() / l11;
    let m22 = T::one() / l22;
    let m21 = -l21 * m11 * m22;
    Sym2 {
        xx: m11 * m11 + m21 * m21,
        xy: m21 * m22,
        yy: m22 * m22,
    }
}

/// Pulls a gradient w.r.t. the entries of `Sigma^{-1}` back to `chol_raw`.
///
/// `d_inv` holds `dL/dA`, `dL/dB`, `dL/dC` for `Sigma^{-1} = [[A, B], [B, C]]`
/// where `B` is treated as a single scalar (not twice).
pub fn inverse_grad_to_chol_raw<T: Real>(chol_raw: &[T; 3], d_inv: &Sym2<T>) -> [T; 3] {
    let (l11, l21, l22) = cholesky_factor(chol_raw);
    let inv = inverse_from_factor(l11, l21, l22);
    let two = T::lit(2.0);
    let (a, b) = (inv.xx, inv.xy);
    let l11_2 = l11 * l11;
    let l22_2 = l22 * l22;

    let da_dl11 = -two * a / l11;
    let da_dl21 = two * l21 / (l11_2 * l22_2);
    let da_dl22 = -two * l21 * l21 / (l11_2 * l22_2 * l22);
    let db_dl11 = -b / l11;
    let db_dl21 = -T::one() / (l11 * l22_2);
    let db_dl22 = -two * b / l22;
    let dc_dl22 = -two / (l22_2 * l22);

    let d_l11 = d_inv.xx * da_dl11 + d_inv.xy * db_dl11;
    let d_l21 = d_inv.xx * da_dl21 + d_inv.xy * db_dl21;
    let d_l22 = d_inv.xx * da_dl22 + d_inv.xy * db_dl22 + d_inv.yy * dc_dl22;

    [
        d_l11 * sigmoid(chol_raw[0]),
        d_l21,
        d_l22 * sigmoid(chol_raw[2]),
    ]
}

/// `exp(-1/2 (p - mu)^T Sigma^{-1} (p - mu))`.
pub fn eval_weight<T: Real>(g: &Gaussian2D<T>, p: [T; 2]) -> T {
    let cov = cov_from_chol(&g.chol_raw);
    let dx = p[0] - g.mean[0];
    let dy = p[1] - g.mean[1];
    (-T::lit(0.5) * cov.sigma_inv.quad(dx, dy)).exp()
}

/// Center of pixel `(row, col)` in continuous coordinates.
#[inline]
pub fn pixel_center<T: Real>(row: usize, col: usize) -> [T; 2] {
    [T::lit(col as f64 + 0.5), T::lit(row as f64 + 0.5)]
}

/// The set of base Gaussians fitted to one video.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T> {
    pub gaussians: Vec<Gaussian2D<T>>,
    pub frame_width: usize,
    pub frame_height: usize,
    pub num_frames: usize,
}

impl<T: Real> GaussianCloud<T> {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// All parameters flattened as `N x [mean | chol_raw | color]`.
    pub fn to_flat(&self) -> Vec<T> {
        self.gaussians.iter().flat_map(|g| g.to_array()).collect()
    }

    pub fn set_from_flat(&mut self, flat: &[T]) {
        for (g, chunk) in self.gaussians.iter_mut().zip(flat.chunks_exact(8)) {
            *g = Gaussian2D::from_array(chunk);
        }
    }
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn weight_translation_invariant(
            mx in -50.0f64..50.0, my in -50.0f64..50.0,
            px in -50.0f64..50.0, py in -50.0f64..50.0,
            tx in -100.0f64..100.0, ty in -100.0f64..100.0,
            r0 in -3.0f64..3.0, r1 in -3.0f64..3.0, r2 in -3.0f64..3.0,
        ) {
            let g = Gaussian2D::new([mx, my], [r0, r1, r2], [1.0; 3]);
            let moved = Gaussian2D::new([mx + tx, my + ty], [r0, r1, r2], [1.0; 3]);
            let a = eval_weight(&g, [px, py]);
            let b = eval_weight(&moved, [px + tx, py + ty]);
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        }

        #[test]
        fn cholesky_of_sigma_recovers_raw(r0 in -4.0f64..8.0, r1 in -3.0f64..3.0, r2 in -4.0f64..8.0) {
            let cov = cov_from_chol(&[r0, r1, r2]);
            let l11 = cov.sigma.xx.sqrt();
            let l21 = cov.sigma.xy / l11;
            let l22 = (cov.sigma.yy - l21 * l21).sqrt();
            let back = [
                inverse_softplus(l11 - CHOL_EPS),
                l21,
                inverse_softplus(l22 - CHOL_EPS),
            ];
            prop_assert!((back[0] - r0).abs() < 1e-8);
            prop_assert!((back[1] - r1).abs() < 1e-8);
            prop_assert!((back[2] - r2).abs() < 1e-8);
        }

        #[test]
        fn sigma_is_positive_definite(r0 in -30.0f64..30.0, r1 in -30.0f64..30.0, r2 in -30.0f64..30.0) {
            let (l11, _, l22) = cholesky_factor(&[r0, r1, r2]);
            prop_assert!(l11 > 0.0 && l22 > 0.0);
            let cov = cov_from_chol(&[r0, r1, r2]);
            prop_assert!(cov.sigma.xx > 0.0);
            prop_assert!(cov.logdet.is_finite());
        }
    }
}
