//! Decoder head: turns encoder features into per-Gaussian attribute deltas.

use rand::Rng;

use crate::gaussian::Gaussian2D;
use crate::mlp::{MlpCache, MlpWeights};
use crate::real::Real;

/// Width of the decoder output: `d_mean (2) | d_chol_raw (3) | d_color (3)`.
pub const DELTA_DIM: usize = 8;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DeformDelta<T> {
    pub d_mean: [T; 2],
    pub d_chol_raw: [T; 3],
    pub d_color: [T; 3],
}

impl<T: Real> DeformDelta<T> {
    pub fn zero() -> Self {
        Self {
            d_mean: [T::zero(); 2],
            d_chol_raw: [T::zero(); 3],
            d_color: [T::zero(); 3],
        }
    }

    pub fn from_slice(v: &[T]) -> Self {
        Self {
            d_mean: [v[0], v[1]],
            d_chol_raw: [v[2], v[3], v[4]],
            d_color: [v[5], v[6], v[7]],
        }
    }

    pub fn to_array(&self) -> [T; 8] {
        let (m, c, k) = (self.d_mean, self.d_chol_raw, self.d_color);
        [m[0], m[1], c[0], c[1], c[2], k[0], k[1], k[2]]
    }

    pub fn add(&self, other: &Self) -> Self {
        let a = self.to_array();
        let b = other.to_array();
        Self::from_slice(&std::array::from_fn::<T, 8, _>(|i| a[i] + b[i]))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Head with layer widths `in_dim -> hidden... -> 8`. Hidden layers are
/// uniform in `+-1/sqrt(fan_in)`; the final layer starts at zero so the
/// initial deformation is exactly the identity.
pub fn init_head<T: Real, R: Rng>(in_dim: usize, hidden: &[usize], rng: &mut R) -> MlpWeights<T> {
    let mut dims = vec![in_dim];
    dims.extend_from_slice(hidden);
    dims.push(DELTA_DIM);
    let mut head = MlpWeights::uniform(&dims, rng);
    let last = head.layers.last_mut().expect("head has a layer");
    last.weight.fill(T::zero());
    last.bias.fill(T::zero());
    head
}

/// Runs the head; when `freeze_mean` is set the mean delta is forced to zero.
pub fn decode<T: Real>(head: &MlpWeights<T>, features: &[T], freeze_mean: bool) -> DeformDelta<T> {
    let mut out = head.forward(features);
    if freeze_mean {
        out[0] = T::zero();
        out[1] = T::zero();
    }
    DeformDelta::from_slice(&out)
}

/// Accumulates head gradients for upstream `d_delta` and returns `dL/dfeatures`.
pub fn decode_backward<T: Real>(
    head: &MlpWeights<T>,
    features: &[T],
    d_delta: &DeformDelta<T>,
    freeze_mean: bool,
    grads: &mut MlpWeights<T>,
) -> Vec<T> {
    let mut cache = MlpCache::default();
    head.forward_cached(features, &mut cache);
    let mut d = d_delta.to_array();
    if freeze_mean {
        d[0] = T::zero();
        d[1] = T::zero();
    }
    head.backward(&cache, &d, grads)
}

/// Field-wise addition in raw parameter space.
pub fn apply_deform<T: Real>(base: &Gaussian2D<T>, delta: &DeformDelta<T>) -> Gaussian2D<T> {
    Gaussian2D {
        mean: [
            base.mean[0] + delta.d_mean[0],
            base.mean[1] + delta.d_mean[1],
        ],
        chol_raw: [
            base.chol_raw[0] + delta.d_chol_raw[0],
            base.chol_raw[1] + delta.d_chol_raw[1],
            base.chol_raw[2] + delta.d_chol_raw[2],
        ],
        color: [
            base.color[0] + delta.d_color[0],
            base.color[1] + delta.d_color[1],
            base.color[2] + delta.d_color[2],
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_head_gives_zero_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = init_head::<f64, _>(16, &[], &mut rng);
        let feats: Vec<f64> = (0..16).map(|i| i as f64 * 0.1).collect();
        assert_eq!(decode(&head, &feats, false), DeformDelta::zero());
        let deep = init_head::<f64, _>(16, &[12], &mut rng);
        assert_eq!(decode(&deep, &feats, false), DeformDelta::zero());
    }

    #[test]
    fn identity_head_reinterprets_features() {
        let head = MlpWeights::<f64>::identity(8);
        let f = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let d = decode(&head, &f, false);
        assert_eq!(d.d_mean, [1.0, 2.0]);
        assert_eq!(d.d_chol_raw, [3.0, 4.0, 5.0]);
        assert_eq!(d.d_color, [6.0, 7.0, 8.0]);
        assert_eq!(decode(&head, &f, true).d_mean, [0.0, 0.0]);
    }

    #[test]
    fn zero_delta_is_identity() {
        let g = Gaussian2D::new([1.5, 2.5], [0.1, -0.2, 0.3], [0.4, 0.5, 0.6]);
        assert_eq!(apply_deform(&g, &DeformDelta::zero()), g);
    }

    #[test]
    fn mean_shift_only_moves_mean() {
        let g = Gaussian2D::new([1.5, 2.5], [0.1, -0.2, 0.3], [0.4, 0.5, 0.6]);
        let d = DeformDelta {
            d_mean: [1.0, 0.0],
            ..DeformDelta::zero()
        };
        let out = apply_deform(&g, &d);
        assert_eq!(out.mean, [2.5, 2.5]);
        assert_eq!(out.chol_raw, g.chol_raw);
        assert_eq!(out.color, g.color);
    }

    #[test]
    fn random_deform_is_fieldwise_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let base: [f64; 8] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
            let delta: [f64; 8] = std::array::from_fn(|_| rng.gen_range(-5.0..5.0));
            let out = apply_deform(
                &Gaussian2D::from_array(&base),
                &DeformDelta::from_slice(&delta),
            );
            let expect: Vec<f64> = base.iter().zip(&delta).map(|(a, b)| a + b).collect();
            assert_eq!(out.to_array().to_vec(), expect);
        }
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let head = MlpWeights::<f64>::uniform(&[6, 5, DELTA_DIM], &mut rng);
        let feats: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let up =
            DeformDelta::from_slice(&(0..8).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>());
        let loss = |h: &MlpWeights<f64>, f: &[f64]| {
            let d = decode(h, f, true).to_array();
            d.iter().zip(up.to_array()).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grads = head.zeros_like();
        let d_feat = decode_backward(&head, &feats, &up, true, &mut grads);
        let h = 1e-6;
        for li in 0..head.layers.len() {
            for wi in 0..head.layers[li].weight.len() {
                let mut p = head.clone();
                p.layers[li].weight[wi] += h;
                let mut m = head.clone();
                m.layers[li].weight[wi] -= h;
                let fd = (loss(&p, &feats) - loss(&m, &feats)) / (2.0 * h);
                assert!((fd - grads.layers[li].weight[wi]).abs() < 1e-7);
            }
        }
        for k in 0..feats.len() {
            let mut p = feats.clone();
            p[k] += h;
            let mut m = feats.clone();
            m[k] -= h;
            let fd = (loss(&head, &p) - loss(&head, &m)) / (2.0 * h);
            assert!((fd - d_feat[k]).abs() < 1e-7);
        }
    }
}
