//! Small dense MLPs with ReLU between layers and a linear output.

use rand::Rng;

use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    #[inline]
    fn apply(&self, x: &[T], out: &mut [T]) {
        for (o, (row, b)) in out
            .iter_mut()
            .zip(self.weight.chunks_exact(self.in_dim.max(1)).zip(&self.bias))
        {
            let mut acc = *b;
            for (w, v) in row.iter().zip(x) {
                acc += *w * *v;
            }
            *o = acc;
        }
        if self.in_dim == 0 {
            out.copy_from_slice(&self.bias);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights<T> {
    pub layers: Vec<Layer<T>>,
}

/// Activations saved by [`MlpWeights::forward_cached`]: the input plus the
/// post-activation output of every layer.
#[derive(Clone, Debug, Default)]
pub struct MlpCache<T> {
    pub acts: Vec<Vec<T>>,
}

impl<T: Real> MlpWeights<T> {
    /// Layer widths `dims[0] -> dims[1] -> ... -> dims[last]`, all zero.
    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        Self {
            layers: dims.windows(2).map(|d| Layer::zeros(d[0], d[1])).collect(),
        }
    }

    /// Weights and biases uniform in `+-1/sqrt(fan_in)`.
    pub fn uniform<R: Rng>(dims: &[usize], rng: &mut R) -> Self {
        let mut mlp = Self::zeros(dims);
        for layer in &mut mlp.layers {
            let bound = 1.0 / (layer.in_dim.max(1) as f64).sqrt();
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = T::lit(rng.gen_range(-bound..bound));
            }
        }
        mlp
    }

    /// Square identity layer (`W = I`, `b = 0`).
    pub fn identity(dim: usize) -> Self {
        let mut mlp = Self::zeros(&[dim, dim]);
        for i in 0..dim {
            mlp.layers[0].weight[i * dim + i] = T::one();
        }
        mlp
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Consecutive layer dimensions chain.
    pub fn is_chained(&self) -> bool {
        !self.layers.is_empty() && self.layers.windows(2).all(|w| w[0].out_dim == w[1].in_dim)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.dims())
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![T::zero(); layer.out_dim];
            layer.apply(&cur, &mut next);
            if li != last {
                relu_in_place(&mut next);
            }
            cur = next;
        }
        cur
    }

    /// Forward pass that records activations for [`MlpWeights::backward`].
    pub fn forward_cached(&self, x: &[T], cache: &mut MlpCache<T>) -> Vec<T> {
        cache.acts.clear();
        cache.acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, layer) in self.layers.iter().enumerate() {
            let mut next = vec![T::zero(); layer.out_dim];
            layer.apply(cache.acts.last().expect("input pushed"), &mut next);
            if li != last {
                relu_in_place(&mut next);
            }
            cache.acts.push(next);
        }
        cache.acts.last().cloned().unwrap_or_default()
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, cache: &MlpCache<T>, d_out: &[T], grads: &mut MlpWeights<T>) -> Vec<T> {
        let mut delta = d_out.to_vec();
        let last = self.layers.len() - 1;
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            if li != last {
                // ReLU mask from this layer's post-activation output.
                for (d, a) in delta.iter_mut().zip(&cache.acts[li + 1]) {
                    if *a <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let input = &cache.acts[li];
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                g.bias[o] += *d;
                if *d == T::zero() {
                    continue;
                }
                let row = &mut g.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (w, x) in row.iter_mut().zip(input) {
                    *w += *d * *x;
                }
            }
            let mut d_in = vec![T::zero(); layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                if *d == T::zero() {
                    continue;
                }
                let row = &layer.weight[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (di, w) in d_in.iter_mut().zip(row) {
                    *di += *d * *w;
                }
            }
            delta = d_in;
        }
        delta
    }

    /// Adds `other` element-wise.
    pub fn add_assign(&mut self, other: &MlpWeights<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }

    /// Parameters as `[w0, b0, w1, b1, ...]` slices.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> MlpWeights<U> {
        MlpWeights {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                    weight: crate::real::cast_slice(&l.weight),
                    bias: crate::real::cast_slice(&l.bias),
                })
                .collect(),
        }
    }
}

#[inline]
fn relu_in_place<T: Real>(v: &mut [T]) {
    for x in v {
        if *x < T::zero() {
            *x = T::zero();
        }
    }
}

/// Parameter count for a layer chain `dims`.
pub fn mlp_param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum()
}
