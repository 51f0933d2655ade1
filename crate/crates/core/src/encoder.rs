//! Spatio-temporal encoder: maps a normalized query `(x, y, t)` to a feature
//! vector.
//!
//! The multi-plane backend samples XY, XT and YT feature grids at several
//! resolutions, multiplies the three samples channel-wise, concatenates the
//! levels, and runs the result through a fusion MLP. The MLP-field backend
//! (used for ablations) feeds a sinusoidal encoding of the query straight into
//! an MLP.

use std::f64::consts::PI;

use rand::Rng;

use crate::mlp::{MlpCache, MlpWeights};
use crate::real::Real;

/// A `rows x cols x channels` feature grid. Axis 0 is the plane's first named
/// coordinate (`x` for XY and XT, `y` for YT).
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn filled(rows: usize, cols: usize, channels: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            channels,
            data: vec![value; rows * cols * channels],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, channels: usize, mut f: impl FnMut() -> T) -> Self {
        Self {
            rows,
            cols,
            channels,
            data: (0..rows * cols * channels).map(|_| f()).collect(),
        }
    }

    #[inline]
    pub fn offset(&self, row: usize, col: usize) -> usize {
        (row * self.cols + col) * self.channels
    }

    pub fn node(&self, row: usize, col: usize) -> &[T] {
        let o = self.offset(row, col);
        &self.data[o..o + self.channels]
    }

    pub fn zeros_like(&self) -> Self {
        Self::filled(self.rows, self.cols, self.channels, T::zero())
    }
}

/// Four bilinear taps into a grid, plus the derivative of the weights with
/// respect to the continuous coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Footprint<T> {
    /// Node offsets `(i0,j0), (i0,j1), (i1,j0), (i1,j1)`.
    pub offsets: [usize; 4],
    pub weights: [T; 4],
    /// `d weight / d u` and `d weight / d v` for each tap.
    pub dw_du: [T; 4],
    pub dw_dv: [T; 4],
}

/// Align-corners bilinear footprint: continuous index `u * (rows - 1)`.
pub fn footprint<T: Real>(grid: &Grid<T>, u: T, v: T) -> Footprint<T> {
    let (i0, a, su) = axis(u, grid.rows);
    let (j0, b, sv) = axis(v, grid.cols);
    let i1 = (i0 + 1).min(grid.rows - 1);
    let j1 = (j0 + 1).min(grid.cols - 1);
    let one = T::one();
    Footprint {
        offsets: [
            grid.offset(i0, j0),
            grid.offset(i0, j1),
            grid.offset(i1, j0),
            grid.offset(i1, j1),
        ],
        weights: [(one - a) * (one - b), (one - a) * b, a * (one - b), a * b],
        dw_du: [-(one - b) * su, -b * su, (one - b) * su, b * su],
        dw_dv: [-(one - a) * sv, (one - a) * sv, -a * sv, a * sv],
    }
}

/// Base index, fractional weight and index scale along one axis.
#[inline]
fn axis<T: Real>(u: T, n: usize) -> (usize, T, T) {
    if n < 2 {
        return (0, T::zero(), T::zero());
    }
    let scale = T::lit((n - 1) as f64);
    let f = u * scale;
    let i0 = f.floor().as_f64().clamp(0.0, (n - 2) as f64) as usize;
    (i0, f - T::lit(i0 as f64), scale)
}

/// Bilinearly samples `grid` at `(u, v)`, each in `[0, 1]`.
pub fn sample_plane<T: Real>(grid: &Grid<T>, u: T, v: T) -> Vec<T> {
    let fp = footprint(grid, u, v);
    let mut out = vec![T::zero(); grid.channels];
    accumulate_sample(grid, &fp, &mut out);
    out
}

#[inline]
fn accumulate_sample<T: Real>(grid: &Grid<T>, fp: &Footprint<T>, out: &mut [T]) {
    for (o, w) in fp.offsets.iter().zip(&fp.weights) {
        let node = &grid.data[*o..*o + grid.channels];
        for (acc, v) in out.iter_mut().zip(node) {
            *acc += *w * *v;
        }
    }
}

/// Normalized encoder query; every component lies in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Query<T> {
    pub x: T,
    pub y: T,
    pub t: T,
}

impl<T: Real> Query<T> {
    pub fn new(x: T, y: T, t: T) -> Self {
        Self { x, y, t }
    }

    /// `t / (T - 1)` for a zero-based frame index; `0` for single-frame clips.
    pub fn time(frame: usize, num_frames: usize) -> T {
        if num_frames <= 1 {
            T::zero()
        } else {
            T::lit(frame as f64 / (num_frames - 1) as f64)
        }
    }

    /// Query for a Gaussian centered at `mean` (pixel units); coordinates
    /// outside the frame are clamped. Also returns `d x_norm / d mean_x` and
    /// `d y_norm / d mean_y`, zero where clamping is active.
    pub fn from_mean(mean: [T; 2], width: usize, height: usize, t: T) -> (Self, [T; 2]) {
        let (x, dx) = normalize(mean[0], width);
        let (y, dy) = normalize(mean[1], height);
        (Self { x, y, t }, [dx, dy])
    }
}

#[inline]
fn normalize<T: Real>(v: T, extent: usize) -> (T, T) {
    let inv = T::one() / T::lit(extent as f64);
    let n = v * inv;
    if n < T::zero() {
        (T::zero(), T::zero())
    } else if n > T::one() {
        (T::one(), T::zero())
    } else {
        (n, inv)
    }
}

/// Three planes sharing one resolution ratio.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneLevel<T> {
    pub xy: Grid<T>,
    pub xt: Grid<T>,
    pub yt: Grid<T>,
}

impl<T: Real> PlaneLevel<T> {
    pub fn channels(&self) -> usize {
        self.xy.channels
    }

    pub fn grids(&self) -> [&Grid<T>; 3] {
        [&self.xy, &self.xt, &self.yt]
    }

    pub fn grids_mut(&mut self) -> [&mut Grid<T>; 3] {
        [&mut self.xy, &mut self.xt, &mut self.yt]
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            xy: self.xy.zeros_like(),
            xt: self.xt.zeros_like(),
            yt: self.yt.zeros_like(),
        }
    }
}

/// Base plane resolution along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PlaneResolution {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneSet<T> {
    pub levels: Vec<PlaneLevel<T>>,
    pub fusion: MlpWeights<T>,
}

impl<T: Real> PlaneSet<T> {
    /// Builds the grid shapes for `ratios` with every entry set to `value`.
    pub fn shaped(
        res: PlaneResolution,
        ratios: &[usize],
        channels: usize,
        fusion_dims: &[usize],
        value: T,
    ) -> Self {
        let levels = ratios
            .iter()
            .map(|&r| {
                let (x, y, t) = (res.x * r, res.y * r, res.t * r);
                PlaneLevel {
                    xy: Grid::filled(x, y, channels, value),
                    xt: Grid::filled(x, t, channels, value),
                    yt: Grid::filled(y, t, channels, value),
                }
            })
            .collect();
        Self {
            levels,
            fusion: MlpWeights::zeros(fusion_dims),
        }
    }

    /// XT and YT grids at exactly 1, XY grids uniform in `(-0.1, 0.1)`,
    /// fusion MLP uniform in `+-1/sqrt(fan_in)`.
    pub fn init<R: Rng>(
        res: PlaneResolution,
        ratios: &[usize],
        channels: usize,
        fusion_dims: &[usize],
        rng: &mut R,
    ) -> Self {
        let mut set = Self::shaped(res, ratios, channels, fusion_dims, T::one());
        for level in &mut set.levels {
            for v in &mut level.xy.data {
                *v = T::lit(rng.gen_range(-0.1..0.1));
            }
        }
        set.fusion = MlpWeights::uniform(fusion_dims, rng);
        set
    }

    pub fn channels(&self) -> usize {
        self.levels.first().map_or(0, |l| l.channels())
    }

    /// Width of the concatenated per-level features.
    pub fn concat_dim(&self) -> usize {
        self.levels.len() * self.channels()
    }

    pub fn out_dim(&self) -> usize {
        self.fusion.out_dim()
    }

    pub fn num_params(&self) -> usize {
        self.num_grid_values() + self.fusion.num_params()
    }

    pub fn num_grid_values(&self) -> usize {
        self.levels
            .iter()
            .flat_map(|l| l.grids())
            .map(|g| g.data.len())
            .sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            levels: self.levels.iter().map(|l| l.zeros_like()).collect(),
            fusion: self.fusion.zeros_like(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.levels.iter_mut().zip(&other.levels) {
            for (ga, gb) in a.grids_mut().into_iter().zip(b.grids()) {
                for (x, y) in ga.data.iter_mut().zip(&gb.data) {
                    *x += *y;
                }
            }
        }
        self.fusion.add_assign(&other.fusion);
    }

    /// Per-level plane products concatenated, before the fusion MLP.
    pub fn plane_features(&self, q: &Query<T>) -> Vec<T> {
        let c = self.channels();
        let mut out = Vec::with_capacity(self.concat_dim());
        for level in &self.levels {
            let mut f = vec![T::zero(); c];
            let mut g = vec![T::zero(); c];
            let mut h = vec![T::zero(); c];
            accumulate_sample(&level.xy, &footprint(&level.xy, q.x, q.y), &mut f);
            accumulate_sample(&level.xt, &footprint(&level.xt, q.x, q.t), &mut g);
            accumulate_sample(&level.yt, &footprint(&level.yt, q.y, q.t), &mut h);
            out.extend(f.iter().zip(&g).zip(&h).map(|((a, b), c)| *a * *b * *c));
        }
        out
    }

    /// `F_out = MLP(concat_r(F_XY o F_XT o F_YT))`.
    pub fn encode(&self, q: &Query<T>) -> Vec<T> {
        self.fusion.forward(&self.plane_features(q))
    }

    /// Accumulates gradients of `d_out . F_out(q)` into `grads` and returns
    /// `dL/d(x, y, t)`.
    pub fn backward_into(&self, q: &Query<T>, d_out: &[T], grads: &mut PlaneSet<T>) -> [T; 3] {
        let c = self.channels();
        let feats = self.sample_all(q);
        let concat: Vec<T> = feats
            .iter()
            .flat_map(|s| (0..c).map(move |k| s.values[0][k] * s.values[1][k] * s.values[2][k]))
            .collect();
        let mut cache = MlpCache::default();
        self.fusion.forward_cached(&concat, &mut cache);
        let d_concat = self.fusion.backward(&cache, d_out, &mut grads.fusion);

        let mut d_q = [T::zero(); 3];
        for (li, (s, level)) in feats.iter().zip(&self.levels).enumerate() {
            let d_feat = &d_concat[li * c..(li + 1) * c];
            let gl = &mut grads.levels[li];
            // Product rule: d/dF_xy = d * F_xt * F_yt, etc.
            let [vxy, vxt, vyt] = &s.values;
            let d_xy: Vec<T> = (0..c).map(|k| d_feat[k] * vxt[k] * vyt[k]).collect();
            let d_xt: Vec<T> = (0..c).map(|k| d_feat[k] * vxy[k] * vyt[k]).collect();
            let d_yt: Vec<T> = (0..c).map(|k| d_feat[k] * vxy[k] * vxt[k]).collect();
            let [fxy, fxt, fyt] = &s.footprints;
            scatter(&mut gl.xy, fxy, &d_xy);
            scatter(&mut gl.xt, fxt, &d_xt);
            scatter(&mut gl.yt, fyt, &d_yt);
            // Coordinate gradients through the bilinear weights.
            let (du_xy, dv_xy) = coord_grad(&level.xy, fxy, &d_xy);
            let (du_xt, dv_xt) = coord_grad(&level.xt, fxt, &d_xt);
            let (du_yt, dv_yt) = coord_grad(&level.yt, fyt, &d_yt);
            d_q[0] += du_xy + du_xt;
            d_q[1] += dv_xy + du_yt;
            d_q[2] += dv_xt + dv_yt;
        }
        d_q
    }

    /// Full gradient for a single query.
    pub fn encode_backward(&self, q: &Query<T>, d_out: &[T]) -> EncoderGrads<T> {
        let mut planes = self.zeros_like();
        let d_query = self.backward_into(q, d_out, &mut planes);
        EncoderGrads { planes, d_query }
    }

    fn sample_all(&self, q: &Query<T>) -> Vec<LevelSample<T>> {
        let c = self.channels();
        self.levels
            .iter()
            .map(|level| {
                let footprints = [
                    footprint(&level.xy, q.x, q.y),
                    footprint(&level.xt, q.x, q.t),
                    footprint(&level.yt, q.y, q.t),
                ];
                let mut values = [vec![T::zero(); c], vec![T::zero(); c], vec![T::zero(); c]];
                for ((grid, fp), v) in level
                    .grids()
                    .into_iter()
                    .zip(&footprints)
                    .zip(values.iter_mut())
                {
                    accumulate_sample(grid, fp, v);
                }
                LevelSample { footprints, values }
            })
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.levels
            .iter()
            .flat_map(|l| l.grids())
            .all(|g| g.data.iter().all(|v| v.is_finite()))
            && self.fusion.is_finite()
    }

    pub fn cast<U: Real>(&self) -> PlaneSet<U> {
        let grid = |g: &Grid<T>| Grid {
            rows: g.rows,
            cols: g.cols,
            channels: g.channels,
            data: crate::real::cast_slice(&g.data),
        };
        PlaneSet {
            levels: self
                .levels
                .iter()
                .map(|l| PlaneLevel {
                    xy: grid(&l.xy),
                    xt: grid(&l.xt),
                    yt: grid(&l.yt),
                })
                .collect(),
            fusion: self.fusion.cast(),
        }
    }
}

struct LevelSample<T> {
    footprints: [Footprint<T>; 3],
    values: [Vec<T>; 3],
}

#[inline]
fn scatter<T: Real>(grid: &mut Grid<T>, fp: &Footprint<T>, d: &[T]) {
    let c = grid.channels;
    for (o, w) in fp.offsets.iter().zip(&fp.weights) {
        for (g, v) in grid.data[*o..*o + c].iter_mut().zip(d) {
            *g += *w * *v;
        }
    }
}

#[inline]
fn coord_grad<T: Real>(grid: &Grid<T>, fp: &Footprint<T>, d: &[T]) -> (T, T) {
    let c = grid.channels;
    let mut du = T::zero();
    let mut dv = T::zero();
    for tap in 0..4 {
        let o = fp.offsets[tap];
        let dot: T = grid.data[o..o + c]
            .iter()
            .zip(d)
            .map(|(a, b)| *a * *b)
            .sum();
        du += fp.dw_du[tap] * dot;
        dv += fp.dw_dv[tap] * dot;
    }
    (du, dv)
}

/// Gradients of a multi-plane encoder evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderGrads<T> {
    pub planes: PlaneSet<T>,
    /// `dL/d(x_norm, y_norm, t_norm)`; the time component is informational.
    pub d_query: [T; 3],
}

/// Sinusoidal encoding `[x, y, t, sin(2^k pi p), cos(2^k pi p) ...]` for
/// `k = 0..num_bands` and each coordinate `p` in `(x, y, t)`.
pub fn positional_encoding<T: Real>(q: &Query<T>, num_bands: usize) -> Vec<T> {
    let coords = [q.x, q.y, q.t];
    let mut out = Vec::with_capacity(3 + 6 * num_bands);
    out.extend_from_slice(&coords);
    for k in 0..num_bands {
        let freq = T::lit(PI * (1u64 << k) as f64);
        for &p in &coords {
            let a = freq * p;
            out.push(a.sin());
            out.push(a.cos());
        }
    }
    out
}

pub fn encoding_dim(num_bands: usize) -> usize {
    3 + 6 * num_bands
}

/// MLP deformation field over positionally encoded queries.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpField<T> {
    pub weights: MlpWeights<T>,
    pub num_bands: usize,
}

impl<T: Real> MlpField<T> {
    pub fn encode(&self, q: &Query<T>) -> Vec<T> {
        mlp_field_encode(&self.weights, q, self.num_bands)
    }

    pub fn backward_into(&self, q: &Query<T>, d_out: &[T], grads: &mut MlpField<T>) -> [T; 3] {
        let enc = positional_encoding(q, self.num_bands);
        let mut cache = MlpCache::default();
        self.weights.forward_cached(&enc, &mut cache);
        let d_enc = self.weights.backward(&cache, d_out, &mut grads.weights);
        let coords = [q.x, q.y, q.t];
        let mut d_q = [d_enc[0], d_enc[1], d_enc[2]];
        let mut idx = 3;
        for k in 0..self.num_bands {
            let freq = T::lit(PI * (1u64 << k) as f64);
            for (c, &p) in coords.iter().enumerate() {
                let a = freq * p;
                d_q[c] += d_enc[idx] * freq * a.cos() - d_enc[idx + 1] * freq * a.sin();
                idx += 2;
            }
        }
        d_q
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.zeros_like(),
            num_bands: self.num_bands,
        }
    }
}

/// Ablation backend: `MLP(positional_encoding(q, num_bands))`.
pub fn mlp_field_encode<T: Real>(
    weights: &MlpWeights<T>,
    q: &Query<T>,
    num_bands: usize,
) -> Vec<T> {
    weights.forward(&positional_encoding(q, num_bands))
}

/// Either deformation-field backend.
#[derive(Clone, Debug, PartialEq)]
pub enum Deformer<T> {
    MultiPlane(PlaneSet<T>),
    Mlp(MlpField<T>),
}

impl<T: Real> Deformer<T> {
    pub fn encode(&self, q: &Query<T>) -> Vec<T> {
        match self {
            Deformer::MultiPlane(p) => p.encode(q),
            Deformer::Mlp(m) => m.encode(q),
        }
    }

    /// `grads` must have the same variant and shapes as `self`.
    pub fn backward_into(&self, q: &Query<T>, d_out: &[T], grads: &mut Deformer<T>) -> [T; 3] {
        match (self, grads) {
            (Deformer::MultiPlane(p), Deformer::MultiPlane(g)) => p.backward_into(q, d_out, g),
            (Deformer::Mlp(m), Deformer::Mlp(g)) => m.backward_into(q, d_out, g),
            _ => panic!("gradient buffer variant does not match the deformer"),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            Deformer::MultiPlane(p) => Deformer::MultiPlane(p.zeros_like()),
            Deformer::Mlp(m) => Deformer::Mlp(m.zeros_like()),
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Deformer::MultiPlane(p) => p.out_dim(),
            Deformer::Mlp(m) => m.weights.out_dim(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            Deformer::MultiPlane(p) => p.num_params(),
            Deformer::Mlp(m) => m.weights.num_params(),
        }
    }

    /// Parameter tensors in serialization order.
    pub fn tensors(&self) -> Vec<&[T]> {
        match self {
            Deformer::MultiPlane(p) => {
                let mut v: Vec<&[T]> = p
                    .levels
                    .iter()
                    .flat_map(|l| l.grids().map(|g| g.data.as_slice()))
                    .collect();
                v.extend(p.fusion.tensors());
                v
            }
            Deformer::Mlp(m) => m.weights.tensors(),
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        match self {
            Deformer::MultiPlane(p) => {
                let PlaneSet { levels, fusion } = p;
                let mut v: Vec<&mut [T]> = levels
                    .iter_mut()
                    .flat_map(|l| l.grids_mut().map(|g| g.data.as_mut_slice()))
                    .collect();
                v.extend(fusion.tensors_mut());
                v
            }
            Deformer::Mlp(m) => m.weights.tensors_mut(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Deformer<U> {
        match self {
            Deformer::MultiPlane(p) => Deformer::MultiPlane(p.cast()),
            Deformer::Mlp(m) => Deformer::Mlp(MlpField {
                weights: m.weights.cast(),
                num_bands: m.num_bands,
            }),
        }
    }
}
