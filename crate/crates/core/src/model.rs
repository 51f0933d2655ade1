//! The full video model: base Gaussians, deformation encoder and decoder
//! head, with the per-frame forward pass and its backward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Backend, InitKind, ModelConfig};
use crate::decoder::{apply_deform, decode_backward, init_head, DeformDelta};
use crate::encoder::{Deformer, MlpField, PlaneResolution, PlaneSet, Query};
use crate::error::{Error, Result};
use crate::gaussian::{Gaussian2D, GaussianCloud};
use crate::image::Image;
use crate::init::{
    density_scales, init_cloud, init_cloud_scaled, normalize_colors, random_means, sample_means,
    temporal_gradient_map,
};
use crate::io::FrameSequence;
use crate::mlp::MlpWeights;
use crate::raster::{render, RasterConfig, RenderGrads};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub cloud: GaussianCloud<T>,
    pub deformer: Deformer<T>,
    pub head: MlpWeights<T>,
}

/// Deformed Gaussians for one time step plus what the backward pass reuses.
#[derive(Clone, Debug)]
pub struct DeformPass<T> {
    pub t: T,
    pub gaussians: Vec<Gaussian2D<T>>,
    queries: Vec<Query<T>>,
    /// `d query.{x,y} / d mean.{x,y}`.
    jacobians: Vec<[T; 2]>,
    features: Vec<Vec<T>>,
}

/// Gradients for every learnable tensor of a [`Model`].
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads<T> {
    /// `N x 2`, `N x 3`, `N x 3`, flattened.
    pub means: Vec<T>,
    pub cholesky: Vec<T>,
    pub colors: Vec<T>,
    pub deformer: Deformer<T>,
    pub head: MlpWeights<T>,
}

impl<T: Real> ModelGrads<T> {
    /// `(group, tensor)` pairs in the same order as [`Model::named_tensors`].
    pub fn named_tensors(&self) -> Vec<(&'static str, &[T])> {
        let mut out: Vec<(&'static str, &[T])> = vec![
            ("means", &self.means),
            ("cholesky", &self.cholesky),
            ("colors", &self.colors),
        ];
        let grid_count = deformer_grid_tensors(&self.deformer);
        for (i, t) in self.deformer.tensors().into_iter().enumerate() {
            out.push((deformer_group(&self.deformer, i, grid_count), t));
        }
        out.extend(self.head.tensors().into_iter().map(|t| ("head", t)));
        out
    }

    pub fn deformer_planes_mut(&mut self) -> Option<&mut PlaneSet<T>> {
        match &mut self.deformer {
            Deformer::MultiPlane(p) => Some(p),
            Deformer::Mlp(_) => None,
        }
    }
}

fn deformer_grid_tensors<T: Real>(d: &Deformer<T>) -> usize {
    match d {
        Deformer::MultiPlane(p) => 3 * p.levels.len(),
        Deformer::Mlp(_) => 0,
    }
}

fn deformer_group<T>(d: &Deformer<T>, index: usize, grid_count: usize) -> &'static str {
    match d {
        Deformer::MultiPlane(_) if index < grid_count => "planes",
        Deformer::MultiPlane(_) => "fusion",
        Deformer::Mlp(_) => "field",
    }
}

/// Random streams derived from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl<T: Real> Model<T> {
    /// Initializes a model for `video`: Gaussian centers from the configured
    /// initializer, encoder at its documented start, zero-output head.
    pub fn init(video: &FrameSequence, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if video.width() != cfg.width || video.height() != cfg.height {
            return Err(Error::InvalidConfig(format!(
                "config is {}x{} but video is {}x{}",
                cfg.width,
                cfg.height,
                video.width(),
                video.height()
            )));
        }
        let mut cloud = match cfg.init {
            InitKind::TemporalGradient => {
                let map = temporal_gradient_map(video);
                let means = sample_means(&map, cfg.num_gaussians, cfg.floor_eps, seed)?;
                if cfg.density_scaled_init {
                    init_cloud_scaled(video, &means, &density_scales(&map, cfg.floor_eps, &means))?
                } else {
                    init_cloud(video, &means)?
                }
            }
            InitKind::Random => init_cloud(
                video,
                &random_means(cfg.num_gaussians, cfg.width, cfg.height, seed)?,
            )?,
        };
        if cfg.normalize_init_colors {
            normalize_colors(&mut cloud, &cfg.raster_config(true))?;
        }
        let mut enc_rng = stream(seed, 1);
        let deformer = match cfg.backend {
            Backend::Multiplane => Deformer::MultiPlane(PlaneSet::init(
                plane_res(cfg),
                &cfg.ratios,
                cfg.channels,
                &cfg.fusion_dims(),
                &mut enc_rng,
            )),
            Backend::Mlp => Deformer::Mlp(MlpField {
                weights: MlpWeights::uniform(&cfg.field_dims(), &mut enc_rng),
                num_bands: cfg.mlp_field.num_bands,
            }),
        };
        let head = init_head(cfg.feature_dim, &cfg.decoder_hidden, &mut stream(seed, 2));
        Ok(Self {
            config: cfg.clone(),
            cloud,
            deformer,
            head,
        })
    }

    /// All-zero model with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig, num_frames: usize) -> Result<Self> {
        cfg.validate()?;
        if num_frames == 0 {
            return Err(Error::InvalidConfig("num_frames must be >= 1".into()));
        }
        let zero = Gaussian2D::new([T::zero(); 2], [T::zero(); 3], [T::zero(); 3]);
        let cloud = GaussianCloud {
            gaussians: vec![zero; cfg.num_gaussians],
            frame_width: cfg.width,
            frame_height: cfg.height,
            num_frames,
        };
        let deformer = match cfg.backend {
            Backend::Multiplane => Deformer::MultiPlane(PlaneSet::shaped(
                plane_res(cfg),
                &cfg.ratios,
                cfg.channels,
                &cfg.fusion_dims(),
                T::zero(),
            )),
            Backend::Mlp => Deformer::Mlp(MlpField {
                weights: MlpWeights::zeros(&cfg.field_dims()),
                num_bands: cfg.mlp_field.num_bands,
            }),
        };
        Ok(Self {
            config: cfg.clone(),
            cloud,
            deformer,
            head: MlpWeights::zeros(&cfg.head_dims()),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.cloud.num_frames
    }

    pub fn width(&self) -> usize {
        self.cloud.frame_width
    }

    pub fn height(&self) -> usize {
        self.cloud.frame_height
    }

    pub fn num_params(&self) -> usize {
        8 * self.cloud.len() + self.encoder_params() + self.head.num_params()
    }

    fn encoder_params(&self) -> usize {
        match &self.deformer {
            Deformer::MultiPlane(p) if p.levels.is_empty() => 0,
            d => d.num_params(),
        }
    }

    pub fn raster_config(&self, deterministic: bool) -> RasterConfig {
        self.config.raster_config(deterministic)
    }

    pub fn is_finite(&self) -> bool {
        self.cloud.gaussians.iter().all(|g| g.is_finite())
            && self
                .deformer
                .tensors()
                .iter()
                .all(|t| t.iter().all(|v| v.is_finite()))
            && self.head.is_finite()
    }

    /// The time coordinate of frame `index`.
    pub fn frame_time(&self, index: usize) -> T {
        Query::time(index, self.num_frames())
    }

    /// Deforms every base Gaussian for normalized time `t`.
    pub fn deform(&self, t: T) -> DeformPass<T> {
        let (w, h) = (self.width(), self.height());
        let freeze = self.config.freeze_mean;
        let per: Vec<_> = self
            .cloud
            .gaussians
            .par_iter()
            .map(|g| {
                let (q, jac) = Query::from_mean(g.mean, w, h, t);
                let feats = self.deformer.encode(&q);
                let delta = crate::decoder::decode(&self.head, &feats, freeze);
                (apply_deform(g, &delta), q, jac, feats)
            })
            .collect();
        let mut pass = DeformPass {
            t,
            gaussians: Vec::with_capacity(per.len()),
            queries: Vec::with_capacity(per.len()),
            jacobians: Vec::with_capacity(per.len()),
            features: Vec::with_capacity(per.len()),
        };
        for (g, q, j, f) in per {
            pass.gaussians.push(g);
            pass.queries.push(q);
            pass.jacobians.push(j);
            pass.features.push(f);
        }
        pass
    }

    pub fn deform_frame(&self, index: usize) -> DeformPass<T> {
        self.deform(self.frame_time(index))
    }

    /// Unclamped render of frame `index`.
    pub fn render_frame(&self, index: usize, raster: &RasterConfig) -> Result<Image<T>> {
        let pass = self.deform_frame(index);
        render(&pass.gaussians, raster, self.width(), self.height())
    }

    pub fn render_all(&self, raster: &RasterConfig) -> Result<Vec<Image<T>>> {
        (0..self.num_frames())
            .map(|i| self.render_frame(i, raster))
            .collect()
    }

    /// Chains rasterizer gradients (with respect to the deformed Gaussians in
    /// `pass`) back to every model tensor. Gaussians are processed in fixed
    /// chunks whose encoder/decoder gradients are summed in chunk order, so
    /// the result does not depend on the worker count.
    pub fn backward(&self, pass: &DeformPass<T>, grads: &RenderGrads<T>) -> Result<ModelGrads<T>> {
        let n = self.cloud.len();
        if grads.len() != n || pass.gaussians.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} gradients for {} Gaussians",
                grads.len(),
                n
            )));
        }
        let freeze = self.config.freeze_mean;
        let chunk = 256.max(n.div_ceil(64));
        let starts: Vec<usize> = (0..n).step_by(chunk).collect();
        let batch = rayon::current_num_threads().max(1);

        let mut out = ModelGrads {
            means: vec![T::zero(); 2 * n],
            cholesky: vec![T::zero(); 3 * n],
            colors: vec![T::zero(); 3 * n],
            deformer: self.deformer.zeros_like(),
            head: self.head.zeros_like(),
        };
        for group in starts.chunks(batch) {
            let parts: Vec<_> = group
                .par_iter()
                .map(|&s| {
                    let e = (s + chunk).min(n);
                    let mut d_def = self.deformer.zeros_like();
                    let mut d_head = self.head.zeros_like();
                    let mut base = Vec::with_capacity(e - s);
                    for i in s..e {
                        let g = grads.get(i);
                        let delta = DeformDelta::from_slice(&g);
                        let d_feat = decode_backward(
                            &self.head,
                            &pass.features[i],
                            &delta,
                            freeze,
                            &mut d_head,
                        );
                        let d_q =
                            self.deformer
                                .backward_into(&pass.queries[i], &d_feat, &mut d_def);
                        let j = pass.jacobians[i];
                        let mut b = g;
                        b[0] += d_q[0] * j[0];
                        b[1] += d_q[1] * j[1];
                        base.push(b);
                    }
                    (s, base, d_def, d_head)
                })
                .collect();
            for (s, base, d_def, d_head) in parts {
                for (k, b) in base.iter().enumerate() {
                    let i = s + k;
                    out.means[2 * i..2 * i + 2].copy_from_slice(&b[0..2]);
                    out.cholesky[3 * i..3 * i + 3].copy_from_slice(&b[2..5]);
                    out.colors[3 * i..3 * i + 3].copy_from_slice(&b[5..8]);
                }
                out.deformer.add_assign(&d_def);
                out.head.add_assign(&d_head);
            }
        }
        Ok(out)
    }

    /// Base Gaussian parameters split into the `means`, `cholesky` and
    /// `colors` groups.
    pub fn base_flat(&self) -> [Vec<T>; 3] {
        let n = self.cloud.len();
        let (mut m, mut c, mut k) = (
            Vec::with_capacity(2 * n),
            Vec::with_capacity(3 * n),
            Vec::with_capacity(3 * n),
        );
        for g in &self.cloud.gaussians {
            m.extend_from_slice(&g.mean);
            c.extend_from_slice(&g.chol_raw);
            k.extend_from_slice(&g.color);
        }
        [m, c, k]
    }

    /// Inverse of [`Model::base_flat`].
    pub fn set_base_flat(&mut self, flat: &[Vec<T>; 3]) {
        for (i, g) in self.cloud.gaussians.iter_mut().enumerate() {
            g.mean.copy_from_slice(&flat[0][2 * i..2 * i + 2]);
            g.chol_raw.copy_from_slice(&flat[1][3 * i..3 * i + 3]);
            g.color.copy_from_slice(&flat[2][3 * i..3 * i + 3]);
        }
    }

    /// Encoder and head tensors with their group names, in serialization
    /// order (the base Gaussian groups come first in [`ModelGrads`]).
    pub fn network_tensors_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let grid_count = deformer_grid_tensors(&self.deformer);
        let kind = match &self.deformer {
            Deformer::MultiPlane(_) => 0,
            Deformer::Mlp(_) => 1,
        };
        let mut out = Vec::new();
        for (i, t) in self.deformer.tensors_mut().into_iter().enumerate() {
            let g = match kind {
                0 if i < grid_count => "planes",
                0 => "fusion",
                _ => "field",
            };
            out.push((g, t));
        }
        out.extend(self.head.tensors_mut().into_iter().map(|t| ("head", t)));
        out
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            cloud: GaussianCloud {
                gaussians: self.cloud.gaussians.iter().map(|g| g.cast()).collect(),
                frame_width: self.cloud.frame_width,
                frame_height: self.cloud.frame_height,
                num_frames: self.cloud.num_frames,
            },
            deformer: self.deformer.cast(),
            head: self.head.cast(),
        }
    }
}

fn plane_res(cfg: &ModelConfig) -> PlaneResolution {
    PlaneResolution {
        x: cfg.planes.x,
        y: cfg.planes.y,
        t: cfg.planes.t,
    }
}
