//! JSON configuration: model architecture, training schedule, and the
//! combined encode document consumed by the CLI.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::DELTA_DIM;
use crate::encoder::encoding_dim;
use crate::error::{Error, Result};
use crate::mlp::mlp_param_count;
use crate::optim::{OptimConfig, OptimizerKind};
use crate::raster::RasterConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Multiplane,
    Mlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    #[default]
    TemporalGradient,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneDims {
    pub x: usize,
    pub y: usize,
    pub t: usize,
}

impl Default for PlaneDims {
    fn default() -> Self {
        Self { x: 16, y: 16, t: 8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MlpFieldConfig {
    pub num_bands: usize,
    pub hidden: Vec<usize>,
}

impl Default for MlpFieldConfig {
    fn default() -> Self {
        Self {
            num_bands: 6,
            hidden: vec![64, 64],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    /// 8 or 16; every other tensor is always 8-bit.
    pub mean_bits: u8,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self { mean_bits: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterSettings {
    pub tile_size: usize,
    /// `null` disables truncation.
    pub cutoff_sigma: Option<f64>,
}

impl Default for RasterSettings {
    fn default() -> Self {
        Self {
            tile_size: 16,
            cutoff_sigma: Some(3.0),
        }
    }
}

impl RasterSettings {
    pub fn to_raster(&self, deterministic: bool) -> RasterConfig {
        RasterConfig {
            tile_size: self.tile_size,
            cutoff_sigma: self.cutoff_sigma.unwrap_or(f64::INFINITY),
            deterministic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub height: usize,
    pub num_gaussians: usize,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub planes: PlaneDims,
    #[serde(default = "default_ratios")]
    pub ratios: Vec<usize>,
    /// Feature width `C` of every plane.
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_hidden")]
    pub fusion_hidden: Vec<usize>,
    /// Encoder output width `h`.
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    /// Hidden widths of the decoder head; empty means a single linear layer.
    #[serde(default)]
    pub decoder_hidden: Vec<usize>,
    #[serde(default)]
    pub freeze_mean: bool,
    #[serde(default)]
    pub mlp_field: MlpFieldConfig,
    #[serde(default)]
    pub init: InitKind,
    #[serde(default = "default_floor_eps")]
    pub floor_eps: f64,
    /// Scale initial colors down where Gaussians overlap, so the first
    /// render matches the clip's brightness. Off keeps the raw temporal mean.
    #[serde(default)]
    pub normalize_init_colors: bool,
    /// Size each temporal-gradient Gaussian to the spacing implied by its
    /// sampling density instead of the frame-wide `sqrt(H W / N)`.
    #[serde(default)]
    pub density_scaled_init: bool,
    #[serde(default)]
    pub quantization: QuantConfig,
    #[serde(default)]
    pub raster: RasterSettings,
}

fn default_ratios() -> Vec<usize> {
    vec![1, 2]
}
fn default_channels() -> usize {
    16
}
fn default_hidden() -> Vec<usize> {
    vec![64]
}
fn default_feature_dim() -> usize {
    64
}
fn default_floor_eps() -> f64 {
    0.02
}

impl ModelConfig {
    /// Defaults for everything except the frame size and Gaussian count.
    pub fn new(width: usize, height: usize, num_gaussians: usize) -> Self {
        Self {
            width,
            height,
            num_gaussians,
            backend: Backend::Multiplane,
            planes: PlaneDims::default(),
            ratios: default_ratios(),
            channels: default_channels(),
            fusion_hidden: default_hidden(),
            feature_dim: default_feature_dim(),
            decoder_hidden: Vec::new(),
            freeze_mean: false,
            mlp_field: MlpFieldConfig::default(),
            init: InitKind::TemporalGradient,
            floor_eps: default_floor_eps(),
            normalize_init_colors: false,
            density_scaled_init: false,
            quantization: QuantConfig::default(),
            raster: RasterSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad(format!("frame size {}x{}", self.width, self.height));
        }
        if self.num_gaussians == 0 {
            return bad("num_gaussians must be >= 1".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be >= 1".into());
        }
        if self.backend == Backend::Multiplane {
            if self.channels == 0 {
                return bad("channels must be >= 1".into());
            }
            if self.ratios.contains(&0) {
                return bad("ratios must be >= 1".into());
            }
            let p = self.planes;
            if !self.ratios.is_empty() && (p.x < 2 || p.y < 2 || p.t < 2) {
                return bad(format!(
                    "plane resolutions must be >= 2, got {}x{}x{}",
                    p.x, p.y, p.t
                ));
            }
        }
        if self.mlp_field.num_bands > 20 {
            return bad("num_bands must be <= 20".into());
        }
        if self.fusion_hidden.contains(&0)
            || self.decoder_hidden.contains(&0)
            || self.mlp_field.hidden.contains(&0)
        {
            return bad("hidden layer widths must be >= 1".into());
        }
        if !(self.floor_eps >= 0.0) || !self.floor_eps.is_finite() {
            return bad(format!(
                "floor_eps must be finite and >= 0, got {}",
                self.floor_eps
            ));
        }
        if !matches!(self.quantization.mean_bits, 8 | 16) {
            return bad(format!(
                "mean_bits must be 8 or 16, got {}",
                self.quantization.mean_bits
            ));
        }
        self.raster.to_raster(true).validate()?;
        Ok(())
    }

    /// Layer widths of the fusion MLP (multi-plane backend).
    pub fn fusion_dims(&self) -> Vec<usize> {
        let mut d = vec![self.ratios.len() * self.channels];
        d.extend_from_slice(&self.fusion_hidden);
        d.push(self.feature_dim);
        d
    }

    /// Layer widths of the MLP field (MLP backend).
    pub fn field_dims(&self) -> Vec<usize> {
        let mut d = vec![encoding_dim(self.mlp_field.num_bands)];
        d.extend_from_slice(&self.mlp_field.hidden);
        d.push(self.feature_dim);
        d
    }

    pub fn head_dims(&self) -> Vec<usize> {
        let mut d = vec![self.feature_dim];
        d.extend_from_slice(&self.decoder_hidden);
        d.push(DELTA_DIM);
        d
    }

    /// Grid entries of all planes: per level `(xy + xt + yt) * C`.
    pub fn plane_values(&self) -> usize {
        let p = self.planes;
        self.ratios
            .iter()
            .map(|&r| {
                let (x, y, t) = (p.x * r, p.y * r, p.t * r);
                (x * y + x * t + y * t) * self.channels
            })
            .sum()
    }

    /// Encoder parameters; zero for a multi-plane config without levels.
    pub fn encoder_params(&self) -> usize {
        match self.backend {
            Backend::Multiplane if self.ratios.is_empty() => 0,
            Backend::Multiplane => self.plane_values() + mlp_param_count(&self.fusion_dims()),
            Backend::Mlp => mlp_param_count(&self.field_dims()),
        }
    }

    pub fn decoder_params(&self) -> usize {
        mlp_param_count(&self.head_dims())
    }

    pub fn raster_config(&self, deterministic: bool) -> RasterConfig {
        self.raster.to_raster(deterministic)
    }
}

/// Learnable scalars: `8 N` for the Gaussians plus encoder and decoder.
pub fn count_params(cfg: &ModelConfig) -> usize {
    8 * cfg.num_gaussians + cfg.encoder_params() + cfg.decoder_params()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrameOrder {
    Sequential,
    #[default]
    Shuffled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub lr: f64,
    pub tv_lambda: f64,
    pub optimizer: OptimizerKind,
    pub adan_betas: [f64; 3],
    pub adam_betas: [f64; 2],
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub frame_order: FrameOrder,
    /// Absolute learning rate per parameter group (`means`, `cholesky`,
    /// `colors`, `planes`, `fusion`, `field`, `head`).
    pub lr_overrides: BTreeMap<String, f64>,
    /// Groups that are never updated.
    pub frozen: Vec<String>,
    /// For this many final steps the base means sit on their quantization
    /// grid and are not updated, so the other parameters adapt to the
    /// rounding that `write_bitstream` will apply.
    pub snap_means_steps: usize,
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            max_steps: None,
            lr: 1e-3,
            tv_lambda: 1e-4,
            optimizer: OptimizerKind::Adan,
            adan_betas: [0.98, 0.92, 0.99],
            adam_betas: [0.9, 0.999],
            eps: 1e-8,
            weight_decay: 0.0,
            seed: 0,
            frame_order: FrameOrder::Shuffled,
            lr_overrides: BTreeMap::new(),
            frozen: Vec::new(),
            snap_means_steps: 0,
            deterministic: true,
        }
    }
}

/// Parameter group names accepted by `lr_overrides` and `frozen`.
pub const PARAM_GROUPS: [&str; 7] = [
    "means", "cholesky", "colors", "planes", "fusion", "field", "head",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.tv_lambda >= 0.0) || !self.tv_lambda.is_finite() {
            return bad(format!("tv_lambda must be >= 0, got {}", self.tv_lambda));
        }
        for (k, v) in &self.lr_overrides {
            if !PARAM_GROUPS.contains(&k.as_str()) {
                return bad(format!("unknown parameter group `{k}` in lr_overrides"));
            }
            if !(*v > 0.0) || !v.is_finite() {
                return bad(format!("lr override for `{k}` must be > 0"));
            }
        }
        if let Some(k) = self
            .frozen
            .iter()
            .find(|k| !PARAM_GROUPS.contains(&k.as_str()))
        {
            return bad(format!("unknown parameter group `{k}` in frozen"));
        }
        Ok(())
    }

    pub fn optim(&self) -> OptimConfig {
        let betas = match self.optimizer {
            OptimizerKind::Adan => self.adan_betas,
            OptimizerKind::Adam => [self.adam_betas[0], self.adam_betas[1], 0.0],
        };
        OptimConfig {
            kind: self.optimizer,
            lr: self.lr,
            betas,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn group_lr(&self, group: &str) -> f64 {
        self.lr_overrides.get(group).copied().unwrap_or(self.lr)
    }

    pub fn is_frozen(&self, group: &str) -> bool {
        self.frozen.iter().any(|g| g == group)
    }

    /// Steps `fit` will take on a clip of `frames` frames.
    pub fn total_steps(&self, frames: usize) -> usize {
        let full = self.epochs.saturating_mul(frames);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// The document passed to `gsvideo encode --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodeConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl EncodeConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Unreadable {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_json(&text)
    }
}
