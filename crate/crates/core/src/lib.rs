//! Video representation and compression with time-deformable 2D Gaussians.
//!
//! A clip is modeled as `N` base Gaussians plus a deformation field. For each
//! frame, every Gaussian's center and the frame time form a query; a
//! multi-plane encoder turns the query into features and a small decoder head
//! maps those to additive offsets on the Gaussian's mean, Cholesky factor and
//! color. Frames render as the plain (unsorted, unnormalized) sum of colored
//! Gaussians. Training fits all parameters with hand-written gradients; the
//! compressed video is the 8-bit-quantized model in a `.gsv` container.
//!
//! Pixel `(row i, col j)` has its center at `(x, y) = (j + 0.5, i + 0.5)`.

pub mod bench;
pub mod codec;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod init;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod model;
pub mod optim;
pub mod raster;
pub mod real;
pub mod synth;
pub mod train;

pub use config::{count_params, Backend, EncodeConfig, InitKind, ModelConfig, TrainConfig};
pub use error::{Error, Result};
pub use gaussian::{Gaussian2D, GaussianCloud};
pub use image::Image;
pub use io::FrameSequence;
pub use model::Model;
pub use raster::RasterConfig;
