//! The fitting loop: one full-frame optimizer step per frame, epochs over the
//! clip, L2 reconstruction plus TV on the plane grids.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::codec::{dequantize_tensor, quantize_bits};
use crate::config::{FrameOrder, ModelConfig, TrainConfig};
use crate::encoder::Deformer;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::FrameSequence;
use crate::loss::{l2_loss, total_loss, tv_loss_backward};
use crate::metrics::{compare_sequences, psnr_from_mse, SequenceReport};
use crate::model::Model;
use crate::optim::{OptimizerState, ParamTensor};
use crate::raster::{render, render_backward, RasterConfig};
use crate::real::Real;

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean total loss over the epoch's steps.
    pub loss: f64,
    /// PSNR implied by the epoch's mean reconstruction error (unclamped
    /// training renders, before each step's update).
    pub psnr: f64,
    pub wall_ms: f64,
}

pub const LOG_HEADER: &str = "epoch,step,loss,psnr,wall_ms";

pub fn write_log_csv(log: &[EpochRecord], path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::Unwritable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    writeln!(f, "{LOG_HEADER}")?;
    for r in log {
        writeln!(
            f,
            "{},{},{:.9e},{:.6},{:.3}",
            r.epoch, r.step, r.loss, r.psnr, r.wall_ms
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: Model<T>,
    pub log: Vec<EpochRecord>,
    pub steps: usize,
    pub seconds: f64,
}

/// Initializes a model from `model_cfg` (seeded by `train_cfg.seed`) and fits it.
pub fn train<T: Real>(
    video: &FrameSequence,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    let model = Model::init(video, model_cfg, train_cfg.seed)?;
    fit(model, video, train_cfg, |_| {})
}

/// Fits `model` to `video`; `on_epoch` sees each log row as it is produced.
pub fn fit<T: Real>(
    mut model: Model<T>,
    video: &FrameSequence,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if video.is_empty() {
        return Err(Error::InvalidArgument("video has no frames".into()));
    }
    if video.width() != model.width()
        || video.height() != model.height()
        || video.len() != model.num_frames()
    {
        return Err(Error::ShapeMismatch(format!(
            "model is {}x{}x{} but video is {}x{}x{}",
            model.width(),
            model.height(),
            model.num_frames(),
            video.width(),
            video.height(),
            video.len()
        )));
    }
    let raster = model.raster_config(cfg.deterministic);
    let optim = cfg.optim();
    let targets: Vec<Image<T>> = video.frames.iter().map(|f| f.cast()).collect();
    let mut state = OptimizerState::new();
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(3);
    let mut order: Vec<usize> = (0..video.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let start = Instant::now();
    let mut steps = 0usize;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);
    let total = cfg.total_steps(video.len());
    let snap_at = (cfg.snap_means_steps > 0).then(|| total.saturating_sub(cfg.snap_means_steps));

    'epochs: for epoch in 0..cfg.epochs {
        if steps >= max_steps {
            break;
        }
        if cfg.frame_order == FrameOrder::Shuffled {
            order.shuffle(&mut order_rng);
        }
        let (mut loss_sum, mut recon_sum, mut count) = (0.0, 0.0, 0usize);
        for &frame in &order {
            if steps >= max_steps {
                if count > 0 {
                    log.push(record(epoch, steps, loss_sum, recon_sum, count, &start));
                    on_epoch(log.last().expect("pushed"));
                }
                break 'epochs;
            }
            let snapped = snap_at.is_some_and(|s| steps >= s);
            if snap_at == Some(steps) {
                snap_means(&mut model)?;
            }
            let (loss, recon) = step(
                &mut model,
                &targets[frame],
                frame,
                &raster,
                cfg,
                snapped,
                &optim,
                &mut state,
            )
            .map_err(|e| Error::Training {
                epoch,
                frame,
                source: Box::new(e),
            })?;
            loss_sum += loss;
            recon_sum += recon;
            count += 1;
            steps += 1;
        }
        log.push(record(epoch, steps, loss_sum, recon_sum, count, &start));
        on_epoch(log.last().expect("pushed"));
    }
    Ok(TrainOutcome {
        model,
        log,
        steps,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn record(
    epoch: usize,
    step: usize,
    loss_sum: f64,
    recon_sum: f64,
    count: usize,
    start: &Instant,
) -> EpochRecord {
    let n = count.max(1) as f64;
    EpochRecord {
        epoch,
        step,
        loss: loss_sum / n,
        psnr: psnr_from_mse(recon_sum / n / 3.0),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Rounds the base means through the bitstream quantizer.
fn snap_means<T: Real>(model: &mut Model<T>) -> Result<()> {
    let mut base = model.base_flat();
    let means: Vec<f32> = base[0].iter().map(|v| v.as_f64() as f32).collect();
    let q = quantize_bits(&means, &[means.len()], model.config.quantization.mean_bits)?;
    base[0] = dequantize_tensor(&q)
        .into_iter()
        .map(|v| T::lit(v as f64))
        .collect();
    model.set_base_flat(&base);
    Ok(())
}

/// One forward/backward/update on a single frame. Returns `(total, recon)`.
#[allow(clippy::too_many_arguments)]
fn step<T: Real>(
    model: &mut Model<T>,
    target: &Image<T>,
    frame: usize,
    raster: &RasterConfig,
    cfg: &TrainConfig,
    means_snapped: bool,
    optim: &crate::optim::OptimConfig,
    state: &mut OptimizerState<T>,
) -> Result<(f64, f64)> {
    let pass = model.deform_frame(frame);
    let img = render(&pass.gaussians, raster, model.width(), model.height())?;
    let (recon, d_img) = l2_loss(&img, target)?;
    let rg = render_backward(&pass.gaussians, raster, &d_img)?;
    let mut grads = model.backward(&pass, &rg)?;
    let mut tv = 0.0;
    if cfg.tv_lambda > 0.0 {
        if let (Deformer::MultiPlane(planes), Some(gp)) =
            (&model.deformer, grads.deformer_planes_mut())
        {
            tv = tv_loss_backward(planes, cfg.tv_lambda, gp);
        }
    }

    let mut base = model.base_flat();
    {
        let grad_tensors = grads.named_tensors();
        let [bm, bc, bk] = &mut base;
        let mut params: Vec<(&'static str, &mut [T])> = vec![
            ("means", bm.as_mut_slice()),
            ("cholesky", bc.as_mut_slice()),
            ("colors", bk.as_mut_slice()),
        ];
        params.extend(model.network_tensors_mut());
        debug_assert_eq!(params.len(), grad_tensors.len());
        let mut tensors: Vec<ParamTensor<'_, T>> = params
            .into_iter()
            .zip(grad_tensors)
            .filter(|((group, _), _)| !cfg.is_frozen(group))
            .map(|((group, p), (_, g))| {
                // A zero step keeps snapped means bit-exact without changing
                // the optimizer's slot layout.
                let lr_scale = if means_snapped && group == "means" {
                    0.0
                } else {
                    cfg.group_lr(group) / cfg.lr
                };
                ParamTensor {
                    group,
                    params: p,
                    grads: g,
                    lr_scale,
                }
            })
            .collect();
        state.step(optim, &mut tensors)?;
    }
    model.set_base_flat(&base);
    Ok((total_loss(recon, tv, cfg.tv_lambda), recon))
}

/// Renders every frame, clamps to `[0, 1]` and scores it against `video`.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    video: &FrameSequence,
    raster: &RasterConfig,
) -> Result<SequenceReport> {
    let renders: Vec<Image<f32>> = model
        .render_all(raster)?
        .iter()
        .map(|i| i.clamped().cast())
        .collect();
    compare_sequences(&video.frames, &renders)
}

/// Like [`evaluate`] but scores the frames as they would be exported:
/// clamped and rounded to 8 bits.
pub fn evaluate_exported<T: Real>(
    model: &Model<T>,
    video: &FrameSequence,
    raster: &RasterConfig,
) -> Result<SequenceReport> {
    let renders = export_frames(model, raster)?;
    compare_sequences(&video.frames, &renders)
}

/// Frames exactly as `decode` writes them, back in `[0, 1]`.
pub fn export_frames<T: Real>(model: &Model<T>, raster: &RasterConfig) -> Result<Vec<Image<f32>>> {
    Ok(model
        .render_all(raster)?
        .iter()
        .map(|i| {
            let f: Image<f32> = i.cast();
            Image::from_rgb8(f.width, f.height, &f.to_rgb8()).expect("same size")
        })
        .collect())
}
