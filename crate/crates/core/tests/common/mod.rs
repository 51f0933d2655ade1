//! Shared oracles for the integration tests and the acceptance target.
#![allow(dead_code)]

use std::path::PathBuf;

use gsvideo::config::EncodeConfig;
use gsvideo::decoder::{decode, decode_backward, DeformDelta};
use gsvideo::encoder::{Grid, PlaneResolution, PlaneSet, Query};
use gsvideo::gaussian::{eval_weight, Gaussian2D};
use gsvideo::loss::{l2_loss, tv_loss, tv_loss_backward};
use gsvideo::mlp::MlpWeights;
use gsvideo::raster::{render, render_backward, RasterConfig};
use gsvideo::{FrameSequence, Image, Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
pub const ABS_TOL: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn workspace_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn preset(name: &str) -> EncodeConfig {
    EncodeConfig::load(
        &workspace_root()
            .join("presets")
            .join(format!("{name}.json")),
    )
    .expect("preset parses")
}

/// Central difference of `f` around zero offset.
pub fn central(f: impl Fn(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

pub fn grad_ok(analytic: f64, numeric: f64) -> bool {
    let abs = (analytic - numeric).abs();
    abs <= ABS_TOL || abs / analytic.abs().max(numeric.abs()) <= REL_TOL
}

/// Tally of compared gradient entries.
#[derive(Debug, Default)]
pub struct GradStats {
    pub checked: usize,
    pub failures: Vec<String>,
}

impl GradStats {
    pub fn compare(&mut self, what: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        self.checked += 1;
        if !grad_ok(analytic, numeric) && self.failures.len() < 20 {
            self.failures.push(format!(
                "{}: analytic {analytic:.9e} numeric {numeric:.9e}",
                what()
            ));
        }
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn summary(&self) -> String {
        if self.ok() {
            format!("{} entries", self.checked)
        } else {
            format!(
                "{} of {} entries off; first: {}",
                self.failures.len(),
                self.checked,
                self.failures[0]
            )
        }
    }
}

pub fn random_gaussian(r: &mut ChaCha8Rng, width: usize, height: usize) -> Gaussian2D<f64> {
    let (w, h) = (width as f64, height as f64);
    Gaussian2D::new(
        [
            r.gen_range(-0.1 * w..1.1 * w),
            r.gen_range(-0.1 * h..1.1 * h),
        ],
        [
            r.gen_range(-0.5..1.5),
            r.gen_range(-1.0..1.0),
            r.gen_range(-0.5..1.5),
        ],
        [
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
            r.gen_range(-1.0..1.0),
        ],
    )
}

pub fn random_image(
    r: &mut ChaCha8Rng,
    width: usize,
    height: usize,
    lo: f64,
    hi: f64,
) -> Image<f64> {
    Image::from_vec(
        width,
        height,
        (0..width * height * 3)
            .map(|_| r.gen_range(lo..hi))
            .collect(),
    )
    .expect("sized")
}

fn weighted_sum(img: &Image<f64>, w: &Image<f64>) -> f64 {
    img.data.iter().zip(&w.data).map(|(a, b)| a * b).sum()
}

/// Rasterizer: `L = sum(W * render(G))` against central differences of every
/// Gaussian parameter. Truncation is disabled so `L` is smooth.
pub fn raster_suite(instances: usize, seed: u64) -> GradStats {
    let mut r = rng(seed);
    let mut stats = GradStats::default();
    let cfg = RasterConfig {
        tile_size: 4,
        ..RasterConfig::untruncated()
    };
    for inst in 0..instances {
        let (w, h) = (r.gen_range(4..14), r.gen_range(4..14));
        let n = r.gen_range(1..6);
        let gs: Vec<_> = (0..n).map(|_| random_gaussian(&mut r, w, h)).collect();
        let weights = random_image(&mut r, w, h, -1.0, 1.0);
        let grads = render_backward(&gs, &cfg, &weights).expect("backward");
        for i in 0..n {
            let analytic = grads.get(i);
            for (p, a) in analytic.iter().enumerate() {
                let numeric = central(|d| {
                    let mut g = gs.clone();
                    let mut flat = g[i].to_array();
                    flat[p] += d;
                    g[i] = Gaussian2D::from_array(&flat);
                    weighted_sum(&render(&g, &cfg, w, h).expect("render"), &weights)
                });
                stats.compare(
                    || format!("instance {inst} gaussian {i} param {p}"),
                    *a,
                    numeric,
                );
            }
        }
    }
    stats
}

/// Query at least `margin` away from every bilinear knot of `res`.
fn safe_query(
    r: &mut ChaCha8Rng,
    res: PlaneResolution,
    ratios: &[usize],
    margin: f64,
) -> Query<f64> {
    let clear = |v: f64, n: usize| {
        ratios.iter().all(|&k| {
            let cells = (n * k - 1).max(1) as f64;
            let s = v * cells;
            (s - s.round()).abs() > margin * cells
        })
    };
    loop {
        let q = Query::new(
            r.gen_range(0.02..0.98),
            r.gen_range(0.02..0.98),
            r.gen_range(0.02..0.98),
        );
        if clear(q.x, res.x) && clear(q.y, res.y) && clear(q.t, res.t) {
            return q;
        }
    }
}

fn random_planes(r: &mut ChaCha8Rng) -> (PlaneSet<f64>, PlaneResolution, Vec<usize>) {
    let res = PlaneResolution {
        x: r.gen_range(2..5),
        y: r.gen_range(2..5),
        t: r.gen_range(2..4),
    };
    let ratios = if r.gen_bool(0.5) { vec![1, 2] } else { vec![1] };
    let c = r.gen_range(1..4);
    let hidden = r.gen_range(2..6);
    let out = r.gen_range(2..5);
    let mut set = PlaneSet::init(res, &ratios, c, &[c * ratios.len(), hidden, out], r);
    for level in &mut set.levels {
        for g in level.grids_mut() {
            for v in &mut g.data {
                *v = r.gen_range(-1.0..1.0);
            }
        }
    }
    (set, res, ratios)
}

fn perturb_planes(set: &PlaneSet<f64>, tensor: usize, index: usize, d: f64) -> PlaneSet<f64> {
    let mut s = set.clone();
    let grids = 3 * s.levels.len();
    if tensor < grids {
        s.levels[tensor / 3].grids_mut()[tensor % 3].data[index] += d;
    } else {
        let k = tensor - grids;
        let layer = &mut s.fusion.layers[k / 2];
        if k % 2 == 0 {
            layer.weight[index] += d;
        } else {
            layer.bias[index] += d;
        }
    }
    s
}

fn plane_tensors(set: &PlaneSet<f64>) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = set
        .levels
        .iter()
        .flat_map(|l| l.grids())
        .map(|g| g.data.clone())
        .collect();
    for layer in &set.fusion.layers {
        out.push(layer.weight.clone());
        out.push(layer.bias.clone());
    }
    out
}

/// Multi-plane encoder: `L = d . F_out(q)` against differences of every grid
/// node, fusion weight and query coordinate.
pub fn encoder_suite(instances: usize, seed: u64) -> GradStats {
    let mut r = rng(seed);
    let mut stats = GradStats::default();
    for inst in 0..instances {
        let (set, res, ratios) = random_planes(&mut r);
        let q = safe_query(&mut r, res, &ratios, 1e-3);
        let d_out: Vec<f64> = (0..set.out_dim()).map(|_| r.gen_range(-1.0..1.0)).collect();
        let loss = |s: &PlaneSet<f64>, q: &Query<f64>| {
            s.encode(q)
                .iter()
                .zip(&d_out)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let grads = set.encode_backward(&q, &d_out);
        let analytic = plane_tensors(&grads.planes);
        for (t, values) in analytic.iter().enumerate() {
            for (i, a) in values.iter().enumerate() {
                let numeric = central(|d| loss(&perturb_planes(&set, t, i, d), &q));
                stats.compare(
                    || format!("instance {inst} tensor {t} entry {i}"),
                    *a,
                    numeric,
                );
            }
        }
        for axis in 0..3 {
            let numeric = central(|d| {
                let mut q2 = q;
                match axis {
                    0 => q2.x += d,
                    1 => q2.y += d,
                    _ => q2.t += d,
                }
                loss(&set, &q2)
            });
            stats.compare(
                || format!("instance {inst} query axis {axis}"),
                grads.d_query[axis],
                numeric,
            );
        }
    }
    stats
}

fn mlp_tensors(m: &MlpWeights<f64>) -> Vec<Vec<f64>> {
    m.layers
        .iter()
        .flat_map(|l| [l.weight.clone(), l.bias.clone()])
        .collect()
}

fn perturb_mlp(m: &MlpWeights<f64>, tensor: usize, index: usize, d: f64) -> MlpWeights<f64> {
    let mut m = m.clone();
    let layer = &mut m.layers[tensor / 2];
    if tensor % 2 == 0 {
        layer.weight[index] += d;
    } else {
        layer.bias[index] += d;
    }
    m
}

/// Decoder head: `L = d . delta(features)` against differences of every head
/// weight and input feature, with and without the frozen mean.
pub fn head_suite(instances: usize, seed: u64) -> GradStats {
    let mut r = rng(seed);
    let mut stats = GradStats::default();
    for inst in 0..instances {
        let in_dim = r.gen_range(1..7);
        let hidden: Vec<usize> = (0..r.gen_range(0..3)).map(|_| r.gen_range(2..7)).collect();
        let mut dims = vec![in_dim];
        dims.extend(&hidden);
        dims.push(8);
        let head = MlpWeights::<f64>::uniform(&dims, &mut r);
        let freeze = inst % 4 == 3;
        let feats: Vec<f64> = (0..in_dim).map(|_| r.gen_range(-1.0..1.0)).collect();
        let upstream: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let up = DeformDelta::from_slice(&upstream);
        let loss = |h: &MlpWeights<f64>, f: &[f64]| {
            decode(h, f, freeze)
                .to_array()
                .iter()
                .zip(&upstream)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut grads = head.zeros_like();
        let d_feats = decode_backward(&head, &feats, &up, freeze, &mut grads);
        for (t, values) in mlp_tensors(&grads).iter().enumerate() {
            for (i, a) in values.iter().enumerate() {
                let numeric = central(|d| loss(&perturb_mlp(&head, t, i, d), &feats));
                stats.compare(
                    || format!("instance {inst} tensor {t} entry {i}"),
                    *a,
                    numeric,
                );
            }
        }
        for (i, a) in d_feats.iter().enumerate() {
            let numeric = central(|d| {
                let mut f = feats.clone();
                f[i] += d;
                loss(&head, &f)
            });
            stats.compare(|| format!("instance {inst} feature {i}"), *a, numeric);
        }
    }
    stats
}

/// L2 reconstruction loss against differences of every prediction entry.
pub fn l2_suite(instances: usize, seed: u64) -> GradStats {
    let mut r = rng(seed);
    let mut stats = GradStats::default();
    for inst in 0..instances {
        let (w, h) = (r.gen_range(1..9), r.gen_range(1..9));
        let pred = random_image(&mut r, w, h, -0.5, 1.5);
        let target = random_image(&mut r, w, h, 0.0, 1.0);
        let (_, grad) = l2_loss(&pred, &target).expect("same shape");
        for (i, a) in grad.data.iter().enumerate() {
            let numeric = central(|d| {
                let mut p = pred.clone();
                p.data[i] += d;
                l2_loss(&p, &target).expect("same shape").0
            });
            stats.compare(|| format!("instance {inst} entry {i}"), *a, numeric);
        }
    }
    stats
}

/// TV loss against differences of every grid entry. Neighbouring entries are
/// kept apart by more than the step so `|.|` stays differentiable.
pub fn tv_suite(instances: usize, seed: u64) -> GradStats {
    let mut r = rng(seed);
    let mut stats = GradStats::default();
    for inst in 0..instances {
        let (mut set, _, _) = random_planes(&mut r);
        // Distinct multiples of 1e-2 plus jitter: differences are >= ~5e-3.
        for level in &mut set.levels {
            for g in level.grids_mut() {
                let n = g.data.len();
                let mut perm: Vec<usize> = (0..n).collect();
                for i in (1..n).rev() {
                    perm.swap(i, r.gen_range(0..=i));
                }
                for (v, p) in g.data.iter_mut().zip(perm) {
                    *v = p as f64 * 1e-2 + r.gen_range(0.0..4e-3) - 0.5;
                }
            }
        }
        let weight = r.gen_range(0.1..2.0);
        let mut grads = set.zeros_like();
        tv_loss_backward(&set, weight, &mut grads);
        let analytic = plane_tensors(&grads);
        let grids = 3 * set.levels.len();
        for (t, values) in analytic.iter().take(grids).enumerate() {
            for (i, a) in values.iter().enumerate() {
                let numeric = central(|d| weight * tv_loss(&perturb_planes(&set, t, i, d)));
                stats.compare(
                    || format!("instance {inst} grid {t} entry {i}"),
                    *a,
                    numeric,
                );
            }
        }
    }
    stats
}

/// Small random model for end-to-end gradient checks.
pub fn tiny_model(r: &mut ChaCha8Rng, backend: gsvideo::Backend) -> (Model<f64>, FrameSequence) {
    let (w, h, frames) = (10, 8, 3);
    let video = FrameSequence::new(
        (0..frames)
            .map(|_| random_image(r, w, h, 0.0, 1.0).cast())
            .collect(),
        "random",
    )
    .expect("frames");
    let mut cfg = ModelConfig::new(w, h, 6);
    cfg.backend = backend;
    cfg.planes = gsvideo::config::PlaneDims { x: 3, y: 3, t: 2 };
    cfg.channels = 2;
    cfg.fusion_hidden = vec![4];
    cfg.feature_dim = 3;
    cfg.decoder_hidden = vec![4];
    cfg.mlp_field = gsvideo::config::MlpFieldConfig {
        num_bands: 2,
        hidden: vec![5],
    };
    cfg.raster.cutoff_sigma = None;
    let mut model = Model::<f64>::init(&video, &cfg, r.gen()).expect("init");
    // Give every tensor generic values so no gradient path is trivially zero.
    for (_, t) in model.network_tensors_mut() {
        for v in t.iter_mut() {
            *v += r.gen_range(-0.3..0.3);
        }
    }
    let mut base = model.base_flat();
    for (i, v) in base[0].iter_mut().enumerate() {
        let extent = if i % 2 == 0 { w } else { h } as f64;
        *v = r.gen_range(0.1 * extent..0.9 * extent);
    }
    for v in base[1].iter_mut() {
        *v = r.gen_range(0.3..1.2);
    }
    model.set_base_flat(&base);
    (model, video)
}

fn model_loss(model: &Model<f64>, target: &Image<f64>, frame: usize, raster: &RasterConfig) -> f64 {
    let img = model.render_frame(frame, raster).expect("render");
    l2_loss(&img, target).expect("shape").0
}

fn perturbed(model: &Model<f64>, tensor: usize, index: usize, d: f64) -> Model<f64> {
    let mut m = model.clone();
    if tensor < 3 {
        let mut base = m.base_flat();
        base[tensor][index] += d;
        m.set_base_flat(&base);
    } else {
        m.network_tensors_mut()[tensor - 3].1[index] += d;
    }
    m
}

/// Whole pipeline (deform, render, L2) against differences of every model
/// tensor entry.
pub fn model_suite(instances: usize, seed: u64, backend: gsvideo::Backend) -> GradStats {
    let mut r = rng(seed);
    let mut stats = GradStats::default();
    for inst in 0..instances {
        let (model, video) = tiny_model(&mut r, backend);
        let raster = model.raster_config(true);
        let frame = inst % video.len();
        let target: Image<f64> = video.frames[frame].cast();
        let pass = model.deform_frame(frame);
        let img = render(&pass.gaussians, &raster, model.width(), model.height()).expect("render");
        let (_, d_img) = l2_loss(&img, &target).expect("shape");
        let rg = render_backward(&pass.gaussians, &raster, &d_img).expect("backward");
        let grads = model.backward(&pass, &rg).expect("model backward");
        for (t, (group, values)) in grads.named_tensors().into_iter().enumerate() {
            for (i, a) in values.iter().enumerate() {
                let numeric =
                    central(|d| model_loss(&perturbed(&model, t, i, d), &target, frame, &raster));
                stats.compare(
                    || format!("instance {inst} {group} tensor {t} entry {i}"),
                    *a,
                    numeric,
                );
            }
        }
    }
    stats
}

/// Naive per-pixel double-precision sum over every Gaussian.
pub fn naive_render(gs: &[Gaussian2D<f64>], width: usize, height: usize) -> Image<f64> {
    let mut img = Image::zeros(width, height);
    for row in 0..height {
        for col in 0..width {
            let p = [col as f64 + 0.5, row as f64 + 0.5];
            let mut acc = [0.0; 3];
            for g in gs {
                let w = eval_weight(g, p);
                for c in 0..3 {
                    acc[c] += g.color[c] * w;
                }
            }
            img.set_pixel(row, col, acc);
        }
    }
    img
}

/// Largest absolute difference between the untruncated tiled renderer (in
/// `f32`) and [`naive_render`] over `scenes` random scenes.
pub fn render_oracle(scenes: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..scenes {
        let (w, h) = (r.gen_range(1..=64), r.gen_range(1..=64));
        let n = r.gen_range(0..=50);
        let gs: Vec<Gaussian2D<f64>> = (0..n)
            .map(|_| {
                let mut g = random_gaussian(&mut r, w, h);
                g.chol_raw = [
                    r.gen_range(-1.0..3.0),
                    r.gen_range(-2.0..2.0),
                    r.gen_range(-1.0..3.0),
                ];
                g
            })
            .collect();
        let tile = [1, 3, 8, 16, 32][r.gen_range(0..5)];
        let cfg = RasterConfig {
            tile_size: tile,
            ..RasterConfig::untruncated()
        };
        let gs32: Vec<Gaussian2D<f32>> = gs.iter().map(|g| g.cast()).collect();
        // Exact in f32 inputs, so the comparison isolates the renderer.
        let gs_exact: Vec<Gaussian2D<f64>> = gs32.iter().map(|g| g.cast()).collect();
        let fast = render(&gs32, &cfg, w, h).expect("render");
        let slow = naive_render(&gs_exact, w, h);
        for (a, b) in fast.data.iter().zip(&slow.data) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    worst
}

/// Fixed-size `Grid` with the given entries, for hand-built planes.
pub fn grid(rows: usize, cols: usize, channels: usize, data: Vec<f64>) -> Grid<f64> {
    Grid {
        rows,
        cols,
        channels,
        data,
    }
}

/// PSNR of clamped renders restricted to the pixels of `region`.
pub fn region_psnr(
    frames: &[Image<f32>],
    video: &FrameSequence,
    region: &gsvideo::synth::Region,
) -> f64 {
    let (mut se, mut n) = (0.0f64, 0usize);
    for (f, t) in frames.iter().zip(&video.frames) {
        for row in 0..f.height {
            for col in 0..f.width {
                if region.contains(row, col) {
                    let (a, b) = (f.pixel(row, col), t.pixel(row, col));
                    for c in 0..3 {
                        let d = (a[c].clamp(0.0, 1.0) - b[c]) as f64;
                        se += d * d;
                        n += 1;
                    }
                }
            }
        }
    }
    gsvideo::metrics::psnr_from_mse(se / n as f64)
}
