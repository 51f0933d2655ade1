use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use gsvideo::codec::{compute_bpp, parse_bitstream, read_bitstream, write_bitstream};
use gsvideo::config::{count_params, EncodeConfig};
use gsvideo::io::{load_frames, save_frames, save_frames_from};
use gsvideo::metrics::compare_sequences;
use gsvideo::train::{evaluate_exported, fit, write_log_csv};
use gsvideo::{bench, synth, Error, Image, Model, Result};

#[derive(Parser)]
#[command(
    name = "gsvideo",
    version,
    about = "Video codec built on time-deformable 2D Gaussians"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a clip and write the quantized bitstream.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `train.seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Render frames from a bitstream.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Half-open frame range `a..b`.
        #[arg(long)]
        frames: Option<String>,
    },
    /// Compare two frame sequences.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Print header, configuration and rate of a bitstream without rendering.
    Probe {
        #[arg(long)]
        model: PathBuf,
    },
    /// Decode throughput as CSV.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a procedural test clip as PNGs.
    Synth {
        #[arg(long, value_enum, default_value_t = ClipKind::MovingSquare)]
        kind: ClipKind,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 16)]
        frames: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClipKind {
    MovingSquare,
    DynamicRegion,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn parse_range(spec: &str, total: usize) -> Result<(usize, usize)> {
    let bad = || {
        Error::InvalidArgument(format!(
            "frame range `{spec}` (expected a..b with a < b <= {total})"
        ))
    };
    let (a, b) = spec.split_once("..").ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a >= b || b > total {
        return Err(bad());
    }
    Ok((a, b))
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Encode {
            input,
            config,
            out,
            seed,
            log,
        } => {
            let mut cfg = EncodeConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let video = load_frames(&input)?;
            let model = Model::<f32>::init(&video, &cfg.model, cfg.train.seed)?;
            let outcome = fit(model, &video, &cfg.train, |_| {})?;
            if let Some(path) = &log {
                write_log_csv(&outcome.log, path)?;
            }
            let bytes = write_bitstream(&outcome.model)?;
            std::fs::write(&out, &bytes).map_err(|e| Error::Unwritable {
                path: out.clone(),
                reason: e.to_string(),
            })?;
            let decoded = read_bitstream(&bytes)?;
            let report = evaluate_exported(&decoded, &video, &decoded.raster_config(true))?;
            println!("frames: {}", video.len());
            println!("params: {}", count_params(&cfg.model));
            println!("steps: {}", outcome.steps);
            println!("bytes: {}", bytes.len());
            println!("psnr_db: {:.4}", report.mean_psnr_db);
            println!("ms_ssim: {:.6}", report.mean_ms_ssim);
            println!(
                "bpp: {:.6}",
                compute_bpp(
                    bytes.len() as u64,
                    video.len(),
                    video.height(),
                    video.width()
                )
            );
            println!("train_seconds: {:.3}", outcome.seconds);
            Ok(())
        }
        Command::Decode { model, out, frames } => {
            let model = read_bitstream(&read_file(&model)?)?;
            let (a, b) = match frames {
                Some(spec) => parse_range(&spec, model.num_frames())?,
                None => (0, model.num_frames()),
            };
            let raster = model.raster_config(true);
            let start = Instant::now();
            let imgs: Vec<Image<f32>> = (a..b)
                .map(|f| model.render_frame(f, &raster))
                .collect::<Result<_>>()?;
            let seconds = start.elapsed().as_secs_f64().max(1e-9);
            save_frames_from(&imgs, &out, a)?;
            println!("frames: {}", imgs.len());
            println!("decode_fps: {:.3}", imgs.len() as f64 / seconds);
            Ok(())
        }
        Command::Metrics { reference, test } => {
            let r = load_frames(&reference)?;
            let t = load_frames(&test)?;
            let report = compare_sequences(&r.frames, &t.frames)?;
            println!("frame,psnr_db,ms_ssim");
            for (i, f) in report.frames.iter().enumerate() {
                println!("{i},{:.6},{:.6}", f.psnr_db, f.ms_ssim);
            }
            println!("mean,{:.6},{:.6}", report.mean_psnr_db, report.mean_ms_ssim);
            Ok(())
        }
        Command::Probe { model } => {
            let info = parse_bitstream(&read_file(&model)?)?;
            let c = &info.config;
            println!("magic: GSVC");
            println!("version: {}", info.version);
            println!("flags: {:#06x}", info.flags);
            println!("payload_bytes: {}", info.payload_len);
            println!("total_bytes: {}", info.total_bytes);
            println!("crc32: {:08x}", info.crc32);
            println!("frames: {}", info.num_frames);
            println!("size: {}x{}", c.width, c.height);
            println!("num_gaussians: {}", c.num_gaussians);
            println!(
                "backend: {}",
                serde_json::to_string(&c.backend)?.trim_matches('"')
            );
            println!("planes: {}x{}x{}", c.planes.x, c.planes.y, c.planes.t);
            println!("ratios: {:?}", c.ratios);
            println!("channels: {}", c.channels);
            println!("fusion_hidden: {:?}", c.fusion_hidden);
            println!("feature_dim: {}", c.feature_dim);
            println!("decoder_hidden: {:?}", c.decoder_hidden);
            println!("freeze_mean: {}", c.freeze_mean);
            println!("mean_bits: {}", c.quantization.mean_bits);
            println!("tensors: {}", info.tensors.len());
            println!("params: {}", count_params(c));
            println!("bpp: {:.6}", info.bpp());
            Ok(())
        }
        Command::Bench {
            model,
            repeat,
            warmup,
            out,
        } => {
            let m = read_bitstream(&read_file(&model)?)?;
            let report =
                bench::bench_decode(&m, &m.raster_config(true), repeat.max(1), warmup, "")?;
            match out {
                Some(path) => {
                    let mut f = std::fs::File::create(&path).map_err(|e| Error::Unwritable {
                        path: path.clone(),
                        reason: e.to_string(),
                    })?;
                    bench::write_csv(&report.rows, &mut f)?;
                }
                None => bench::write_csv(&report.rows, &mut std::io::stdout().lock())?,
            }
            Ok(())
        }
        Command::Synth {
            kind,
            width,
            height,
            frames,
            out,
        } => {
            if width == 0 || height == 0 || frames == 0 {
                return Err(Error::InvalidArgument(
                    "width, height and frames must be >= 1".into(),
                ));
            }
            let clip = match kind {
                ClipKind::MovingSquare => synth::moving_square(width, height, frames),
                ClipKind::DynamicRegion => synth::dynamic_region(width, height, frames).0,
            };
            save_frames(&clip.frames, &out)?;
            println!("frames: {}", clip.len());
            Ok(())
        }
    }
}
