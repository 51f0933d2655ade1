//! Decode throughput measurement: full-clip renders, discarded warm-up runs,
//! median of the timed runs.

use std::io::Write;
use std::time::Instant;

use crate::error::Result;
use crate::model::Model;
use crate::raster::RasterConfig;

pub const BENCH_HEADER: &str = "kind,run,frames,seconds,fps";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub kind: String,
    pub run: usize,
    pub frames: usize,
    pub seconds: f64,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub median_fps: f64,
}

/// Renders every frame `warmup + repeat` times. Rows are tagged `warmup`,
/// `run` and a final `median` summary, each prefixed with `label` when it
/// is non-empty (`label/run`).
pub fn bench_decode(
    model: &Model<f32>,
    raster: &RasterConfig,
    repeat: usize,
    warmup: usize,
    label: &str,
) -> Result<BenchReport> {
    let frames = model.num_frames();
    let tag = |k: &str| {
        if label.is_empty() {
            k.to_string()
        } else {
            format!("{label}/{k}")
        }
    };
    let mut rows = Vec::new();
    let mut fps = Vec::new();
    for i in 0..warmup + repeat {
        let start = Instant::now();
        for f in 0..frames {
            std::hint::black_box(model.render_frame(f, raster)?);
        }
        let seconds = start.elapsed().as_secs_f64().max(1e-9);
        let warm = i < warmup;
        let run = if warm { i } else { i - warmup };
        let rate = frames as f64 / seconds;
        if !warm {
            fps.push(rate);
        }
        rows.push(BenchRow {
            kind: tag(if warm { "warmup" } else { "run" }),
            run,
            frames,
            seconds,
            fps: rate,
        });
    }
    let median_fps = median(&mut fps);
    rows.push(BenchRow {
        kind: tag("median"),
        run: repeat,
        frames,
        seconds: if median_fps > 0.0 {
            frames as f64 / median_fps
        } else {
            0.0
        },
        fps: median_fps,
    });
    Ok(BenchReport { rows, median_fps })
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn write_csv<W: Write>(rows: &[BenchRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{BENCH_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.3}",
            r.kind, r.run, r.frames, r.seconds, r.fps
        )?;
    }
    Ok(())
}
