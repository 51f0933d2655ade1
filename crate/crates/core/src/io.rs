//! Frame sequences on disk: directories of PNGs, or a raw `.rgb24` file with
//! a JSON sidecar `{"width", "height", "frames"}` next to it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// `T` frames of identical size with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<Image<f32>>,
    pub source: String,
}

impl FrameSequence {
    pub fn new(frames: Vec<Image<f32>>, source: impl Into<String>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::InvalidArgument("video has no frames".into()))?;
        if let Some(bad) = frames.iter().find(|f| !f.same_shape(first)) {
            return Err(Error::ShapeMismatch(format!(
                "frame is {}x{}, expected {}x{}",
                bad.width, bad.height, first.width, first.height
            )));
        }
        Ok(Self {
            frames,
            source: source.into(),
        })
    }

    pub fn width(&self) -> usize {
        self.frames[0].width
    }

    pub fn height(&self) -> usize {
        self.frames[0].height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Per-pixel mean over time, `H x W x 3`.
    pub fn temporal_mean(&self) -> Vec<f32> {
        let n = self.frames[0].data.len();
        let mut acc = vec![0.0f64; n];
        for f in &self.frames {
            for (a, v) in acc.iter_mut().zip(&f.data) {
                *a += *v as f64;
            }
        }
        let t = self.len() as f64;
        acc.into_iter().map(|v| (v / t) as f32).collect()
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct RawSidecar {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

/// Sidecar path for a raw file: same stem, `.json` extension.
pub fn sidecar_path(raw: &Path) -> PathBuf {
    raw.with_extension("json")
}

/// Loads a PNG directory (files ordered lexicographically) or a raw
/// `.rgb24` file. 8-bit values map to `v / 255`.
pub fn load_frames(path: &Path) -> Result<FrameSequence> {
    if path.is_dir() {
        load_png_dir(path)
    } else if path.extension().is_some_and(|e| e == "rgb24") {
        load_raw(path)
    } else {
        Err(Error::Unreadable {
            path: path.to_path_buf(),
            reason: "expected a directory of PNGs or a .rgb24 file".into(),
        })
    }
}

fn unreadable(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Unreadable {
        path: path.to_path_buf(),
        reason: e.to_string(),
    }
}

fn load_png_dir(dir: &Path) -> Result<FrameSequence> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| unreadable(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    if files.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    files.sort();
    let mut frames = Vec::with_capacity(files.len());
    for file in &files {
        let img = read_png(file)?;
        if let Some(first) = frames.first() {
            let first: &Image<f32> = first;
            if !img.same_shape(first) {
                return Err(Error::MixedDimensions {
                    path: file.clone(),
                    found_w: img.width,
                    found_h: img.height,
                    expected_w: first.width,
                    expected_h: first.height,
                });
            }
        }
        frames.push(img);
    }
    FrameSequence::new(frames, dir.display().to_string())
}

fn read_png(path: &Path) -> Result<Image<f32>> {
    let dynimg = image::open(path).map_err(|e| unreadable(path, e))?;
    if dynimg.color().bytes_per_pixel() / dynimg.color().channel_count() != 1 {
        return Err(unreadable(path, "only 8-bit PNGs are supported"));
    }
    let rgb = dynimg.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    Image::from_rgb8(w, h, rgb.as_raw()).ok_or_else(|| unreadable(path, "bad pixel buffer"))
}

fn load_raw(path: &Path) -> Result<FrameSequence> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| unreadable(&side, e))?;
    let meta: RawSidecar = serde_json::from_str(&text).map_err(|e| unreadable(&side, e))?;
    if meta.width == 0 || meta.height == 0 || meta.frames == 0 {
        return Err(unreadable(&side, "width, height and frames must be >= 1"));
    }
    let bytes = fs::read(path).map_err(|e| unreadable(path, e))?;
    let frame_len = meta.width * meta.height * 3;
    let expected = (frame_len * meta.frames) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: path.to_path_buf(),
            found: bytes.len() as u64,
            expected,
        });
    }
    let frames = bytes
        .chunks_exact(frame_len)
        .map(|c| Image::from_rgb8(meta.width, meta.height, c).expect("chunk has frame length"))
        .collect();
    FrameSequence::new(frames, path.display().to_string())
}

/// File name of frame `i` written by [`save_frames`].
pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:05}.png")
}

/// Clamps to `[0, 1]`, quantizes with `round(v * 255)` and writes one PNG
/// per frame into `dir` (created if missing).
pub fn save_frames(frames: &[Image<f32>], dir: &Path) -> Result<Vec<PathBuf>> {
    save_frames_from(frames, dir, 0)
}

/// Like [`save_frames`] but numbers files starting at `first_index`.
pub fn save_frames_from(
    frames: &[Image<f32>],
    dir: &Path,
    first_index: usize,
) -> Result<Vec<PathBuf>> {
    let unwritable = |p: &Path, e: &dyn std::fmt::Display| Error::Unwritable {
        path: p.to_path_buf(),
        reason: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(|e| unwritable(dir, &e))?;
    let mut paths = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        let path = dir.join(frame_file_name(first_index + i));
        write_png(frame, &path).map_err(|e| unwritable(&path, &e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn write_png(frame: &Image<f32>, path: &Path) -> std::result::Result<(), image::ImageError> {
    image::save_buffer_with_format(
        path,
        &frame.to_rgb8(),
        frame.width as u32,
        frame.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
}

/// Writes `frames` as a raw `.rgb24` file plus sidecar.
pub fn save_raw(frames: &[Image<f32>], path: &Path) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames".into()))?;
    let meta = RawSidecar {
        width: first.width,
        height: first.height,
        frames: frames.len(),
    };
    let bytes: Vec<u8> = frames.iter().flat_map(|f| f.to_rgb8()).collect();
    let unwritable = |p: &Path, e: std::io::Error| Error::Unwritable {
        path: p.to_path_buf(),
        reason: e.to_string(),
    };
    fs::write(path, bytes).map_err(|e| unwritable(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string(&meta)?).map_err(|e| unwritable(&side, e))?;
    Ok(())
}
