//! Quantization and the `.gsv` container.
//!
//! ```text
//! "GSVC" | version u16 | flags u16 | payload_len u32 | payload | crc32(payload) u32
//! ```
//!
//! All integers are little-endian. The payload is the model configuration
//! followed by every parameter tensor, each affinely quantized on its own.
//! `docs/FORMAT.md` lists the byte layout field by field.

use crate::config::{
    Backend, InitKind, MlpFieldConfig, ModelConfig, PlaneDims, QuantConfig, RasterSettings,
};
use crate::error::{Error, Result};
use crate::model::Model;

pub const MAGIC: [u8; 4] = *b"GSVC";
pub const VERSION: u16 = 1;
/// Header flag: means are stored with 16-bit codes.
pub const FLAG_WIDE_MEANS: u16 = 1;
pub const HEADER_LEN: usize = 12;
pub const TRAILER_LEN: usize = 4;

/// A tensor stored as `min_val + scale * code`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedTensor {
    /// 8 or 16.
    pub bits: u8,
    pub shape: Vec<u32>,
    pub min_val: f32,
    pub scale: f32,
    pub codes: Vec<u16>,
}

impl QuantizedTensor {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }
}

#[inline]
fn dequant_one(min_val: f32, scale: f32, code: u16) -> f32 {
    min_val + scale * code as f32
}

fn codes_for(values: &[f32], min_val: f32, scale: f32, max_code: u32) -> (Vec<u16>, f64) {
    let mut worst = 0.0f64;
    let codes = values
        .iter()
        .map(|&v| {
            let c = ((v as f64 - min_val as f64) / scale as f64)
                .round()
                .clamp(0.0, max_code as f64) as u32;
            // Pick the neighbor whose f32 reconstruction is closest.
            let mut best = (
                c,
                (dequant_one(min_val, scale, c as u16) as f64 - v as f64).abs(),
            );
            for cand in [c.wrapping_sub(1), c + 1] {
                if cand <= max_code {
                    let e = (dequant_one(min_val, scale, cand as u16) as f64 - v as f64).abs();
                    if e < best.1 {
                        best = (cand, e);
                    }
                }
            }
            worst = worst.max(best.1);
            best.0 as u16
        })
        .collect();
    (codes, worst)
}

/// Per-tensor affine quantization: `scale = (max - min) / (2^bits - 1)`
/// (`1` with all codes `0` for a constant tensor).
pub fn quantize_bits(values: &[f32], shape: &[usize], bits: u8) -> Result<QuantizedTensor> {
    if !matches!(bits, 8 | 16) {
        return Err(Error::InvalidArgument(format!(
            "unsupported code width {bits}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "tensor to quantize".into(),
        });
    }
    if shape.iter().product::<usize>() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "shape {shape:?} for {} values",
            values.len()
        )));
    }
    let shape: Vec<u32> = shape.iter().map(|&d| d as u32).collect();
    let max_code = (1u32 << bits) - 1;
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if values.is_empty() || lo == hi {
        let min_val = if values.is_empty() { 0.0 } else { lo };
        return Ok(QuantizedTensor {
            bits,
            shape,
            min_val,
            scale: 1.0,
            codes: vec![0; values.len()],
        });
    }
    let nominal = ((hi as f64 - lo as f64) / max_code as f64) as f32;
    // The nominal step and its f32 neighbors; keep the most accurate. This
    // also makes quantizing a dequantized tensor return the same codes.
    let mut best: Option<(QuantizedTensor, f64)> = None;
    for scale in [nominal, next_down(nominal), next_up(nominal)] {
        if !(scale > 0.0) || !scale.is_finite() {
            continue;
        }
        let (codes, worst) = codes_for(values, lo, scale, max_code);
        if best.as_ref().is_none_or(|(_, w)| worst < *w) {
            best = Some((
                QuantizedTensor {
                    bits,
                    shape: shape.clone(),
                    min_val: lo,
                    scale,
                    codes,
                },
                worst,
            ));
        }
    }
    Ok(best.expect("nominal scale is positive").0)
}

/// 8-bit [`quantize_bits`].
pub fn quantize_tensor(values: &[f32], shape: &[usize]) -> Result<QuantizedTensor> {
    quantize_bits(values, shape, 8)
}

pub fn dequantize_tensor(q: &QuantizedTensor) -> Vec<f32> {
    q.codes
        .iter()
        .map(|&c| dequant_one(q.min_val, q.scale, c))
        .collect()
}

fn next_up(x: f32) -> f32 {
    f32::from_bits(x.to_bits() + 1)
}

fn next_down(x: f32) -> f32 {
    f32::from_bits(x.to_bits().saturating_sub(1))
}

/// `8 * bytes / (T * H * W)`.
pub fn compute_bpp(stream_bytes: u64, frames: usize, height: usize, width: usize) -> f64 {
    8.0 * stream_bytes as f64 / (frames as f64 * height as f64 * width as f64)
}

/// Tensors of `model` in stream order with their shapes and code widths.
fn model_tensors(model: &Model<f32>) -> Vec<(Vec<f32>, Vec<usize>, u8)> {
    let n = model.cloud.len();
    let [means, chol, colors] = model.base_flat();
    let mean_bits = model.config.quantization.mean_bits;
    let mut out = vec![
        (means, vec![n, 2], mean_bits),
        (chol, vec![n, 3], 8),
        (colors, vec![n, 3], 8),
    ];
    for t in tensor_shapes_network(model) {
        out.push((t.0, t.1, 8));
    }
    out
}

fn tensor_shapes_network(model: &Model<f32>) -> Vec<(Vec<f32>, Vec<usize>)> {
    use crate::encoder::Deformer;
    let mut out = Vec::new();
    let push_mlp = |out: &mut Vec<(Vec<f32>, Vec<usize>)>, mlp: &crate::mlp::MlpWeights<f32>| {
        for l in &mlp.layers {
            out.push((l.weight.clone(), vec![l.out_dim, l.in_dim]));
            out.push((l.bias.clone(), vec![l.out_dim]));
        }
    };
    match &model.deformer {
        Deformer::MultiPlane(p) => {
            for level in &p.levels {
                for g in level.grids() {
                    out.push((g.data.clone(), vec![g.rows, g.cols, g.channels]));
                }
            }
            push_mlp(&mut out, &p.fusion);
        }
        Deformer::Mlp(m) => push_mlp(&mut out, &m.weights),
    }
    push_mlp(&mut out, &model.head);
    out
}

/// Quantizes every tensor of `model` as the bitstream would.
pub fn quantize_model(model: &Model<f32>) -> Result<Vec<QuantizedTensor>> {
    model_tensors(model)
        .iter()
        .map(|(v, s, b)| quantize_bits(v, s, *b))
        .collect()
}

/// The model a decoder sees: every parameter replaced by its dequantized value.
pub fn quantized_copy(model: &Model<f32>) -> Result<Model<f32>> {
    let q = quantize_model(model)?;
    let mut out = model.clone();
    fill_model(&mut out, &q)?;
    Ok(out)
}

fn fill_model(model: &mut Model<f32>, tensors: &[QuantizedTensor]) -> Result<()> {
    let expected = model_tensors(model);
    if expected.len() != tensors.len() {
        return Err(Error::Corrupt(format!(
            "expected {} tensors, found {}",
            expected.len(),
            tensors.len()
        )));
    }
    for (i, ((_, shape, bits), q)) in expected.iter().zip(tensors).enumerate() {
        let s: Vec<u32> = shape.iter().map(|&d| d as u32).collect();
        if s != q.shape || *bits != q.bits {
            return Err(Error::Corrupt(format!(
                "tensor {i}: shape {:?}/{} bits, expected {:?}/{} bits",
                q.shape, q.bits, s, bits
            )));
        }
    }
    let values: Vec<Vec<f32>> = tensors.iter().map(dequantize_tensor).collect();
    model.set_base_flat(&[values[0].clone(), values[1].clone(), values[2].clone()]);
    for ((_, dst), src) in model.network_tensors_mut().into_iter().zip(&values[3..]) {
        dst.copy_from_slice(src);
    }
    Ok(())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn list(&mut self, v: &[usize]) {
        self.u8(v.len() as u8);
        for &x in v {
            self.u32(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Corrupt(format!(
                "payload ends at byte {} but {} more bytes are needed at offset {}",
                self.buf.len(),
                n,
                self.base + self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }
    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.u8()? as usize;
        (0..n).map(|_| self.u32()).collect()
    }
}

fn write_config(w: &mut Writer, cfg: &ModelConfig, num_frames: usize) {
    w.u32(cfg.width);
    w.u32(cfg.height);
    w.u32(num_frames);
    w.u32(cfg.num_gaussians);
    w.u8(match cfg.backend {
        Backend::Multiplane => 0,
        Backend::Mlp => 1,
    });
    w.u8(match cfg.init {
        InitKind::TemporalGradient => 0,
        InitKind::Random => 1,
    });
    w.u8(cfg.freeze_mean as u8);
    w.u8(cfg.normalize_init_colors as u8);
    w.u8(cfg.density_scaled_init as u8);
    w.u8(cfg.quantization.mean_bits);
    w.u32(cfg.planes.x);
    w.u32(cfg.planes.y);
    w.u32(cfg.planes.t);
    w.list(&cfg.ratios);
    w.u32(cfg.channels);
    w.list(&cfg.fusion_hidden);
    w.u32(cfg.feature_dim);
    w.list(&cfg.decoder_hidden);
    w.u32(cfg.mlp_field.num_bands);
    w.list(&cfg.mlp_field.hidden);
    w.f64(cfg.floor_eps);
    w.u32(cfg.raster.tile_size);
    w.f64(cfg.raster.cutoff_sigma.unwrap_or(f64::INFINITY));
}

fn read_config(r: &mut Reader<'_>) -> Result<(ModelConfig, usize)> {
    let width = r.u32()?;
    let height = r.u32()?;
    let num_frames = r.u32()?;
    let num_gaussians = r.u32()?;
    let backend = match r.u8()? {
        0 => Backend::Multiplane,
        1 => Backend::Mlp,
        b => return Err(Error::Corrupt(format!("unknown backend code {b}"))),
    };
    let init = match r.u8()? {
        0 => InitKind::TemporalGradient,
        1 => InitKind::Random,
        b => return Err(Error::Corrupt(format!("unknown init code {b}"))),
    };
    let freeze_mean = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Corrupt(format!("bad freeze flag {b}"))),
    };
    let normalize_init_colors = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Corrupt(format!("bad color normalization flag {b}"))),
    };
    let density_scaled_init = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Corrupt(format!("bad init scale flag {b}"))),
    };
    let mean_bits = r.u8()?;
    let planes = PlaneDims {
        x: r.u32()?,
        y: r.u32()?,
        t: r.u32()?,
    };
    let ratios = r.list()?;
    let channels = r.u32()?;
    let fusion_hidden = r.list()?;
    let feature_dim = r.u32()?;
    let decoder_hidden = r.list()?;
    let num_bands = r.u32()?;
    let field_hidden = r.list()?;
    let floor_eps = r.f64()?;
    let tile_size = r.u32()?;
    let cutoff = r.f64()?;
    let cfg = ModelConfig {
        width,
        height,
        num_gaussians,
        backend,
        planes,
        ratios,
        channels,
        fusion_hidden,
        feature_dim,
        decoder_hidden,
        freeze_mean,
        mlp_field: MlpFieldConfig {
            num_bands,
            hidden: field_hidden,
        },
        init,
        floor_eps,
        normalize_init_colors,
        density_scaled_init,
        quantization: QuantConfig { mean_bits },
        raster: RasterSettings {
            tile_size,
            cutoff_sigma: cutoff.is_finite().then_some(cutoff),
        },
    };
    cfg.validate()
        .map_err(|e| Error::Corrupt(format!("config block: {e}")))?;
    if num_frames == 0 {
        return Err(Error::Corrupt("config block: zero frames".into()));
    }
    Ok((cfg, num_frames))
}

fn write_tensor(w: &mut Writer, q: &QuantizedTensor) {
    w.u8(q.bits);
    w.u8(q.shape.len() as u8);
    for &d in &q.shape {
        w.u32(d as usize);
    }
    w.f32(q.min_val);
    w.f32(q.scale);
    if q.bits == 8 {
        w.0.extend(q.codes.iter().map(|&c| c as u8));
    } else {
        for &c in &q.codes {
            w.0.extend_from_slice(&c.to_le_bytes());
        }
    }
}

fn read_tensor(r: &mut Reader<'_>) -> Result<QuantizedTensor> {
    let bits = r.u8()?;
    if !matches!(bits, 8 | 16) {
        return Err(Error::Corrupt(format!("tensor code width {bits}")));
    }
    let ndim = r.u8()? as usize;
    let shape: Vec<u32> = (0..ndim)
        .map(|_| r.u32().map(|d| d as u32))
        .collect::<Result<_>>()?;
    let len = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d as usize));
    let len = len.ok_or_else(|| Error::Corrupt("tensor shape overflows".into()))?;
    let min_val = r.f32()?;
    let scale = r.f32()?;
    if !min_val.is_finite() || !scale.is_finite() {
        return Err(Error::Corrupt("non-finite tensor range".into()));
    }
    let width = bits as usize / 8;
    let raw = r.take(
        len.checked_mul(width)
            .ok_or_else(|| Error::Corrupt("tensor too large".into()))?,
    )?;
    let codes = if bits == 8 {
        raw.iter().map(|&b| b as u16).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect()
    };
    Ok(QuantizedTensor {
        bits,
        shape,
        min_val,
        scale,
        codes,
    })
}

/// Serializes `model` into a complete `.gsv` byte stream.
pub fn write_bitstream(model: &Model<f32>) -> Result<Vec<u8>> {
    model.config.validate()?;
    let tensors = quantize_model(model)?;
    let mut p = Writer(Vec::new());
    write_config(&mut p, &model.config, model.num_frames());
    p.u32(tensors.len());
    for t in &tensors {
        write_tensor(&mut p, t);
    }
    let payload = p.0;
    let flags = if model.config.quantization.mean_bits == 16 {
        FLAG_WIDE_MEANS
    } else {
        0
    };
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
    Ok(out)
}

/// Header fields of a `.gsv` stream.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamInfo {
    pub version: u16,
    pub flags: u16,
    pub payload_len: usize,
    pub crc32: u32,
    pub total_bytes: usize,
    pub config: ModelConfig,
    pub num_frames: usize,
    pub tensors: Vec<QuantizedTensor>,
}

impl StreamInfo {
    pub fn bpp(&self) -> f64 {
        compute_bpp(
            self.total_bytes as u64,
            self.num_frames,
            self.config.height,
            self.config.width,
        )
    }
}

/// Validates framing and checksum and parses the configuration and tensors.
pub fn parse_bitstream(bytes: &[u8]) -> Result<StreamInfo> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    if bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            needed: HEADER_LEN,
            available: bytes.len(),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    let payload_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let needed = HEADER_LEN + payload_len + TRAILER_LEN;
    if bytes.len() < needed {
        return Err(Error::Truncated {
            needed,
            available: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(Error::Corrupt(format!(
            "{} trailing bytes after checksum",
            bytes.len() - needed
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len];
    let stored = u32::from_le_bytes(bytes[needed - 4..needed].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    if flags & !FLAG_WIDE_MEANS != 0 {
        return Err(Error::Corrupt(format!("unknown header flags {flags:#06x}")));
    }
    let mut r = Reader {
        buf: payload,
        pos: 0,
        base: HEADER_LEN,
    };
    let (config, num_frames) = read_config(&mut r)?;
    if (flags & FLAG_WIDE_MEANS != 0) != (config.quantization.mean_bits == 16) {
        return Err(Error::Corrupt(
            "header flags disagree with the mean code width".into(),
        ));
    }
    let count = r.u32()?;
    let tensors = (0..count)
        .map(|_| read_tensor(&mut r))
        .collect::<Result<Vec<_>>>()?;
    if r.pos != payload.len() {
        return Err(Error::Corrupt(format!(
            "{} unread payload bytes",
            payload.len() - r.pos
        )));
    }
    Ok(StreamInfo {
        version,
        flags,
        payload_len,
        crc32: stored,
        total_bytes: bytes.len(),
        config,
        num_frames,
        tensors,
    })
}

/// Parses a stream into a model whose parameters are the dequantized values.
pub fn read_bitstream(bytes: &[u8]) -> Result<Model<f32>> {
    let info = parse_bitstream(bytes)?;
    let mut model = Model::zeros(&info.config, info.num_frames)?;
    fill_model(&mut model, &info.tensors)?;
    if !model.is_finite() {
        return Err(Error::Corrupt("non-finite parameters".into()));
    }
    Ok(model)
}
