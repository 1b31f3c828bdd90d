//! Scene and timestamp embeddings from a frozen model, and the embedding file.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dsp::{log_mel, resample, HopPreset, MelSpectrogram, Waveform};
use crate::encoder::{self, EncoderOutput, ModelCheckpoint};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 8] = b"PSSTEMBD";
pub const EMBEDDING_VERSION: u32 = 1;
/// Mel frames around each timestamp in the timestamp-level L vector.
pub const L_FRAMES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub use_l: bool,
    pub use_m: bool,
    pub use_h: bool,
}

impl LevelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.use_l || self.use_m || self.use_h) {
            return Err(Error::Config("at least one of L, M, H must be selected".into()));
        }
        Ok(())
    }

    /// Width of one assembled vector given the L width, model width and class count.
    pub fn dim(&self, dim_l: usize, d: usize, n_classes: usize) -> usize {
        usize::from(self.use_l) * dim_l + usize::from(self.use_m) * d + usize::from(self.use_h) * n_classes
    }
}

impl FromStr for LevelSpec {
    type Err = Error;

    /// Comma-separated subset of `L`, `M`, `H`.
    fn from_str(s: &str) -> Result<Self> {
        let mut spec = LevelSpec {
            use_l: false,
            use_m: false,
            use_h: false,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.to_ascii_uppercase().as_str() {
                "L" => spec.use_l = true,
                "M" => spec.use_m = true,
                "H" => spec.use_h = true,
                other => return Err(Error::Config(format!("unknown level {other:?}; use L, M, H"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl std::fmt::Display for LevelSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<&str> = [(self.use_l, "L"), (self.use_m, "M"), (self.use_h, "H")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RFSpec {
    /// Receptive fields in ms, concatenated in this order.
    pub rf_ms: Vec<u32>,
    pub hop_ms: u32,
}

impl RFSpec {
    pub fn rf160() -> Self {
        RFSpec {
            rf_ms: vec![160],
            hop_ms: 50,
        }
    }

    pub fn rf640() -> Self {
        RFSpec {
            rf_ms: vec![640],
            hop_ms: 50,
        }
    }

    /// 160 ms and 640 ms concatenated.
    pub fn two_rf() -> Self {
        RFSpec {
            rf_ms: vec![160, 640],
            hop_ms: 50,
        }
    }

    pub fn validate(&self, model: &ModelCheckpoint) -> Result<()> {
        if self.rf_ms.is_empty() || self.hop_ms == 0 {
            return Err(Error::Config("need at least one receptive field and a positive hop".into()));
        }
        let cfg = &model.config;
        for &rf in &self.rf_ms {
            let samples = ms_to_samples(rf as f64, cfg.mel.sample_rate);
            let frames = cfg.mel.frames_for(samples);
            if frames < cfg.geometry.patch_t {
                return Err(Error::Bounds(format!(
                    "{rf} ms gives {frames} frames, fewer than one patch ({})",
                    cfg.geometry.patch_t
                )));
            }
            if samples > cfg.max_clip_samples() {
                return Err(Error::Bounds(format!(
                    "{rf} ms exceeds the model's {} s input",
                    cfg.max_clip_s
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for RFSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "160" => Ok(Self::rf160()),
            "640" => Ok(Self::rf640()),
            "2rf" => Ok(Self::two_rf()),
            other => Err(Error::Config(format!("unknown receptive field {other:?}; use 160, 640 or 2rf"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingMode {
    Scene,
    Timestamp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub mode: EmbeddingMode,
    pub levels: LevelSpec,
    /// Assembly order, e.g. `["L", "M", "H"]` or `["rf160:L", …]`.
    pub layout: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rf: Option<RFSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    pub dim_l: usize,
    pub checkpoint_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<HopPreset>,
    pub n: usize,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    pub descriptor: Descriptor,
    /// `n × dim`, row-major.
    pub data: Vec<f32>,
    /// Milliseconds, timestamp mode only.
    pub timestamps: Option<Vec<f64>>,
}

impl EmbeddingMatrix {
    pub fn n(&self) -> usize {
        self.descriptor.n
    }

    pub fn dim(&self) -> usize {
        self.descriptor.dim
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim()..(i + 1) * self.dim()]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim().max(1))
    }
}

/// Short hex digest of a model's serialized form.
pub fn checkpoint_id(model: &ModelCheckpoint) -> Result<String> {
    let digest = Sha256::digest(encoder::encode_checkpoint(model)?);
    Ok(digest[..8].iter().map(|b| format!("{b:02x}")).collect())
}

fn ms_to_samples(ms: f64, sr: u32) -> usize {
    (ms * sr as f64 / 1000.0).round() as usize
}

fn to_model_rate(wave: &Waveform, model: &ModelCheckpoint) -> Result<Waveform> {
    if wave.is_empty() {
        return Err(Error::Config("empty audio".into()));
    }
    resample(wave, model.config.mel.sample_rate)
}

/// Zero-pads on the right up to one patch of frames.
fn at_least_one_patch(wave: Waveform, model: &ModelCheckpoint) -> Waveform {
    let need = model.config.geometry.patch_t * model.config.mel.hop_length;
    if wave.len() >= need {
        return wave;
    }
    let mut samples = wave.samples;
    samples.resize(need, 0.0);
    Waveform {
        samples,
        sample_rate: wave.sample_rate,
    }
}

fn assemble(levels: &LevelSpec, l: Option<Vec<f64>>, out: &EncoderOutput, into: &mut Vec<f64>) {
    if levels.use_l {
        into.extend(l.expect("L requested"));
    }
    if levels.use_m {
        into.extend_from_slice(&out.pooled);
    }
    if levels.use_h {
        into.extend_from_slice(&out.logits);
    }
}

fn layout(levels: &LevelSpec, prefix: &str) -> Vec<String> {
    [(levels.use_l, "L"), (levels.use_m, "M"), (levels.use_h, "H")]
        .into_iter()
        .filter_map(|(on, n)| on.then(|| format!("{prefix}{n}")))
        .collect()
}

/// Start sample of every scene window; the last may run past the clip end.
pub fn window_starts(n_samples: usize, win: usize, stride: usize) -> Vec<usize> {
    if n_samples <= win {
        return vec![0];
    }
    let extra = (n_samples - win).div_ceil(stride);
    (0..=extra).map(|k| k * stride).collect()
}

/// Assembled level vector of one clip in a single forward.
pub fn assemble_clip(wave: &Waveform, model: &ModelCheckpoint, levels: &LevelSpec) -> Result<Vec<f64>> {
    let wave = at_least_one_patch(to_model_rate(wave, model)?, model);
    if wave.len() > model.config.max_clip_samples() {
        return Err(Error::Bounds(format!(
            "{:.3} s clip exceeds the {} s model input; use scene_embedding",
            wave.duration_s(),
            model.config.max_clip_s
        )));
    }
    let mel = log_mel(&wave, &model.config.mel)?;
    let out = model.infer(&mel)?;
    let mut v = Vec::new();
    assemble(levels, levels.use_l.then(|| mel.band_means()), &out, &mut v);
    Ok(v)
}

/// Order-independent mean: each coordinate is summed in sorted order with
/// Neumaier compensation.
pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let dim = rows.first().map_or(0, Vec::len);
    let mut col = Vec::with_capacity(rows.len());
    (0..dim)
        .map(|j| {
            col.clear();
            col.extend(rows.iter().map(|r| r[j]));
            col.sort_by(f64::total_cmp);
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for &x in &col {
                let t = sum + x;
                comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
                sum = t;
            }
            (sum + comp) / rows.len() as f64
        })
        .collect()
}

pub fn scene_embedding(
    wave: &Waveform,
    model: &ModelCheckpoint,
    levels: &LevelSpec,
    window_s: f64,
    overlap_frac: f64,
) -> Result<EmbeddingMatrix> {
    levels.validate()?;
    if !(window_s > 0.0) || !(0.0..1.0).contains(&overlap_frac) {
        return Err(Error::Config(format!("window {window_s} s, overlap {overlap_frac}: need window > 0 and overlap in [0, 1)")));
    }
    let wave = to_model_rate(wave, model)?;
    let sr = model.config.mel.sample_rate;
    let win = ((window_s * sr as f64).round() as usize).min(model.config.max_clip_samples());
    let stride = ((win as f64 * (1.0 - overlap_frac)).round() as usize).max(1);
    let starts = window_starts(wave.len(), win, stride);
    let vectors = starts
        .iter()
        .map(|&s| {
            let end = (s + win).min(wave.len());
            let piece = Waveform {
                samples: wave.samples[s..end].to_vec(),
                sample_rate: sr,
            };
            assemble_clip(&piece, model, levels)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_rows(&vectors);
    let dim_l = model.config.mel.n_mels;
    Ok(EmbeddingMatrix {
        descriptor: Descriptor {
            mode: EmbeddingMode::Scene,
            levels: *levels,
            layout: layout(levels, ""),
            rf: None,
            window_s: Some(window_s),
            overlap: Some(overlap_frac),
            dim_l,
            checkpoint_id: checkpoint_id(model)?,
            preset: model.config.mel.preset,
            n: 1,
            dim: mean.len(),
        },
        data: mean.iter().map(|&v| v as f32).collect(),
        timestamps: None,
    })
}

/// Timestamps `0, hop, 2·hop, …` strictly before the clip end, in ms.
pub fn timestamp_grid(duration_ms: f64, hop_ms: u32) -> Vec<f64> {
    let n = (duration_ms / hop_ms as f64).ceil().max(1.0) as usize;
    (0..n).map(|i| (i as u64 * hop_ms as u64) as f64).collect()
}

/// `L_FRAMES` frames centered on `frame`, flattened frame by frame.
fn centered_frames(mel: &MelSpectrogram, frame: usize) -> Vec<f64> {
    let win = mel.frames_padded(frame as i64 - (L_FRAMES / 2) as i64, L_FRAMES);
    (0..L_FRAMES).flat_map(|t| win.frame(t)).collect()
}

pub fn timestamp_embeddings(
    wave: &Waveform,
    model: &ModelCheckpoint,
    levels: &LevelSpec,
    rf: &RFSpec,
) -> Result<EmbeddingMatrix> {
    levels.validate()?;
    rf.validate(model)?;
    let wave = to_model_rate(wave, model)?;
    let cfg = &model.config;
    let sr = cfg.mel.sample_rate;
    let full_mel = if levels.use_l {
        Some(log_mel(&at_least_one_patch(wave.clone(), model), &cfg.mel)?)
    } else {
        None
    };
    let times = timestamp_grid(wave.duration_s() * 1000.0, rf.hop_ms);
    let mut data = Vec::new();
    let mut row = Vec::new();
    for &ts in &times {
        row.clear();
        let center = ms_to_samples(ts, sr);
        for &r in &rf.rf_ms {
            let len = ms_to_samples(r as f64, sr);
            let piece = wave.window(center as i64 - (len / 2) as i64, len);
            let mel = log_mel(&piece, &cfg.mel)?;
            let out = model.infer(&mel)?;
            let l = full_mel.as_ref().map(|m| {
                let frame = ((center as f64) / cfg.mel.hop_length as f64).round() as usize;
                centered_frames(m, frame)
            });
            assemble(levels, l, &out, &mut row);
        }
        data.extend(row.iter().map(|&v| v as f32));
    }
    let dim = row.len();
    let layout = rf
        .rf_ms
        .iter()
        .flat_map(|r| layout(levels, &format!("rf{r}:")))
        .collect();
    Ok(EmbeddingMatrix {
        descriptor: Descriptor {
            mode: EmbeddingMode::Timestamp,
            levels: *levels,
            layout,
            rf: Some(rf.clone()),
            window_s: None,
            overlap: None,
            dim_l: L_FRAMES * cfg.mel.n_mels,
            checkpoint_id: checkpoint_id(model)?,
            preset: cfg.mel.preset,
            n: times.len(),
            dim,
        },
        data,
        timestamps: Some(times),
    })
}

pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    let d = &m.descriptor;
    if m.data.len() != d.n * d.dim {
        return Err(Error::shape("embeddings", format!("{} values for {}x{}", m.data.len(), d.n, d.dim)));
    }
    let ts_ok = match (d.mode, &m.timestamps) {
        (EmbeddingMode::Scene, None) => true,
        (EmbeddingMode::Timestamp, Some(t)) => t.len() == d.n,
        _ => false,
    };
    if !ts_ok {
        return Err(Error::Format("timestamps must be present exactly in timestamp mode, one per row".into()));
    }
    let header = serde_json::to_vec(d)?;
    let mut out = Vec::with_capacity(20 + header.len() + m.data.len() * 4);
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for v in &m.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for t in m.timestamps.iter().flatten() {
        out.extend_from_slice(&t.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    let (descriptor, body): (Descriptor, &[u8]) =
        encoder::split_container(bytes, EMBEDDING_MAGIC, EMBEDDING_VERSION, "embedding")?;
    let values = descriptor.n * descriptor.dim;
    let ts_bytes = match descriptor.mode {
        EmbeddingMode::Scene => 0,
        EmbeddingMode::Timestamp => descriptor.n * 8,
    };
    if body.len() != values * 4 + ts_bytes {
        return Err(Error::Format(format!(
            "embedding body has {} bytes, descriptor implies {}",
            body.len(),
            values * 4 + ts_bytes
        )));
    }
    let (rows, ts) = body.split_at(values * 4);
    let data = rows.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let timestamps = (descriptor.mode == EmbeddingMode::Timestamp)
        .then(|| ts.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect());
    Ok(EmbeddingMatrix {
        descriptor,
        data,
        timestamps,
    })
}

pub fn save_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_embeddings(m)?).map_err(|e| Error::io(path, e))
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    decode_embeddings(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
