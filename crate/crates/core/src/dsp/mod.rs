//! Audio input: PCM16 WAV I/O, resampling, and log-mel spectrograms.

mod mel;

use std::path::Path;

pub use mel::{
    hz_to_mel, log_mel, mel_center_frequencies, mel_to_hz, HopPreset, MelConfig, MelExtractor, MelFilterbank,
    MelSpectrogram,
};

use crate::error::{Error, Result};

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Config(format!("sample {i} is not finite")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples `[start, start + len)`, zero outside the clip. `start` may be negative.
    pub fn window(&self, start: i64, len: usize) -> Waveform {
        let n = self.samples.len() as i64;
        let samples = (0..len as i64)
            .map(|i| {
                let j = start + i;
                if (0..n).contains(&j) {
                    self.samples[j as usize]
                } else {
                    0.0
                }
            })
            .collect();
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Wav(format!("{}: truncated or unreadable: {io}", path.display())),
        other => Error::Wav(format!("{}: {other}", path.display())),
    }
}

/// Reads a 16-bit PCM RIFF/WAVE file; stereo is averaged to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Wav(format!(
            "{}: unsupported encoding {:?} {}-bit (PCM16 required)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::Wav(format!(
            "{}: {} channels (mono or stereo required)",
            path.display(),
            spec.channels
        )));
    }
    let expected = reader.len() as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| wav_err(path, e))?;
    if raw.len() < expected {
        return Err(Error::Wav(format!(
            "{}: truncated ({} of {expected} samples)",
            path.display(),
            raw.len()
        )));
    }
    let channels = spec.channels as usize;
    if raw.len() < channels {
        return Err(Error::Wav(format!("{}: zero-length audio", path.display())));
    }
    let samples = raw
        .chunks_exact(channels)
        .map(|frame| frame.iter().map(|&s| s as f64 / 32768.0).sum::<f64>() / channels as f64)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono PCM16, clipping to `[-1, 1)` and rounding to the nearest step.
pub fn write_wav(path: impl AsRef<Path>, wave: &Waveform) -> Result<()> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &wave.samples {
        writer
            .write_sample(quantize(s))
            .map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

pub fn quantize(s: f64) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Linear-interpolation resampling; output length is `round(n · target / source)`.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Config("target rate must be positive".into()));
    }
    if target_rate == wave.sample_rate {
        return Ok(wave.clone());
    }
    let n = wave.samples.len();
    let ratio = wave.sample_rate as f64 / target_rate as f64;
    let out_len = (n as f64 * target_rate as f64 / wave.sample_rate as f64).round() as usize;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let j = pos.floor() as usize;
            let frac = pos - j as f64;
            match (wave.samples.get(j), wave.samples.get(j + 1)) {
                (Some(&a), Some(&b)) => a + (b - a) * frac,
                (Some(&a), None) => a,
                _ => *wave.samples.last().unwrap_or(&0.0),
            }
        })
        .collect();
    Waveform::new(samples, target_rate)
}
