use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::Waveform;
use crate::error::{Error, Result};

/// STFT hop presets at 32 kHz. `Hop3ms` is 100 samples (3.125 ms).
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HopPreset {
    #[serde(rename = "hop10ms")]
    Hop10ms,
    #[serde(rename = "hop5ms")]
    Hop5ms,
    #[serde(rename = "hop3ms")]
    Hop3ms,
}

impl HopPreset {
    pub const ALL: [HopPreset; 3] = [HopPreset::Hop10ms, HopPreset::Hop5ms, HopPreset::Hop3ms];

    pub fn hop_length(self) -> usize {
        match self {
            HopPreset::Hop10ms => 320,
            HopPreset::Hop5ms => 160,
            HopPreset::Hop3ms => 100,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HopPreset::Hop10ms => "hop10ms",
            HopPreset::Hop5ms => "hop5ms",
            HopPreset::Hop3ms => "hop3ms",
        }
    }

    pub fn config(self) -> MelConfig {
        MelConfig {
            preset: Some(self),
            hop_length: self.hop_length(),
            ..MelConfig::base()
        }
    }
}

impl fmt::Display for HopPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HopPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hop10ms" | "10ms" | "10" => Ok(HopPreset::Hop10ms),
            "hop5ms" | "5ms" | "5" => Ok(HopPreset::Hop5ms),
            "hop3ms" | "3ms" | "3" => Ok(HopPreset::Hop3ms),
            other => Err(Error::Config(format!("unknown hop preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<HopPreset>,
    pub sample_rate: u32,
    pub window_length: usize,
    pub hop_length: usize,
    /// FFT size; the window is zero-padded (centered) up to this length.
    pub n_fft: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        HopPreset::Hop10ms.config()
    }
}

impl MelConfig {
    /// 32 kHz, 25 ms Hann window, 1024-point FFT, 128 HTK mel bands over 0–16 kHz.
    fn base() -> Self {
        MelConfig {
            preset: None,
            sample_rate: 32_000,
            window_length: 800,
            hop_length: 320,
            n_fft: 1024,
            n_mels: 128,
            fmin: 0.0,
            fmax: 16_000.0,
            log_floor: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sample_rate == 0 || self.hop_length == 0 {
            return bad("sample rate and hop length must be positive".into());
        }
        if self.window_length < self.hop_length {
            return bad(format!(
                "window length {} shorter than hop {}",
                self.window_length, self.hop_length
            ));
        }
        if self.n_fft < self.window_length {
            return bad(format!("n_fft {} shorter than window {}", self.n_fft, self.window_length));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= sr/2, got fmin {} fmax {}",
                self.fmin, self.fmax
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log floor must be positive".into());
        }
        Ok(())
    }

    /// Frames produced for `n_samples` of audio: `floor(n / hop)`.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        n_samples / self.hop_length
    }

    pub fn hop_ms(&self) -> f64 {
        1000.0 * self.hop_length as f64 / self.sample_rate as f64
    }

    pub fn floor_value(&self) -> f64 {
        self.log_floor.ln()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Center frequency (Hz) of every mel band.
pub fn mel_center_frequencies(config: &MelConfig) -> Vec<f64> {
    band_edges(config)[1..=config.n_mels].to_vec()
}

fn band_edges(config: &MelConfig) -> Vec<f64> {
    let (lo, hi) = (hz_to_mel(config.fmin), hz_to_mel(config.fmax));
    let steps = (config.n_mels + 1) as f64;
    (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / steps))
        .collect()
}

/// Triangular HTK filters over the one-sided power spectrum, stored sparsely.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    bands: Vec<(usize, Vec<f64>)>,
    n_bins: usize,
}

impl MelFilterbank {
    pub fn new(config: &MelConfig) -> Self {
        let edges = band_edges(config);
        let n_bins = config.n_fft / 2 + 1;
        let bin_hz = config.sample_rate as f64 / config.n_fft as f64;
        let bands = (0..config.n_mels)
            .map(|m| {
                let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                let weights: Vec<(usize, f64)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c));
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                match weights.first() {
                    Some(&(start, _)) => (start, weights.iter().map(|&(_, w)| w).collect()),
                    None => (0, Vec::new()),
                }
            })
            .collect();
        MelFilterbank { bands, n_bins }
    }

    pub fn n_mels(&self) -> usize {
        self.bands.len()
    }

    /// Dense weight of band `m` on FFT bin `k`.
    pub fn weight(&self, m: usize, k: usize) -> f64 {
        let (start, w) = &self.bands[m];
        if k >= *start && k < start + w.len() {
            w[k - start]
        } else {
            0.0
        }
    }

    fn apply(&self, power: &[f64], out: &mut [f64]) {
        debug_assert_eq!(power.len(), self.n_bins);
        for (o, (start, w)) in out.iter_mut().zip(&self.bands) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// `n_mels × n_frames` log energies, row-major by mel band.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub values: Vec<f64>,
    pub n_mels: usize,
    pub n_frames: usize,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn new(values: Vec<f64>, n_mels: usize, n_frames: usize, config: MelConfig) -> Result<Self> {
        if values.len() != n_mels * n_frames {
            return Err(Error::shape(
                "mel",
                format!("{n_mels}x{n_frames} grid needs {} values, got {}", n_mels * n_frames, values.len()),
            ));
        }
        Ok(MelSpectrogram {
            values,
            n_mels,
            n_frames,
            config,
        })
    }

    pub fn get(&self, mel: usize, frame: usize) -> f64 {
        self.values[mel * self.n_frames + frame]
    }

    pub fn band(&self, mel: usize) -> &[f64] {
        &self.values[mel * self.n_frames..(mel + 1) * self.n_frames]
    }

    /// Column of all bands at `frame`.
    pub fn frame(&self, frame: usize) -> Vec<f64> {
        (0..self.n_mels).map(|m| self.get(m, frame)).collect()
    }

    /// Band with the highest energy in `frame`.
    pub fn argmax_band(&self, frame: usize) -> usize {
        (0..self.n_mels)
            .max_by(|&a, &b| self.get(a, frame).total_cmp(&self.get(b, frame)))
            .unwrap_or(0)
    }

    /// Per-band mean over time.
    pub fn band_means(&self) -> Vec<f64> {
        (0..self.n_mels)
            .map(|m| self.band(m).iter().sum::<f64>() / self.n_frames as f64)
            .collect()
    }

    /// Frames `start..start + len`, cells outside the spectrogram set to the log floor.
    pub fn frames_padded(&self, start: i64, len: usize) -> MelSpectrogram {
        let floor = self.config.floor_value();
        let mut values = vec![floor; self.n_mels * len];
        for m in 0..self.n_mels {
            for i in 0..len {
                let t = start + i as i64;
                if t >= 0 && (t as usize) < self.n_frames {
                    values[m * len + i] = self.get(m, t as usize);
                }
            }
        }
        MelSpectrogram {
            values,
            n_mels: self.n_mels,
            n_frames: len,
            config: self.config.clone(),
        }
    }
}

/// Reusable STFT + filterbank for one configuration.
pub struct MelExtractor {
    config: MelConfig,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: MelFilterbank,
}

impl MelExtractor {
    pub fn new(config: &MelConfig) -> Result<Self> {
        config.validate()?;
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        let wl = config.window_length;
        // periodic Hann
        let window = (0..wl)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / wl as f64).cos())
            .collect();
        Ok(MelExtractor {
            config: config.clone(),
            fft,
            window,
            filterbank: MelFilterbank::new(config),
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn compute(&self, wave: &Waveform) -> Result<MelSpectrogram> {
        let c = &self.config;
        if wave.sample_rate != c.sample_rate {
            return Err(Error::Config(format!(
                "waveform at {} Hz, mel config expects {} Hz",
                wave.sample_rate, c.sample_rate
            )));
        }
        let n = wave.samples.len();
        if n < c.hop_length {
            return Err(Error::Config(format!(
                "waveform of {n} samples is shorter than one hop ({})",
                c.hop_length
            )));
        }
        let n_frames = c.frames_for(n);
        let half = (c.n_fft / 2) as i64;
        let offset = ((c.n_fft - c.window_length) / 2) as i64;
        let n_bins = c.n_fft / 2 + 1;
        let floor = c.log_floor;

        let mut values = vec![0.0; c.n_mels * n_frames];
        let mut buf = vec![Complex::new(0.0, 0.0); c.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut energies = vec![0.0; c.n_mels];
        for t in 0..n_frames {
            let origin = (t * c.hop_length) as i64 - half;
            buf.fill(Complex::new(0.0, 0.0));
            for (i, w) in self.window.iter().enumerate() {
                let j = reflect(origin + offset + i as i64, n);
                buf[(offset as usize) + i] = Complex::new(wave.samples[j] * w, 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, z) in power.iter_mut().zip(&buf) {
                *p = z.norm_sqr();
            }
            self.filterbank.apply(&power, &mut energies);
            for (m, e) in energies.iter().enumerate() {
                values[m * n_frames + t] = e.max(floor).ln();
            }
        }
        MelSpectrogram::new(values, c.n_mels, n_frames, c.clone())
    }
}

/// Mirror an out-of-range index back into `0..n` (no edge repeat).
fn reflect(mut j: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    j = j.rem_euclid(period);
    if j >= n {
        j = period - j;
    }
    j as usize
}

/// Center-padded STFT power → HTK mel filterbank → natural log of
/// `max(energy, log_floor)`; `floor(n_samples / hop)` frames.
pub fn log_mel(wave: &Waveform, config: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(config)?.compute(wave)
}
