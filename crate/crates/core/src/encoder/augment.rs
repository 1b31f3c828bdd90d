use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};

/// Shift and scale applied to log-mel values before patching.
pub const MEL_SHIFT: f64 = 4.5;
pub const MEL_SCALE: f64 = 5.0;

pub fn normalize_mel(mel: &MelSpectrogram) -> MelSpectrogram {
    MelSpectrogram {
        values: mel.values.iter().map(|v| (v + MEL_SHIFT) / MEL_SCALE).collect(),
        ..mel.clone()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// Beta(α, α) mixing; 0 disables mixup.
    pub mixup_alpha: f64,
    pub time_stripes: usize,
    /// Widest time stripe as a fraction of the frame count.
    pub time_max_frac: f64,
    pub freq_stripes: usize,
    /// Widest frequency stripe in mel bins.
    pub freq_max: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            mixup_alpha: 0.3,
            time_stripes: 2,
            time_max_frac: 0.1,
            freq_stripes: 2,
            freq_max: 8,
        }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        AugmentConfig {
            mixup_alpha: 0.0,
            time_stripes: 0,
            time_max_frac: 0.0,
            freq_stripes: 0,
            freq_max: 0,
        }
    }

    pub fn is_off(&self) -> bool {
        self.mixup_alpha == 0.0 && self.time_stripes == 0 && self.freq_stripes == 0
    }

    pub fn sample_lambda<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let beta = Beta::new(self.mixup_alpha, self.mixup_alpha)
            .map_err(|e| Error::Config(format!("mixup alpha {}: {e}", self.mixup_alpha)))?;
        Ok(beta.sample(rng))
    }
}

/// `λ·a + (1−λ)·b` on both spectrogram and target.
pub fn mixup(
    a: &MelSpectrogram,
    ya: &[f64],
    b: &MelSpectrogram,
    yb: &[f64],
    lambda: f64,
) -> Result<(MelSpectrogram, Vec<f64>)> {
    if a.values.len() != b.values.len() || ya.len() != yb.len() {
        return Err(Error::shape(
            "mixup",
            format!("{}x{} vs {}x{}", a.n_mels, a.n_frames, b.n_mels, b.n_frames),
        ));
    }
    let mix = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(p, q)| lambda * p + (1.0 - lambda) * q).collect() };
    Ok((
        MelSpectrogram {
            values: mix(&a.values, &b.values),
            ..a.clone()
        },
        mix(ya, yb),
    ))
}

/// Zeroes random time and frequency stripes in place.
pub fn spec_augment<R: Rng + ?Sized>(mel: &mut MelSpectrogram, cfg: &AugmentConfig, rng: &mut R) {
    let (nm, nt) = (mel.n_mels, mel.n_frames);
    let max_t = ((nt as f64) * cfg.time_max_frac).floor() as usize;
    for _ in 0..cfg.time_stripes {
        let w = rng.random_range(0..=max_t.min(nt));
        let start = rng.random_range(0..=nt - w);
        for m in 0..nm {
            mel.values[m * nt + start..m * nt + start + w].fill(0.0);
        }
    }
    for _ in 0..cfg.freq_stripes {
        let w = rng.random_range(0..=cfg.freq_max.min(nm));
        let start = rng.random_range(0..=nm - w);
        mel.values[start * nt..(start + w) * nt].fill(0.0);
    }
}
