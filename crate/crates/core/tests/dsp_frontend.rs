use std::f64::consts::PI;

use passt::dsp::{log_mel, resample, HopPreset, MelConfig, Waveform};
use proptest::prelude::*;

fn sine(freq: f64, sr: u32, seconds: f64) -> Waveform {
    let n = (seconds * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| 0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin())
        .collect();
    Waveform::new(samples, sr).unwrap()
}

/// Band centers recomputed from the HTK formula, independently of the crate.
fn oracle_centers(n_mels: usize, fmax: f64) -> Vec<f64> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(fmax);
    (1..=n_mels)
        .map(|i| inv(top * i as f64 / (n_mels + 1) as f64))
        .collect()
}

fn nearest_band(centers: &[f64], hz: f64) -> usize {
    (0..centers.len())
        .min_by(|&a, &b| (centers[a] - hz).abs().total_cmp(&(centers[b] - hz).abs()))
        .unwrap()
}

#[test]
fn one_khz_tone_peaks_in_the_nearest_band() {
    let cfg = MelConfig::default();
    let expected = nearest_band(&oracle_centers(cfg.n_mels, cfg.fmax), 1000.0);
    // A cosine reflects seamlessly at the clip start, so every frame qualifies.
    let n = 32_000;
    let cos: Vec<f64> = (0..n).map(|i| 0.5 * (2.0 * PI * 1000.0 * i as f64 / 32_000.0).cos()).collect();
    let mel = log_mel(&Waveform::new(cos, 32_000).unwrap(), &cfg).unwrap();
    for t in 0..mel.n_frames {
        assert_eq!(mel.argmax_band(t), expected, "cosine frame {t}");
    }
    // Sine phase folds into |sin| at the start; the first frame smears.
    let mel = log_mel(&sine(1000.0, 32_000, 1.0), &cfg).unwrap();
    for t in 1..mel.n_frames {
        assert_eq!(mel.argmax_band(t), expected, "sine frame {t}");
    }
}

#[test]
fn band_centers_match_the_oracle() {
    let cfg = MelConfig::default();
    let ours = passt::dsp::mel_center_frequencies(&cfg);
    for (a, b) in ours.iter().zip(oracle_centers(128, 16_000.0)) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn shifting_by_whole_hops_shifts_columns() {
    for preset in HopPreset::ALL {
        let cfg = preset.config();
        let base: Vec<f64> = (0..16_000)
            .map(|i| ((i as f64) * 0.013).sin() * 0.3 + ((i * 7919 % 101) as f64 / 400.0 - 0.125))
            .collect();
        let k = 3;
        let mut shifted = vec![0.0; k * cfg.hop_length];
        shifted.extend_from_slice(&base);
        let a = log_mel(&Waveform::new(base, 32_000).unwrap(), &cfg).unwrap();
        let b = log_mel(&Waveform::new(shifted, 32_000).unwrap(), &cfg).unwrap();
        let margin = cfg.n_fft / cfg.hop_length + 1;
        for m in 0..cfg.n_mels {
            for t in margin..a.n_frames - margin {
                assert_eq!(
                    a.get(m, t).to_bits(),
                    b.get(m, t + k).to_bits(),
                    "{preset} band {m} frame {t}"
                );
            }
        }
    }
}

#[test]
fn resampled_tone_keeps_its_spectral_peak() {
    let r = resample(&sine(440.0, 48_000, 0.5), 32_000).unwrap();
    assert_eq!(r.samples.len(), 16_000);
    // naive DFT magnitude over one 4096-sample block
    let n = 4096;
    let x = &r.samples[2000..2000 + n];
    let peak = (1..n / 2)
        .max_by(|&a, &b| {
            let mag = |k: usize| {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos();
                    let ph = -2.0 * PI * (k * i) as f64 / n as f64;
                    re += w * v * ph.cos();
                    im += w * v * ph.sin();
                }
                re * re + im * im
            };
            mag(a).total_cmp(&mag(b))
        })
        .unwrap();
    let bin_hz = 32_000.0 / n as f64;
    assert!((peak as f64 * bin_hz - 440.0).abs() <= bin_hz / 2.0);
}

#[test]
fn ascending_pitches_map_to_ascending_bands() {
    let cfg = MelConfig::default();
    let bands: Vec<usize> = (0..8)
        .map(|k| {
            let f = 440.0 * 2f64.powf(k as f64 / 8.0);
            let m = log_mel(&sine(f, 32_000, 0.5), &cfg).unwrap();
            m.argmax_band(m.n_frames / 2)
        })
        .collect();
    assert!(bands.windows(2).all(|w| w[0] < w[1]), "{bands:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn louder_input_never_lowers_a_cell(c in 1.0f64..8.0, seed in 0u64..500) {
        let samples: Vec<f64> = (0..4000u64)
            .map(|i| (((i * 2654435761 + seed * 97) % 1000) as f64 / 1000.0 - 0.5) * 0.2)
            .collect();
        let cfg = HopPreset::Hop5ms.config();
        let quiet = log_mel(&Waveform::new(samples.clone(), 32_000).unwrap(), &cfg).unwrap();
        let loud = log_mel(&Waveform::new(samples.iter().map(|s| s * c).collect(), 32_000).unwrap(), &cfg).unwrap();
        for (q, l) in quiet.values.iter().zip(&loud.values) {
            prop_assert!(l >= q);
        }
        let floor = cfg.log_floor.ln();
        prop_assert!(quiet.values.iter().all(|&v| v >= floor));
    }
}
