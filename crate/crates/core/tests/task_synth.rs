use std::collections::BTreeMap;
use std::f64::consts::PI;

use passt::dsp::{load_wav, log_mel, write_wav, HopPreset, Waveform};
use passt::probe::{load_task, onset_f1, ClipLabels, DecodeConfig, Event, Metric, TaskType};
use passt::synth::{
    event_frequency, generate, manifest_for, pitch_frequency, render_event_clip, render_pitch_clip, SynthSpec,
};
use passt::Error;
use proptest::prelude::*;

#[test]
fn pitch_splits_are_balanced() {
    let spec = SynthSpec::pitch(400, 8, 7);
    let m = manifest_for(&spec);
    assert_eq!(m.task_type, TaskType::SceneMulticlass);
    assert_eq!(m.metric, Metric::Accuracy);
    let s = &m.splits;
    assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (240, 80, 80));
    let index = |f: &String| f["clip_".len()..f.len() - 4].parse::<usize>().unwrap();
    for split in [&s.train, &s.valid, &s.test] {
        let mut counts = BTreeMap::new();
        for f in split {
            *counts.entry(index(f) % 8).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        let (lo, hi) = (counts.values().min().unwrap(), counts.values().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }
}

#[test]
fn same_seed_writes_identical_files() {
    let root = tempfile::tempdir().unwrap();
    let spec = SynthSpec::pitch(6, 3, 11);
    let (a, b, c) = (root.path().join("a"), root.path().join("b"), root.path().join("c"));
    generate(&spec, &a).unwrap();
    generate(&spec, &b).unwrap();
    generate(&SynthSpec { seed: 12, ..spec.clone() }, &c).unwrap();
    for name in ["manifest.json", "labels.json", "audio/clip_00000.wav", "audio/clip_00005.wav"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(std::fs::read(a.join("audio/clip_00001.wav")).unwrap(), std::fs::read(c.join("audio/clip_00001.wav")).unwrap());

    let (manifest, labels) = load_task(&a).unwrap();
    assert_eq!(manifest, manifest_for(&spec));
    assert_eq!(labels["clip_00004.wav"], ClipLabels::Tags(vec!["pitch01".into()]));
    let w = load_wav(a.join("audio/clip_00002.wav")).unwrap();
    assert_eq!((w.len(), w.sample_rate), (32_000, 32_000));
}

fn htk_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

#[test]
fn loudest_band_climbs_with_pitch_class() {
    let cfg = HopPreset::Hop10ms.config();
    let (lo, hi) = (htk_mel(cfg.fmin), htk_mel(cfg.fmax));
    let centers: Vec<f64> = (1..=cfg.n_mels).map(|i| lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64).collect();
    let spec = SynthSpec::pitch(8, 8, 3);
    let mut peaks = Vec::new();
    for k in 0..8 {
        let (w, class) = render_pitch_clip(&spec, k).unwrap();
        assert_eq!(class, k);
        let means = log_mel(&w, &cfg).unwrap().band_means();
        let peak = (0..means.len()).max_by(|&a, &b| means[a].total_cmp(&means[b])).unwrap();
        let target = htk_mel(440.0 * 2f64.powf(k as f64 / 8.0));
        let nearest = (0..centers.len())
            .min_by(|&a, &b| (centers[a] - target).abs().total_cmp(&(centers[b] - target).abs()))
            .unwrap();
        assert!(peak.abs_diff(nearest) <= 1, "class {k}: band {peak}, expected near {nearest}");
        assert!((pitch_frequency(k) - 440.0 * 2f64.powf(k as f64 / 8.0)).abs() < 1e-9);
        peaks.push(peak);
    }
    assert!(peaks.windows(2).all(|p| p[1] > p[0]), "{peaks:?}");
}

/// Tone magnitude at `freq` over `frame` samples from `start`, in signal amplitude units.
fn goertzel(x: &[f64], start: usize, frame: usize, freq: f64) -> f64 {
    let w = 2.0 * PI * freq / 32_000.0;
    let (mut re, mut im) = (0.0, 0.0);
    for (j, &v) in x[start..(start + frame).min(x.len())].iter().enumerate() {
        re += v * (w * j as f64).cos();
        im -= v * (w * j as f64).sin();
    }
    2.0 * (re * re + im * im).sqrt() / frame as f64
}

#[test]
fn an_energy_detector_recovers_every_onset() {
    let spec = SynthSpec::events(12, 4, 9);
    let frame = 1600;
    let decode = DecodeConfig::default();
    let (mut total_refs, mut clips_with_events) = (0, 0);
    for i in 0..12 {
        let (w, events) = render_event_clip(&spec, i).unwrap();
        let times: Vec<f64> = (0..w.len() / frame).map(|f| f as f64 * 50.0).collect();
        for k in 0..4 {
            let f = event_frequency(k, 4);
            let activity: Vec<f64> = times
                .iter()
                .map(|&t| if goertzel(&w.samples, (t * 32.0) as usize, frame, f) > 0.15 { 1.0 } else { 0.0 })
                .collect();
            let refs: Vec<(f64, f64)> = events
                .iter()
                .filter(|e| e.label == format!("tone{k:02}"))
                .map(|e| (e.onset_ms, e.offset_ms))
                .collect();
            total_refs += refs.len();
            if refs.is_empty() {
                assert!(activity.iter().all(|&a| a == 0.0), "clip {i} class {k}: false activity");
            } else {
                assert_eq!(onset_f1(&activity, &times, &refs, &decode), 1.0, "clip {i} class {k}: {refs:?}");
            }
        }
        clips_with_events += usize::from(!events.is_empty());
    }
    assert!(total_refs >= 12 && clips_with_events == 12);
}

#[test]
fn zero_events_leave_pure_noise() {
    let spec = SynthSpec {
        events_per_clip: [0, 0],
        ..SynthSpec::events(2, 3, 4)
    };
    let (w, events) = render_event_clip(&spec, 0).unwrap();
    assert!(events.is_empty());
    // Short-time energy stays flat: no bursts anywhere.
    let energies: Vec<f64> = w.samples.chunks(3200).map(|c| c.iter().map(|s| s * s).sum::<f64>() / c.len() as f64).collect();
    let (lo, hi) = energies.iter().fold((f64::MAX, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
    assert!(hi / lo < 1.5, "{lo} .. {hi}");
    for k in 0..3 {
        assert!(goertzel(&w.samples, 0, w.len(), event_frequency(k, 3)) < 0.01);
    }
}

#[test]
fn wav_round_trip_is_within_one_step() {
    let dir = tempfile::tempdir().unwrap();
    let (w, _) = render_pitch_clip(&SynthSpec::pitch(1, 2, 5), 0).unwrap();
    let path = dir.path().join("x.wav");
    write_wav(&path, &w).unwrap();
    let back = load_wav(&path).unwrap();
    assert_eq!((back.len(), back.sample_rate), (w.len(), w.sample_rate));
    let worst = w.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst <= 1.0 / 32768.0, "{worst}");
    let clipped = Waveform::new(vec![1.5, -2.0, 0.0], 32_000).unwrap();
    write_wav(&path, &clipped).unwrap();
    let back = load_wav(&path).unwrap();
    assert!(back.samples.iter().all(|s| s.abs() <= 1.0));
}

#[test]
fn invalid_specs_are_refused() {
    assert!(matches!(SynthSpec::pitch(10, 1, 0).validate(), Err(Error::Config(_))));
    let short = SynthSpec {
        clip_s: 1.0,
        ..SynthSpec::events(10, 2, 0)
    };
    assert!(matches!(short.validate(), Err(Error::Config(_))));
    let overtones = SynthSpec {
        harmonics: 40,
        n_classes: 8,
        ..SynthSpec::pitch(10, 8, 0)
    };
    assert!(overtones.validate().is_err());
}

fn check_events(events: &[Event], clip_ms: f64) -> Result<(), TestCaseError> {
    let mut prev_off = 0.0;
    for e in events {
        prop_assert!(e.onset_ms.fract() == 0.0 && e.offset_ms.fract() == 0.0);
        prop_assert!(e.onset_ms - prev_off >= 250.0, "gap before {e:?}");
        let d = e.offset_ms - e.onset_ms;
        prop_assert!((150.0..=400.0).contains(&d), "duration {d}");
        prev_off = e.offset_ms;
    }
    prop_assert!(prev_off <= clip_ms - 250.0 || events.is_empty());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn events_never_overlap_and_stay_inside(seed in any::<u64>(), lo in 0usize..4, extra in 0usize..4, tenths in 20u32..60) {
        let spec = SynthSpec {
            events_per_clip: [lo, lo + extra],
            clip_s: tenths as f64 / 10.0,
            ..SynthSpec::events(4, 3, seed)
        };
        for i in 0..4 {
            let (w, events) = render_event_clip(&spec, i).unwrap();
            prop_assert!(events.len() <= lo + extra);
            prop_assert!(w.samples.iter().all(|s| s.abs() <= 0.95 + 1e-12));
            check_events(&events, (spec.clip_s * 1000.0).floor())?;
        }
    }
}
