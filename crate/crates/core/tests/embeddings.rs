use passt::dsp::{log_mel, HopPreset, Waveform};
use passt::embed::{
    assemble_clip, decode_embeddings, encode_embeddings, load_embeddings, mean_rows, save_embeddings, scene_embedding,
    timestamp_embeddings, timestamp_grid, window_starts, EmbeddingMode, LevelSpec, RFSpec,
};
use passt::encoder::{EncoderConfig, ModelCheckpoint, ModelConfig};
use passt::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SR: u32 = 32_000;

fn model(max_clip_s: f64) -> ModelCheckpoint {
    let mut cfg = ModelConfig::new(EncoderConfig::toy(5), HopPreset::Hop10ms);
    cfg.max_clip_s = max_clip_s;
    ModelCheckpoint::init(cfg, 21).unwrap()
}

fn noisy_tone(seconds: f64, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR as f64).round() as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            0.3 * (2.0 * std::f64::consts::PI * (500.0 + 300.0 * t) * t).sin() + rng.random_range(-0.05..0.05)
        })
        .collect();
    Waveform::new(samples, SR).unwrap()
}

fn slice(w: &Waveform, start: usize, end: usize) -> Waveform {
    Waveform::new(w.samples[start..end.min(w.len())].to_vec(), w.sample_rate).unwrap()
}

fn levels(s: &str) -> LevelSpec {
    s.parse().unwrap()
}

fn as_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|&x| x as f32).collect()
}

#[test]
fn short_clip_is_a_single_forward() {
    let m = model(1.0);
    let w = noisy_tone(0.8, 1);
    let lv = levels("L,M,H");
    let e = scene_embedding(&w, &m, &lv, 1.0, 0.5).unwrap();
    assert_eq!(e.n(), 1);
    assert_eq!(e.dim(), 128 + 64 + 5);
    assert_eq!(e.data, as_f32(&assemble_clip(&w, &m, &lv).unwrap()));
    assert_eq!(e.descriptor.layout, vec!["L", "M", "H"]);
}

#[test]
fn long_clip_averages_overlapping_windows() {
    let m = model(1.0);
    let w = noisy_tone(3.0, 2);
    let lv = levels("M,H");
    let e = scene_embedding(&w, &m, &lv, 1.0, 0.5).unwrap();

    // Windows start every half second; the last one ends with the clip.
    let starts: Vec<usize> = (0..5).map(|k| k * SR as usize / 2).collect();
    assert_eq!(window_starts(w.len(), SR as usize, SR as usize / 2), starts);
    let rows: Vec<Vec<f64>> =
        starts.iter().map(|&s| assemble_clip(&slice(&w, s, s + SR as usize), &m, &lv).unwrap()).collect();
    let mut reversed = rows.clone();
    reversed.reverse();
    assert_eq!(mean_rows(&rows), mean_rows(&reversed));
    assert_eq!(e.data, as_f32(&mean_rows(&rows)));

    // A ragged tail gets one more, shorter window.
    let w = noisy_tone(3.2, 3);
    let e = scene_embedding(&w, &m, &lv, 1.0, 0.5).unwrap();
    let rows: Vec<Vec<f64>> = (0..6)
        .map(|k| {
            let s = k * SR as usize / 2;
            assemble_clip(&slice(&w, s, s + SR as usize), &m, &lv).unwrap()
        })
        .collect();
    assert_eq!(e.data, as_f32(&mean_rows(&rows)));
}

#[test]
fn oversized_single_forward_is_refused() {
    let m = model(1.0);
    let r = assemble_clip(&noisy_tone(1.5, 4), &m, &levels("M"));
    assert!(matches!(r, Err(Error::Bounds(_))));
}

#[test]
fn timestamp_rows_match_centered_windows() {
    let m = model(1.0);
    let w = noisy_tone(0.6, 5);
    let rf = RFSpec::two_rf();
    let lv = levels("M");
    let e = timestamp_embeddings(&w, &m, &lv, &rf).unwrap();
    assert_eq!(e.descriptor.mode, EmbeddingMode::Timestamp);
    assert_eq!(e.n(), 12);
    assert_eq!(e.dim(), 2 * 64);
    assert_eq!(e.timestamps.as_deref().unwrap(), timestamp_grid(600.0, 50).as_slice());
    assert_eq!(e.descriptor.layout, vec!["rf160:M", "rf640:M"]);

    for (i, &ts) in e.timestamps.as_ref().unwrap().iter().enumerate() {
        let center = (ts * 32.0) as i64;
        let mut row = Vec::new();
        for rf_ms in [160, 640] {
            let len = rf_ms * 32;
            // Window centered on the timestamp, zeros outside the clip.
            let samples: Vec<f64> = (center - len / 2..center + len / 2)
                .map(|j| if j >= 0 && (j as usize) < w.len() { w.samples[j as usize] } else { 0.0 })
                .collect();
            let mel = log_mel(&Waveform::new(samples, SR).unwrap(), &m.config.mel).unwrap();
            row.extend(m.infer(&mel).unwrap().pooled);
        }
        assert_eq!(e.row(i), as_f32(&row).as_slice(), "row {i}");
    }
}

#[test]
fn first_timestamp_with_wide_field_is_finite_and_repeatable() {
    let m = model(1.0);
    let w = noisy_tone(0.3, 6);
    let lv = levels("L,M,H");
    let a = timestamp_embeddings(&w, &m, &lv, &RFSpec::rf640()).unwrap();
    let b = timestamp_embeddings(&w, &m, &lv, &RFSpec::rf640()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.dim(), 640 + 64 + 5);
    assert!(a.row(0).iter().all(|v| v.is_finite()));
}

#[test]
fn receptive_field_longer_than_the_model_input_is_refused() {
    let m = model(0.5);
    let r = timestamp_embeddings(&noisy_tone(1.0, 7), &m, &levels("M"), &RFSpec::rf640());
    assert!(matches!(r, Err(Error::Bounds(_))));
}

#[test]
fn bad_scene_parameters_are_config_errors() {
    let m = model(1.0);
    let w = noisy_tone(0.5, 8);
    for (win, ov) in [(0.0, 0.5), (1.0, 1.0), (1.0, -0.1)] {
        assert!(matches!(scene_embedding(&w, &m, &levels("M"), win, ov), Err(Error::Config(_))));
    }
}

#[test]
fn embedding_files_round_trip_bit_exactly() {
    let m = model(1.0);
    let dir = tempfile::tempdir().unwrap();
    let w = noisy_tone(0.4, 9);
    for e in [
        scene_embedding(&w, &m, &levels("M,H"), 1.0, 0.5).unwrap(),
        timestamp_embeddings(&w, &m, &levels("L,M"), &RFSpec::rf160()).unwrap(),
    ] {
        let path = dir.path().join("x.emb");
        save_embeddings(&e, &path).unwrap();
        let back = load_embeddings(&path).unwrap();
        assert_eq!(back.descriptor, e.descriptor);
        assert!(back.data.iter().zip(&e.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.timestamps, e.timestamps);
        assert_eq!(encode_embeddings(&back).unwrap(), std::fs::read(&path).unwrap());
    }
}

#[test]
fn corrupted_embedding_files_are_rejected() {
    let m = model(1.0);
    let e = scene_embedding(&noisy_tone(0.4, 10), &m, &levels("M"), 1.0, 0.5).unwrap();
    let bytes = encode_embeddings(&e).unwrap();
    let mut bad = bytes.clone();
    bad[3] ^= 1;
    assert!(matches!(decode_embeddings(&bad), Err(Error::Format(s)) if s.contains("magic")));
    let mut bad = bytes.clone();
    bad[8] = 7;
    assert!(matches!(decode_embeddings(&bad), Err(Error::Format(s)) if s.contains("version")));
    assert!(matches!(decode_embeddings(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    let mut bad = e.clone();
    bad.timestamps = Some(vec![0.0]);
    assert!(matches!(encode_embeddings(&bad), Err(Error::Format(_))));
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn window_mean_ignores_order(
        rows in prop::collection::vec(prop::collection::vec(-1e6f64..1e6, 6), 1..12),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(mean_rows(&rows), mean_rows(&shuffled));
    }

    #[test]
    fn windows_cover_the_clip(n in 1usize..200_000, win in 1usize..50_000, frac in 0.1f64..1.0) {
        let stride = ((win as f64 * frac).round() as usize).max(1);
        let s = window_starts(n, win, stride);
        prop_assert_eq!(s[0], 0);
        prop_assert!(s.windows(2).all(|p| p[1] - p[0] == stride));
        prop_assert!(s.last().unwrap() + win >= n);
        if s.len() > 1 {
            prop_assert!(s[s.len() - 2] + win < n);
        }
    }

    #[test]
    fn grid_spans_the_clip(ms in 1.0f64..200_000.0, hop in 1u32..200) {
        let g = timestamp_grid(ms, hop);
        prop_assert!(*g.last().unwrap() < ms);
        prop_assert!(g.last().unwrap() + hop as f64 >= ms);
    }
}
