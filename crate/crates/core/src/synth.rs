//! Synthetic, license-free datasets: a pitch classification task and a
//! tone-burst event detection task, written in the probe manifest layout.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{load_wav, resample, write_wav, MelConfig, MelExtractor, Waveform};
use crate::encoder::Example;
use crate::error::{Error, Result};
use crate::probe::{Category, ClipLabels, Event, LabelMap, Metric, Splits, TaskManifest, TaskType};

pub const SAMPLE_RATE: u32 = 32_000;
pub const PITCH_BASE_HZ: f64 = 440.0;
pub const RAMP_MS: f64 = 10.0;
pub const MIN_EVENT_GAP_MS: f64 = 250.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    PitchClass,
    EventDetect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub n_clips: usize,
    pub clip_s: f64,
    pub n_classes: usize,
    /// Signal-to-noise range in dB; each clip draws uniformly from it.
    pub snr_db: [f64; 2],
    pub seed: u64,
    /// Inclusive range of events per clip (event task only).
    #[serde(default = "default_events")]
    pub events_per_clip: [usize; 2],
    /// Overtones above the fundamental (pitch task only).
    #[serde(default = "default_harmonics")]
    pub harmonics: usize,
}

fn default_events() -> [usize; 2] {
    [1, 3]
}

fn default_harmonics() -> usize {
    3
}

impl SynthSpec {
    pub fn pitch(n_clips: usize, n_classes: usize, seed: u64) -> Self {
        SynthSpec {
            kind: SynthKind::PitchClass,
            n_clips,
            clip_s: 1.0,
            n_classes,
            snr_db: [10.0, 30.0],
            seed,
            events_per_clip: default_events(),
            harmonics: default_harmonics(),
        }
    }

    pub fn events(n_clips: usize, n_classes: usize, seed: u64) -> Self {
        SynthSpec {
            kind: SynthKind::EventDetect,
            n_clips,
            clip_s: 4.0,
            n_classes,
            snr_db: [10.0, 20.0],
            seed,
            events_per_clip: default_events(),
            harmonics: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_clips == 0 {
            return bad("at least one clip is required".into());
        }
        if !(self.clip_s.is_finite() && self.clip_s > 0.0) {
            return bad(format!("clip length {} s must be positive", self.clip_s));
        }
        if !(self.snr_db[0] <= self.snr_db[1]) || !self.snr_db.iter().all(|v| v.is_finite()) {
            return bad(format!("invalid SNR range {:?}", self.snr_db));
        }
        match self.kind {
            SynthKind::PitchClass => {
                if self.n_classes < 2 {
                    return bad(format!("pitch task needs at least 2 classes, got {}", self.n_classes));
                }
                let top = pitch_frequency(self.n_classes - 1) * (self.harmonics + 1) as f64;
                if top >= SAMPLE_RATE as f64 / 2.0 {
                    return bad(format!("highest overtone {top:.0} Hz exceeds Nyquist"));
                }
            }
            SynthKind::EventDetect => {
                if self.n_classes == 0 {
                    return bad("event task needs at least 1 class".into());
                }
                if self.clip_s < 2.0 {
                    return bad(format!("event clips must be at least 2 s, got {}", self.clip_s));
                }
                if self.events_per_clip[0] > self.events_per_clip[1] {
                    return bad(format!("invalid event range {:?}", self.events_per_clip));
                }
            }
        }
        Ok(())
    }

    fn n_samples(&self) -> usize {
        (self.clip_s * SAMPLE_RATE as f64).round() as usize
    }

    pub fn label_names(&self) -> Vec<String> {
        match self.kind {
            SynthKind::PitchClass => (0..self.n_classes).map(|k| format!("pitch{k:02}")).collect(),
            SynthKind::EventDetect => (0..self.n_classes).map(|k| format!("tone{k:02}")).collect(),
        }
    }
}

/// Fundamental of pitch class `k`: 1.5 semitones per class above 440 Hz.
pub fn pitch_frequency(k: usize) -> f64 {
    PITCH_BASE_HZ * 2f64.powf(k as f64 / 8.0)
}

/// Carrier of event class `k` out of `n`: log-spaced over 400–6400 Hz.
pub fn event_frequency(k: usize, n: usize) -> f64 {
    if n <= 1 {
        1000.0
    } else {
        400.0 * 16f64.powf(k as f64 / (n - 1) as f64)
    }
}

pub fn clip_name(i: usize) -> String {
    format!("clip_{i:05}.wav")
}

/// Contiguous 60/20/20 split; with labels cycling through classes this keeps
/// every split balanced to within one clip per class.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.6).round() as usize;
    let valid = ((n as f64 * 0.2).round() as usize).min(n - train);
    (train, valid, n - train - valid)
}

fn clip_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

fn noise_std(signal_power: f64, snr_db: f64) -> f64 {
    (signal_power / 10f64.powf(snr_db / 10.0)).sqrt()
}

fn add_noise(samples: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    for s in samples {
        let z: f64 = StandardNormal.sample(rng);
        *s += std * z;
    }
}

/// Scales so the peak magnitude is at most `peak`.
fn limit_peak(samples: &mut [f64], peak: f64) {
    let m = samples.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    if m > peak {
        samples.iter_mut().for_each(|s| *s *= peak / m);
    }
}

/// Class of pitch clip `i`.
pub fn pitch_class(i: usize, n_classes: usize) -> usize {
    i % n_classes
}

/// Renders pitch clip `i`: a harmonic tone at its class fundamental plus white noise.
pub fn render_pitch_clip(spec: &SynthSpec, i: usize) -> Result<(Waveform, usize)> {
    let mut rng = clip_rng(spec.seed, i);
    let class = pitch_class(i, spec.n_classes);
    let f0 = pitch_frequency(class);
    let n = spec.n_samples();
    let sr = SAMPLE_RATE as f64;
    let mut partials = vec![(1.0, 1.0, rng.random_range(0.0..2.0 * PI))];
    for h in 2..=spec.harmonics + 1 {
        // Overtones stay below the fundamental so it dominates the spectrum.
        let gain = rng.random_range(0.0..0.5) / h as f64;
        partials.push((h as f64, gain, rng.random_range(0.0..2.0 * PI)));
    }
    let level = rng.random_range(0.3..0.6);
    let mut samples: Vec<f64> = (0..n)
        .map(|t| {
            let t = t as f64 / sr;
            level * partials.iter().map(|(h, g, p)| g * (2.0 * PI * f0 * h * t + p).sin()).sum::<f64>()
        })
        .collect();
    let power = samples.iter().map(|s| s * s).sum::<f64>() / n.max(1) as f64;
    let snr = rng.random_range(spec.snr_db[0]..=spec.snr_db[1]);
    add_noise(&mut samples, noise_std(power, snr), &mut rng);
    limit_peak(&mut samples, 0.95);
    Ok((Waveform::new(samples, SAMPLE_RATE)?, class))
}

/// Draws non-overlapping event positions in whole milliseconds, each fully inside
/// the clip and at least `MIN_EVENT_GAP_MS` after the previous offset.
fn place_events(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<(f64, f64, usize)> {
    let clip_ms = (spec.clip_s * 1000.0).floor() as i64;
    let want = rng.random_range(spec.events_per_clip[0]..=spec.events_per_clip[1]);
    let mut durations: Vec<i64> = (0..want).map(|_| rng.random_range(150..=400)).collect();
    let need = |d: &[i64]| d.iter().sum::<i64>() + MIN_EVENT_GAP_MS as i64 * (d.len() as i64 + 1);
    while !durations.is_empty() && need(&durations) > clip_ms {
        durations.pop();
    }
    let slack = clip_ms - need(&durations);
    let mut cuts: Vec<i64> = (0..durations.len()).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut events = Vec::with_capacity(durations.len());
    let mut cursor = MIN_EVENT_GAP_MS as i64;
    let mut used = 0;
    for (d, c) in durations.iter().zip(&cuts) {
        cursor += c - used;
        used = *c;
        let class = rng.random_range(0..spec.n_classes);
        events.push((cursor as f64, (cursor + d) as f64, class));
        cursor += d + MIN_EVENT_GAP_MS as i64;
    }
    events
}

fn raised_cosine(t_ms: f64, len_ms: f64) -> f64 {
    let edge = t_ms.min(len_ms - t_ms);
    if edge >= RAMP_MS {
        1.0
    } else {
        0.5 - 0.5 * (PI * edge.max(0.0) / RAMP_MS).cos()
    }
}

/// Renders event clip `i`: low-level white noise with tone bursts.
pub fn render_event_clip(spec: &SynthSpec, i: usize) -> Result<(Waveform, Vec<Event>)> {
    let mut rng = clip_rng(spec.seed, i);
    let names = spec.label_names();
    let placed = place_events(spec, &mut rng);
    let n = spec.n_samples();
    let sr = SAMPLE_RATE as f64;
    let amplitude = 0.5;
    let snr = rng.random_range(spec.snr_db[0]..=spec.snr_db[1]);
    let mut samples = vec![0.0; n];
    add_noise(&mut samples, noise_std(amplitude * amplitude / 2.0, snr), &mut rng);
    let mut events = Vec::with_capacity(placed.len());
    for (on, off, class) in placed {
        let f = event_frequency(class, spec.n_classes);
        let phase = rng.random_range(0.0..2.0 * PI);
        let (a, b) = ((on * sr / 1000.0) as usize, ((off * sr / 1000.0) as usize).min(n));
        for (j, s) in samples[a..b].iter_mut().enumerate() {
            let t_ms = j as f64 * 1000.0 / sr;
            *s += amplitude * raised_cosine(t_ms, off - on) * (2.0 * PI * f * j as f64 / sr + phase).sin();
        }
        events.push(Event {
            label: names[class].clone(),
            onset_ms: on,
            offset_ms: off,
        });
    }
    limit_peak(&mut samples, 0.95);
    Ok((Waveform::new(samples, SAMPLE_RATE)?, events))
}

/// Renders clip `i` with its labels.
pub fn render_clip(spec: &SynthSpec, i: usize) -> Result<(Waveform, ClipLabels)> {
    let names = spec.label_names();
    match spec.kind {
        SynthKind::PitchClass => {
            let (w, c) = render_pitch_clip(spec, i)?;
            Ok((w, ClipLabels::Tags(vec![names[c].clone()])))
        }
        SynthKind::EventDetect => {
            let (w, e) = render_event_clip(spec, i)?;
            Ok((w, ClipLabels::Events(e)))
        }
    }
}

pub fn manifest_for(spec: &SynthSpec) -> TaskManifest {
    let (train, valid, _) = split_sizes(spec.n_clips);
    let names: Vec<String> = (0..spec.n_clips).map(clip_name).collect();
    let (task, task_type, category, metric) = match spec.kind {
        SynthKind::PitchClass => ("synth-pitch", TaskType::SceneMulticlass, Category::Music, Metric::Accuracy),
        SynthKind::EventDetect => ("synth-events", TaskType::TimestampEvent, Category::General, Metric::OnsetF1),
    };
    TaskManifest {
        task: task.into(),
        task_type,
        category,
        metric,
        labels: spec.label_names(),
        splits: Splits {
            train: names[..train].to_vec(),
            valid: names[train..train + valid].to_vec(),
            test: names[train + valid..].to_vec(),
        },
        sample_rate: SAMPLE_RATE,
        clip_s: spec.clip_s,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `<root>/audio/*.wav`, `<root>/labels.json` and `<root>/manifest.json`.
pub fn generate(spec: &SynthSpec, root: &Path) -> Result<TaskManifest> {
    spec.validate()?;
    let audio = root.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut labels = LabelMap::new();
    for i in 0..spec.n_clips {
        let (wave, l) = render_clip(spec, i)?;
        write_wav(audio.join(clip_name(i)), &wave)?;
        labels.insert(clip_name(i), l);
    }
    let manifest = manifest_for(spec);
    manifest.validate(&labels)?;
    write_json(&root.join("labels.json"), &labels)?;
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

pub fn gen_pitch_task(spec: &SynthSpec, root: &Path) -> Result<TaskManifest> {
    if spec.kind != SynthKind::PitchClass {
        return Err(Error::Config("gen_pitch_task needs a pitch-class spec".into()));
    }
    generate(spec, root)
}

pub fn gen_event_task(spec: &SynthSpec, root: &Path) -> Result<TaskManifest> {
    if spec.kind != SynthKind::EventDetect {
        return Err(Error::Config("gen_event_task needs an event-detect spec".into()));
    }
    generate(spec, root)
}

/// Log-mel training examples for `files` of a scene task rooted at `root`.
pub fn load_scene_examples(
    root: &Path,
    manifest: &TaskManifest,
    labels: &LabelMap,
    files: &[String],
    mel: &MelConfig,
) -> Result<Vec<Example>> {
    if manifest.task_type == TaskType::TimestampEvent {
        return Err(Error::Config(format!("{} is not a scene task", manifest.task)));
    }
    let extractor = MelExtractor::new(mel)?;
    files
        .iter()
        .map(|f| {
            let wave = resample(&load_wav(root.join("audio").join(f))?, mel.sample_rate)?;
            let l = labels
                .get(f)
                .ok_or_else(|| Error::Labels(format!("no labels for {f}")))?;
            Ok(Example {
                mel: extractor.compute(&wave)?,
                target: manifest.scene_target(l),
            })
        })
        .collect()
}
