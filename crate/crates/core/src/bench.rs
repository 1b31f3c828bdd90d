//! Sequence accounting and train-step throughput across the hop presets.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{HopPreset, MelSpectrogram};
use crate::encoder::{
    attention_cost, train_step, AugmentConfig, CostReport, EncoderConfig, Example, ModelCheckpoint, ModelConfig,
    Objective,
};
use crate::error::{Error, Result};
use crate::patch::{PatchGeometry, N_SPECIAL};
use crate::patchout::PatchoutSpec;
use crate::tensor::{AdamW, AdamWConfig, Tensor};

pub const WARMUP_RUNS: usize = 2;

/// Structured Patchout amounts used for training at each hop preset.
pub fn default_patchout(preset: HopPreset) -> PatchoutSpec {
    match preset {
        HopPreset::Hop10ms => PatchoutSpec::structured(4, 40),
        HopPreset::Hop5ms => PatchoutSpec::structured(6, 100),
        HopPreset::Hop3ms => PatchoutSpec::structured(6, 150),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceCounts {
    pub grid_f: usize,
    pub grid_t: usize,
    pub patch_tokens: usize,
    pub total_tokens: usize,
    pub patchout_patch_tokens: usize,
    pub patchout_total_tokens: usize,
}

/// Exact token counts for a clip of `clip_s` seconds at `preset`.
pub fn sequence_counts(preset: HopPreset, geometry: &PatchGeometry, clip_s: f64, patchout: &PatchoutSpec) -> Result<SequenceCounts> {
    let mel = preset.config();
    let frames = mel.frames_for((clip_s * mel.sample_rate as f64).round() as usize);
    let grid_f = geometry.grid_f(mel.n_mels)?;
    let grid_t = geometry.grid_t(frames)?;
    patchout.validate(grid_f, grid_t)?;
    let kept = patchout.kept_patches(grid_f, grid_t);
    Ok(SequenceCounts {
        grid_f,
        grid_t,
        patch_tokens: grid_f * grid_t,
        total_tokens: grid_f * grid_t + N_SPECIAL,
        patchout_patch_tokens: kept,
        patchout_total_tokens: kept + N_SPECIAL,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub encoder: EncoderConfig,
    pub clip_s: f64,
    pub batch_size: usize,
    pub trials: usize,
    /// Skip timing and report only the exact accounting.
    pub measure: bool,
    pub presets: Vec<HopPreset>,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            encoder: EncoderConfig::toy(8),
            clip_s: 10.0,
            batch_size: 1,
            trials: 5,
            measure: true,
            presets: HopPreset::ALL.to_vec(),
            seed: 0,
        }
    }
}

/// Median and spread of repeated wall-clock timings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub seconds: Vec<f64>,
    pub median_s: f64,
    pub iqr_s: f64,
    /// Examples per second at the median.
    pub throughput: f64,
}

impl Timing {
    fn from_samples(seconds: Vec<f64>, batch: usize) -> Self {
        let mut sorted = seconds.clone();
        sorted.sort_by(f64::total_cmp);
        let median_s = quantile(&sorted, 0.5);
        Timing {
            iqr_s: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
            throughput: batch as f64 / median_s,
            median_s,
            seconds,
        }
    }
}

/// Linear-interpolation quantile of ascending `sorted`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PresetReport {
    pub preset: HopPreset,
    pub patchout: PatchoutSpec,
    pub counts: SequenceCounts,
    pub cost_full: CostReport,
    pub cost_patchout: CostReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_full: Option<Timing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_patchout: Option<Timing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<Timing>,
    /// Median full-sequence step time over median Patchout step time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub warmup_runs: usize,
    pub threads: usize,
    pub presets: Vec<PresetReport>,
}

fn synthetic_batch(config: &ModelConfig, clip_s: f64, batch: usize, seed: u64) -> Result<Vec<Example>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = config.mel.frames_for((clip_s * config.mel.sample_rate as f64).round() as usize);
    let n_mels = config.mel.n_mels;
    (0..batch)
        .map(|i| {
            let values = Tensor::randn(&[n_mels * frames], 2.0, &mut rng).into_data();
            let mut target = vec![0.0; config.encoder.n_classes];
            target[i % config.encoder.n_classes] = 1.0;
            Ok(Example {
                mel: MelSpectrogram::new(values, n_mels, frames, config.mel.clone())?,
                target,
            })
        })
        .collect()
}

pub fn run_bench(config: &BenchConfig) -> Result<BenchReport> {
    if config.measure && config.trials < 3 {
        return Err(Error::Config(format!("need at least 3 trials, got {}", config.trials)));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let geometry = PatchGeometry::default();
    let mut presets = Vec::new();
    for &preset in &config.presets {
        let patchout = default_patchout(preset).with_seed(config.seed);
        let counts = sequence_counts(preset, &geometry, config.clip_s, &patchout)?;
        let mut report = PresetReport {
            preset,
            patchout,
            counts,
            cost_full: attention_cost(counts.total_tokens, &config.encoder)?,
            cost_patchout: attention_cost(counts.patchout_total_tokens, &config.encoder)?,
            train_full: None,
            train_patchout: None,
            eval: None,
            speedup: None,
        };
        if config.measure {
            measure(config, preset, &patchout, &mut report)?;
        }
        presets.push(report);
    }
    Ok(BenchReport {
        config: config.clone(),
        warmup_runs: WARMUP_RUNS,
        threads: 1,
        presets,
    })
}

fn measure(config: &BenchConfig, preset: HopPreset, patchout: &PatchoutSpec, report: &mut PresetReport) -> Result<()> {
    let mut model_cfg = ModelConfig::new(config.encoder.clone(), preset);
    model_cfg.max_clip_s = model_cfg.max_clip_s.max(config.clip_s);
    let mut model = ModelCheckpoint::init(model_cfg.clone(), config.seed)?;
    let batch = synthetic_batch(&model_cfg, config.clip_s, config.batch_size, config.seed)?;
    let mut optimizer = AdamW::new(AdamWConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let off = PatchoutSpec::off();
    let aug = AugmentConfig::off();
    let mut step = |spec: &PatchoutSpec| -> Result<f64> {
        let start = Instant::now();
        train_step(&mut model, &mut optimizer, &batch, spec, &aug, Objective::Multiclass, &mut rng)?;
        Ok(start.elapsed().as_secs_f64())
    };
    for _ in 0..WARMUP_RUNS {
        step(patchout)?;
        step(&off)?;
    }
    // Interleaved so slow drifts in machine speed hit both arms alike.
    let (mut with, mut without) = (Vec::new(), Vec::new());
    for _ in 0..config.trials {
        with.push(step(patchout)?);
        without.push(step(&off)?);
    }
    let mut eval = Vec::new();
    for i in 0..WARMUP_RUNS + config.trials {
        let start = Instant::now();
        for ex in &batch {
            model.infer(&ex.mel)?;
        }
        if i >= WARMUP_RUNS {
            eval.push(start.elapsed().as_secs_f64());
        }
    }
    let with = Timing::from_samples(with, config.batch_size);
    let without = Timing::from_samples(without, config.batch_size);
    report.speedup = Some(without.median_s / with.median_s);
    report.train_patchout = Some(with);
    report.train_full = Some(without);
    report.eval = Some(Timing::from_samples(eval, config.batch_size));
    Ok(())
}
