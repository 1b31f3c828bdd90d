use std::path::Path;

use passt::bench::{run_bench, BenchConfig};
use passt::dsp::{load_wav, HopPreset};
use passt::embed::{checkpoint_id, save_embeddings, scene_embedding, timestamp_embeddings, EmbeddingMatrix};
use passt::encoder::{
    load_checkpoint, save_checkpoint, train, EncoderConfig, ModelCheckpoint, ModelConfig, Objective, TrainConfig,
};
use passt::patchout::PatchoutSpec;
use passt::probe::{
    extract_task, load_task, normalize_and_aggregate, read_json, run_task, ProbeConfig, ProbeResult, RawScore,
    ReferenceTable, TaskType,
};
use passt::synth::{generate, load_scene_examples, SynthSpec};
use passt::tensor::AdamWConfig;
use passt::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::{
    BenchArgs, Cli, Command, ExtractCommon, InitArgs, ModelSize, ProbeArgs, ReportArgs, SceneArgs, SynthArgs,
    TimestampArgs, TrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    let value = match &cli.command {
        Command::Synth(a) => synth(a)?,
        Command::Init(a) => init(a)?,
        Command::TrainToy(a) => train_toy(a)?,
        Command::ExtractScene(a) => extract_scene(a)?,
        Command::ExtractTimestamp(a) => extract_timestamp(a)?,
        Command::Probe(a) => probe(a)?,
        Command::Report(a) => report(a)?,
        Command::Bench(a) => bench(a)?,
    };
    emit(&value, cli.out.as_deref())
}

fn emit(value: &Value, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn synth(a: &SynthArgs) -> Result<Value> {
    let spec = match &a.config {
        Some(p) => read_json::<SynthSpec>(p)?,
        None => {
            let mut s = match a.kind {
                passt::synth::SynthKind::PitchClass => SynthSpec::pitch(a.n_clips, a.classes, a.seed),
                passt::synth::SynthKind::EventDetect => SynthSpec::events(a.n_clips, a.classes, a.seed),
            };
            if let Some(c) = a.clip_s {
                s.clip_s = c;
            }
            if let Some(r) = a.snr_db {
                s.snr_db = r;
            }
            if let Some(e) = a.events {
                s.events_per_clip = e;
            }
            if let Some(h) = a.harmonics {
                s.harmonics = h;
            }
            s
        }
    };
    let manifest = generate(&spec, &a.dir)?;
    Ok(json!({ "dir": a.dir, "spec": spec, "manifest": manifest }))
}

fn checkpoint_summary(model: &ModelCheckpoint, path: &Path) -> Result<Value> {
    Ok(json!({
        "checkpoint": path,
        "checkpoint_id": checkpoint_id(model)?,
        "n_params": model.n_params(),
        "config": model.config,
    }))
}

fn init(a: &InitArgs) -> Result<Value> {
    let encoder = match a.model {
        ModelSize::Toy => EncoderConfig::toy(a.classes.unwrap_or(8)),
        ModelSize::Base => EncoderConfig {
            n_classes: a.classes.unwrap_or(527),
            ..EncoderConfig::base()
        },
    };
    let mut config = ModelConfig::new(encoder, a.hop_preset);
    config.max_clip_s = a.max_clip_s;
    let model = ModelCheckpoint::init(config, a.seed)?;
    save_checkpoint(&model, &a.checkpoint)?;
    checkpoint_summary(&model, &a.checkpoint)
}

fn parse_patchout(s: &str, seed: u64) -> Result<PatchoutSpec> {
    let bad = || Error::Config(format!("patchout {s:?}: use none, F,T or u:N"));
    let spec = if s == "none" || s == "off" {
        PatchoutSpec::off()
    } else if let Some(n) = s.strip_prefix("u:") {
        PatchoutSpec::unstructured(n.parse().map_err(|_| bad())?)
    } else {
        let (f, t) = s.split_once(',').ok_or_else(bad)?;
        PatchoutSpec::structured(f.trim().parse().map_err(|_| bad())?, t.trim().parse().map_err(|_| bad())?)
    };
    Ok(spec.with_seed(seed))
}

fn train_toy(a: &TrainArgs) -> Result<Value> {
    let (manifest, labels) = load_task(&a.dataset)?;
    let objective = match manifest.task_type {
        TaskType::SceneMulticlass => Objective::Multiclass,
        TaskType::SceneMultilabel => Objective::Multilabel,
        TaskType::TimestampEvent => {
            return Err(Error::Config(format!("train-toy needs a scene task; {} is an event task", manifest.task)))
        }
    };
    let mut model = match &a.init {
        Some(p) => load_checkpoint(p)?,
        None => {
            let mut config = ModelConfig::new(EncoderConfig::toy(manifest.labels.len()), a.hop_preset);
            config.max_clip_s = manifest.clip_s;
            ModelCheckpoint::init(config, a.seed)?
        }
    };
    if model.config.encoder.n_classes != manifest.labels.len() {
        return Err(Error::Config(format!(
            "checkpoint has {} classes, task has {}",
            model.config.encoder.n_classes,
            manifest.labels.len()
        )));
    }
    let mel = model.config.mel.clone();
    let s = &manifest.splits;
    let load = |files: &[String]| load_scene_examples(&a.dataset, &manifest, &labels, files, &mel);
    let (train_set, valid_set, test_set) = (load(&s.train)?, load(&s.valid)?, load(&s.test)?);
    let config = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        optimizer: AdamWConfig {
            lr: a.lr,
            weight_decay: a.weight_decay,
            ..AdamWConfig::default()
        },
        patchout: parse_patchout(&a.patchout, a.seed)?,
        objective,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &train_set, &config)?;
    save_checkpoint(&model, &a.checkpoint)?;
    let accuracy = |set: &[passt::encoder::Example]| -> Result<Option<f64>> {
        if objective != Objective::Multiclass || set.is_empty() {
            return Ok(None);
        }
        model.accuracy(set).map(Some)
    };
    let mut out = checkpoint_summary(&model, &a.checkpoint)?;
    out["train"] = to_value(&config)?;
    out["report"] = to_value(&report)?;
    out["train_accuracy"] = to_value(&accuracy(&train_set)?)?;
    out["valid_accuracy"] = to_value(&accuracy(&valid_set)?)?;
    out["test_accuracy"] = to_value(&accuracy(&test_set)?)?;
    Ok(out)
}

fn load_for_extraction(c: &ExtractCommon) -> Result<ModelCheckpoint> {
    let model = load_checkpoint(&c.checkpoint)?;
    if let Some(p) = c.hop_preset {
        let have: Option<HopPreset> = model.config.mel.preset;
        if have != Some(p) {
            return Err(Error::Config(format!(
                "checkpoint was built for {}, not {p}",
                have.map_or_else(|| "a custom mel config".to_string(), |h| h.to_string())
            )));
        }
    }
    Ok(model)
}

fn extract<F>(c: &ExtractCommon, mut f: F) -> Result<Value>
where
    F: FnMut(&passt::dsp::Waveform) -> Result<EmbeddingMatrix>,
{
    if c.input.is_dir() {
        let (manifest, _) = load_task(&c.input)?;
        let mut descriptor = None;
        let files = extract_task(&c.input, &manifest, &c.emb, |w| {
            let m = f(w)?;
            descriptor.get_or_insert_with(|| m.descriptor.clone());
            Ok(m)
        })?;
        Ok(json!({ "dir": c.emb, "files": files.len(), "descriptor": descriptor }))
    } else {
        let m = f(&load_wav(&c.input)?)?;
        save_embeddings(&m, &c.emb)?;
        Ok(json!({ "path": c.emb, "descriptor": m.descriptor }))
    }
}

fn extract_scene(a: &SceneArgs) -> Result<Value> {
    let model = load_for_extraction(&a.common)?;
    extract(&a.common, |w| scene_embedding(w, &model, &a.common.levels, a.window_s, a.overlap))
}

fn extract_timestamp(a: &TimestampArgs) -> Result<Value> {
    let model = load_for_extraction(&a.common)?;
    let rf = passt::embed::RFSpec {
        hop_ms: a.hop_ms,
        ..a.rf.clone()
    };
    extract(&a.common, |w| timestamp_embeddings(w, &model, &a.common.levels, &rf))
}

fn probe(a: &ProbeArgs) -> Result<Value> {
    let mut config = match &a.config {
        Some(p) => read_json::<ProbeConfig>(p)?,
        None => ProbeConfig::default(),
    };
    if let Some(h) = &a.hidden {
        config.hidden = h
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|_| Error::Config(format!("bad hidden width {s:?}"))))
            .collect::<Result<_>>()?;
    }
    config.epochs = a.epochs.unwrap_or(config.epochs);
    config.batch_size = a.batch_size.unwrap_or(config.batch_size);
    config.lr = a.lr.unwrap_or(config.lr);
    config.patience = a.patience.unwrap_or(config.patience);
    config.seed = a.seed.unwrap_or(config.seed);
    if a.no_standardize {
        config.standardize = false;
    }
    let (manifest, labels) = load_task(&a.dataset)?;
    let result: ProbeResult = run_task(&manifest, &labels, &a.embeddings, &config)?;
    let mut out = to_value(&result)?;
    out["config"] = to_value(&config)?;
    Ok(out)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScoreInput {
    Raw(RawScore),
    Probe(ProbeResult),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    Many(Vec<ScoreInput>),
    One(ScoreInput),
}

fn report(a: &ReportArgs) -> Result<Value> {
    let scores: Vec<RawScore> = match read_json::<OneOrMany>(&a.scores)? {
        OneOrMany::Many(v) => v,
        OneOrMany::One(s) => vec![s],
    }
    .into_iter()
    .map(|s| match s {
        ScoreInput::Raw(r) => r,
        ScoreInput::Probe(p) => p.raw_score(),
    })
    .collect();
    let reference: ReferenceTable = read_json(&a.reference)?;
    let r = normalize_and_aggregate(&scores, &reference)?;
    for (path, text) in [(&a.tasks_csv, r.tasks_csv()), (&a.categories_csv, r.categories_csv())] {
        if let Some(p) = path {
            std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
        }
    }
    to_value(&r)
}

fn bench(a: &BenchArgs) -> Result<Value> {
    let presets = a
        .presets
        .split(',')
        .map(|s| s.trim().parse())
        .collect::<Result<Vec<HopPreset>>>()?;
    let config = BenchConfig {
        clip_s: a.clip_s,
        batch_size: a.batch_size,
        trials: a.trials,
        measure: !a.no_measure,
        presets,
        seed: a.seed,
        ..BenchConfig::default()
    };
    to_value(&run_bench(&config)?)
}
