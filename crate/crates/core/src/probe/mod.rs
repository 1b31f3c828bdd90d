//! Downstream evaluation: task manifests, shallow MLP probes on frozen
//! embeddings, metrics, and normalized per-category reports.

mod metrics;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{load_embeddings, EmbeddingMatrix};
use crate::encoder::Objective;
use crate::error::{Error, Result};
use crate::tensor::{AdamW, AdamWConfig, ParamSet, Tape, Tensor};

pub use metrics::{
    accuracy, average_precision, decode_events, f1_from_counts, match_onsets, mean_average_precision, onset_f1,
    DecodeConfig,
};
pub use report::{hear_tasks, normalize_and_aggregate, CategoryStats, RawScore, ReferenceTable, ScoreReport, TaskScore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskType {
    SceneMulticlass,
    SceneMultilabel,
    TimestampEvent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Speech,
    Music,
    General,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Speech => "speech",
            Category::Music => "music",
            Category::General => "general",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "accuracy")]
    Accuracy,
    #[serde(rename = "mAP")]
    MeanAveragePrecision,
    #[serde(rename = "onset_f1")]
    OnsetF1,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::MeanAveragePrecision => "mAP",
            Metric::OnsetF1 => "onset_f1",
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub task: String,
    pub task_type: TaskType,
    pub category: Category,
    pub metric: Metric,
    pub labels: Vec<String>,
    pub splits: Splits,
    pub sample_rate: u32,
    pub clip_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub label: String,
    pub onset_ms: f64,
    pub offset_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClipLabels {
    Tags(Vec<String>),
    Events(Vec<Event>),
}

/// Clip file name → its labels, as stored in `labels.json`.
pub type LabelMap = BTreeMap<String, ClipLabels>;

impl TaskManifest {
    pub fn validate(&self, labels: &LabelMap) -> Result<()> {
        let s = &self.splits;
        let mut seen = BTreeSet::new();
        for f in s.train.iter().chain(&s.valid).chain(&s.test) {
            if !seen.insert(f) {
                return Err(Error::Labels(format!("{f} appears in more than one split")));
            }
        }
        let vocab: BTreeSet<&String> = self.labels.iter().collect();
        for f in &seen {
            let entry = labels
                .get(*f)
                .ok_or_else(|| Error::Labels(format!("no labels for {f}")))?;
            let names: Vec<&String> = match (entry, self.task_type) {
                (ClipLabels::Tags(t), TaskType::SceneMulticlass) if t.len() == 1 => t.iter().collect(),
                (ClipLabels::Tags(t), TaskType::SceneMultilabel) => t.iter().collect(),
                (ClipLabels::Events(e), TaskType::TimestampEvent) => e.iter().map(|e| &e.label).collect(),
                // Event tasks may use an empty tag list for event-free clips.
                (ClipLabels::Tags(t), TaskType::TimestampEvent) if t.is_empty() => vec![],
                _ => {
                    return Err(Error::Labels(format!(
                        "labels of {f} do not fit a {:?} task",
                        self.task_type
                    )))
                }
            };
            if let Some(bad) = names.iter().find(|n| !vocab.contains(*n)) {
                return Err(Error::Labels(format!("{f}: label {bad:?} not in vocabulary")));
            }
        }
        Ok(())
    }

    fn label_index(&self, name: &str) -> usize {
        self.labels.iter().position(|l| l == name).expect("validated label")
    }

    /// Indicator target of a scene clip.
    pub fn scene_target(&self, labels: &ClipLabels) -> Vec<f64> {
        let mut t = vec![0.0; self.labels.len()];
        if let ClipLabels::Tags(tags) = labels {
            for tag in tags {
                t[self.label_index(tag)] = 1.0;
            }
        }
        t
    }

    /// Per-timestamp activity targets of an event clip.
    pub fn frame_targets(&self, labels: &ClipLabels, times_ms: &[f64]) -> Vec<Vec<f64>> {
        let events: &[Event] = match labels {
            ClipLabels::Events(e) => e,
            ClipLabels::Tags(_) => &[],
        };
        times_ms
            .iter()
            .map(|&t| {
                let mut row = vec![0.0; self.labels.len()];
                for e in events.iter().filter(|e| e.onset_ms <= t && t < e.offset_ms) {
                    row[self.label_index(&e.label)] = 1.0;
                }
                row
            })
            .collect()
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Reads `manifest.json` and `labels.json` from a dataset root and checks them.
pub fn load_task(root: &Path) -> Result<(TaskManifest, LabelMap)> {
    let manifest: TaskManifest = read_json(&root.join("manifest.json"))?;
    let labels: LabelMap = read_json(&root.join("labels.json"))?;
    manifest.validate(&labels)?;
    Ok((manifest, labels))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Upper bound; early stopping usually ends training sooner.
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub seed: u64,
    /// Z-score features with training-split statistics.
    pub standardize: bool,
    pub decode: DecodeConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: vec![1024],
            activation: Activation::Relu,
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            patience: 10,
            seed: 0,
            standardize: true,
            decode: DecodeConfig::default(),
        }
    }
}

/// Feature rows with one indicator target per row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeData {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

impl ProbeData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn push_matrix(&mut self, m: &EmbeddingMatrix, targets: Vec<Vec<f64>>) -> Result<()> {
        if targets.len() != m.n() {
            return Err(Error::Labels(format!("{} targets for {} embedding rows", targets.len(), m.n())));
        }
        self.x.extend(m.rows().map(|r| r.iter().map(|&v| v as f64).collect()));
        self.y.extend(targets);
        Ok(())
    }
}

/// A trained probe with its input standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub config: ProbeConfig,
    pub objective: Objective,
    pub params: ParamSet,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub best_epoch: usize,
    pub valid_losses: Vec<f64>,
}

fn check_data(data: &ProbeData, what: &str) -> Result<(usize, usize)> {
    if data.x.len() != data.y.len() {
        return Err(Error::Labels(format!("{what}: {} rows but {} targets", data.x.len(), data.y.len())));
    }
    let dim = data.x.first().map_or(0, Vec::len);
    let classes = data.y.first().map_or(0, Vec::len);
    if data.x.iter().any(|r| r.len() != dim) || data.y.iter().any(|r| r.len() != classes) {
        return Err(Error::shape("probe", format!("{what}: ragged rows")));
    }
    Ok((dim, classes))
}

fn layer_count(config: &ProbeConfig) -> usize {
    config.hidden.len() + 1
}

fn mlp(tape: &mut Tape, vars: &BTreeMap<String, crate::tensor::Var>, config: &ProbeConfig, x: crate::tensor::Var) -> Result<crate::tensor::Var> {
    let mut h = x;
    let n = layer_count(config);
    for i in 0..n {
        h = tape.matmul(h, vars[&format!("fc{i}.weight")])?;
        h = tape.add_row(h, vars[&format!("fc{i}.bias")])?;
        if i + 1 < n {
            h = match config.activation {
                Activation::Relu => tape.relu(h)?,
                Activation::Gelu => tape.gelu(h)?,
            };
        }
    }
    Ok(h)
}

fn stack(rows: &[&Vec<f64>]) -> Result<Tensor> {
    let cols = rows.first().map_or(0, |r| r.len());
    Tensor::new(vec![rows.len(), cols], rows.iter().flat_map(|r| r.iter().copied()).collect())
}

impl Probe {
    fn standardized(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn loss_on(&self, params: &ParamSet, data: &ProbeData) -> Result<f64> {
        if data.is_empty() {
            return Ok(f64::NAN);
        }
        let xs: Vec<Vec<f64>> = data.x.iter().map(|r| self.standardized(r)).collect();
        let mut tape = Tape::new();
        let vars = tape.constants(params);
        let x = tape.constant(stack(&xs.iter().collect::<Vec<_>>())?);
        let y = tape.constant(stack(&data.y.iter().collect::<Vec<_>>())?);
        let logits = mlp(&mut tape, &vars, &self.config, x)?;
        let loss = match self.objective {
            Objective::Multiclass => tape.cross_entropy(logits, y)?,
            Objective::Multilabel => tape.binary_cross_entropy(logits, y)?,
        };
        Ok(tape.value(loss).item())
    }

    /// Class probabilities (softmax or per-class sigmoid) per row.
    pub fn scores(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if x.is_empty() {
            return Ok(vec![]);
        }
        let xs: Vec<Vec<f64>> = x.iter().map(|r| self.standardized(r)).collect();
        let mut tape = Tape::new();
        let vars = tape.constants(&self.params);
        let inp = tape.constant(stack(&xs.iter().collect::<Vec<_>>())?);
        let logits = mlp(&mut tape, &vars, &self.config, inp)?;
        let out = match self.objective {
            Objective::Multiclass => tape.softmax(logits)?,
            Objective::Multilabel => logits,
        };
        let t = tape.value(out);
        Ok((0..t.rows())
            .map(|r| match self.objective {
                Objective::Multiclass => t.row(r).to_vec(),
                Objective::Multilabel => t.row(r).iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect(),
            })
            .collect())
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<usize>> {
        Ok(self.scores(x)?.iter().map(|s| crate::encoder::argmax(s)).collect())
    }
}

/// Trains an MLP on frozen features; returns the parameters with the lowest
/// validation loss (training loss when `valid` is empty).
pub fn train_probe(train: &ProbeData, valid: &ProbeData, objective: Objective, config: &ProbeConfig) -> Result<Probe> {
    let (dim, classes) = check_data(train, "train")?;
    check_data(valid, "valid")?;
    if train.is_empty() {
        return Err(Error::Labels("empty training split".into()));
    }
    if valid.x.first().is_some_and(|r| r.len() != dim) || valid.y.first().is_some_and(|r| r.len() != classes) {
        return Err(Error::shape("probe", "train and valid widths differ"));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("probe batch size must be at least 1".into()));
    }
    let distinct: BTreeSet<Vec<u64>> = train.y.iter().map(|r| r.iter().map(|v| v.to_bits()).collect()).collect();
    if distinct.len() < 2 {
        return Err(Error::Labels("training split has a single label configuration".into()));
    }

    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    let mut scale = vec![1.0; dim];
    if config.standardize {
        for r in &train.x {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        for (j, s) in scale.iter_mut().enumerate() {
            let var = train.x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
            *s = if var > 1e-12 { var.sqrt() } else { 1.0 };
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    let mut widths = vec![dim];
    widths.extend(&config.hidden);
    widths.push(classes);
    for i in 0..widths.len() - 1 {
        let std = (2.0 / widths[i] as f64).sqrt();
        params.insert(format!("fc{i}.weight"), Tensor::randn(&[widths[i], widths[i + 1]], std, &mut rng));
        params.insert(format!("fc{i}.bias"), Tensor::zeros(&[widths[i + 1]]));
    }
    let mut probe = Probe {
        config: config.clone(),
        objective,
        params: params.clone(),
        mean,
        scale,
        best_epoch: 0,
        valid_losses: Vec::new(),
    };
    let xs: Vec<Vec<f64>> = train.x.iter().map(|r| probe.standardized(r)).collect();
    let mut optimizer = AdamW::new(AdamWConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamWConfig::default()
    });
    let monitor = if valid.is_empty() { train } else { valid };
    let mut best = f64::INFINITY;
    let mut best_params = params.clone();
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let mut tape = Tape::new();
            let vars = tape.params(&params);
            let x = tape.constant(stack(&chunk.iter().map(|&i| &xs[i]).collect::<Vec<_>>())?);
            let y = tape.constant(stack(&chunk.iter().map(|&i| &train.y[i]).collect::<Vec<_>>())?);
            let logits = mlp(&mut tape, &vars, config, x)?;
            let loss = match objective {
                Objective::Multiclass => tape.cross_entropy(logits, y)?,
                Objective::Multilabel => tape.binary_cross_entropy(logits, y)?,
            };
            let grads = tape.backward(loss)?.for_params(&vars);
            optimizer.step(&mut params, &grads)?;
        }
        let v = probe.loss_on(&params, monitor)?;
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "probe_validation",
                stats: format!("epoch {epoch} loss {v}"),
            });
        }
        probe.valid_losses.push(v);
        if v < best {
            best = v;
            best_params = params.clone();
            probe.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    probe.params = best_params;
    Ok(probe)
}

/// Hex SHA-256 of a file's bytes.
pub fn file_checksum(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Where a clip's embedding file lives inside an embedding directory.
pub fn embedding_path(dir: &Path, clip: &str) -> PathBuf {
    let stem = Path::new(clip).file_stem().map_or_else(|| clip.to_string(), |s| s.to_string_lossy().into_owned());
    dir.join(format!("{stem}.emb"))
}

/// Runs `extract` on every clip of the task and writes `<out>/<stem>.emb`.
pub fn extract_task<F>(root: &Path, manifest: &TaskManifest, out: &Path, mut extract: F) -> Result<Vec<PathBuf>>
where
    F: FnMut(&crate::dsp::Waveform) -> Result<EmbeddingMatrix>,
{
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let s = &manifest.splits;
    s.train
        .iter()
        .chain(&s.valid)
        .chain(&s.test)
        .map(|f| {
            let wave = crate::dsp::load_wav(root.join("audio").join(f))?;
            let path = embedding_path(out, f);
            crate::embed::save_embeddings(&extract(&wave)?, &path)?;
            Ok(path)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub category: Category,
    pub metric: Metric,
    pub test_score: f64,
    pub valid_score: f64,
    pub best_epoch: usize,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    /// SHA-256 of every embedding file read, taken before and after training.
    pub checksums_before: BTreeMap<String, String>,
    pub checksums_after: BTreeMap<String, String>,
}

impl ProbeResult {
    pub fn raw_score(&self) -> RawScore {
        RawScore {
            task: self.task.clone(),
            category: self.category,
            metric: Some(self.metric),
            raw: self.test_score,
        }
    }
}

fn objective_of(t: TaskType) -> Objective {
    match t {
        TaskType::SceneMulticlass => Objective::Multiclass,
        _ => Objective::Multilabel,
    }
}

fn split_data(
    manifest: &TaskManifest,
    labels: &LabelMap,
    files: &[String],
    embeddings: &BTreeMap<String, EmbeddingMatrix>,
) -> Result<ProbeData> {
    let mut data = ProbeData::default();
    for f in files {
        let m = embeddings
            .get(f)
            .ok_or_else(|| Error::Labels(format!("no embedding for {f}")))?;
        let targets = match manifest.task_type {
            TaskType::TimestampEvent => {
                let times = m
                    .timestamps
                    .as_ref()
                    .ok_or_else(|| Error::Format(format!("{f}: event tasks need timestamp embeddings")))?;
                manifest.frame_targets(&labels[f], times)
            }
            _ => {
                if m.n() != 1 {
                    return Err(Error::Format(format!("{f}: scene tasks need one embedding row, got {}", m.n())));
                }
                vec![manifest.scene_target(&labels[f])]
            }
        };
        data.push_matrix(m, targets)?;
    }
    Ok(data)
}

/// Score of `probe` on `files` under the manifest's metric.
pub fn score_split(
    probe: &Probe,
    manifest: &TaskManifest,
    labels: &LabelMap,
    files: &[String],
    embeddings: &BTreeMap<String, EmbeddingMatrix>,
) -> Result<f64> {
    let data = split_data(manifest, labels, files, embeddings)?;
    if data.is_empty() {
        return Ok(f64::NAN);
    }
    match manifest.metric {
        Metric::Accuracy => {
            let truth: Vec<usize> = data.y.iter().map(|r| crate::encoder::argmax(r)).collect();
            accuracy(&probe.predict(&data.x)?, &truth)
        }
        Metric::MeanAveragePrecision => {
            let targets: Vec<Vec<bool>> = data.y.iter().map(|r| r.iter().map(|&v| v > 0.5).collect()).collect();
            mean_average_precision(&probe.scores(&data.x)?, &targets)
        }
        Metric::OnsetF1 => {
            let (mut matches, mut n_pred, mut n_ref) = (0, 0, 0);
            for f in files {
                let m = &embeddings[f];
                let times = m.timestamps.as_ref().expect("checked in split_data");
                let x: Vec<Vec<f64>> = m.rows().map(|r| r.iter().map(|&v| v as f64).collect()).collect();
                let scores = probe.scores(&x)?;
                let events: &[Event] = match &labels[f] {
                    ClipLabels::Events(e) => e,
                    ClipLabels::Tags(_) => &[],
                };
                for (k, name) in manifest.labels.iter().enumerate() {
                    let track: Vec<f64> = scores.iter().map(|s| s[k]).collect();
                    let pred: Vec<f64> = decode_events(&track, times, &probe.config.decode).iter().map(|e| e.0).collect();
                    let refs: Vec<f64> = events.iter().filter(|e| &e.label == name).map(|e| e.onset_ms).collect();
                    matches += match_onsets(&pred, &refs, probe.config.decode.tol_ms);
                    n_pred += pred.len();
                    n_ref += refs.len();
                }
            }
            Ok(f1_from_counts(matches, n_pred, n_ref))
        }
    }
}

/// Trains and scores a probe from per-clip embedding files under `emb_dir`.
pub fn run_task(manifest: &TaskManifest, labels: &LabelMap, emb_dir: &Path, config: &ProbeConfig) -> Result<ProbeResult> {
    manifest.validate(labels)?;
    let s = &manifest.splits;
    let all: Vec<&String> = s.train.iter().chain(&s.valid).chain(&s.test).collect();
    let mut before = BTreeMap::new();
    let mut embeddings = BTreeMap::new();
    for f in &all {
        let path = embedding_path(emb_dir, f);
        before.insert((*f).clone(), file_checksum(&path)?);
        embeddings.insert((*f).clone(), load_embeddings(&path)?);
    }
    let train = split_data(manifest, labels, &s.train, &embeddings)?;
    let valid = split_data(manifest, labels, &s.valid, &embeddings)?;
    let probe = train_probe(&train, &valid, objective_of(manifest.task_type), config)?;
    let valid_score = score_split(&probe, manifest, labels, &s.valid, &embeddings)?;
    let test_score = score_split(&probe, manifest, labels, &s.test, &embeddings)?;
    let mut after = BTreeMap::new();
    for f in &all {
        after.insert((*f).clone(), file_checksum(&embedding_path(emb_dir, f))?);
    }
    Ok(ProbeResult {
        task: manifest.task.clone(),
        category: manifest.category,
        metric: manifest.metric,
        test_score,
        valid_score,
        best_epoch: probe.best_epoch,
        n_train: s.train.len(),
        n_valid: s.valid.len(),
        n_test: s.test.len(),
        checksums_before: before,
        checksums_after: after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable(n: usize, seed: u64) -> ProbeData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Tensor::randn(&[n, 4], 0.3, &mut rng);
        let mut d = ProbeData::default();
        for i in 0..n {
            let c = i % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            let mut row: Vec<f64> = noise.row(i).to_vec();
            row[0] += 2.0 * sign;
            d.x.push(row);
            d.y.push(if c == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        }
        d
    }

    fn small() -> ProbeConfig {
        ProbeConfig {
            hidden: vec![32],
            epochs: 50,
            lr: 1e-2,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn separable_classes() {
        let (train, valid) = (separable(80, 1), separable(40, 2));
        let p = train_probe(&train, &valid, Objective::Multiclass, &small()).unwrap();
        let truth: Vec<usize> = valid.y.iter().map(|r| crate::encoder::argmax(r)).collect();
        assert_eq!(accuracy(&p.predict(&valid.x).unwrap(), &truth).unwrap(), 1.0);
    }

    #[test]
    fn identical_inputs_predict_the_majority() {
        let mut train = ProbeData::default();
        for i in 0..30 {
            train.x.push(vec![0.5, 0.5]);
            train.y.push(if i % 3 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] });
        }
        let p = train_probe(&train, &train.clone(), Objective::Multiclass, &small()).unwrap();
        let pred = p.predict(&train.x).unwrap();
        let truth: Vec<usize> = train.y.iter().map(|r| crate::encoder::argmax(r)).collect();
        assert!((accuracy(&pred, &truth).unwrap() - 20.0 / 30.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_labels() {
        let d = ProbeData {
            x: vec![vec![1.0], vec![2.0]],
            y: vec![vec![1.0, 0.0], vec![1.0, 0.0]],
        };
        assert!(matches!(
            train_probe(&d, &ProbeData::default(), Objective::Multiclass, &small()),
            Err(Error::Labels(_))
        ));
    }

    #[test]
    fn deterministic() {
        let (train, valid) = (separable(40, 3), separable(20, 4));
        let a = train_probe(&train, &valid, Objective::Multiclass, &small()).unwrap();
        let b = train_probe(&train, &valid, Objective::Multiclass, &small()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn manifest_checks() {
        let m = TaskManifest {
            task: "t".into(),
            task_type: TaskType::SceneMulticlass,
            category: Category::Music,
            metric: Metric::Accuracy,
            labels: vec!["a".into(), "b".into()],
            splits: Splits {
                train: vec!["x.wav".into()],
                valid: vec!["y.wav".into()],
                test: vec!["x.wav".into()],
            },
            sample_rate: 32000,
            clip_s: 1.0,
        };
        let mut labels = LabelMap::new();
        labels.insert("x.wav".into(), ClipLabels::Tags(vec!["a".into()]));
        labels.insert("y.wav".into(), ClipLabels::Tags(vec!["c".into()]));
        assert!(matches!(m.validate(&labels), Err(Error::Labels(e)) if e.contains("more than one")));
        let mut m2 = m.clone();
        m2.splits.test.clear();
        assert!(matches!(m2.validate(&labels), Err(Error::Labels(e)) if e.contains("vocabulary")));
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("scene-multiclass") && json.contains("\"accuracy\""));
    }
}
