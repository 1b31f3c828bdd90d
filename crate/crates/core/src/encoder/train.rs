use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{mixup, normalize_mel, spec_augment, AugmentConfig};
use super::{encode, ModelCheckpoint, ModelConfig};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::patch::{patch_grid, tokenize_on_tape, PatchGrid};
use crate::patchout::{self, PatchoutMode, PatchoutSpec};
use crate::tensor::{AdamW, AdamWConfig, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// One-hot targets, softmax cross-entropy.
    #[default]
    Multiclass,
    /// Multi-hot targets, per-class logistic loss.
    Multilabel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub mel: MelSpectrogram,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub patchout: PatchoutSpec,
    pub augment: AugmentConfig,
    pub objective: Objective,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 1e-4,
                ..AdamWConfig::default()
            },
            patchout: PatchoutSpec::off(),
            augment: AugmentConfig::off(),
            objective: Objective::Multiclass,
            seed: 0,
        }
    }
}

/// One example after augmentation, patching and the Patchout draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub grid: PatchGrid,
    /// Sequence positions kept by Patchout; `None` keeps everything.
    pub keep: Option<Vec<usize>>,
    pub target: Vec<f64>,
}

/// Everything random about a step, fixed up front so the loss is a pure
/// function of the parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch {
    pub examples: Vec<PreparedExample>,
    pub objective: Objective,
    pub dropout_seed: u64,
}

fn check_target(target: &[f64], n_classes: usize, objective: Objective) -> Result<()> {
    if target.len() != n_classes {
        return Err(Error::Labels(format!("target has {} entries, model has {n_classes} classes", target.len())));
    }
    if target.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Labels("targets must be 0/1 indicator vectors".into()));
    }
    if objective == Objective::Multiclass && target.iter().filter(|&&v| v == 1.0).count() != 1 {
        return Err(Error::Labels("multiclass targets must be one-hot".into()));
    }
    Ok(())
}

pub fn prepare_batch<R: Rng + ?Sized>(
    config: &ModelConfig,
    batch: &[Example],
    patchout: &PatchoutSpec,
    augment: &AugmentConfig,
    objective: Objective,
    rng: &mut R,
) -> Result<PreparedBatch> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    for ex in batch {
        check_target(&ex.target, config.encoder.n_classes, objective)?;
    }
    let mut mels: Vec<MelSpectrogram> = batch.iter().map(|e| normalize_mel(&e.mel)).collect();
    let mut targets: Vec<Vec<f64>> = batch.iter().map(|e| e.target.clone()).collect();
    if augment.mixup_alpha > 0.0 {
        let mut perm: Vec<usize> = (0..batch.len()).collect();
        perm.shuffle(rng);
        let (src_m, src_t) = (mels.clone(), targets.clone());
        for (i, &j) in perm.iter().enumerate() {
            let lambda = augment.sample_lambda(rng)?;
            let (m, t) = mixup(&src_m[i], &src_t[i], &src_m[j], &src_t[j], lambda)?;
            mels[i] = m;
            targets[i] = t;
        }
    }
    let mut examples = Vec::with_capacity(batch.len());
    for (mut mel, target) in mels.into_iter().zip(targets) {
        spec_augment(&mut mel, augment, rng);
        let grid = patch_grid(&mel, &config.geometry)?;
        let keep = match patchout.mode {
            PatchoutMode::Off => None,
            _ => Some(patchout::draw(patchout, grid.grid_f, grid.grid_t, rng)?.tokens),
        };
        examples.push(PreparedExample { grid, keep, target });
    }
    Ok(PreparedBatch {
        examples,
        objective,
        dropout_seed: rng.random(),
    })
}

/// Mean loss over the batch recorded on `tape`.
pub fn batch_loss(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    config: &ModelConfig,
    batch: &PreparedBatch,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for (i, ex) in batch.examples.iter().enumerate() {
        let mut x = tokenize_on_tape(tape, &ex.grid, vars)?;
        if let Some(keep) = &ex.keep {
            x = tape.gather(x, keep)?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(batch.dropout_seed.wrapping_add(i as u64));
        let drop = (config.encoder.dropout > 0.0).then_some(&mut rng);
        let out = encode(tape, vars, &config.encoder, x, drop)?;
        let target = tape.constant(Tensor::new(vec![1, ex.target.len()], ex.target.clone())?);
        let loss = match batch.objective {
            Objective::Multiclass => tape.cross_entropy(out.logits, target)?,
            Objective::Multilabel => tape.binary_cross_entropy(out.logits, target)?,
        };
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    let total = total.ok_or_else(|| Error::Config("empty batch".into()))?;
    tape.scale(total, 1.0 / batch.examples.len() as f64)
}

/// One optimizer update on `batch`; returns the pre-update loss.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut ModelCheckpoint,
    optimizer: &mut AdamW,
    batch: &[Example],
    patchout: &PatchoutSpec,
    augment: &AugmentConfig,
    objective: Objective,
    rng: &mut R,
) -> Result<f64> {
    let prepared = prepare_batch(&model.config, batch, patchout, augment, objective, rng)?;
    let mut tape = Tape::new();
    let vars = tape.params(&model.params);
    let loss = batch_loss(&mut tape, &vars, &model.config, &prepared)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.for_params(&vars);
    drop(tape);
    optimizer.step(&mut model.params, &grads)?;
    Ok(value)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Mini-batch training over shuffled epochs.
pub fn train(model: &mut ModelCheckpoint, data: &[Example], config: &TrainConfig) -> Result<TrainReport> {
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ config.patchout.seed.rotate_left(32));
    let mut optimizer = AdamW::new(config.optimizer);
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<Example> = chunk.iter().map(|&i| data[i].clone()).collect();
            sum += train_step(
                model,
                &mut optimizer,
                &batch,
                &config.patchout,
                &config.augment,
                config.objective,
                &mut rng,
            )?;
            batches += 1;
        }
        report.epoch_losses.push(sum / batches as f64);
    }
    report.steps = optimizer.steps();
    Ok(report)
}

impl ModelCheckpoint {
    /// Index of the largest logit.
    pub fn predict(&self, mel: &MelSpectrogram) -> Result<usize> {
        let out = self.infer(mel)?;
        Ok(argmax(&out.logits))
    }

    /// Fraction of examples whose arg-max logit hits the target's hot class.
    pub fn accuracy(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Config("no examples".into()));
        }
        let mut hits = 0;
        for ex in data {
            if self.predict(&ex.mel)? == argmax(&ex.target) {
                hits += 1;
            }
        }
        Ok(hits as f64 / data.len() as f64)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a))).unwrap_or(0)
}
