//! Pre-norm transformer over the token sequence, the C/D pooling head,
//! training, attention-cost accounting and checkpoint files.

mod augment;
mod checkpoint;
mod cost;
mod train;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{HopPreset, MelConfig, MelSpectrogram};
use crate::error::{Error, Result};
use crate::patch::{self, patch_grid, PatchGeometry, PatchGrid, TokenSequence, N_SPECIAL};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

pub use augment::{mixup, normalize_mel, spec_augment, AugmentConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub(crate) use checkpoint::split_container;
pub use cost::{attention_cost, CostReport};
pub use train::{
    argmax, batch_loss, prepare_batch, train, train_step, Example, Objective, PreparedBatch, PreparedExample, TrainConfig,
    TrainReport,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub mlp_ratio: usize,
    pub n_classes: usize,
    #[serde(default)]
    pub dropout: f64,
    /// Linear layers in the classifier head (GELU between them).
    #[serde(default = "one")]
    pub head_layers: usize,
}

fn one() -> usize {
    1
}

impl EncoderConfig {
    /// Desk-scale model used for training runs and the throughput bench.
    pub fn toy(n_classes: usize) -> Self {
        EncoderConfig {
            d: 64,
            n_layers: 4,
            n_heads: 4,
            mlp_ratio: 4,
            n_classes,
            dropout: 0.0,
            head_layers: 1,
        }
    }

    /// DeiT-B width and depth with the 527-class tagging head.
    pub fn base() -> Self {
        EncoderConfig {
            d: 768,
            n_layers: 12,
            n_heads: 12,
            mlp_ratio: 4,
            n_classes: 527,
            dropout: 0.0,
            head_layers: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_heads == 0 || self.d % self.n_heads != 0 {
            return Err(Error::Config(format!("d={} is not divisible by n_heads={}", self.d, self.n_heads)));
        }
        if self.n_classes == 0 {
            return Err(Error::Config("n_classes must be at least 1".into()));
        }
        if self.mlp_ratio == 0 || self.head_layers == 0 {
            return Err(Error::Config("mlp_ratio and head_layers must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Everything needed to rebuild a model from its tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub geometry: PatchGeometry,
    pub mel: MelConfig,
    /// Longest clip the time table covers, in seconds.
    pub max_clip_s: f64,
}

impl ModelConfig {
    pub fn new(encoder: EncoderConfig, preset: HopPreset) -> Self {
        ModelConfig {
            encoder,
            geometry: PatchGeometry::default(),
            mel: preset.config(),
            max_clip_s: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.geometry.validate()?;
        self.mel.validate()?;
        if !(self.max_clip_s > 0.0) {
            return Err(Error::Config("max_clip_s must be positive".into()));
        }
        self.grid_t_max()?;
        Ok(())
    }

    pub fn max_clip_samples(&self) -> usize {
        (self.max_clip_s * self.mel.sample_rate as f64).round() as usize
    }

    pub fn grid_f(&self) -> Result<usize> {
        self.geometry.grid_f(self.mel.n_mels)
    }

    pub fn grid_t_max(&self) -> Result<usize> {
        self.geometry.grid_t(self.mel.frames_for(self.max_clip_samples()))
    }

    /// Canonical name → shape of every learnable tensor.
    pub fn param_shapes(&self) -> Result<BTreeMap<String, Vec<usize>>> {
        let e = &self.encoder;
        let d = e.d;
        let h = e.mlp_ratio * d;
        let mut shapes: BTreeMap<String, Vec<usize>> = patch::param_shapes(&self.geometry, self.grid_f()?, self.grid_t_max()?, d)
            .into_iter()
            .map(|(n, s)| (n.to_string(), s))
            .collect();
        for l in 0..e.n_layers {
            let p = |s: &str| format!("blocks.{l:02}.{s}");
            for ln in ["ln1", "ln2"] {
                shapes.insert(p(&format!("{ln}.gamma")), vec![d]);
                shapes.insert(p(&format!("{ln}.beta")), vec![d]);
            }
            for proj in ["q", "k", "v", "o"] {
                shapes.insert(p(&format!("attn.{proj}.weight")), vec![d, d]);
                shapes.insert(p(&format!("attn.{proj}.bias")), vec![d]);
            }
            shapes.insert(p("mlp.fc1.weight"), vec![d, h]);
            shapes.insert(p("mlp.fc1.bias"), vec![h]);
            shapes.insert(p("mlp.fc2.weight"), vec![h, d]);
            shapes.insert(p("mlp.fc2.bias"), vec![d]);
        }
        shapes.insert("head.ln.gamma".into(), vec![d]);
        shapes.insert("head.ln.beta".into(), vec![d]);
        for i in 0..e.head_layers {
            let out = if i + 1 == e.head_layers { e.n_classes } else { d };
            shapes.insert(format!("head.fc{i}.weight"), vec![d, out]);
            shapes.insert(format!("head.fc{i}.bias"), vec![out]);
        }
        Ok(shapes)
    }
}

/// A model: configuration plus all named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// `[n, d]` final-layer states.
    pub token_states: Tensor,
    /// Mean of the final C and D states.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ModelCheckpoint {
    /// Fresh weights: linear maps `N(0, 1/fan_in)`, LayerNorm at identity, biases zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        patch::init_params(
            &mut params,
            &config.geometry,
            config.grid_f()?,
            config.grid_t_max()?,
            config.encoder.d,
            &mut rng,
        );
        for (name, shape) in config.param_shapes()? {
            if params.contains_key(&name) {
                continue;
            }
            let t = if name.ends_with(".gamma") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".weight") {
                // Fan-in scaling keeps narrow models out of the small-init plateau.
                Tensor::randn(&shape, (1.0 / shape[0] as f64).sqrt(), &mut rng)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(name, t);
        }
        Ok(ModelCheckpoint { config, params })
    }

    /// Every tensor present with its config-derived shape, and nothing else.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = self.config.param_shapes()?;
        for (name, shape) in &shapes {
            match self.params.get(name) {
                None => return Err(Error::Format(format!("missing tensor {name}"))),
                Some(t) if t.shape() != &shape[..] => {
                    return Err(Error::Format(format!(
                        "tensor {name} has shape {:?}, config implies {shape:?}",
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !shapes.contains_key(*k)) {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Ok(())
    }

    /// Rejects a model whose width differs from `d`, naming both shapes.
    pub fn require_width(&self, d: usize) -> Result<()> {
        let have = self.config.encoder.d;
        if have != d {
            let shape = self.params.get(patch::FREQ_TABLE).map(|t| t.shape().to_vec()).unwrap_or_default();
            let mut want = shape.clone();
            if let Some(last) = want.last_mut() {
                *last = d;
            }
            return Err(Error::shape(
                "checkpoint",
                format!("model has d={have} ({} {shape:?}) but d={d} ({want:?}) was expected", patch::FREQ_TABLE),
            ));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Patch grid of a mel spectrogram after input normalization.
    pub fn grid(&self, mel: &MelSpectrogram) -> Result<PatchGrid> {
        patch_grid(&normalize_mel(mel), &self.config.geometry)
    }

    pub fn tokenize(&self, mel: &MelSpectrogram) -> Result<TokenSequence> {
        let grid = self.grid(mel)?;
        patch::tokenize(
            &grid,
            &patch::PatchEmbedding::from_params(&self.params)?,
            &patch::PositionalTables::from_params(&self.params)?,
        )
    }

    /// Evaluation-mode forward of an already tokenized sequence.
    pub fn forward(&self, seq: &TokenSequence) -> Result<EncoderOutput> {
        self.forward_mode(seq, false, 0)
    }

    /// Forward with dropout active when `train` is set (seeded by `seed`).
    pub fn forward_mode(&self, seq: &TokenSequence, train: bool, seed: u64) -> Result<EncoderOutput> {
        let d = self.config.encoder.d;
        if seq.tokens.shape().len() != 2 || seq.tokens.cols() != d {
            return Err(Error::shape(
                "forward",
                format!("token dim {:?} vs model d={d}", seq.tokens.shape()),
            ));
        }
        let mut tape = Tape::new();
        let vars = tape.constants(&self.params);
        let x = tape.constant(seq.tokens.clone());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dropout = if train { Some(&mut rng) } else { None };
        let out = encode(&mut tape, &vars, &self.config.encoder, x, dropout)?;
        Ok(EncoderOutput {
            token_states: tape.value(out.states).clone(),
            pooled: tape.value(out.pooled).data().to_vec(),
            logits: tape.value(out.logits).data().to_vec(),
        })
    }

    /// Mel spectrogram straight to outputs, full sequence, evaluation mode.
    pub fn infer(&self, mel: &MelSpectrogram) -> Result<EncoderOutput> {
        self.forward(&self.tokenize(mel)?)
    }
}

/// Nodes produced by one recorded forward.
#[derive(Clone, Copy, Debug)]
pub struct EncodedVars {
    pub states: Var,
    /// `[1, d]`
    pub pooled: Var,
    /// `[1, n_classes]`
    pub logits: Var,
}

fn p(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
}

fn linear(tape: &mut Tape, vars: &BTreeMap<String, Var>, x: Var, prefix: &str) -> Result<Var> {
    let y = tape.matmul(x, p(vars, &format!("{prefix}.weight"))?)?;
    tape.add_row(y, p(vars, &format!("{prefix}.bias"))?)
}

fn dropout<R: Rng + ?Sized>(tape: &mut Tape, x: Var, rate: f64, rng: Option<&mut R>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let shape = tape.value(x).shape().to_vec();
    let keep = 1.0 / (1.0 - rate);
    let mask: Vec<f64> = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

/// Records the encoder on `tape` over input tokens `x` (`[n, d]`, C and D first).
/// Dropout is applied only when an RNG is supplied.
pub fn encode(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    cfg: &EncoderConfig,
    x: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<EncodedVars> {
    let n = tape.value(x).rows();
    if n < N_SPECIAL {
        return Err(Error::shape("forward", format!("{n} tokens, need C and D")));
    }
    let mut x = x;
    for l in 0..cfg.n_layers {
        let b = format!("blocks.{l:02}");
        let h = tape.layer_norm(x, p(vars, &format!("{b}.ln1.gamma"))?, p(vars, &format!("{b}.ln1.beta"))?)?;
        let q = linear(tape, vars, h, &format!("{b}.attn.q"))?;
        let k = linear(tape, vars, h, &format!("{b}.attn.k"))?;
        let v = linear(tape, vars, h, &format!("{b}.attn.v"))?;
        let a = tape.attention(q, k, v, cfg.n_heads)?;
        let o = linear(tape, vars, a, &format!("{b}.attn.o"))?;
        let o = dropout(tape, o, cfg.dropout, rng.as_deref_mut())?;
        x = tape.add(x, o)?;
        let h = tape.layer_norm(x, p(vars, &format!("{b}.ln2.gamma"))?, p(vars, &format!("{b}.ln2.beta"))?)?;
        let h = linear(tape, vars, h, &format!("{b}.mlp.fc1"))?;
        let h = tape.gelu(h)?;
        let h = linear(tape, vars, h, &format!("{b}.mlp.fc2"))?;
        let h = dropout(tape, h, cfg.dropout, rng.as_deref_mut())?;
        x = tape.add(x, h)?;
    }
    let special = tape.slice_rows(x, 0, N_SPECIAL)?;
    let pooled = tape.mean_axis(special, 0)?;
    let mut h = tape.layer_norm(pooled, p(vars, "head.ln.gamma")?, p(vars, "head.ln.beta")?)?;
    for i in 0..cfg.head_layers {
        if i > 0 {
            h = tape.gelu(h)?;
        }
        h = linear(tape, vars, h, &format!("head.fc{i}"))?;
    }
    Ok(EncodedVars {
        states: x,
        pooled,
        logits: h,
    })
}
