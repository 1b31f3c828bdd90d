//! Training-time token dropping over the patch grid.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch::{token_index, TokenSequence, N_SPECIAL};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchoutMode {
    Structured,
    Unstructured,
    #[default]
    Off,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchoutSpec {
    pub mode: PatchoutMode,
    #[serde(default)]
    pub f_drop: usize,
    #[serde(default)]
    pub t_drop: usize,
    #[serde(default)]
    pub u_drop: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PatchoutSpec {
    pub fn off() -> Self {
        Self::default()
    }

    pub fn structured(f_drop: usize, t_drop: usize) -> Self {
        PatchoutSpec {
            mode: PatchoutMode::Structured,
            f_drop,
            t_drop,
            ..Self::default()
        }
    }

    pub fn unstructured(u_drop: usize) -> Self {
        PatchoutSpec {
            mode: PatchoutMode::Unstructured,
            u_drop,
            ..Self::default()
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        PatchoutSpec { seed, ..self }
    }

    pub fn validate(&self, grid_f: usize, grid_t: usize) -> Result<()> {
        match self.mode {
            PatchoutMode::Off => Ok(()),
            PatchoutMode::Structured if self.f_drop >= grid_f || self.t_drop >= grid_t => Err(Error::Bounds(format!(
                "structured patchout ({}, {}) on a {grid_f}x{grid_t} grid keeps nothing",
                self.f_drop, self.t_drop
            ))),
            PatchoutMode::Unstructured if self.u_drop >= grid_f * grid_t => Err(Error::Bounds(format!(
                "unstructured patchout of {} on {} patches keeps nothing",
                self.u_drop,
                grid_f * grid_t
            ))),
            _ => Ok(()),
        }
    }

    /// Patch tokens left after dropping from a `grid_f × grid_t` grid.
    pub fn kept_patches(&self, grid_f: usize, grid_t: usize) -> usize {
        match self.mode {
            PatchoutMode::Off => grid_f * grid_t,
            PatchoutMode::Structured => (grid_f - self.f_drop.min(grid_f)) * (grid_t - self.t_drop.min(grid_t)),
            PatchoutMode::Unstructured => grid_f * grid_t - self.u_drop.min(grid_f * grid_t),
        }
    }
}

/// What survived one Patchout draw.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Kept {
    /// Retained frequency rows, ascending (all rows unless structured).
    pub rows: Vec<usize>,
    /// Retained time columns, ascending (all columns unless structured).
    pub cols: Vec<usize>,
    /// Retained positions in the full sequence, ascending; always starts with C and D.
    pub tokens: Vec<usize>,
}

/// `k` distinct values from `0..n`, drawn by a partial Fisher–Yates shuffle, sorted.
pub fn choose_dropped<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let (picked, _) = pool.partial_shuffle(rng, k);
    let mut picked = picked.to_vec();
    picked.sort_unstable();
    picked
}

fn complement(n: usize, dropped: &[usize]) -> Vec<usize> {
    let mut mask = vec![true; n];
    for &i in dropped {
        mask[i] = false;
    }
    (0..n).filter(|&i| mask[i]).collect()
}

/// Draws the kept set for one sequence of a `grid_f × grid_t` grid.
pub fn draw<R: Rng + ?Sized>(spec: &PatchoutSpec, grid_f: usize, grid_t: usize, rng: &mut R) -> Result<Kept> {
    spec.validate(grid_f, grid_t)?;
    let all_rows: Vec<usize> = (0..grid_f).collect();
    let all_cols: Vec<usize> = (0..grid_t).collect();
    let mut tokens: Vec<usize> = (0..N_SPECIAL).collect();
    match spec.mode {
        PatchoutMode::Off => {
            tokens.extend(N_SPECIAL..N_SPECIAL + grid_f * grid_t);
            Ok(Kept {
                rows: all_rows,
                cols: all_cols,
                tokens,
            })
        }
        PatchoutMode::Structured => {
            let rows = complement(grid_f, &choose_dropped(rng, grid_f, spec.f_drop));
            let cols = complement(grid_t, &choose_dropped(rng, grid_t, spec.t_drop));
            for &t in &cols {
                tokens.extend(rows.iter().map(|&f| token_index(grid_f, f, t)));
            }
            Ok(Kept { rows, cols, tokens })
        }
        PatchoutMode::Unstructured => {
            let n = grid_f * grid_t;
            let kept = complement(n, &choose_dropped(rng, n, spec.u_drop));
            tokens.extend(kept.iter().map(|&i| N_SPECIAL + i));
            Ok(Kept {
                rows: all_rows,
                cols: all_cols,
                tokens,
            })
        }
    }
}

fn require_full(seq: &TokenSequence) -> Result<()> {
    if seq.len() != N_SPECIAL + seq.grid_f * seq.grid_t {
        return Err(Error::Bounds(format!(
            "patchout needs a full {}x{} sequence, got {} tokens",
            seq.grid_f,
            seq.grid_t,
            seq.len()
        )));
    }
    Ok(())
}

pub fn structured_patchout<R: Rng + ?Sized>(
    seq: &TokenSequence,
    spec: &PatchoutSpec,
    rng: &mut R,
) -> Result<(TokenSequence, Kept)> {
    if spec.mode != PatchoutMode::Structured {
        return Err(Error::Config(format!("expected structured mode, got {:?}", spec.mode)));
    }
    require_full(seq)?;
    let kept = draw(spec, seq.grid_f, seq.grid_t, rng)?;
    Ok((seq.select(&kept.tokens)?, kept))
}

pub fn unstructured_patchout<R: Rng + ?Sized>(
    seq: &TokenSequence,
    spec: &PatchoutSpec,
    rng: &mut R,
) -> Result<TokenSequence> {
    if spec.mode != PatchoutMode::Unstructured {
        return Err(Error::Config(format!("expected unstructured mode, got {:?}", spec.mode)));
    }
    require_full(seq)?;
    let kept = draw(spec, seq.grid_f, seq.grid_t, rng)?;
    seq.select(&kept.tokens)
}

/// Applies `spec` in training mode; evaluation and `Off` return the input untouched.
pub fn apply<R: Rng + ?Sized>(seq: &TokenSequence, spec: &PatchoutSpec, train: bool, rng: &mut R) -> Result<TokenSequence> {
    if !train || spec.mode == PatchoutMode::Off {
        return Ok(seq.clone());
    }
    require_full(seq)?;
    let kept = draw(spec, seq.grid_f, seq.grid_t, rng)?;
    seq.select(&kept.tokens)
}
