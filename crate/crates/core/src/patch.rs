//! Mel spectrogram → transformer input: overlapping patches, linear
//! projection, split frequency/time positional tables and the C/D tokens.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{ParamSet, Tape, Tensor, Var};

pub const PROJ_WEIGHT: &str = "patch.proj.weight";
pub const PROJ_BIAS: &str = "patch.proj.bias";
pub const SPECIAL: &str = "patch.special";
pub const FREQ_TABLE: &str = "pos.freq";
pub const TIME_TABLE: &str = "pos.time";
pub const TOKEN_ENC: &str = "pos.token";

/// Number of special tokens (C and D) ahead of the patches.
pub const N_SPECIAL: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGeometry {
    pub patch_f: usize,
    pub patch_t: usize,
    pub stride_f: usize,
    pub stride_t: usize,
}

impl Default for PatchGeometry {
    fn default() -> Self {
        PatchGeometry {
            patch_f: 16,
            patch_t: 16,
            stride_f: 10,
            stride_t: 10,
        }
    }
}

impl PatchGeometry {
    /// Non-overlapping 16×16 patches.
    pub fn no_overlap() -> Self {
        PatchGeometry {
            stride_f: 16,
            stride_t: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_f == 0 || self.patch_t == 0 || self.stride_f == 0 || self.stride_t == 0 {
            return Err(Error::Config(format!("patch sizes and strides must be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.patch_f * self.patch_t
    }

    pub fn grid_f(&self, n_mels: usize) -> Result<usize> {
        if n_mels < self.patch_f {
            return Err(Error::Bounds(format!(
                "{n_mels} mel bands is fewer than one patch ({})",
                self.patch_f
            )));
        }
        Ok((n_mels - self.patch_f) / self.stride_f + 1)
    }

    pub fn grid_t(&self, n_frames: usize) -> Result<usize> {
        if n_frames < self.patch_t {
            return Err(Error::Bounds(format!(
                "{n_frames} frames is shorter than one patch ({})",
                self.patch_t
            )));
        }
        Ok((n_frames - self.patch_t) / self.stride_t + 1)
    }

    pub fn n_patches(&self, n_mels: usize, n_frames: usize) -> Result<usize> {
        Ok(self.grid_f(n_mels)? * self.grid_t(n_frames)?)
    }
}

/// All patches of one spectrogram, stored row-major by `(f, t)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub geometry: PatchGeometry,
    pub grid_f: usize,
    pub grid_t: usize,
    /// `[grid_f · grid_t, patch_f · patch_t]`; each row is the patch flattened
    /// band-major.
    pub patches: Tensor,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.grid_f * self.grid_t
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, f: usize, t: usize) -> usize {
        f * self.grid_t + t
    }

    pub fn patch(&self, f: usize, t: usize) -> &[f64] {
        self.patches.row(self.index(f, t))
    }

    /// Mel bands and frames covered by patch `(f, t)`.
    pub fn rect(&self, f: usize, t: usize) -> (Range<usize>, Range<usize>) {
        let g = &self.geometry;
        let (f0, t0) = (f * g.stride_f, t * g.stride_t);
        (f0..f0 + g.patch_f, t0..t0 + g.patch_t)
    }
}

pub fn patch_grid(mel: &MelSpectrogram, geometry: &PatchGeometry) -> Result<PatchGrid> {
    geometry.validate()?;
    let grid_f = geometry.grid_f(mel.n_mels)?;
    let grid_t = geometry.grid_t(mel.n_frames)?;
    let plen = geometry.patch_len();
    let mut data = Vec::with_capacity(grid_f * grid_t * plen);
    for f in 0..grid_f {
        for t in 0..grid_t {
            let (f0, t0) = (f * geometry.stride_f, t * geometry.stride_t);
            for m in f0..f0 + geometry.patch_f {
                data.extend_from_slice(&mel.band(m)[t0..t0 + geometry.patch_t]);
            }
        }
    }
    Ok(PatchGrid {
        geometry: *geometry,
        grid_f,
        grid_t,
        patches: Tensor::new(vec![grid_f * grid_t, plen], data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TokenCoord {
    C,
    D,
    Patch { f: usize, t: usize },
}

/// Position of patch `(f, t)` in a full token sequence.
pub fn token_index(grid_f: usize, f: usize, t: usize) -> usize {
    N_SPECIAL + t * grid_f + f
}

/// Coordinates of a full sequence: C, D, then patches time-major.
pub fn sequence_coords(grid_f: usize, grid_t: usize) -> Vec<TokenCoord> {
    let mut coords = vec![TokenCoord::C, TokenCoord::D];
    for t in 0..grid_t {
        for f in 0..grid_f {
            coords.push(TokenCoord::Patch { f, t });
        }
    }
    coords
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    pub tokens: Tensor,
    pub coords: Vec<TokenCoord>,
    pub geometry: PatchGeometry,
    pub grid_f: usize,
    pub grid_t: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn n_patches(&self) -> usize {
        self.len() - N_SPECIAL
    }

    /// Subsequence made of the rows at `keep`, in that order.
    pub fn select(&self, keep: &[usize]) -> Result<TokenSequence> {
        let d = self.tokens.cols();
        let mut data = Vec::with_capacity(keep.len() * d);
        let mut coords = Vec::with_capacity(keep.len());
        for &i in keep {
            if i >= self.len() {
                return Err(Error::Bounds(format!("token {i} of {}", self.len())));
            }
            data.extend_from_slice(self.tokens.row(i));
            coords.push(self.coords[i]);
        }
        Ok(TokenSequence {
            tokens: Tensor::new(vec![keep.len(), d], data)?,
            coords,
            geometry: self.geometry,
            grid_f: self.grid_f,
            grid_t: self.grid_t,
        })
    }
}

/// Learned patch projection and the C/D token values.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbedding {
    /// `[patch_len, d]`
    pub weight: Tensor,
    /// `[d]`
    pub bias: Tensor,
    /// `[2, d]`: C then D.
    pub special: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositionalTables {
    /// `[grid_f, d]`
    pub freq: Tensor,
    /// `[grid_t_max, d]`
    pub time: Tensor,
    /// `[2, d]`: encodings of C and D.
    pub token_enc: Tensor,
}

impl PositionalTables {
    pub fn grid_t_max(&self) -> usize {
        self.time.rows()
    }
}

/// Shapes of the tokenizer's parameters for model width `d`.
pub fn param_shapes(geometry: &PatchGeometry, grid_f: usize, grid_t_max: usize, d: usize) -> Vec<(&'static str, Vec<usize>)> {
    vec![
        (PROJ_WEIGHT, vec![geometry.patch_len(), d]),
        (PROJ_BIAS, vec![d]),
        (SPECIAL, vec![N_SPECIAL, d]),
        (FREQ_TABLE, vec![grid_f, d]),
        (TIME_TABLE, vec![grid_t_max, d]),
        (TOKEN_ENC, vec![N_SPECIAL, d]),
    ]
}

/// Projection uses fan-in scaling; tokens and tables are `N(0, 0.02²)`.
pub fn init_params<R: Rng + ?Sized>(
    params: &mut ParamSet,
    geometry: &PatchGeometry,
    grid_f: usize,
    grid_t_max: usize,
    d: usize,
    rng: &mut R,
) {
    for (name, shape) in param_shapes(geometry, grid_f, grid_t_max, d) {
        let t = match name {
            PROJ_WEIGHT => Tensor::randn(&shape, (1.0 / shape[0] as f64).sqrt(), rng),
            PROJ_BIAS => Tensor::zeros(&shape),
            _ => Tensor::randn(&shape, 0.02, rng),
        };
        params.insert(name.to_string(), t);
    }
}

impl PatchEmbedding {
    pub fn from_params(params: &ParamSet) -> Result<Self> {
        Ok(PatchEmbedding {
            weight: fetch(params, PROJ_WEIGHT)?,
            bias: fetch(params, PROJ_BIAS)?,
            special: fetch(params, SPECIAL)?,
        })
    }

    pub fn insert_into(&self, params: &mut ParamSet) {
        params.insert(PROJ_WEIGHT.into(), self.weight.clone());
        params.insert(PROJ_BIAS.into(), self.bias.clone());
        params.insert(SPECIAL.into(), self.special.clone());
    }
}

impl PositionalTables {
    pub fn from_params(params: &ParamSet) -> Result<Self> {
        Ok(PositionalTables {
            freq: fetch(params, FREQ_TABLE)?,
            time: fetch(params, TIME_TABLE)?,
            token_enc: fetch(params, TOKEN_ENC)?,
        })
    }

    pub fn insert_into(&self, params: &mut ParamSet) {
        params.insert(FREQ_TABLE.into(), self.freq.clone());
        params.insert(TIME_TABLE.into(), self.time.clone());
        params.insert(TOKEN_ENC.into(), self.token_enc.clone());
    }
}

fn fetch(params: &ParamSet, name: &str) -> Result<Tensor> {
    params
        .get(name)
        .cloned()
        .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
}

fn var(vars: &BTreeMap<String, Var>, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
}

/// Records tokenization on `tape` and returns the `[2 + grid_f·grid_t, d]`
/// sequence in [`sequence_coords`] order. `vars` must hold the tokenizer
/// parameters under their canonical names.
pub fn tokenize_on_tape(tape: &mut Tape, grid: &PatchGrid, vars: &BTreeMap<String, Var>) -> Result<Var> {
    let time = var(vars, TIME_TABLE)?;
    let freq = var(vars, FREQ_TABLE)?;
    let capacity = tape.value(time).rows();
    if grid.grid_t > capacity {
        return Err(Error::Bounds(format!(
            "{} patch columns exceed the time table capacity of {capacity}; window the clip first",
            grid.grid_t
        )));
    }
    if grid.grid_f != tape.value(freq).rows() {
        return Err(Error::shape(
            "tokenize",
            format!("{} patch rows vs frequency table {:?}", grid.grid_f, tape.value(freq).shape()),
        ));
    }
    let plen = grid.patches.cols();
    let mut ordered = Vec::with_capacity(grid.len() * plen);
    let mut f_idx = Vec::with_capacity(grid.len());
    let mut t_idx = Vec::with_capacity(grid.len());
    for t in 0..grid.grid_t {
        for f in 0..grid.grid_f {
            ordered.extend_from_slice(grid.patch(f, t));
            f_idx.push(f);
            t_idx.push(t);
        }
    }
    let patches = tape.constant(Tensor::new(vec![grid.len(), plen], ordered)?);
    let proj = tape.matmul(patches, var(vars, PROJ_WEIGHT)?)?;
    let proj = tape.add_row(proj, var(vars, PROJ_BIAS)?)?;
    let fpos = tape.gather(freq, &f_idx)?;
    let tpos = tape.gather(time, &t_idx)?;
    let x = tape.add(proj, fpos)?;
    let x = tape.add(x, tpos)?;
    let special = tape.add(var(vars, SPECIAL)?, var(vars, TOKEN_ENC)?)?;
    tape.concat_rows(&[special, x])
}

pub fn tokenize(grid: &PatchGrid, embedding: &PatchEmbedding, tables: &PositionalTables) -> Result<TokenSequence> {
    let mut params = ParamSet::new();
    embedding.insert_into(&mut params);
    tables.insert_into(&mut params);
    let mut tape = Tape::new();
    let vars = tape.constants(&params);
    let out = tokenize_on_tape(&mut tape, grid, &vars)?;
    Ok(TokenSequence {
        tokens: tape.value(out).clone(),
        coords: sequence_coords(grid.grid_f, grid.grid_t),
        geometry: grid.geometry,
        grid_f: grid.grid_f,
        grid_t: grid.grid_t,
    })
}
