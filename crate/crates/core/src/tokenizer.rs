//! Mosaic to token sequence.
//!
//! Every patch is area-downsampled to `s_rep x s_rep`, flattened, and sent
//! through one shared linear layer. A 2D sinusoidal embedding of the patch
//! centre, measured in `s_min` grid cells, is added to the result.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{area_downsample_raw, Image, CHANNELS};
use crate::quadtree::{PatchMosaic, PatchRect};
use crate::tensor::{Tensor, TensorBundle};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub s_rep: usize,
    pub d_model: usize,
    pub s_min: usize,
    pub pos_temperature: f64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            s_rep: 16,
            d_model: 64,
            s_min: 16,
            pos_temperature: 10_000.0,
        }
    }
}

impl TokenizerConfig {
    pub fn rep_len(&self) -> usize {
        CHANNELS * self.s_rep * self.s_rep
    }

    pub fn validate(&self) -> Result<()> {
        if self.s_rep == 0 || self.s_min == 0 {
            return Err(Error::Config("s_rep and s_min must be positive".into()));
        }
        if self.d_model == 0 || self.d_model % 4 != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of 4",
                self.d_model
            )));
        }
        if !(self.pos_temperature.is_finite() && self.pos_temperature > 0.0) {
            return Err(Error::Config("position temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub rep: Vec<f32>,
    pub patch: PatchRect,
    /// Patch centre in `s_min` cells.
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub config: TokenizerConfig,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// `rows x d_model` embedded tokens, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl TokenMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "token matrix {rows}x{cols} with {} values",
                data.len()
            )));
        }
        Ok(TokenMatrix { rows, cols, data })
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.rows, self.cols], self.data.clone()).expect("shape")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.dims() {
            [rows, cols] => TokenMatrix::new(rows, cols, t.data().to_vec()),
            ref d => Err(Error::Dimension(format!("token tensor must be rank 2, found {d:?}"))),
        }
    }

    /// Rows reordered so that row `i` of the result is row `order[i]` here.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.rows {
            return Err(Error::Dimension("permutation length mismatch".into()));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            if i >= self.rows {
                return Err(Error::Dimension(format!("row {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        TokenMatrix::new(self.rows, self.cols, data)
    }
}

/// Shared linear patch projection: `weight` is `d_model x rep_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedder {
    pub d_model: usize,
    pub input_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl PatchEmbedder {
    pub fn new(d_model: usize, input_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != d_model * input_dim || bias.len() != d_model {
            return Err(Error::Dimension(format!(
                "embedder weight {} / bias {} do not match {d_model}x{input_dim}",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("embedder weights"));
        }
        Ok(PatchEmbedder {
            d_model,
            input_dim,
            weight,
            bias,
        })
    }

    pub fn zeros(cfg: &TokenizerConfig) -> Self {
        let n = cfg.rep_len();
        PatchEmbedder::new(cfg.d_model, n, vec![0.0; cfg.d_model * n], vec![0.0; cfg.d_model])
            .expect("shape")
    }

    /// Uniform `±1/sqrt(input_dim)` weights from a ChaCha8 stream.
    pub fn init(cfg: &TokenizerConfig, seed: u64) -> Self {
        let n = cfg.rep_len();
        let bound = 1.0 / (n as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = (0..cfg.d_model * n).map(|_| rng.gen_range(-bound..bound)).collect();
        let bias = (0..cfg.d_model).map(|_| rng.gen_range(-bound..bound)).collect();
        PatchEmbedder::new(cfg.d_model, n, weight, bias).expect("shape")
    }

    fn check(&self, cfg: &TokenizerConfig) -> Result<()> {
        if self.d_model != cfg.d_model || self.input_dim != cfg.rep_len() {
            return Err(Error::Dimension(format!(
                "embedder is {}x{}, config needs {}x{}",
                self.d_model,
                self.input_dim,
                cfg.d_model,
                cfg.rep_len()
            )));
        }
        Ok(())
    }

    pub fn to_bundle(&self) -> TensorBundle {
        let mut b = TensorBundle::new(
            "patch-embedder",
            serde_json::json!({"d_model": self.d_model, "input_dim": self.input_dim}),
        );
        b.push(
            "weight",
            "patch_embed.weight",
            Tensor::new(vec![self.d_model, self.input_dim], self.weight.clone()).expect("shape"),
        );
        b.push(
            "bias",
            "patch_embed.bias",
            Tensor::new(vec![self.d_model], self.bias.clone()).expect("shape"),
        );
        b
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self> {
        let w = b.get("weight")?;
        let [d, n] = *w.dims() else {
            return Err(Error::Dimension("embedder weight must be rank 2".into()));
        };
        let bias = b.get_shaped("bias", &[d])?;
        PatchEmbedder::new(d, n, w.data().to_vec(), bias.data().to_vec())
    }
}

/// Area-downsampled, flattened patch pixels.
pub fn patch_to_representation(img: &Image, patch: &PatchRect, s_rep: usize) -> Result<Vec<f32>> {
    if s_rep == 0 || patch.size % s_rep != 0 {
        return Err(Error::Dimension(format!(
            "patch size {} is not a multiple of s_rep {s_rep}",
            patch.size
        )));
    }
    let crop = img.crop(patch.x, patch.y, patch.size, patch.size)?;
    if patch.size == s_rep {
        return Ok(crop.into_data());
    }
    area_downsample_raw(crop.data(), patch.size, patch.size, CHANNELS, patch.size / s_rep)
}

pub fn patch_center(patch: &PatchRect, s_min: usize) -> (f64, f64) {
    let half = patch.size as f64 / 2.0;
    let unit = s_min as f64;
    ((patch.x as f64 + half) / unit, (patch.y as f64 + half) / unit)
}

/// `[sin(cx w_0), cos(cx w_0), ..., | sin(cy w_0), cos(cy w_0), ...]` with
/// `w_i = temperature^(-4i / d_model)`.
pub fn position_embedding_2d(cx: f64, cy: f64, d_model: usize, temperature: f64) -> Result<Vec<f64>> {
    if d_model == 0 || d_model % 4 != 0 {
        return Err(Error::Config(format!("d_model {d_model} must be a positive multiple of 4")));
    }
    let quarter = d_model / 4;
    let mut out = Vec::with_capacity(d_model);
    for coord in [cx, cy] {
        for i in 0..quarter {
            let omega = temperature.powf(-4.0 * i as f64 / d_model as f64);
            let (s, c) = (coord * omega).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
    Ok(out)
}

pub fn build_sequence(img: &Image, mosaic: &PatchMosaic, cfg: &TokenizerConfig) -> Result<TokenSequence> {
    cfg.validate()?;
    if (img.height(), img.width()) != (mosaic.height(), mosaic.width()) {
        return Err(Error::Dimension(format!(
            "mosaic is {}x{} but image is {}x{}",
            mosaic.height(),
            mosaic.width(),
            img.height(),
            img.width()
        )));
    }
    let tokens = mosaic
        .patches()
        .iter()
        .map(|p| {
            let (cx, cy) = patch_center(p, cfg.s_min);
            Ok(Token {
                rep: patch_to_representation(img, p, cfg.s_rep)?,
                patch: *p,
                cx,
                cy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TokenSequence {
        tokens,
        config: *cfg,
    })
}

/// `W rep + b + pos(cx, cy)` for every token, accumulated in `f64`.
pub fn embed_sequence(seq: &TokenSequence, embedder: &PatchEmbedder) -> Result<TokenMatrix> {
    let cfg = &seq.config;
    embedder.check(cfg)?;
    let (d, n) = (embedder.d_model, embedder.input_dim);
    let mut data = Vec::with_capacity(seq.len() * d);
    for t in &seq.tokens {
        if t.rep.len() != n {
            return Err(Error::Dimension(format!(
                "token representation has {} values, expected {n}",
                t.rep.len()
            )));
        }
        let pos = position_embedding_2d(t.cx, t.cy, d, cfg.pos_temperature)?;
        let rows = embedder.weight.chunks_exact(n);
        for ((row, &b), p) in rows.zip(&embedder.bias).zip(&pos) {
            let dot: f64 = row.iter().zip(&t.rep).map(|(&w, &r)| w as f64 * r as f64).sum();
            data.push((dot + b as f64 + p) as f32);
        }
    }
    TokenMatrix::new(seq.len(), d, data)
}

pub fn tokenize(
    img: &Image,
    mosaic: &PatchMosaic,
    embedder: &PatchEmbedder,
    cfg: &TokenizerConfig,
) -> Result<(TokenMatrix, TokenSequence)> {
    let seq = build_sequence(img, mosaic, cfg)?;
    let matrix = embed_sequence(&seq, embedder)?;
    Ok((matrix, seq))
}

pub fn tokenize_batch(
    imgs: &[Image],
    mosaics: &[PatchMosaic],
    embedder: &PatchEmbedder,
    cfg: &TokenizerConfig,
) -> Result<Vec<(TokenMatrix, TokenSequence)>> {
    if imgs.len() != mosaics.len() {
        return Err(Error::Dimension(format!(
            "{} images but {} mosaics",
            imgs.len(),
            mosaics.len()
        )));
    }
    imgs.par_iter()
        .zip(mosaics.par_iter())
        .map(|(img, m)| tokenize(img, m, embedder, cfg))
        .collect()
}

/// Rescales centres from an inference grid into the training grid range.
pub fn scale_positions(
    seq: &TokenSequence,
    train_grid: (usize, usize),
    infer_grid: (usize, usize),
) -> Result<TokenSequence> {
    if train_grid.0 == 0 || train_grid.1 == 0 || infer_grid.0 == 0 || infer_grid.1 == 0 {
        return Err(Error::Config("position grids must be positive".into()));
    }
    let sx = train_grid.0 as f64 / infer_grid.0 as f64;
    let sy = train_grid.1 as f64 / infer_grid.1 as f64;
    let mut out = seq.clone();
    for t in &mut out.tokens {
        t.cx *= sx;
        t.cy *= sy;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenMeta {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub cx: f64,
    pub cy: f64,
}

/// Per-token metadata written next to the token tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSidecar {
    pub height: usize,
    pub width: usize,
    pub s_min: usize,
    pub s_rep: usize,
    pub d_model: usize,
    pub tokens: Vec<TokenMeta>,
}

impl TokenSidecar {
    pub fn from_sequence(seq: &TokenSequence, height: usize, width: usize) -> Self {
        TokenSidecar {
            height,
            width,
            s_min: seq.config.s_min,
            s_rep: seq.config.s_rep,
            d_model: seq.config.d_model,
            tokens: seq
                .tokens
                .iter()
                .map(|t| TokenMeta {
                    x: t.patch.x,
                    y: t.patch.y,
                    size: t.patch.size,
                    cx: t.cx,
                    cy: t.cy,
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
