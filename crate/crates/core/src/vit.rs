//! A small pre-LN Transformer encoder with a CLS readout.
//!
//! Forward-only. Tokens arrive already embedded (patch projection plus
//! position), a learned CLS vector is prepended, and the classifier reads the
//! final-layernormed CLS state. Sequence length is free: one weight set runs
//! on any number of tokens.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tensor, TensorBundle};
use crate::tokenizer::TokenMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
    pub n_classes: usize,
    #[serde(default = "default_eps")]
    pub layernorm_eps: f64,
}

fn default_mlp_ratio() -> usize {
    4
}

fn default_eps() -> f64 {
    1e-6
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            mlp_ratio: 4,
            n_classes: 10,
            layernorm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0
            || self.n_heads == 0
            || self.n_layers == 0
            || self.mlp_ratio == 0
            || self.n_classes == 0
        {
            return Err(Error::Config(format!("model config has a zero field: {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(self.layernorm_eps > 0.0 && self.layernorm_eps.is_finite()) {
            return Err(Error::Config("layernorm eps must be positive".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn hidden(&self) -> usize {
        self.d_model * self.mlp_ratio
    }
}

/// Matrices are `[out, in]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gamma: Vec<f32>,
    pub ln1_beta: Vec<f32>,
    pub wq: Vec<f32>,
    pub bq: Vec<f32>,
    pub wk: Vec<f32>,
    pub bk: Vec<f32>,
    pub wv: Vec<f32>,
    pub bv: Vec<f32>,
    pub wo: Vec<f32>,
    pub bo: Vec<f32>,
    pub ln2_gamma: Vec<f32>,
    pub ln2_beta: Vec<f32>,
    pub w1: Vec<f32>,
    pub b1: Vec<f32>,
    pub w2: Vec<f32>,
    pub b2: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub layers: Vec<LayerWeights>,
    pub cls: Vec<f32>,
    pub final_gamma: Vec<f32>,
    pub final_beta: Vec<f32>,
    pub head_w: Vec<f32>,
    pub head_b: Vec<f32>,
}

// (name suffix, role, shape) for one layer, in generation order.
fn layer_layout(cfg: &ModelConfig) -> Vec<(&'static str, &'static str, Vec<usize>)> {
    let (d, h) = (cfg.d_model, cfg.hidden());
    vec![
        ("ln1.gamma", "layernorm.scale", vec![d]),
        ("ln1.beta", "layernorm.shift", vec![d]),
        ("attn.q.weight", "attention.query.weight", vec![d, d]),
        ("attn.q.bias", "attention.query.bias", vec![d]),
        ("attn.k.weight", "attention.key.weight", vec![d, d]),
        ("attn.k.bias", "attention.key.bias", vec![d]),
        ("attn.v.weight", "attention.value.weight", vec![d, d]),
        ("attn.v.bias", "attention.value.bias", vec![d]),
        ("attn.o.weight", "attention.output.weight", vec![d, d]),
        ("attn.o.bias", "attention.output.bias", vec![d]),
        ("ln2.gamma", "layernorm.scale", vec![d]),
        ("ln2.beta", "layernorm.shift", vec![d]),
        ("mlp.fc1.weight", "mlp.expand.weight", vec![h, d]),
        ("mlp.fc1.bias", "mlp.expand.bias", vec![h]),
        ("mlp.fc2.weight", "mlp.project.weight", vec![d, h]),
        ("mlp.fc2.bias", "mlp.project.bias", vec![d]),
    ]
}

impl LayerWeights {
    fn tensors(&self) -> [&Vec<f32>; 16] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn from_tensors(mut t: Vec<Vec<f32>>) -> Self {
        let mut next = || t.remove(0);
        LayerWeights {
            ln1_gamma: next(),
            ln1_beta: next(),
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            ln2_gamma: next(),
            ln2_beta: next(),
            w1: next(),
            b1: next(),
            w2: next(),
            b2: next(),
        }
    }
}

impl ModelWeights {
    /// Deterministic initialisation from a ChaCha8 stream seeded with
    /// `seed`. Tensors are drawn in manifest order: weight matrices uniform
    /// in `±1/sqrt(fan_in)`, biases zero, layernorm scale one and shift
    /// zero, CLS uniform in `±0.5`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut matrix = |rows: usize, cols: usize| -> Vec<f32> {
            let bound = 1.0 / (cols as f32).sqrt();
            (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect()
        };
        let (d, h) = (cfg.d_model, cfg.hidden());
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for _ in 0..cfg.n_layers {
            layers.push(LayerWeights {
                ln1_gamma: vec![1.0; d],
                ln1_beta: vec![0.0; d],
                wq: matrix(d, d),
                bq: vec![0.0; d],
                wk: matrix(d, d),
                bk: vec![0.0; d],
                wv: matrix(d, d),
                bv: vec![0.0; d],
                wo: matrix(d, d),
                bo: vec![0.0; d],
                ln2_gamma: vec![1.0; d],
                ln2_beta: vec![0.0; d],
                w1: matrix(h, d),
                b1: vec![0.0; h],
                w2: matrix(d, h),
                b2: vec![0.0; d],
            });
        }
        let head_w = matrix(cfg.n_classes, d);
        let cls = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        Ok(ModelWeights {
            layers,
            cls,
            final_gamma: vec![1.0; d],
            final_beta: vec![0.0; d],
            head_w,
            head_b: vec![0.0; cfg.n_classes],
        })
    }

    /// All parameters zero, layernorm scales included.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut w = ModelWeights::init(cfg, 0)?;
        for l in &mut w.layers {
            for t in [
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.wq,
                &mut l.bq,
                &mut l.wk,
                &mut l.bk,
                &mut l.wv,
                &mut l.bv,
                &mut l.wo,
                &mut l.bo,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
                &mut l.w1,
                &mut l.b1,
                &mut l.w2,
                &mut l.b2,
            ] {
                t.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        for t in [&mut w.cls, &mut w.final_gamma, &mut w.final_beta, &mut w.head_w, &mut w.head_b] {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(w)
    }

    fn layout(cfg: &ModelConfig) -> Vec<(String, String, Vec<usize>)> {
        let d = cfg.d_model;
        let mut out = Vec::new();
        for i in 0..cfg.n_layers {
            for (name, role, shape) in layer_layout(cfg) {
                out.push((format!("layers.{i}.{name}"), role.to_string(), shape));
            }
        }
        out.push(("cls".into(), "cls_token".into(), vec![d]));
        out.push(("final_ln.gamma".into(), "layernorm.scale".into(), vec![d]));
        out.push(("final_ln.beta".into(), "layernorm.shift".into(), vec![d]));
        out.push(("head.weight".into(), "classifier.weight".into(), vec![cfg.n_classes, d]));
        out.push(("head.bias".into(), "classifier.bias".into(), vec![cfg.n_classes]));
        out
    }

    fn flat(&self) -> Vec<&Vec<f32>> {
        let mut out: Vec<&Vec<f32>> = self.layers.iter().flat_map(|l| l.tensors()).collect();
        out.extend([&self.cls, &self.final_gamma, &self.final_beta, &self.head_w, &self.head_b]);
        out
    }

    /// Checks every tensor against the config's shapes.
    pub fn check(&self, cfg: &ModelConfig) -> Result<()> {
        cfg.validate()?;
        if self.layers.len() != cfg.n_layers {
            return Err(Error::Dimension(format!(
                "weights have {} layers, config has {}",
                self.layers.len(),
                cfg.n_layers
            )));
        }
        for ((name, _, shape), t) in Self::layout(cfg).iter().zip(self.flat()) {
            let n: usize = shape.iter().product();
            if t.len() != n {
                return Err(Error::Dimension(format!(
                    "{name}: expected {n} values for {shape:?}, found {}",
                    t.len()
                )));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("model weights"));
            }
        }
        Ok(())
    }

    pub fn to_bundle(&self, cfg: &ModelConfig) -> Result<TensorBundle> {
        self.check(cfg)?;
        let mut b = TensorBundle::new("toy-vit", serde_json::to_value(cfg)?);
        for ((name, role, shape), t) in Self::layout(cfg).into_iter().zip(self.flat()) {
            b.push(name, role, Tensor::new(shape, t.clone())?);
        }
        Ok(b)
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<(ModelConfig, Self)> {
        if b.kind != "toy-vit" {
            return Err(Error::format("manifest", format!("bundle kind {:?} is not a toy-vit model", b.kind)));
        }
        let cfg: ModelConfig = serde_json::from_value(b.meta.clone())?;
        cfg.validate()?;
        let mut tensors = Vec::new();
        for (name, _, shape) in Self::layout(&cfg) {
            tensors.push(b.get_shaped(&name, &shape)?.data().to_vec());
        }
        let per_layer = layer_layout(&cfg).len();
        let tail = tensors.split_off(cfg.n_layers * per_layer);
        let mut layers = Vec::with_capacity(cfg.n_layers);
        let mut rest = tensors.into_iter();
        for _ in 0..cfg.n_layers {
            layers.push(LayerWeights::from_tensors(rest.by_ref().take(per_layer).collect()));
        }
        let mut tail = tail.into_iter();
        let mut next = || tail.next().expect("layout has five trailing tensors");
        let w = ModelWeights {
            layers,
            cls: next(),
            final_gamma: next(),
            final_beta: next(),
            head_w: next(),
            head_b: next(),
        };
        w.check(&cfg)?;
        Ok((cfg, w))
    }

    pub fn parameter_count(&self) -> usize {
        self.flat().iter().map(|t| t.len()).sum()
    }
}

fn layernorm(x: &[f64], gamma: &[f32], beta: &[f32], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + eps).sqrt();
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(v, (&g, &b))| (v - mean) * inv * g as f64 + b as f64)
        .collect()
}

// y = W x + b, W is [out, in].
fn linear(x: &[f64], w: &[f32], b: &[f32]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            w[o * n..(o + 1) * n]
                .iter()
                .zip(x)
                .map(|(&wv, &xv)| wv as f64 * xv)
                .sum::<f64>()
                + bias as f64
        })
        .collect()
}

/// tanh approximation of GELU.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Max-subtracted softmax in place.
fn softmax(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Logits plus the attention probabilities of every layer, stored
/// `[layer][head][query][key]` flattened per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub logits: Vec<f64>,
    pub attention: Vec<Vec<f64>>,
    pub seq_len: usize,
}

fn run(tokens: &TokenMatrix, w: &ModelWeights, cfg: &ModelConfig, keep_attention: bool) -> Result<ForwardTrace> {
    w.check(cfg)?;
    if tokens.rows == 0 {
        return Err(Error::Dimension("forward needs at least one token".into()));
    }
    if tokens.cols != cfg.d_model {
        return Err(Error::Dimension(format!(
            "tokens have width {}, model expects {}",
            tokens.cols, cfg.d_model
        )));
    }
    if tokens.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input tokens"));
    }
    let (d, heads, hd) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
    let n = tokens.rows + 1;
    let mut x: Vec<Vec<f64>> = Vec::with_capacity(n);
    x.push(w.cls.iter().map(|&v| v as f64).collect());
    x.extend((0..tokens.rows).map(|i| tokens.row(i).iter().map(|&v| v as f64).collect()));
    let scale = 1.0 / (hd as f64).sqrt();
    let mut attention = Vec::new();

    for layer in &w.layers {
        let h: Vec<Vec<f64>> = x
            .iter()
            .map(|r| layernorm(r, &layer.ln1_gamma, &layer.ln1_beta, cfg.layernorm_eps))
            .collect();
        let q: Vec<Vec<f64>> = h.iter().map(|r| linear(r, &layer.wq, &layer.bq)).collect();
        let k: Vec<Vec<f64>> = h.iter().map(|r| linear(r, &layer.wk, &layer.bk)).collect();
        let v: Vec<Vec<f64>> = h.iter().map(|r| linear(r, &layer.wv, &layer.bv)).collect();
        let mut mixed = vec![vec![0.0f64; d]; n];
        let mut probs = if keep_attention { vec![0.0; heads * n * n] } else { Vec::new() };
        let mut row = vec![0.0f64; n];
        for head in 0..heads {
            let span = head * hd..(head + 1) * hd;
            for i in 0..n {
                let qi = &q[i][span.clone()];
                for (j, r) in row.iter_mut().enumerate() {
                    let kj = &k[j][span.clone()];
                    *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                }
                softmax(&mut row);
                if keep_attention {
                    probs[(head * n + i) * n..(head * n + i + 1) * n].copy_from_slice(&row);
                }
                let out = &mut mixed[i][span.clone()];
                for (j, &p) in row.iter().enumerate() {
                    for (o, &vv) in out.iter_mut().zip(&v[j][span.clone()]) {
                        *o += p * vv;
                    }
                }
            }
        }
        if keep_attention {
            attention.push(probs);
        }
        for (xi, m) in x.iter_mut().zip(&mixed) {
            let o = linear(m, &layer.wo, &layer.bo);
            xi.iter_mut().zip(o).for_each(|(a, b)| *a += b);
        }
        for xi in x.iter_mut() {
            let h2 = layernorm(xi, &layer.ln2_gamma, &layer.ln2_beta, cfg.layernorm_eps);
            let hidden: Vec<f64> = linear(&h2, &layer.w1, &layer.b1).into_iter().map(gelu).collect();
            let out = linear(&hidden, &layer.w2, &layer.b2);
            xi.iter_mut().zip(out).for_each(|(a, b)| *a += b);
        }
    }
    let cls = layernorm(&x[0], &w.final_gamma, &w.final_beta, cfg.layernorm_eps);
    let logits = linear(&cls, &w.head_w, &w.head_b);
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits"));
    }
    Ok(ForwardTrace {
        logits,
        attention,
        seq_len: n,
    })
}

pub fn forward(tokens: &TokenMatrix, weights: &ModelWeights, cfg: &ModelConfig) -> Result<Vec<f64>> {
    Ok(run(tokens, weights, cfg, false)?.logits)
}

pub fn forward_traced(tokens: &TokenMatrix, weights: &ModelWeights, cfg: &ModelConfig) -> Result<ForwardTrace> {
    run(tokens, weights, cfg, true)
}
