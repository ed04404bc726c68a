//! Multiply-accumulate counts for the pipeline components.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{UpsampleMode, CHANNELS};
use crate::quadtree::PatchRect;
use crate::scorers::FeatureExtractorSpec;
use crate::tokenizer::TokenizerConfig;
use crate::vit::ModelConfig;

/// One layer as seen by the MAC counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerCost {
    /// Dimensions are of the output map.
    Conv2d {
        out_height: u64,
        out_width: u64,
        in_channels: u64,
        out_channels: u64,
        kernel: u64,
    },
    Linear {
        tokens: u64,
        in_features: u64,
        out_features: u64,
    },
    /// Q, K, V and output projections plus the two score/mix products.
    Attention { tokens: u64, d_model: u64 },
    /// Cropping, gathering and other pure data movement.
    Indexing,
}

pub fn count_macs(layer: &LayerCost) -> u64 {
    match *layer {
        LayerCost::Conv2d {
            out_height,
            out_width,
            in_channels,
            out_channels,
            kernel,
        } => out_height * out_width * in_channels * out_channels * kernel * kernel,
        LayerCost::Linear {
            tokens,
            in_features,
            out_features,
        } => tokens * in_features * out_features,
        LayerCost::Attention { tokens, d_model } => {
            4 * tokens * d_model * d_model + 2 * tokens * tokens * d_model
        }
        LayerCost::Indexing => 0,
    }
}

/// Counts a JSON layer descriptor such as
/// `{"kind": "linear", "tokens": 64, "in_features": 768, "out_features": 64}`.
pub fn count_macs_json(descriptor: &str) -> Result<u64> {
    let layer: LayerCost = serde_json::from_str(descriptor)
        .map_err(|e| Error::format("layer", e.to_string()))?;
    Ok(count_macs(&layer))
}

/// Layers of one extractor pass over an `h x w` input.
pub fn extractor_layers(spec: &FeatureExtractorSpec, h: usize, w: usize) -> Vec<LayerCost> {
    let (mut h, mut w) = (h, w);
    spec.layers()
        .iter()
        .map(|l| {
            h = (h + 2 * l.padding - l.kernel) / l.stride + 1;
            w = (w + 2 * l.padding - l.kernel) / l.stride + 1;
            LayerCost::Conv2d {
                out_height: h as u64,
                out_width: w as u64,
                in_channels: l.in_channels as u64,
                out_channels: l.out_channels as u64,
                kernel: l.kernel as u64,
            }
        })
        .collect()
}

pub fn extractor_macs(spec: &FeatureExtractorSpec, h: usize, w: usize) -> u64 {
    extractor_layers(spec, h, w).iter().map(count_macs).sum()
}

/// One pass on the original plus one per blurred copy, all at the scoring
/// resolution.
pub fn feature_scorer_macs(
    spec: &FeatureExtractorSpec,
    h: usize,
    w: usize,
    blur_levels: usize,
    scoring_scale: f64,
) -> u64 {
    let sh = ((h as f64 * scoring_scale).round() as usize).max(1);
    let sw = ((w as f64 * scoring_scale).round() as usize).max(1);
    (1 + blur_levels as u64) * extractor_macs(spec, sh, sw)
}

/// Area accumulation, the upsample taps and the squared difference, per
/// sample of every candidate.
pub fn pixel_blur_macs(candidates: &[PatchRect], mode: UpsampleMode) -> u64 {
    let taps = match mode {
        UpsampleMode::Nearest => 0,
        UpsampleMode::Bilinear => 4,
    };
    candidates
        .iter()
        .map(|p| (p.area() * CHANNELS) as u64 * (2 + taps))
        .sum()
}

/// The patch embedding projection. Resizing patches to `s_rep` is counted
/// as indexing.
pub fn tokenizer_macs(cfg: &TokenizerConfig, tokens: usize) -> u64 {
    count_macs(&LayerCost::Linear {
        tokens: tokens as u64,
        in_features: cfg.rep_len() as u64,
        out_features: cfg.d_model as u64,
    })
}

/// Encoder layers over `tokens + 1` positions (the class token) and the
/// classification head on the class token alone.
pub fn vit_layers(cfg: &ModelConfig, tokens: usize) -> Vec<LayerCost> {
    let n = tokens as u64 + 1;
    let d = cfg.d_model as u64;
    let hidden = cfg.hidden() as u64;
    let mut layers = Vec::with_capacity(3 * cfg.n_layers + 1);
    for _ in 0..cfg.n_layers {
        layers.push(LayerCost::Attention { tokens: n, d_model: d });
        layers.push(LayerCost::Linear {
            tokens: n,
            in_features: d,
            out_features: hidden,
        });
        layers.push(LayerCost::Linear {
            tokens: n,
            in_features: hidden,
            out_features: d,
        });
    }
    layers.push(LayerCost::Linear {
        tokens: 1,
        in_features: d,
        out_features: cfg.n_classes as u64,
    });
    layers
}

pub fn vit_macs(cfg: &ModelConfig, tokens: usize) -> u64 {
    vit_layers(cfg, tokens).iter().map(count_macs).sum()
}
