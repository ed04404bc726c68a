//! Patch saliency scorers.
//!
//! A scorer is asked once per image for the scores of every candidate
//! patch (see [`crate::quadtree::candidate_patches`]); the split loop only
//! consumes the resulting ranking.

mod features;
mod pixel_blur;
mod pooling;
mod saliency;

pub use features::{
    extract_features, roi_slice, score_feature_based, score_feature_based_traced,
    score_from_feature_maps, Activation, ConvLayer, FeatureExtractorSpec, FeatureMap,
    FeatureScoring, FeatureScorer,
};
pub use pixel_blur::{score_pixel_blur, PixelBlurScorer};
pub use pooling::{pool_grid, Grid};
pub use saliency::{score_from_saliency_map, SaliencyMap, SaliencyScorer};

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, UpsampleMode};
use crate::quadtree::PatchRect;

/// Nonnegative finite score per candidate patch, in candidate order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchScores {
    entries: Vec<(PatchRect, f64)>,
    index: HashMap<PatchRect, usize>,
}

impl PatchScores {
    pub fn new(pairs: impl IntoIterator<Item = (PatchRect, f64)>) -> Result<Self> {
        let mut entries = Vec::new();
        let mut index = HashMap::new();
        for (p, v) in pairs {
            if !v.is_finite() {
                return Err(Error::NonFinite("patch score"));
            }
            if v < 0.0 {
                return Err(Error::Contract(format!("negative score {v} for patch {p:?}")));
            }
            if index.insert(p, entries.len()).is_some() {
                return Err(Error::Contract(format!("duplicate score for patch {p:?}")));
            }
            // `+ 0.0` folds -0.0 into 0.0 so ties compare equal under total_cmp.
            entries.push((p, v + 0.0));
        }
        Ok(PatchScores { entries, index })
    }

    pub fn get(&self, patch: &PatchRect) -> Option<f64> {
        self.index.get(patch).map(|&i| self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PatchRect, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn patches(&self) -> Vec<PatchRect> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.1).collect()
    }

    /// Scores for `patches` in that order; errors on any missing patch.
    pub fn values_for(&self, patches: &[PatchRect]) -> Result<Vec<f64>> {
        patches
            .iter()
            .map(|p| {
                self.get(p)
                    .ok_or_else(|| Error::Contract(format!("no score for patch {p:?}")))
            })
            .collect()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        PatchScores::new(self.entries.iter().map(|&(p, v)| (p, v * factor)))
    }
}

pub trait PatchScorer: Sync {
    fn score(&self, img: &Image, candidates: &[PatchRect]) -> Result<PatchScores>;
}

impl<F> PatchScorer for F
where
    F: Fn(&Image, &[PatchRect]) -> Result<PatchScores> + Sync,
{
    fn score(&self, img: &Image, candidates: &[PatchRect]) -> Result<PatchScores> {
        self(img, candidates)
    }
}

/// Precomputed scores act as a scorer that ignores the image.
impl PatchScorer for PatchScores {
    fn score(&self, _img: &Image, candidates: &[PatchRect]) -> Result<PatchScores> {
        let values = self.values_for(candidates)?;
        PatchScores::new(candidates.iter().copied().zip(values))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    PixelBlur,
    FeatureBased,
    ExternalSaliency,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub s_rep: usize,
    /// Fraction in `(0, 1]` the image is resized to before feature scoring.
    pub scoring_scale: f64,
    pub upsample_mode: UpsampleMode,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            kind: ScorerKind::PixelBlur,
            s_rep: 16,
            scoring_scale: 1.0,
            upsample_mode: UpsampleMode::Bilinear,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s_rep == 0 {
            return Err(Error::Config("s_rep must be positive".into()));
        }
        if !(self.scoring_scale > 0.0 && self.scoring_scale <= 1.0) {
            return Err(Error::Config(format!(
                "scoring scale {} outside (0, 1]",
                self.scoring_scale
            )));
        }
        Ok(())
    }
}

/// Blur factor `size / s_rep` for a candidate patch size.
pub(crate) fn blur_factor(size: usize, s_rep: usize) -> Result<usize> {
    if s_rep == 0 || size < s_rep || size % s_rep != 0 {
        return Err(Error::Config(format!(
            "patch size {size} is not a multiple of representation size {s_rep}"
        )));
    }
    Ok(size / s_rep)
}
