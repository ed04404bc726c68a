//! Fraction of image area covered by each patch size, per target count.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::quadtree::{build_mosaic_from_scores, candidate_patches, QuadtreeConfig};
use crate::scorers::PatchScorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub target_patches: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub images: usize,
    /// Patch size to mean area fraction. Every size from `s_max` down to
    /// `s_min` is present, unused sizes at zero.
    pub fractions: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CompositionReport {
    pub rows: Vec<CompositionRow>,
}

/// Scores each image once and builds one mosaic per target count.
pub fn composition_stats(
    imgs: &[Image],
    targets: &[usize],
    cfg: &QuadtreeConfig,
    scorer: &(impl PatchScorer + ?Sized),
) -> Result<CompositionReport> {
    let first = imgs
        .first()
        .ok_or_else(|| Error::Dimension("composition needs at least one image".into()))?;
    let (h, w) = (first.height(), first.width());
    if imgs.iter().any(|i| (i.height(), i.width()) != (h, w)) {
        return Err(Error::Dimension("composition images must share one size".into()));
    }
    for &l in targets {
        cfg.with_target(l).splits_for(h, w)?;
    }
    let candidates = candidate_patches(h, w, cfg)?;
    let per_image: Vec<Vec<BTreeMap<usize, usize>>> = imgs
        .par_iter()
        .map(|img| {
            let scores = scorer.score(img, &candidates)?;
            targets
                .iter()
                .map(|&l| {
                    build_mosaic_from_scores(h, w, &cfg.with_target(l), &scores)
                        .map(|m| m.area_by_size())
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let mut sizes = Vec::new();
    let mut s = cfg.s_max;
    while s >= cfg.s_min {
        sizes.push(s);
        s /= 2;
    }
    let total = (h * w) as f64;
    let rows = targets
        .iter()
        .enumerate()
        .map(|(t, &l)| {
            let mut fractions: BTreeMap<usize, f64> = sizes.iter().map(|&s| (s, 0.0)).collect();
            for areas in &per_image {
                for (size, area) in &areas[t] {
                    *fractions.entry(*size).or_default() += *area as f64 / total;
                }
            }
            for v in fractions.values_mut() {
                *v /= imgs.len() as f64;
            }
            CompositionRow {
                target_patches: l,
                image_height: h,
                image_width: w,
                images: imgs.len(),
                fractions,
            }
        })
        .collect();
    Ok(CompositionReport { rows })
}

impl CompositionReport {
    /// Sizes present in any row, largest first.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<usize> = self
            .rows
            .iter()
            .flat_map(|r| r.fractions.keys().copied())
            .collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes.dedup();
        sizes
    }

    pub fn to_csv(&self) -> String {
        let sizes = self.sizes();
        let mut out = String::from("L");
        for s in &sizes {
            out.push_str(&format!(",frac{s}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.target_patches.to_string());
            for s in &sizes {
                out.push_str(&format!(",{:.6}", r.fractions.get(s).copied().unwrap_or(0.0)));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_text(&self) -> String {
        let sizes = self.sizes();
        let mut out = format!("{:>6} {:>10}", "L", "image");
        for s in &sizes {
            out.push_str(&format!(" {:>8}", format!("{s}px")));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{:>6} {:>10}",
                r.target_patches,
                format!("{}x{}", r.image_width, r.image_height)
            ));
            for s in &sizes {
                let f = r.fractions.get(s).copied().unwrap_or(0.0);
                out.push_str(&format!(" {:>7.1}%", 100.0 * f));
            }
            out.push('\n');
        }
        out
    }
}
