//! Wall-clock breakdown of the tokenise-and-classify pipeline.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::cost::{tokenizer_macs, vit_macs};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::quadtree::{build_mosaic_from_scores, candidate_patches, PatchMosaic, QuadtreeConfig};
use crate::scorers::{PatchScorer, PatchScores};
use crate::tokenizer::{tokenize, PatchEmbedder, TokenMatrix, TokenizerConfig};
use crate::vit::{forward, ModelConfig, ModelWeights};

pub const COMPONENTS: [&str; 4] = ["scorer", "quadtree", "tokenizer", "transformer"];

pub struct BenchPipeline<'a> {
    pub scorer: &'a dyn PatchScorer,
    /// MACs the scorer spends on one image; see the `cost` helpers.
    pub scorer_macs_per_image: u64,
    pub quadtree: QuadtreeConfig,
    pub tokenizer: TokenizerConfig,
    pub embedder: &'a PatchEmbedder,
    pub model: ModelConfig,
    pub weights: &'a ModelWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub warmup: usize,
    pub repetitions: usize,
    /// A component whose batch runs faster than this is repeated inside
    /// each timed sample until it does not.
    pub min_sample_micros: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            warmup: 5,
            repetitions: 30,
            min_sample_micros: 2_000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentCost {
    pub name: String,
    /// Median over repetitions.
    pub micros_per_image: f64,
    pub macs_per_image: u64,
    /// `None` for components that do no multiply-accumulates.
    pub micros_per_gmac: Option<f64>,
    pub inner_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub images: usize,
    pub target_patches: usize,
    pub repetitions: usize,
    pub components: Vec<ComponentCost>,
    /// Median over repetitions of the per-repetition component sum.
    pub total_micros_per_image: f64,
    pub total_macs_per_image: u64,
    pub notes: Vec<String>,
}

impl CostReport {
    pub fn component(&self, name: &str) -> Option<&ComponentCost> {
        self.components.iter().find(|c| c.name == name)
    }

    pub fn component_sum(&self) -> f64 {
        self.components.iter().map(|c| c.micros_per_image).sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "images: {}  L: {}  repetitions: {}\n{:<12} {:>14} {:>14} {:>12}\n",
            self.images, self.target_patches, self.repetitions, "component", "us/image", "GMACs/image", "us/GMAC"
        );
        for c in &self.components {
            out.push_str(&format!(
                "{:<12} {:>14.2} {:>14.6} {:>12}\n",
                c.name,
                c.micros_per_image,
                c.macs_per_image as f64 / 1e9,
                c.micros_per_gmac.map_or("-".to_string(), |v| format!("{v:.1}"))
            ));
        }
        out.push_str(&format!(
            "{:<12} {:>14.2} {:>14.6}\n",
            "total",
            self.total_micros_per_image,
            self.total_macs_per_image as f64 / 1e9
        ));
        for n in &self.notes {
            out.push_str(&format!("note: {n}\n"));
        }
        out
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(PartialEq)]
struct Outputs {
    scores: Vec<PatchScores>,
    mosaics: Vec<PatchMosaic>,
    tokens: Vec<TokenMatrix>,
    logits: Vec<Vec<f64>>,
}

struct Runner<'a, 'p> {
    imgs: &'a [Image],
    p: &'a BenchPipeline<'p>,
}

impl Runner<'_, '_> {
    fn scorer(&self, inner: usize) -> Result<(Duration, Vec<PatchScores>)> {
        let (h, w) = (self.imgs[0].height(), self.imgs[0].width());
        let start = Instant::now();
        let mut out = Vec::new();
        for _ in 0..inner {
            let candidates = candidate_patches(h, w, &self.p.quadtree)?;
            out = self
                .imgs
                .iter()
                .map(|img| self.p.scorer.score(img, &candidates))
                .collect::<Result<_>>()?;
        }
        Ok((start.elapsed(), out))
    }

    fn quadtree(&self, inner: usize, scores: &[PatchScores]) -> Result<(Duration, Vec<PatchMosaic>)> {
        let (h, w) = (self.imgs[0].height(), self.imgs[0].width());
        let start = Instant::now();
        let mut out = Vec::new();
        for _ in 0..inner {
            out = scores
                .iter()
                .map(|s| build_mosaic_from_scores(h, w, &self.p.quadtree, s))
                .collect::<Result<_>>()?;
        }
        Ok((start.elapsed(), out))
    }

    fn tokenizer(&self, inner: usize, mosaics: &[PatchMosaic]) -> Result<(Duration, Vec<TokenMatrix>)> {
        let start = Instant::now();
        let mut out = Vec::new();
        for _ in 0..inner {
            out = self
                .imgs
                .iter()
                .zip(mosaics)
                .map(|(img, m)| tokenize(img, m, self.p.embedder, &self.p.tokenizer).map(|(t, _)| t))
                .collect::<Result<_>>()?;
        }
        Ok((start.elapsed(), out))
    }

    fn transformer(&self, inner: usize, tokens: &[TokenMatrix]) -> Result<(Duration, Vec<Vec<f64>>)> {
        let start = Instant::now();
        let mut out = Vec::new();
        for _ in 0..inner {
            out = tokens
                .iter()
                .map(|t| forward(t, self.p.weights, &self.p.model))
                .collect::<Result<_>>()?;
        }
        Ok((start.elapsed(), out))
    }

    fn run(&self, inner: &[usize; 4]) -> Result<([Duration; 4], Outputs)> {
        let (t0, scores) = self.scorer(inner[0])?;
        let (t1, mosaics) = self.quadtree(inner[1], &scores)?;
        let (t2, tokens) = self.tokenizer(inner[2], &mosaics)?;
        let (t3, logits) = self.transformer(inner[3], &tokens)?;
        Ok((
            [t0, t1, t2, t3],
            Outputs {
                scores,
                mosaics,
                tokens,
                logits,
            },
        ))
    }
}

/// Times each component on the calling thread. Every repetition must
/// reproduce the first one's outputs exactly.
pub fn bench_breakdown(imgs: &[Image], pipeline: &BenchPipeline<'_>, opts: &BenchOptions) -> Result<CostReport> {
    let first = imgs
        .first()
        .ok_or_else(|| Error::Dimension("benchmark needs at least one image".into()))?;
    if imgs.iter().any(|i| (i.height(), i.width()) != (first.height(), first.width())) {
        return Err(Error::Dimension("benchmark images must share one size".into()));
    }
    if opts.repetitions == 0 {
        return Err(Error::Config("benchmark needs at least one repetition".into()));
    }
    let runner = Runner { imgs, p: pipeline };
    let mut inner = [1usize; 4];
    let (_, reference) = runner.run(&inner)?;
    for _ in 0..opts.warmup {
        runner.run(&inner)?;
    }

    let mut notes = Vec::new();
    let (probe, _) = runner.run(&inner)?;
    for (i, t) in probe.iter().enumerate() {
        let micros = t.as_secs_f64() * 1e6;
        if micros < opts.min_sample_micros {
            let n = ((opts.min_sample_micros / micros.max(0.05)).ceil() as usize).clamp(2, 100_000);
            inner[i] = n;
            notes.push(format!(
                "{} ran in {micros:.1} us per batch; each sample repeats it {n} times",
                COMPONENTS[i]
            ));
        }
    }

    let per_image = |t: Duration, n: usize| t.as_secs_f64() * 1e6 / (n * imgs.len()) as f64;
    let mut samples: [Vec<f64>; 4] = Default::default();
    let mut totals = Vec::with_capacity(opts.repetitions);
    for _ in 0..opts.repetitions {
        let (times, outputs) = runner.run(&inner)?;
        if outputs != reference {
            return Err(Error::Contract("benchmark outputs changed between repetitions".into()));
        }
        let mut total = 0.0;
        for i in 0..4 {
            let v = per_image(times[i], inner[i]);
            samples[i].push(v);
            total += v;
        }
        totals.push(total);
    }

    let target = pipeline.quadtree.target_patches;
    let macs = [
        pipeline.scorer_macs_per_image,
        0,
        tokenizer_macs(&pipeline.tokenizer, reference.mosaics[0].len()),
        vit_macs(&pipeline.model, reference.mosaics[0].len()),
    ];
    let components: Vec<ComponentCost> = (0..4)
        .map(|i| {
            let micros = median(&mut samples[i]);
            ComponentCost {
                name: COMPONENTS[i].to_string(),
                micros_per_image: micros,
                macs_per_image: macs[i],
                micros_per_gmac: (macs[i] > 0).then(|| micros / (macs[i] as f64 / 1e9)),
                inner_iterations: inner[i],
            }
        })
        .collect();
    Ok(CostReport {
        images: imgs.len(),
        target_patches: target,
        repetitions: opts.repetitions,
        components,
        total_micros_per_image: median(&mut totals),
        total_macs_per_image: macs.iter().sum(),
        notes,
    })
}
