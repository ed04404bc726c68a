//! Subcommand implementations other than `render`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use quadtok::analysis::{
    bench_breakdown, composition_stats, feature_scorer_macs, pixel_blur_macs, rank_correlation_report,
    BenchOptions, BenchPipeline, CompositionReport, CompositionRow,
};
use quadtok::image::Image;
use quadtok::quadtree::{build_mosaic, candidate_patches};
use quadtok::scorers::ScorerKind;
use quadtok::synthetic::scene;
use quadtok::tensor::{Tensor, TensorBundle};
use quadtok::tokenizer::{tokenize as tokenize_image, PatchEmbedder, TokenMatrix, TokenSidecar, TokenizerConfig};
use quadtok::vit::{forward as vit_forward, ModelConfig, ModelWeights};
use quadtok::scorers::FeatureExtractorSpec;
use quadtok::Error;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{load_images, stems, RunConfig, Scorers};
use crate::output::{emit, to_json, write_manifest, write_text, ImageScores, RunManifest, ScoreFile, SCHEMA_VERSION};
use crate::render::write_heatmaps;
use crate::{
    BenchArgs, Component, CorrelateArgs, ForwardArgs, InitArgs, ModelArgs, ReportFormat, ScoreArgs, StatsArgs,
    TokenizeArgs,
};

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn scorer_name(kind: ScorerKind) -> &'static str {
    match kind {
        ScorerKind::PixelBlur => "pixel-blur",
        ScorerKind::FeatureBased => "feature",
        ScorerKind::ExternalSaliency => "saliency",
    }
}

pub fn tokenize(a: &TokenizeArgs) -> Result<()> {
    let cfg = a.pipeline.resolve()?;
    let names = stems(&a.inputs)?;
    let images = load_images(&a.inputs)?;
    let scorers = cfg.scorers(images.len())?;
    let embedder = cfg.embedder()?;
    let results = cfg.pool()?.install(|| {
        images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let mosaic = build_mosaic(img, &cfg.quadtree, scorers.get(i))?;
                let (tokens, seq) = tokenize_image(img, &mosaic, &embedder, &cfg.tokenizer)?;
                Ok((mosaic, tokens, TokenSidecar::from_sequence(&seq, img.height(), img.width())))
            })
            .collect::<quadtok::Result<Vec<_>>>()
    })?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut manifest = RunManifest::new("tokenize", &a.inputs, cfg.seed, &cfg);
    for (name, (mosaic, tokens, sidecar)) in names.iter().zip(&results) {
        let mosaic_path = a.out.join(format!("{name}.mosaic.json"));
        write_text(&mosaic_path, &(mosaic.to_json() + "\n"))?;
        let tokens_path = a.out.join(format!("{name}.tokens.mtok"));
        tokens
            .to_tensor()
            .save(&tokens_path)
            .with_context(|| format!("writing {}", tokens_path.display()))?;
        let sidecar_path = a.out.join(format!("{name}.tokens.json"));
        write_text(&sidecar_path, &(sidecar.to_json() + "\n"))?;
        manifest.outputs.extend([mosaic_path, tokens_path, sidecar_path]);
    }
    write_manifest(Some(&a.out), true, &manifest)
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let cfg = a.pipeline.resolve()?;
    let names = stems(&a.inputs)?;
    let images = load_images(&a.inputs)?;
    let scorers = cfg.scorers(images.len())?;
    let scores = cfg.pool()?.install(|| {
        images
            .par_iter()
            .enumerate()
            .map(|(i, img)| {
                let candidates = candidate_patches(img.height(), img.width(), &cfg.quadtree)?;
                scorers.get(i).score(img, &candidates)
            })
            .collect::<quadtok::Result<Vec<_>>>()
    })?;
    let file = ScoreFile {
        schema_version: SCHEMA_VERSION,
        scorer: scorer_name(cfg.scorer.kind).to_string(),
        images: a
            .inputs
            .iter()
            .zip(&images)
            .zip(&scores)
            .map(|((p, img), s)| ImageScores::new(p, img.height(), img.width(), s))
            .collect(),
    };
    if let Some(dir) = &a.heatmap {
        for ((name, img), s) in names.iter().zip(&images).zip(&scores) {
            write_heatmaps(dir, name, img.height(), img.width(), s)?;
        }
    }
    emit(a.out.as_deref(), &to_json(&file))?;
    let mut manifest = RunManifest::new("score", &a.inputs, cfg.seed, &cfg);
    manifest.outputs.extend(a.out.clone());
    write_manifest(a.out.as_deref(), false, &manifest)
}

pub fn correlate(a: &CorrelateArgs) -> Result<()> {
    let reference = ScoreFile::load(&a.reference)?;
    let mut candidates = Vec::new();
    let mut paths = vec![a.reference.clone()];
    for spec in &a.candidates {
        let (name, path) = spec
            .split_once('=')
            .ok_or_else(|| usage(format!("candidate {spec:?} is not NAME=PATH")))?;
        let path = PathBuf::from(path);
        let file = ScoreFile::load(&path)?;
        if file.images.len() != reference.images.len() {
            return Err(Error::Dimension(format!(
                "{name} scores {} images, the reference {}",
                file.images.len(),
                reference.images.len()
            ))
            .into());
        }
        let mut per_image = Vec::with_capacity(file.images.len());
        for (i, (r, c)) in reference.images.iter().zip(&file.images).enumerate() {
            let rs = r.to_scores()?;
            let cs = c.to_scores()?;
            if rs.len() != cs.len() || (r.height, r.width) != (c.height, c.width) {
                return Err(Error::Dimension(format!("{name}: image {i} candidates do not match the reference")).into());
            }
            let values = cs
                .values_for(&rs.patches())
                .map_err(|_| Error::Dimension(format!("{name}: image {i} candidates do not match the reference")))?;
            per_image.push(values);
        }
        candidates.push((name.to_string(), per_image));
        paths.push(path);
    }
    let reference_values: Vec<Vec<f64>> = reference
        .images
        .iter()
        .map(|r| r.scores.iter().map(|e| e.score).collect())
        .collect();
    let report = rank_correlation_report(&reference_values, &candidates)?;
    let text = match a.format {
        ReportFormat::Json => to_json(&report),
        ReportFormat::Text => report.to_text(),
    };
    emit(a.out.as_deref(), &text)?;
    let echo = serde_json::json!({ "candidates": a.candidates, "format": format!("{:?}", a.format) });
    let mut manifest = RunManifest::new("correlate", &paths, 0, &echo);
    manifest.outputs.extend(a.out.clone());
    write_manifest(a.out.as_deref(), false, &manifest)
}

fn gather_images(inputs: &[PathBuf], synthetic: Option<usize>, size: usize, seed: u64) -> Result<Vec<Image>> {
    match (synthetic, inputs.is_empty()) {
        (Some(_), false) => Err(usage("give either input images or --synthetic, not both")),
        (Some(0), true) | (None, true) => Err(usage("no input images")),
        (Some(n), true) => Ok((0..n as u64).map(|i| scene(size, size, seed + i)).collect()),
        (None, false) => load_images(inputs),
    }
}

fn merge_rows(parts: Vec<CompositionReport>) -> CompositionReport {
    let n = parts.len() as f64;
    let mut rows: Vec<CompositionRow> = parts[0].rows.clone();
    for row in rows.iter_mut() {
        row.images = 0;
        row.fractions.values_mut().for_each(|v| *v = 0.0);
    }
    for part in &parts {
        for (acc, r) in rows.iter_mut().zip(&part.rows) {
            acc.images += r.images;
            for (s, v) in &r.fractions {
                *acc.fractions.entry(*s).or_default() += v / n;
            }
        }
    }
    CompositionReport { rows }
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    let cfg = a.pipeline.resolve()?;
    let images = gather_images(&a.inputs, a.synthetic, a.size, cfg.seed)?;
    let scorers = cfg.scorers(images.len())?;
    let report = cfg.pool()?.install(|| -> Result<CompositionReport> {
        Ok(match &scorers {
            Scorers::Shared(s) => composition_stats(&images, &a.targets, &cfg.quadtree, s.as_ref())?,
            Scorers::PerImage(v) => merge_rows(
                images
                    .iter()
                    .zip(v)
                    .map(|(img, s)| composition_stats(std::slice::from_ref(img), &a.targets, &cfg.quadtree, s))
                    .collect::<quadtok::Result<Vec<_>>>()?,
            ),
        })
    })?;
    if let Some(csv) = &a.csv {
        write_text(csv, &report.to_csv())?;
    }
    let text = match a.format {
        ReportFormat::Json => to_json(&report),
        ReportFormat::Text => report.to_text(),
    };
    emit(a.out.as_deref(), &text)?;
    let mut manifest = RunManifest::new("stats", &a.inputs, cfg.seed, &cfg);
    manifest.outputs.extend(a.out.clone());
    manifest.outputs.extend(a.csv.clone());
    write_manifest(a.out.as_deref(), false, &manifest)
}

fn load_model(config: Option<&Path>, weights: Option<&Path>, seed: u64) -> Result<(ModelConfig, ModelWeights)> {
    let from_file = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let c: ModelConfig = serde_json::from_str(&text)
                .map_err(|e| usage(format!("model config {}: {e}", p.display())))?;
            c.validate()?;
            Some(c)
        }
        None => None,
    };
    match weights {
        Some(dir) => {
            let b = TensorBundle::load(dir).with_context(|| format!("loading weights {}", dir.display()))?;
            let (cfg, w) = ModelWeights::from_bundle(&b)?;
            if from_file.is_some_and(|c| c != cfg) {
                return Err(usage("--model-config disagrees with the configuration stored in --weights"));
            }
            Ok((cfg, w))
        }
        None => {
            let cfg = from_file.unwrap_or_default();
            cfg.validate()?;
            Ok((cfg, ModelWeights::init(&cfg, seed)?))
        }
    }
}

#[derive(Serialize)]
struct BenchEcho<'a> {
    pipeline: &'a RunConfig,
    model: ModelConfig,
    model_seed: u64,
    warmup: usize,
    reps: usize,
    synthetic: Option<usize>,
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let cfg = a.pipeline.resolve()?;
    let images = gather_images(&a.inputs, a.synthetic, a.size, cfg.seed)?;
    let ModelArgs {
        model_config,
        weights,
        model_seed,
    } = &a.model;
    let (model, model_weights) = load_model(model_config.as_deref(), weights.as_deref(), *model_seed)?;
    if model.d_model != cfg.tokenizer.d_model {
        return Err(usage(format!(
            "tokens are {} wide but the model expects {}",
            cfg.tokenizer.d_model, model.d_model
        )));
    }
    let scorers = cfg.scorers(images.len())?;
    let scorer = match &scorers {
        Scorers::Shared(s) => s.as_ref(),
        Scorers::PerImage(_) => return Err(usage("bench supports the pixel-blur and feature scorers")),
    };
    let (h, w) = (images[0].height(), images[0].width());
    let candidates = candidate_patches(h, w, &cfg.quadtree)?;
    let scorer_macs = match cfg.scorer.kind {
        ScorerKind::FeatureBased => {
            let spec = cfg.extractor_spec()?.expect("feature scorer has an extractor");
            let sizes: BTreeSet<usize> = candidates.iter().map(|p| p.size).collect();
            feature_scorer_macs(&spec, h, w, sizes.len(), cfg.scorer.scoring_scale)
        }
        _ => pixel_blur_macs(&candidates, cfg.scorer.upsample_mode),
    };
    let embedder = cfg.embedder()?;
    let pipeline = BenchPipeline {
        scorer,
        scorer_macs_per_image: scorer_macs,
        quadtree: cfg.quadtree,
        tokenizer: cfg.tokenizer,
        embedder: &embedder,
        model,
        weights: &model_weights,
    };
    let opts = BenchOptions {
        warmup: a.warmup,
        repetitions: a.reps,
        ..BenchOptions::default()
    };
    let report = bench_breakdown(&images, &pipeline, &opts)?;
    let text = match a.format {
        ReportFormat::Json => to_json(&report),
        ReportFormat::Text => report.to_text(),
    };
    emit(a.out.as_deref(), &text)?;
    let echo = BenchEcho {
        pipeline: &cfg,
        model,
        model_seed: *model_seed,
        warmup: a.warmup,
        reps: a.reps,
        synthetic: a.synthetic,
    };
    let mut manifest = RunManifest::new("bench", &a.inputs, cfg.seed, &echo);
    manifest.outputs.extend(a.out.clone());
    write_manifest(a.out.as_deref(), false, &manifest)
}

#[derive(Serialize)]
struct LogitsFile<'a> {
    schema_version: u32,
    inputs: &'a [PathBuf],
    logits: Vec<Vec<f64>>,
}

pub fn forward(a: &ForwardArgs) -> Result<()> {
    let (model, weights) = load_model(a.model_config.as_deref(), a.weights.as_deref(), a.seed)?;
    let tokens: Vec<TokenMatrix> = a
        .tokens
        .iter()
        .map(|p| {
            let t = Tensor::load(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TokenMatrix::from_tensor(&t)?)
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs.unwrap_or(0))
        .build()
        .map_err(|e| usage(format!("thread pool: {e}")))?;
    let logits = pool.install(|| {
        tokens
            .par_iter()
            .map(|t| vit_forward(t, &weights, &model))
            .collect::<quadtok::Result<Vec<_>>>()
    })?;
    let file = LogitsFile {
        schema_version: SCHEMA_VERSION,
        inputs: &a.tokens,
        logits,
    };
    emit(a.out.as_deref(), &to_json(&file))?;
    let echo = serde_json::json!({ "model": model, "weights": a.weights, "seed": a.seed });
    let mut manifest = RunManifest::new("forward", &a.tokens, a.seed, &echo);
    manifest.outputs.extend(a.out.clone());
    write_manifest(a.out.as_deref(), false, &manifest)
}

pub fn init_weights(a: &InitArgs) -> Result<()> {
    let bundle = match a.component {
        Component::Embedder => {
            let cfg = TokenizerConfig {
                s_rep: a.s_rep,
                d_model: a.d_model,
                ..TokenizerConfig::default()
            };
            cfg.validate()?;
            PatchEmbedder::init(&cfg, a.seed).to_bundle()
        }
        Component::Extractor => {
            if a.channels.is_empty() || a.channels.contains(&0) {
                return Err(usage("--channels needs positive channel counts"));
            }
            FeatureExtractorSpec::random_stack(&a.channels, a.seed).to_bundle()
        }
        Component::Model => {
            let (cfg, w) = load_model(a.model_config.as_deref(), None, a.seed)?;
            w.to_bundle(&cfg)?
        }
    };
    bundle.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}
