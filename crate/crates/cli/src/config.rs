//! Flag and config-file resolution into a full pipeline configuration.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use quadtok::image::Image;
use quadtok::quadtree::QuadtreeConfig;
use quadtok::scorers::{
    FeatureExtractorSpec, FeatureScorer, PatchScorer, PixelBlurScorer, SaliencyMap, SaliencyScorer,
    ScorerConfig, ScorerKind,
};
use quadtok::tensor::{Tensor, TensorBundle};
use quadtok::tokenizer::{PatchEmbedder, TokenizerConfig};
use quadtok::{Error, UpsampleMode};
use serde::{Deserialize, Serialize};

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerArg {
    PixelBlur,
    Feature,
    Saliency,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    Nearest,
    Bilinear,
}

impl From<ModeArg> for UpsampleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Nearest => UpsampleMode::Nearest,
            ModeArg::Bilinear => UpsampleMode::Bilinear,
        }
    }
}

/// Pipeline flags shared by the image commands.
#[derive(Args, Debug, Clone, Default)]
pub struct PipelineArgs {
    /// JSON file of defaults for these flags, keyed by flag name with `_`
    /// for `-`. Flags on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Target number of patches L [default: 64].
    #[arg(long)]
    pub patches: Option<usize>,
    /// Smallest patch edge [default: 16].
    #[arg(long)]
    pub s_min: Option<usize>,
    /// Largest patch edge, the initial grid [default: 64].
    #[arg(long)]
    pub s_max: Option<usize>,
    /// Representation edge every patch is resized to [default: 16].
    #[arg(long)]
    pub s_rep: Option<usize>,
    /// Patch scorer [default: pixel-blur].
    #[arg(long, value_enum)]
    pub scorer: Option<ScorerArg>,
    /// Feature extractor bundle directory (feature scorer).
    #[arg(long)]
    pub extractor: Option<PathBuf>,
    /// Saliency map tensor, one per input image in order (saliency scorer).
    #[arg(long)]
    pub saliency: Vec<PathBuf>,
    /// Resize factor in (0, 1] applied before feature scoring [default: 1].
    #[arg(long)]
    pub scoring_scale: Option<f64>,
    /// Upsampling used inside the scorers' blur [default: bilinear].
    #[arg(long, value_enum)]
    pub blur_upsample: Option<ModeArg>,
    /// Stop at the first reachable count >= L instead of rejecting L.
    #[arg(long)]
    pub lenient: bool,
    /// Token width [default: 64].
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Patch embedder bundle directory; randomly initialised from `--seed` when omitted.
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    /// Seed for on-the-fly initialisation [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Images processed in parallel [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    patches: Option<usize>,
    s_min: Option<usize>,
    s_max: Option<usize>,
    s_rep: Option<usize>,
    scorer: Option<ScorerArg>,
    extractor: Option<PathBuf>,
    saliency: Option<Vec<PathBuf>>,
    scoring_scale: Option<f64>,
    blur_upsample: Option<ModeArg>,
    lenient: Option<bool>,
    d_model: Option<usize>,
    embedder: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
}

/// Fully resolved configuration, echoed into every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub quadtree: QuadtreeConfig,
    pub scorer: ScorerConfig,
    pub tokenizer: TokenizerConfig,
    pub extractor: Option<PathBuf>,
    pub saliency: Vec<PathBuf>,
    pub embedder: Option<PathBuf>,
    pub seed: u64,
    pub jobs: usize,
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

impl PipelineArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                serde_json::from_str::<FileConfig>(&text)
                    .map_err(|e| usage(format!("config file {}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        let s_min = self.s_min.or(file.s_min).unwrap_or(16);
        let s_max = self.s_max.or(file.s_max).unwrap_or(64);
        let s_rep = self.s_rep.or(file.s_rep).unwrap_or(16);
        let mut quadtree = QuadtreeConfig::new(s_min, s_max, self.patches.or(file.patches).unwrap_or(64));
        if self.lenient || file.lenient.unwrap_or(false) {
            quadtree = quadtree.lenient();
        }
        quadtree.validate_sizes()?;
        let kind = match self.scorer.or(file.scorer).unwrap_or(ScorerArg::PixelBlur) {
            ScorerArg::PixelBlur => ScorerKind::PixelBlur,
            ScorerArg::Feature => ScorerKind::FeatureBased,
            ScorerArg::Saliency => ScorerKind::ExternalSaliency,
        };
        let scorer = ScorerConfig {
            kind,
            s_rep,
            scoring_scale: self.scoring_scale.or(file.scoring_scale).unwrap_or(1.0),
            upsample_mode: self.blur_upsample.or(file.blur_upsample).unwrap_or(ModeArg::Bilinear).into(),
        };
        scorer.validate()?;
        if kind != ScorerKind::FeatureBased && scorer.scoring_scale != 1.0 {
            return Err(usage("--scoring-scale only applies to the feature scorer"));
        }
        let tokenizer = TokenizerConfig {
            s_rep,
            d_model: self.d_model.or(file.d_model).unwrap_or(64),
            s_min,
            ..TokenizerConfig::default()
        };
        tokenizer.validate()?;
        let saliency = if self.saliency.is_empty() {
            file.saliency.unwrap_or_default()
        } else {
            self.saliency.clone()
        };
        let extractor = self.extractor.clone().or(file.extractor);
        match kind {
            ScorerKind::FeatureBased if extractor.is_none() => {
                return Err(usage("the feature scorer needs --extractor"));
            }
            ScorerKind::ExternalSaliency if saliency.is_empty() => {
                return Err(usage("the saliency scorer needs --saliency"));
            }
            _ => {}
        }
        let jobs = self.jobs.or(file.jobs).unwrap_or(0);
        Ok(RunConfig {
            quadtree,
            scorer,
            tokenizer,
            extractor,
            saliency,
            embedder: self.embedder.clone().or(file.embedder),
            seed: self.seed.or(file.seed).unwrap_or(0),
            jobs,
        })
    }
}

/// Scorer instances for a run. The saliency scorer carries one map per image.
pub enum Scorers {
    Shared(Box<dyn PatchScorer>),
    PerImage(Vec<SaliencyScorer>),
}

impl Scorers {
    pub fn get(&self, image: usize) -> &dyn PatchScorer {
        match self {
            Scorers::Shared(s) => s.as_ref(),
            Scorers::PerImage(v) => &v[image],
        }
    }
}

impl RunConfig {
    pub fn extractor_spec(&self) -> Result<Option<FeatureExtractorSpec>> {
        match &self.extractor {
            Some(dir) if self.scorer.kind == ScorerKind::FeatureBased => {
                let b = TensorBundle::load(dir).with_context(|| format!("loading extractor {}", dir.display()))?;
                Ok(Some(FeatureExtractorSpec::from_bundle(&b)?))
            }
            _ => Ok(None),
        }
    }

    pub fn scorers(&self, images: usize) -> Result<Scorers> {
        Ok(match self.scorer.kind {
            ScorerKind::PixelBlur => Scorers::Shared(Box::new(PixelBlurScorer::new(
                self.scorer.s_rep,
                self.scorer.upsample_mode,
            ))),
            ScorerKind::FeatureBased => {
                let spec = self.extractor_spec()?.expect("checked at resolve time");
                Scorers::Shared(Box::new(FeatureScorer {
                    extractor: spec,
                    config: self.scorer,
                }))
            }
            ScorerKind::ExternalSaliency => {
                if self.saliency.len() != images {
                    return Err(usage(format!(
                        "{} saliency maps for {images} images",
                        self.saliency.len()
                    )));
                }
                let maps = self
                    .saliency
                    .iter()
                    .map(|p| {
                        let t = Tensor::load(p).with_context(|| format!("loading saliency map {}", p.display()))?;
                        Ok(SaliencyScorer {
                            map: SaliencyMap::from_tensor(&t)?,
                        })
                    })
                    .collect::<Result<_>>()?;
                Scorers::PerImage(maps)
            }
        })
    }

    pub fn embedder(&self) -> Result<PatchEmbedder> {
        match &self.embedder {
            Some(dir) => {
                let b = TensorBundle::load(dir).with_context(|| format!("loading embedder {}", dir.display()))?;
                let e = PatchEmbedder::from_bundle(&b)?;
                if e.d_model != self.tokenizer.d_model || e.input_dim != self.tokenizer.rep_len() {
                    return Err(usage(format!(
                        "embedder maps {} -> {}, configuration needs {} -> {}",
                        e.input_dim,
                        e.d_model,
                        self.tokenizer.rep_len(),
                        self.tokenizer.d_model
                    )));
                }
                Ok(e)
            }
            None => Ok(PatchEmbedder::init(&self.tokenizer, self.seed)),
        }
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| usage(format!("thread pool: {e}")))
    }
}

pub fn load_images(paths: &[PathBuf]) -> Result<Vec<Image>> {
    paths
        .iter()
        .map(|p| quadtok::image::load_ppm(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

/// File stem of each input, rejecting collisions.
pub fn stems(paths: &[PathBuf]) -> Result<Vec<String>> {
    let mut out: Vec<String> = Vec::with_capacity(paths.len());
    for p in paths {
        let stem = Path::new(p)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .ok_or_else(|| usage(format!("{} has no file name", p.display())))?;
        if out.contains(&stem) {
            return Err(usage(format!("two inputs share the name {stem:?}")));
        }
        out.push(stem);
    }
    Ok(out)
}
