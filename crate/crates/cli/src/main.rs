//! `quadtok`: tokenize, render, score and measure quadtree patch mosaics.

mod commands;
mod config;
mod output;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::PipelineArgs;

#[derive(Parser, Debug)]
#[command(name = "quadtok", version, about = "Saliency-driven quadtree image tokenizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build mosaics for PPM images and write mosaic JSON, token tensors and
    /// token sidecars.
    Tokenize(TokenizeArgs),
    /// Replace each patch of an image by its low-resolution representation.
    Render(RenderArgs),
    /// Score every splittable candidate patch.
    Score(ScoreArgs),
    /// Rank-correlate candidate score files against a reference.
    Correlate(CorrelateArgs),
    /// Area covered by each patch size for a list of patch counts.
    Stats(StatsArgs),
    /// Time each pipeline component and count its multiply-accumulates.
    Bench(BenchArgs),
    /// Run the encoder on token tensors and write class logits.
    Forward(ForwardArgs),
    /// Write freshly initialised weights for a pipeline component.
    InitWeights(InitArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Text,
}

#[derive(Args, Debug)]
pub struct TokenizeArgs {
    /// Input PPM images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// Input PPM image.
    pub input: PathBuf,
    /// Mosaic JSON produced by `tokenize`.
    #[arg(long)]
    pub mosaic: PathBuf,
    /// Representation size each patch is reduced to.
    #[arg(long, default_value_t = 16)]
    pub s_rep: usize,
    /// How representations are enlarged back to patch size.
    #[arg(long, value_enum, default_value_t = config::ModeArg::Nearest)]
    pub upsample: config::ModeArg,
    /// Draw 1-pixel patch borders.
    #[arg(long)]
    pub grid: bool,
    /// Border colour as RRGGBB hex.
    #[arg(long, default_value = "ff0000")]
    pub grid_color: String,
    /// Output PPM path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Input PPM images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for one heatmap PPM per image and candidate size.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    /// Reference score file.
    #[arg(long)]
    pub reference: PathBuf,
    /// Candidate score file as NAME=PATH; repeatable.
    #[arg(long = "candidate", required = true)]
    pub candidates: Vec<String>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    /// Output path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Input PPM images.
    pub inputs: Vec<PathBuf>,
    /// Use this many generated scenes instead of input files.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Edge length of generated scenes.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    /// Comma-separated patch counts.
    #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
    pub targets: Vec<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Also write the curves as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Input PPM images.
    pub inputs: Vec<PathBuf>,
    /// Use this many generated scenes instead of input files.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Edge length of generated scenes.
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value_t = 5)]
    pub warmup: usize,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    pub format: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Model configuration JSON.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Model weight bundle directory; randomly initialised from `--model-seed` when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub model_seed: u64,
}

#[derive(Args, Debug)]
pub struct ForwardArgs {
    /// Token tensors (`[L, d]` .mtok files).
    #[arg(required = true)]
    pub tokens: Vec<PathBuf>,
    /// Model configuration JSON.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Model weight bundle directory; randomly initialised from `--seed` when omitted.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Component {
    Embedder,
    Extractor,
    Model,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    #[arg(value_enum)]
    pub component: Component,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub s_rep: usize,
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    /// Output channels per extractor layer.
    #[arg(long, value_delimiter = ',', default_value = "8,16,16,32,32")]
    pub channels: Vec<usize>,
    /// Model configuration JSON; defaults to the built-in toy model.
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// Output bundle directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<quadtok::Error>() {
            return match e.kind() {
                quadtok::ErrorKind::Usage => 2,
                quadtok::ErrorKind::Input => 3,
                quadtok::ErrorKind::Numeric => 4,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 3;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tokenize(a) => commands::tokenize(&a),
        Command::Render(a) => render::render(&a),
        Command::Score(a) => commands::score(&a),
        Command::Correlate(a) => commands::correlate(&a),
        Command::Stats(a) => commands::stats(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Forward(a) => commands::forward(&a),
        Command::InitWeights(a) => commands::init_weights(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
