//! Run manifests, score files and output plumbing.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use quadtok::quadtree::PatchRect;
use quadtok::scorers::PatchScores;
use quadtok::Error;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct RunManifest<'a, C: Serialize> {
    pub schema_version: u32,
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub inputs: &'a [PathBuf],
    pub seed: u64,
    pub config: &'a C,
    pub outputs: Vec<PathBuf>,
}

impl<'a, C: Serialize> RunManifest<'a, C> {
    pub fn new(command: &'static str, inputs: &'a [PathBuf], seed: u64, config: &'a C) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            tool: "quadtok",
            version: env!("CARGO_PKG_VERSION"),
            command,
            inputs,
            seed,
            config,
            outputs: Vec::new(),
        }
    }
}

/// `dir/manifest.json` for directory outputs, `name.manifest.json` beside a file.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        return out.join("manifest.json");
    }
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Writes `text` to `out`, or stdout when no path is given.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn write_manifest<C: Serialize>(out: Option<&Path>, is_dir: bool, m: &RunManifest<'_, C>) -> Result<()> {
    if let Some(p) = out {
        write_text(&manifest_path(p, is_dir), &to_json(m))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageScores {
    pub path: PathBuf,
    pub height: usize,
    pub width: usize,
    pub scores: Vec<ScoreEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFile {
    pub schema_version: u32,
    pub scorer: String,
    pub images: Vec<ImageScores>,
}

impl ImageScores {
    pub fn new(path: &Path, height: usize, width: usize, scores: &PatchScores) -> Self {
        ImageScores {
            path: path.to_path_buf(),
            height,
            width,
            scores: scores
                .iter()
                .map(|(p, score)| ScoreEntry {
                    x: p.x,
                    y: p.y,
                    size: p.size,
                    score,
                })
                .collect(),
        }
    }

    pub fn to_scores(&self) -> Result<PatchScores> {
        Ok(PatchScores::new(
            self.scores.iter().map(|e| (PatchRect::new(e.x, e.y, e.size), e.score)),
        )?)
    }
}

impl ScoreFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let f: ScoreFile = serde_json::from_str(&text)
            .map_err(Error::from)
            .with_context(|| format!("parsing {}", path.display()))?;
        if f.schema_version != SCHEMA_VERSION {
            return Err(Error::format("schema_version", format!("unsupported version {}", f.schema_version)).into());
        }
        Ok(f)
    }
}
