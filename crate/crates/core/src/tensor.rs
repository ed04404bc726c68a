//! `MTOK1` tensor container and directory bundles of named tensors.
//!
//! Container layout: ASCII `MTOK1`, one `u8` rank, `rank` little-endian
//! `u32` dims, then the row-major little-endian `f32` payload.
//!
//! A bundle is a directory holding `manifest.json` plus one container file
//! per tensor. The manifest records each tensor's name, role and shape, and
//! an opaque `meta` object owned by whoever wrote the bundle.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"MTOK1";
pub const BUNDLE_FORMAT: &str = "mtok-bundle";
pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::Dimension(format!("rank {} exceeds 255", dims.len())));
        }
        if let Some(d) = dims.iter().find(|&&d| d > u32::MAX as usize) {
            return Err(Error::Dimension(format!("dimension {d} exceeds u32")));
        }
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "dims {dims:?} imply {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn expect_dims(&self, what: &str, dims: &[usize]) -> Result<()> {
        if self.dims != dims {
            return Err(Error::Dimension(format!(
                "{what}: expected shape {dims:?}, found {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(self.dims.len() as u8);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 || &bytes[..5] != MAGIC {
            return Err(Error::format("magic", "expected \"MTOK1\""));
        }
        let rank = bytes[5] as usize;
        let dims_end = 6 + 4 * rank;
        if bytes.len() < dims_end {
            return Err(Error::format("dims", "truncated dimension list"));
        }
        let dims: Vec<usize> = bytes[6..dims_end]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("dims", "element count overflows"))?;
        let payload = &bytes[dims_end..];
        if payload.len() != n * 4 {
            return Err(Error::format(
                "payload",
                format!("expected {} bytes, found {}", n * 4, payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Tensor::decode(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleManifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub meta: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

/// Ordered collection of named tensors with a JSON manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub kind: String,
    pub meta: serde_json::Value,
    entries: Vec<(String, String, Tensor)>,
}

impl TensorBundle {
    pub fn new(kind: impl Into<String>, meta: serde_json::Value) -> Self {
        TensorBundle {
            kind: kind.into(),
            meta,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, role: impl Into<String>, tensor: Tensor) {
        self.entries.push((name.into(), role.into(), tensor));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _, _)| n == name)
            .map(|(_, _, t)| t)
            .ok_or_else(|| Error::format("bundle", format!("missing tensor {name:?}")))
    }

    /// Fetches a tensor and checks its shape.
    pub fn get_shaped(&self, name: &str, dims: &[usize]) -> Result<&Tensor> {
        let t = self.get(name)?;
        t.expect_dims(name, dims)?;
        Ok(t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _, _)| n.as_str())
    }

    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            format: BUNDLE_FORMAT.into(),
            version: BUNDLE_VERSION,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self
                .entries
                .iter()
                .map(|(name, role, t)| TensorEntry {
                    name: name.clone(),
                    role: role.clone(),
                    shape: t.dims().to_vec(),
                    file: format!("{name}.mtok"),
                })
                .collect(),
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let manifest = self.manifest();
        for (entry, (_, _, t)) in manifest.tensors.iter().zip(&self.entries) {
            t.save(dir.join(&entry.file))?;
        }
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: BundleManifest =
            serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(Error::format(
                "manifest",
                format!("unexpected format {:?}", manifest.format),
            ));
        }
        if manifest.version != BUNDLE_VERSION {
            return Err(Error::format(
                "manifest",
                format!("unsupported version {}", manifest.version),
            ));
        }
        let mut bundle = TensorBundle::new(manifest.kind, manifest.meta);
        for entry in manifest.tensors {
            if entry.file.contains(['/', '\\']) || entry.file.starts_with('.') {
                return Err(Error::format("manifest", format!("bad file name {:?}", entry.file)));
            }
            let t = Tensor::load(dir.join(&entry.file))?;
            t.expect_dims(&entry.name, &entry.shape)?;
            bundle.push(entry.name, entry.role, t);
        }
        Ok(bundle)
    }
}
