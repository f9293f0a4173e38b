//! Tensor file format used for model checkpoints and pre-trained extractor weights.
//!
//! Layout: one line of JSON (the manifest) terminated by `\n`, followed by the
//! raw tensor data. Tensors appear in manifest order, each stored row-major as
//! little-endian `f32`.
//!
//! ```text
//! {"format":"s3gan-tensors","version":1,"config":{...},"step":120,"seed":7,
//!  "tensors":[{"name":"encoder.block0.conv.weight","shape":[16,3,4,4],"dtype":"f32"},...]}
//! <f32 LE bytes ...>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, ArrayViewD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{build_models, ArchitectureConfig, ModelBundle};

pub const FORMAT: &str = "s3gan-tensors";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ArchitectureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tensors: Vec<TensorEntry>,
}

/// An in-memory tensor file.
#[derive(Debug, Clone)]
pub struct TensorFile {
    pub manifest: Manifest,
    data: Vec<ArrayD<f32>>,
}

impl TensorFile {
    pub fn write<'a, I>(
        path: &Path,
        config: Option<&ArchitectureConfig>,
        step: Option<u64>,
        seed: Option<u64>,
        tensors: I,
    ) -> Result<()>
    where
        I: IntoIterator<Item = (String, ArrayViewD<'a, f32>)>,
    {
        let tensors: Vec<_> = tensors.into_iter().collect();
        let manifest = Manifest {
            format: FORMAT.to_string(),
            version: VERSION,
            config: config.cloned(),
            step,
            seed,
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry { name: name.clone(), shape: t.shape().to_vec(), dtype: "f32".into() })
                .collect(),
        };
        let mut out = BufWriter::new(File::create(path)?);
        serde_json::to_writer(&mut out, &manifest)?;
        out.write_all(b"\n")?;
        for (_, t) in &tensors {
            for v in t.iter() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut input = BufReader::new(File::open(path)?);
        let mut header = Vec::new();
        input.read_until(b'\n', &mut header)?;
        if header.last() != Some(&b'\n') {
            return Err(Error::Checkpoint("missing manifest line".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&header)
            .map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format {} v{}",
                manifest.format, manifest.version
            )));
        }
        let mut data = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            if entry.dtype != "f32" {
                return Err(Error::Checkpoint(format!("{}: unsupported dtype {}", entry.name, entry.dtype)));
            }
            let n: usize = entry.shape.iter().product();
            let mut bytes = vec![0u8; n * 4];
            input
                .read_exact(&mut bytes)
                .map_err(|_| Error::Checkpoint(format!("{}: truncated tensor data", entry.name)))?;
            let values = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            data.push(ArrayD::from_shape_vec(IxDyn(&entry.shape), values).expect("length from shape"));
        }
        if input.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
        }
        Ok(Self { manifest, data })
    }

    /// Looks up a tensor by name and checks its shape.
    pub fn get(&self, name: &str, shape: &[usize]) -> Result<ArrayD<f32>> {
        let idx = self
            .manifest
            .tensors
            .iter()
            .position(|e| e.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        let t = &self.data[idx];
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {:?}", t.shape(), shape)));
        }
        Ok(t.clone())
    }
}

/// Writes a model checkpoint.
pub fn save_checkpoint(bundle: &ModelBundle, seed: Option<u64>, path: &Path) -> Result<()> {
    TensorFile::write(
        path,
        Some(&bundle.config),
        Some(bundle.step),
        Some(seed.unwrap_or(bundle.config.seed)),
        bundle.tensors(),
    )
}

/// Metadata stored next to the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointInfo {
    pub step: u64,
    pub seed: u64,
}

/// Reads a model checkpoint, rebuilding the networks from the stored architecture.
pub fn load_checkpoint(path: &Path) -> Result<(ModelBundle, CheckpointInfo)> {
    let file = TensorFile::read(path)?;
    let config = file
        .manifest
        .config
        .clone()
        .ok_or_else(|| Error::Checkpoint("manifest has no architecture config".into()))?;
    let mut bundle = build_models(&config)?;
    let expected = bundle.tensors().len();
    if file.manifest.tensors.len() != expected {
        return Err(Error::Checkpoint(format!(
            "expected {expected} tensors, found {}",
            file.manifest.tensors.len()
        )));
    }
    for (name, mut t) in bundle.tensors_mut() {
        let v = file.get(&name, t.shape())?;
        t.assign(&v);
    }
    bundle.step = file.manifest.step.unwrap_or(0);
    let info = CheckpointInfo { step: bundle.step, seed: file.manifest.seed.unwrap_or(config.seed) };
    Ok((bundle, info))
}
