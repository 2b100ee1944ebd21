//! Tensor-bundle file format used repo-wide: a `manifest.json` listing
//! entries {name, dtype, shape, byte_offset} plus one raw little-endian
//! binary blob `data.bin`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::FieldTensor;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const DATA_NAME: &str = "data.bin";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub meta: serde_json::Value,
}

/// Accumulates tensors and writes the manifest + blob pair atomically
/// (write to temp names, then rename).
pub struct BundleWriter {
    entries: Vec<ManifestEntry>,
    blob: Vec<u8>,
    meta: serde_json::Value,
}

impl Default for BundleWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl BundleWriter {
    pub fn new() -> Self {
        Self { entries: Vec::new(), blob: Vec::new(), meta: serde_json::Value::Null }
    }

    pub fn meta(&mut self, meta: serde_json::Value) -> &mut Self {
        self.meta = meta;
        self
    }

    pub fn add<T: Scalar>(&mut self, name: &str, tensor: &FieldTensor<T>) -> &mut Self {
        let byte_offset = self.blob.len();
        match T::DTYPE {
            Dtype::F32 => {
                for v in tensor.data() {
                    self.blob.extend_from_slice(&(v.to_f32().unwrap()).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for v in tensor.data() {
                    self.blob.extend_from_slice(&(v.to_f64().unwrap()).to_le_bytes());
                }
            }
        }
        self.entries.push(ManifestEntry {
            name: name.to_string(),
            dtype: T::DTYPE.name().to_string(),
            shape: tensor.shape().to_vec(),
            byte_offset,
        });
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = Manifest {
            version: 1,
            entries: self.entries.clone(),
            meta: self.meta.clone(),
        };
        let tmp_manifest = dir.join(format!("{MANIFEST_NAME}.tmp"));
        let tmp_data = dir.join(format!("{DATA_NAME}.tmp"));
        fs::write(&tmp_data, &self.blob)?;
        fs::write(&tmp_manifest, serde_json::to_string_pretty(&manifest)?)?;
        fs::rename(&tmp_data, dir.join(DATA_NAME))?;
        fs::rename(&tmp_manifest, dir.join(MANIFEST_NAME))?;
        Ok(())
    }
}

/// Read-side view of a bundle directory.
pub struct BundleReader {
    pub manifest: Manifest,
    blob: Vec<u8>,
}

impl BundleReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_NAME);
        let text = fs::read_to_string(&manifest_path).map_err(|e| {
            Error::BundleFormat(format!("cannot read {}: {e}", manifest_path.display()))
        })?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.version != 1 {
            return Err(Error::BundleFormat(format!(
                "unsupported bundle version {}",
                manifest.version
            )));
        }
        let blob = fs::read(dir.join(DATA_NAME))?;
        Ok(Self { manifest, blob })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.manifest.entries.iter().map(|e| e.name.as_str())
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.entries.iter().any(|e| e.name == name)
    }

    fn entry(&self, name: &str) -> Result<&ManifestEntry> {
        self.manifest
            .entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::BundleFormat(format!("no entry named {name}")))
    }

    /// Load an entry, converting between f32 and f64 storage as needed.
    pub fn get<T: Scalar>(&self, name: &str) -> Result<FieldTensor<T>> {
        let entry = self.entry(name)?;
        let dtype = Dtype::parse(&entry.dtype)
            .ok_or_else(|| Error::BundleFormat(format!("unknown dtype {}", entry.dtype)))?;
        let numel: usize = entry.shape.iter().product();
        let nbytes = numel * dtype.size();
        let end = entry.byte_offset + nbytes;
        if end > self.blob.len() {
            return Err(Error::BundleFormat(format!(
                "entry {name} overruns blob ({end} > {})",
                self.blob.len()
            )));
        }
        let bytes = &self.blob[entry.byte_offset..end];
        let mut data = Vec::with_capacity(numel);
        match dtype {
            Dtype::F32 => {
                for chunk in bytes.chunks_exact(4) {
                    let v = f32::from_le_bytes(chunk.try_into().unwrap());
                    data.push(T::from_f64_lossy(v as f64));
                }
            }
            Dtype::F64 => {
                for chunk in bytes.chunks_exact(8) {
                    let v = f64::from_le_bytes(chunk.try_into().unwrap());
                    data.push(T::from_f64_lossy(v));
                }
            }
        }
        FieldTensor::new(entry.shape.clone(), data)
    }

    pub fn meta(&self) -> &serde_json::Value {
        &self.manifest.meta
    }
}
