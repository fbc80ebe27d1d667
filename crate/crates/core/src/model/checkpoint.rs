//! Versioned checkpoint container.
//!
//! Layout (little endian):
//!
//! ```text
//! b"AFKT" | u32 format_version | u64 header_len | header JSON | f32 tensor data
//! ```
//!
//! The JSON header carries the config hash, iteration, normalisation constants,
//! the full run config and a table of `(name, shape, offset)` entries whose
//! offsets index (in elements) into the trailing data block.

use std::io::Read;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use super::{NamedArrays, Normalization};
use crate::error::{bail, Error, Result};

pub const MAGIC: &[u8; 4] = b"AFKT";
pub const FORMAT_VERSION: u32 = 1;
pub const PRETEXT_CONTRASTIVE_WARP: &str = "contrastive-warp";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config_hash: String,
    iteration: u64,
    pretext: Option<String>,
    normalization: Normalization,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub iteration: u64,
    /// Set for self-supervised checkpoints (`"contrastive-warp"`).
    pub pretext: Option<String>,
    pub normalization: Normalization,
    /// The run configuration that produced the weights.
    pub config: serde_json::Value,
    pub tensors: NamedArrays,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.tensors.len());
        let mut offset = 0;
        for (name, arr) in &self.tensors {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: arr.shape().to_vec(),
                offset,
            });
            offset += arr.len();
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config_hash: self.config_hash.clone(),
            iteration: self.iteration,
            pretext: self.pretext.clone(),
            normalization: self.normalization,
            config: self.config.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for arr in self.tensors.values() {
            for v in arr.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            bail!(Format, "not a checkpoint (bad magic)");
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            bail!(Format, "unsupported checkpoint format version {version}");
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let Some(hbytes) = bytes.get(16..16 + hlen) else {
            bail!(Format, "truncated checkpoint header");
        };
        let header: Header =
            serde_json::from_slice(hbytes).map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        if header.format_version != version {
            bail!(Format, "header/prefix format version disagree");
        }
        let data = &bytes[16 + hlen..];
        let mut tensors = NamedArrays::new();
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            let Some(raw) = data.get(e.offset * 4..(e.offset + n) * 4) else {
                bail!(Format, "tensor {} runs past the end of the data block", e.name);
            };
            let vals: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let arr = ArrayD::from_shape_vec(IxDyn(&e.shape), vals).expect("length checked");
            tensors.insert(e.name, arr);
        }
        Ok(Checkpoint {
            config_hash: header.config_hash,
            iteration: header.iteration,
            pretext: header.pretext,
            normalization: header.normalization,
            config: header.config,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
