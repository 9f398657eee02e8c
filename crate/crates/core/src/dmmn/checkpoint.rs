//! Checkpoint files.
//!
//! ```text
//! b"DIALCKPT1" | header_len: u32 LE | header (JSON, header_len bytes)
//!             | parameters as f32 LE, in the tensor order listed in the header
//! ```
//!
//! The model hash is the SHA-256 of the whole file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{DmmnConfig, DmmnModel, TensorInfo, INIT_SCHEME};
use crate::error::{DialError, Result};
use crate::seed::sha256_hex;

pub const CHECKPOINT_MAGIC: &[u8; 9] = b"DIALCKPT1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: DmmnConfig,
    pub init: String,
    /// Hash of the checkpoint this one was finetuned from.
    pub parent: Option<String>,
    /// Free-form name such as `Model1`.
    pub tag: String,
    pub tensors: Vec<TensorInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: DmmnModel,
}

impl Checkpoint {
    pub fn new(model: DmmnModel, tag: impl Into<String>, parent: Option<String>) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                config: *model.config(),
                init: INIT_SCHEME.to_string(),
                parent,
                tag: tag.into(),
                tensors: model.tensors().to_vec(),
            },
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let params = self.model.params();
        let mut out = Vec::with_capacity(13 + header.len() + params.len() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        if bytes.len() < 13 || &bytes[..9] != CHECKPOINT_MAGIC {
            return Err(DialError::Format("missing DIALCKPT1 header".into()));
        }
        let hlen = u32::from_le_bytes(bytes[9..13].try_into().unwrap()) as usize;
        let body = 13 + hlen;
        if bytes.len() < body {
            return Err(DialError::Format("truncated checkpoint header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[13..body])?;
        let data = &bytes[body..];
        if !data.len().is_multiple_of(4) {
            return Err(DialError::Format(
                "parameter block is not a whole number of f32".into(),
            ));
        }
        let params: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let model = DmmnModel::from_params(header.config, params)?;
        if model.tensors() != header.tensors.as_slice() {
            return Err(DialError::Format(
                "tensor table does not match the config".into(),
            ));
        }
        Ok(Checkpoint { header, model })
    }

    /// Writes the file and returns its hash.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| DialError::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| DialError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| DialError::io(path, e))?;
        Ok(sha256_hex(&bytes))
    }

    /// Loads a checkpoint along with the hash of its file.
    pub fn load(path: &Path) -> Result<(Checkpoint, String)> {
        let bytes = fs::read(path).map_err(|e| DialError::io(path, e))?;
        Ok((Checkpoint::from_bytes(&bytes)?, sha256_hex(&bytes)))
    }
}
