//! Self-describing JSON checkpoints.
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::LabelSpace;
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::losses::LossSpec;

pub const FORMAT: &str = "stsreg-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub labels: LabelSpace,
    pub loss: LossSpec,
    pub model: Model,
}

impl Checkpoint {
    pub fn new(model: Model, labels: LabelSpace, loss: LossSpec) -> Self {
        Checkpoint {
            format: FORMAT.to_owned(),
            labels,
            loss,
            model,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_slice(bytes).map_err(|e| Error::Checkpoint(format!("unreadable: {e}")))?;
        if ckpt.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "unsupported format {:?} (expected {FORMAT:?})",
                ckpt.format
            )));
        }
        ckpt.model
            .check_consistent()
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Hex SHA-256 of the serialised checkpoint.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
