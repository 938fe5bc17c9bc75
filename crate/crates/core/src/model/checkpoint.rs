use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AlphaTable, EncoderConfig, Heads, ModelKind, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Self-describing JSON container for trained parameters. Floats are
/// written in shortest round-trip form, so reloading is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: ModelKind,
    pub fold: usize,
    pub epoch: usize,
    pub val_loss: f64,
    pub n_params: usize,
    /// Training configuration echo (optimizer settings included).
    pub config: serde_json::Value,
    pub encoder: EncoderConfig,
    pub theta: Vec<f64>,
    pub heads: Heads,
    pub alpha: AlphaTable,
}

impl Checkpoint {
    pub fn new(
        params: &ModelParams,
        alpha: &AlphaTable,
        fold: usize,
        epoch: usize,
        val_loss: f64,
        config: serde_json::Value,
    ) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT,
            kind: params.kind(),
            fold,
            epoch,
            val_loss,
            n_params: params.n_params(),
            config,
            encoder: params.encoder_config().clone(),
            theta: params.theta.clone(),
            heads: params.heads.clone(),
            alpha: alpha.clone(),
        }
    }

    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::from_parts(self.encoder.clone(), self.theta.clone(), self.heads.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_slice(&bytes)?;
        if ck.format_version != CHECKPOINT_FORMAT {
            return Err(Error::Invalid(format!(
                "{}: unsupported checkpoint format {}",
                path.display(),
                ck.format_version
            )));
        }
        Ok(ck)
    }
}
