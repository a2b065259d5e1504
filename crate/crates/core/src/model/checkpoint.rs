use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Generator, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub id: String,
    pub shape: Vec<usize>,
    /// Row-major values.
    pub data: Vec<f64>,
}

/// Self-describing generator snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: ModelConfig,
    pub epochs_trained: usize,
    pub params: Vec<ParamRecord>,
    /// Free-form attachments such as a fitted standardiser or threshold.
    #[serde(default)]
    pub extras: BTreeMap<String, serde_json::Value>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(p) = self.params.iter().find(|p| p.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite { term: format!("parameter {}", p.id) });
        }
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                ck.format_version
            )));
        }
        Ok(ck)
    }
}

impl Generator {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            epochs_trained: self.epochs_trained,
            params: self
                .store
                .iter()
                .map(|p| ParamRecord { id: p.id.clone(), shape: p.value.shape().to_vec(), data: p.value.data().to_vec() })
                .collect(),
            extras: BTreeMap::new(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut g = Generator::new(ck.config.clone(), 0)?;
        if ck.params.len() != g.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} parameters stored, configuration needs {}",
                ck.params.len(),
                g.store.len()
            )));
        }
        for rec in &ck.params {
            let id = g
                .store
                .find(&rec.id)
                .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", rec.id)))?;
            let p = g.store.get_mut(id);
            if p.value.shape() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    rec.id,
                    rec.shape,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(rec.shape.clone(), rec.data.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        g.epochs_trained = ck.epochs_trained;
        Ok(g)
    }
}
