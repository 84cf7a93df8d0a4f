use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialized network: spec, flat weights in layer order, normalization
/// statistics and training metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub spec: NetworkSpec,
    pub weights: Vec<f64>,
    pub norm_stats: BTreeMap<String, Vec<f64>>,
    pub seed: u64,
    pub epochs: usize,
}

impl Checkpoint {
    pub fn from_network(net: &Network, norm_stats: BTreeMap<String, Vec<f64>>, seed: u64, epochs: usize) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            spec: net.spec().clone(),
            weights: net.params().to_vec(),
            norm_stats,
            seed,
            epochs,
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        Network::from_weights(self.spec.clone(), self.weights.clone())
    }

    pub fn to_json(&self) -> Result<String> {
        let finite = self.weights.iter().chain(self.norm_stats.values().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("checkpoint values"));
        }
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            other => {
                return Err(Error::Checkpoint(format!(
                    "unsupported checkpoint version {other:?}, expected {CHECKPOINT_VERSION}"
                )))
            }
        }
        let ckpt: Checkpoint = serde_json::from_value(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
        // Rebuild once to validate the weight count against the spec.
        ckpt.to_network()?;
        Ok(ckpt)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
