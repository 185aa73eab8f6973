use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Agent, Algorithm, RlError, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// Trained actor with the configuration that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    /// Environment steps consumed when the checkpoint was taken.
    pub step: u64,
    pub agent: Agent,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn new(algorithm: Algorithm, step: u64, agent: Agent, config: TrainConfig) -> Self {
        Self { schema_version: SCHEMA_VERSION, algorithm, step, agent, config }
    }

    pub fn to_json(&self) -> Result<String, RlError> {
        serde_json::to_string_pretty(self).map_err(|e| RlError::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, RlError> {
        #[derive(Deserialize)]
        struct Version {
            schema_version: u32,
        }
        let v: Version = serde_json::from_str(text).map_err(|e| RlError::Serde(e.to_string()))?;
        if v.schema_version != SCHEMA_VERSION {
            return Err(RlError::Serde(format!(
                "checkpoint schema {} is not supported (expected {SCHEMA_VERSION})",
                v.schema_version
            )));
        }
        let ck: Self = serde_json::from_str(text).map_err(|e| RlError::Serde(e.to_string()))?;
        ck.agent.params.check_shapes(&ck.agent.topology)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        std::fs::write(path, self.to_json()?).map_err(|e| RlError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| RlError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}
