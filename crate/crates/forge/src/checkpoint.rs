//! Per-stage resumable checkpoints, one file per run, one entry per instance.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt checkpoint {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub run_id: String,
    pub stage: String,
    pub config_digest: String,
    pub completed_ids: Vec<String>,
    pub results: BTreeMap<String, Value>,
}

impl Checkpoint {
    pub fn new(run_id: &str, stage: &str, config_digest: &str) -> Self {
        Self {
            run_id: run_id.into(),
            stage: stage.into(),
            config_digest: config_digest.into(),
            completed_ids: Vec::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| CheckpointError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Atomic save: write a temp file, then rename over the target.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let io_err = |p: &Path| {
            let p = p.display().to_string();
            move |e: std::io::Error| CheckpointError::Io { path: p.clone(), source: e }
        };
        std::fs::write(&tmp, serde_json::to_string(self).expect("checkpoint serializes"))
            .map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    /// Resume only against a checkpoint written by the same stage and config.
    pub fn check_compatible(&self, stage: &str, config_digest: &str) -> Result<(), CheckpointError> {
        if self.stage != stage {
            return Err(CheckpointError::Mismatch(format!(
                "checkpoint belongs to stage `{}`, not `{stage}`",
                self.stage
            )));
        }
        if self.config_digest != config_digest {
            return Err(CheckpointError::Mismatch(
                "config digest differs from the one that produced this checkpoint; \
                 refusing to resume under a changed configuration"
                    .into(),
            ));
        }
        Ok(())
    }

    pub fn is_completed(&self, id: &str) -> bool {
        self.results.contains_key(id)
    }

    pub fn record(&mut self, id: &str, result: Value) {
        if self.results.insert(id.to_string(), result).is_none() {
            self.completed_ids.push(id.to_string());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ckpt.json");
        let mut ckpt = Checkpoint::new("r1", "generate-cot", "abc");
        ckpt.record("i1", serde_json::json!({"ok": true}));
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ckpt);
        assert!(loaded.is_completed("i1"));
        assert!(!loaded.is_completed("i2"));
    }

    #[test]
    fn digest_mismatch_refuses() {
        let ckpt = Checkpoint::new("r1", "filter", "abc");
        assert!(ckpt.check_compatible("filter", "abc").is_ok());
        assert!(ckpt.check_compatible("filter", "other").is_err());
        assert!(ckpt.check_compatible("split", "abc").is_err());
    }
}
