//! Strict JSON configuration: named backends, pipeline knobs, and paths.
//! Unknown keys are rejected so a misspelled reward weight cannot silently
//! fall back to its default.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{Client, HttpBackend, RetryPolicy};
use crate::cotloop::DecodeDefaults;
use crate::judge::TolerancePolicy;
use crate::mock::{MockBackend, MockMode};
use crate::reward::RewardWeights;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error: {0}")]
    Parse(String),
    #[error("backend reference `{0}` does not resolve to a configured backend")]
    UnresolvedBackend(String),
    #[error("backend `{name}` misconfigured: {message}")]
    BadBackend { name: String, message: String },
}

fn default_temperature() -> f64 {
    0.0
}
fn default_max_tokens() -> u32 {
    1024
}
fn default_max_attempts() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    1000
}
fn default_backoff_factor() -> f64 {
    2.0
}
fn default_concurrency() -> usize {
    crate::backend::DEFAULT_CONCURRENCY
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    /// "http" or "mock".
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Mock behavior: "arithmetic" or "fixed".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default)]
    pub wrong_first: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff_ms")]
    pub base_backoff_ms: u64,
    #[serde(default = "default_backoff_factor")]
    pub backoff_factor: f64,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_max_iters() -> usize {
    crate::cotloop::DEFAULT_MAX_ITERS
}
fn default_rel_tol() -> f64 {
    0.005
}
fn default_abs_tol() -> f64 {
    1e-4
}
fn default_true() -> bool {
    true
}
fn default_alpha() -> f64 {
    1.0
}
fn default_length_threshold() -> u64 {
    crate::reward::LENGTH_THRESHOLD
}
fn default_generation_temperature() -> f64 {
    crate::cotloop::DEFAULT_GENERATION_TEMPERATURE
}
fn default_parallelism() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Backend names per role; each must resolve in `backends`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval_model: Option<String>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub seed: i64,
    #[serde(default)]
    pub sft_count: usize,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_true")]
    pub allow_percent_decimal: bool,
    #[serde(default = "default_true")]
    pub allow_scale_units: bool,
    #[serde(default = "default_alpha")]
    pub alpha_acc: f64,
    #[serde(default = "default_alpha")]
    pub alpha_logic: f64,
    #[serde(default = "default_alpha")]
    pub alpha_format: f64,
    #[serde(default = "default_alpha")]
    pub alpha_length: f64,
    #[serde(default = "default_length_threshold")]
    pub length_threshold: u64,
    #[serde(default = "default_generation_temperature")]
    pub generation_temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub generation_max_tokens: u32,
    /// When true, stage 1 replaces the instance question with the combined
    /// question; default keeps both.
    #[serde(default)]
    pub replace_question: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub backends: BTreeMap<String, BackendConfig>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Config {
    pub fn tolerance_policy(&self) -> TolerancePolicy {
        TolerancePolicy {
            rel_tol: self.pipeline.rel_tol,
            abs_tol: self.pipeline.abs_tol,
            allow_percent_decimal: self.pipeline.allow_percent_decimal,
            allow_scale_units: self.pipeline.allow_scale_units,
        }
    }

    pub fn reward_weights(&self) -> RewardWeights {
        RewardWeights {
            alpha_acc: self.pipeline.alpha_acc,
            alpha_logic: self.pipeline.alpha_logic,
            alpha_format: self.pipeline.alpha_format,
            alpha_length: self.pipeline.alpha_length,
        }
    }

    pub fn decode_defaults(&self) -> DecodeDefaults {
        DecodeDefaults {
            temperature: self.pipeline.generation_temperature,
            max_tokens: self.pipeline.generation_max_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for reference in [
            &self.pipeline.generator,
            &self.pipeline.judge,
            &self.pipeline.filter_model,
            &self.pipeline.eval_model,
        ]
        .into_iter()
        .flatten()
        {
            if !self.backends.contains_key(reference) {
                return Err(ConfigError::UnresolvedBackend(reference.clone()));
            }
        }
        if self.pipeline.max_iters == 0 {
            return Err(ConfigError::Parse("pipeline.max_iters must be positive".into()));
        }
        if self.pipeline.length_threshold == 0 {
            return Err(ConfigError::Parse("pipeline.length_threshold must be positive".into()));
        }
        for (name, backend) in &self.backends {
            match backend.kind.as_str() {
                "http" => {
                    if backend.base_url.is_none() || backend.model.is_none() {
                        return Err(ConfigError::BadBackend {
                            name: name.clone(),
                            message: "http backends need base_url and model".into(),
                        });
                    }
                }
                "mock" => match backend.mode.as_deref() {
                    Some("arithmetic") => {}
                    Some("fixed") if backend.text.is_some() => {}
                    Some("fixed") => {
                        return Err(ConfigError::BadBackend {
                            name: name.clone(),
                            message: "fixed mock needs `text`".into(),
                        })
                    }
                    other => {
                        return Err(ConfigError::BadBackend {
                            name: name.clone(),
                            message: format!("unknown mock mode {other:?}"),
                        })
                    }
                },
                other => {
                    return Err(ConfigError::BadBackend {
                        name: name.clone(),
                        message: format!("unknown backend kind `{other}`"),
                    })
                }
            }
        }
        Ok(())
    }

    /// Build a [`Client`] for the named backend.
    pub fn client(&self, name: &str) -> Result<Client, ConfigError> {
        let cfg = self
            .backends
            .get(name)
            .ok_or_else(|| ConfigError::UnresolvedBackend(name.to_string()))?;
        let policy = RetryPolicy {
            max_attempts: cfg.max_attempts,
            base_backoff: Duration::from_millis(cfg.base_backoff_ms),
            backoff_factor: cfg.backoff_factor,
        };
        let backend: Arc<dyn crate::backend::ModelBackend> = match cfg.kind.as_str() {
            "http" => Arc::new(HttpBackend::new(
                cfg.base_url.clone().unwrap_or_default(),
                cfg.model.clone().unwrap_or_default(),
            )),
            "mock" => {
                let mode = match cfg.mode.as_deref() {
                    Some("fixed") => MockMode::Fixed(cfg.text.clone().unwrap_or_default()),
                    _ => MockMode::Arithmetic { wrong_first: cfg.wrong_first },
                };
                Arc::new(MockBackend::new(mode, name))
            }
            other => {
                return Err(ConfigError::BadBackend {
                    name: name.to_string(),
                    message: format!("unknown backend kind `{other}`"),
                })
            }
        };
        Ok(Client::with_policy(backend, policy, cfg.concurrency))
    }

    pub fn named_client(&self, role: &str, name: &Option<String>) -> Result<Client, ConfigError> {
        let name = name
            .as_ref()
            .ok_or_else(|| ConfigError::Parse(format!("pipeline.{role} backend not configured")))?;
        self.client(name)
    }

    /// Content hash binding checkpoints to the configuration that wrote them.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Parse and validate a config file. Unknown keys fail, naming the key.
pub fn parse_config(path: impl AsRef<Path>) -> Result<Config, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let config: Config =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_config(json: &serde_json::Value) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, serde_json::to_string_pretty(json).unwrap()).unwrap();
        (dir, path)
    }

    #[test]
    fn minimal_config_fills_defaults() {
        let (_dir, path) = write_config(&serde_json::json!({
            "backends": {"gen": {"kind": "mock", "mode": "arithmetic"}},
            "pipeline": {"generator": "gen"}
        }));
        let config = parse_config(&path).unwrap();
        assert_eq!(config.pipeline.length_threshold, 8192);
        assert_eq!(config.pipeline.max_iters, 3);
        assert_eq!(config.pipeline.rel_tol, 0.005);
        assert_eq!(config.pipeline.alpha_acc, 1.0);
    }

    #[test]
    fn unknown_key_is_named_in_error() {
        let (_dir, path) = write_config(&serde_json::json!({
            "backends": {},
            "pipeline": {"alpa_acc": 2.0}
        }));
        match parse_config(&path) {
            Err(ConfigError::Parse(msg)) => assert!(msg.contains("alpa_acc"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn override_survives_parsing() {
        let (_dir, path) = write_config(&serde_json::json!({
            "backends": {"gen": {"kind": "mock", "mode": "arithmetic"}},
            "pipeline": {"generator": "gen", "max_iters": 5}
        }));
        assert_eq!(parse_config(&path).unwrap().pipeline.max_iters, 5);
    }

    #[test]
    fn unresolved_backend_reference_fails() {
        let (_dir, path) = write_config(&serde_json::json!({
            "backends": {},
            "pipeline": {"generator": "missing"}
        }));
        assert!(matches!(
            parse_config(&path),
            Err(ConfigError::UnresolvedBackend(name)) if name == "missing"
        ));
    }

    #[test]
    fn parse_serialize_parse_is_fixed_point() {
        let (_dir, path) = write_config(&serde_json::json!({
            "backends": {
                "gen": {"kind": "mock", "mode": "arithmetic", "wrong_first": true},
                "api": {"kind": "http", "base_url": "https://api.example.com", "model": "gpt-4o"}
            },
            "pipeline": {"generator": "gen", "judge": "api", "seed": 11}
        }));
        let first = parse_config(&path).unwrap();
        let reserialized = serde_json::to_string(&first).unwrap();
        let second: Config = serde_json::from_str(&reserialized).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.digest(), second.digest());
    }
}
