//! Engine configuration file.
//!
//! ```toml
//! port = 8080
//!
//! [anomaly]
//! baseline_window = 120
//! threshold = 3.0
//! persistence = 3
//!
//! [[sle]]
//! layer = "gpu"
//! window_length_secs = 300
//! stride_secs = 60
//! constituents = [{ metric = "gpu.temperature", upper_bound = 85.0 }]
//!
//! [rca.weights]
//! nic = 0.9
//!
//! [[rca.signatures]]
//! metric = "gpu.power"
//! direction = "high"
//! cause = "gpu_saturation"
//!
//! [explanation]
//! enabled = true
//! endpoint = "http://127.0.0.1:9000/explain"
//! api_key_env = "ASSURE_EXPLAIN_KEY"
//! timeout_ms = 5000
//! transcript = "explain.jsonl"
//! ```
//!
//! Every section is optional. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anomaly::DetectorParams;
use crate::model::Layer;
use crate::rca::{ExplanationClient, HttpClient, LayerWeights, RcaConfig, SignatureRule, SignatureTable, TemplateClient};
use crate::sle::SleProfile;

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RcaSection {
    pub weights: LayerWeights,
    pub signatures: Vec<SignatureRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplanationConfig {
    pub enabled: bool,
    pub endpoint: Option<String>,
    /// Environment variable holding the API key.
    pub api_key_env: Option<String>,
    pub timeout_ms: u64,
    pub transcript: Option<PathBuf>,
}

impl Default for ExplanationConfig {
    fn default() -> Self {
        ExplanationConfig { enabled: false, endpoint: None, api_key_env: None, timeout_ms: 10_000, transcript: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub port: u16,
    /// Per-layer overrides of the built-in profiles.
    pub sle: Vec<SleProfile>,
    pub anomaly: DetectorParams,
    pub rca: RcaSection,
    pub explanation: ExplanationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            port: DEFAULT_PORT,
            sle: Vec::new(),
            anomaly: DetectorParams::default(),
            rca: RcaSection::default(),
            explanation: ExplanationConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        Config::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.anomaly.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.sle {
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if !seen.insert(p.layer) {
                return Err(ConfigError::Invalid(format!("two sle profiles for layer {}", p.layer)));
            }
        }
        if self.explanation.enabled && self.explanation.endpoint.is_none() {
            return Err(ConfigError::Invalid("explanation.enabled needs explanation.endpoint".into()));
        }
        Ok(())
    }

    /// Built-in profiles with this file's overrides applied.
    pub fn sle_profiles(&self) -> BTreeMap<Layer, SleProfile> {
        let mut out = SleProfile::defaults();
        for p in &self.sle {
            out.insert(p.layer, p.clone());
        }
        out
    }

    pub fn rca_config(&self) -> RcaConfig {
        RcaConfig {
            detector: self.anomaly,
            weights: self.rca.weights.clone(),
            signatures: SignatureTable::with_overrides(&self.rca.signatures),
            ..RcaConfig::default()
        }
    }

    /// The HTTP client when enabled, else the template client.
    pub fn explanation_client(&self) -> Box<dyn ExplanationClient> {
        let e = &self.explanation;
        match (&e.endpoint, e.enabled) {
            (Some(endpoint), true) => {
                let key = e.api_key_env.as_ref().and_then(|v| std::env::var(v).ok());
                let client = HttpClient::new(endpoint, key, Duration::from_millis(e.timeout_ms));
                match &e.transcript {
                    Some(path) => Box::new(client.with_transcript(path)),
                    None => Box::new(client),
                }
            }
            _ => Box::new(TemplateClient),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anomaly::AnomalyDirection;
    use crate::rca::CauseKind;

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(Config::from_toml_str("").unwrap(), Config::default());
    }

    #[test]
    fn documented_example_parses() {
        let src = include_str!("config.rs");
        let example: String = src
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start_matches(' '))
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = Config::from_toml_str(&example).unwrap();
        assert!(cfg.explanation.enabled);
        assert_eq!(cfg.sle_profiles()[&Layer::Gpu].constituents.len(), 1);
        assert_eq!(cfg.sle_profiles()[&Layer::Nic], SleProfile::default_nic());
        let rca = cfg.rca_config();
        assert_eq!(rca.signatures.classify("gpu.power", AnomalyDirection::High), Some(CauseKind::GpuSaturation));
        assert_eq!(cfg.explanation_client().name(), "http");
    }

    #[test]
    fn unknown_key_reports_location() {
        let err = Config::from_toml_str("port = 1\n[anomaly]\nthreshhold = 2.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("threshhold"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(Config::from_toml_str("[anomaly]\nthreshold = -1.0\n"), Err(ConfigError::Invalid(_))));
        assert!(matches!(Config::from_toml_str("[explanation]\nenabled = true\n"), Err(ConfigError::Invalid(_))));
        assert_eq!(Config::default().explanation_client().name(), "template");
    }
}
