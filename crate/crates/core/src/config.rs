//! Operator configuration: TOML file keys mirror CLI flags one-to-one,
//! flags win. The canonicalized config hashes into the run manifest. The
//! API key never lives here - only the name of the environment variable
//! that holds it.

use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{HttpConfig, RespondentModel};
use crate::util::sha256_hex;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    // Data inputs.
    pub dataset: Option<PathBuf>,
    pub benchmark: Option<String>,
    pub bank: Option<PathBuf>,
    pub baselines: Option<PathBuf>,
    /// Which side of the validation/test split to run: "validation",
    /// "test", or "all".
    pub use_split: String,
    pub validation_fraction: f64,
    pub split_seed: u64,
    /// Run only the first n tasks after splitting.
    pub limit: Option<usize>,

    // Strategies.
    pub strategies: Vec<String>,
    /// Pattern for the bare "heart" strategy and the matched baseline
    /// budget.
    pub pattern: Option<String>,
    pub resolution: String,
    pub max_iterations: usize,

    // Backend.
    pub backend: String,
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub auth_header: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub vendor_options: serde_json::Map<String, serde_json::Value>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub thinking_enabled: Option<bool>,
    /// Script file for the scripted backend.
    pub script: Option<PathBuf>,
    /// Respondent model for the stochastic backend.
    pub respondent: RespondentModel,

    // Run shape.
    pub parallelism: usize,
    pub budget: Option<u64>,
    pub seed: u64,
    pub out: PathBuf,
    pub carry_previous_on_all_fail: bool,
    pub numeric_rel_tol: f64,
    /// Task-level error fraction above which the run exits nonzero.
    pub max_error_rate: f64,
    /// Exclude errored runs from accuracy denominators instead of counting
    /// them incorrect.
    pub skip_errored: bool,
    /// Overrides the per-benchmark default; empty string disables.
    pub system_instruction: Option<String>,
    /// Pattern grid file for `ablate`.
    pub grid: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            benchmark: None,
            bank: None,
            baselines: None,
            use_split: "all".to_string(),
            validation_fraction: 0.2,
            split_seed: 0,
            limit: None,
            strategies: vec![
                "heart".to_string(),
                "wait".to_string(),
                "cot".to_string(),
                "self_reflection".to_string(),
            ],
            pattern: None,
            resolution: "s1".to_string(),
            max_iterations: crate::protocol::DEFAULT_MAX_ITERATIONS,
            backend: "http".to_string(),
            endpoint: "http://127.0.0.1:8080/v1/chat/completions".to_string(),
            model: "heart-eval".to_string(),
            api_key_env: "HEART_API_KEY".to_string(),
            auth_header: "Authorization".to_string(),
            timeout_secs: 120,
            max_retries: 3,
            backoff_ms: 500,
            vendor_options: serde_json::Map::new(),
            temperature: 0.7,
            top_p: 0.2,
            max_tokens: 8192,
            thinking_enabled: None,
            script: None,
            respondent: RespondentModel::default(),
            parallelism: 4,
            budget: None,
            seed: 0,
            out: PathBuf::from("heart-out"),
            carry_previous_on_all_fail: false,
            numeric_rel_tol: 1e-9,
            max_error_rate: 0.1,
            skip_errored: false,
            system_instruction: None,
            grid: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&raw).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// SHA-256 over the canonical JSON form; field order is fixed by the
    /// struct, so the hash is stable for identical settings.
    pub fn canonical_hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn http_config(&self) -> HttpConfig {
        HttpConfig {
            url: self.endpoint.clone(),
            model: self.model.clone(),
            api_key_env: self.api_key_env.clone(),
            auth_header: self.auth_header.clone(),
            timeout: Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
            backoff_base: Duration::from_millis(self.backoff_ms),
            vendor_options: self.vendor_options.clone(),
        }
    }

    /// Cheap structural checks that must pass before any backend is built
    /// or any request is issued.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !["http", "scripted", "stochastic"].contains(&self.backend.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "unknown backend '{}'",
                self.backend
            )));
        }
        crate::protocol::Resolution::parse(&self.resolution)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.strategies.is_empty() {
            return Err(ConfigError::Invalid("no strategies configured".to_string()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(ConfigError::Invalid(format!(
                "validation_fraction {} outside (0, 1)",
                self.validation_fraction
            )));
        }
        if !["validation", "test", "all"].contains(&self.use_split.as_str()) {
            return Err(ConfigError::Invalid(format!(
                "use_split '{}' must be validation, test, or all",
                self.use_split
            )));
        }
        if !(0.0..=1.0).contains(&self.max_error_rate) {
            return Err(ConfigError::Invalid(
                "max_error_rate outside [0, 1]".to_string(),
            ));
        }
        if let Some(pattern) = &self.pattern {
            let parsed = crate::bank::SchedulePattern::parse(pattern)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if self.max_iterations > 0 && parsed.len() != self.max_iterations {
                return Err(ConfigError::Invalid(format!(
                    "pattern length {} != max_iterations {}",
                    parsed.len(),
                    self.max_iterations
                )));
            }
        }
        if self.backend == "scripted" && self.script.is_none() {
            return Err(ConfigError::Invalid(
                "scripted backend needs a script file".to_string(),
            ));
        }
        self.respondent
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}
