use std::path::Path;

use serde::{Deserialize, Serialize};

use qchunker_core::clients::{HttpBackend, HttpConfig};
use qchunker_core::metrics::score::validate_weights;
use qchunker_core::{Backend, ChunkerConfig, PipelineConfig, SamplingParams, StubBackend, DEFAULT_ALPHA, DEFAULT_LAMBDA};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Stub,
    Http,
}

/// Settings shared by every command. Absent fields take their defaults;
/// command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub backend: BackendKind,
    pub seed: u64,
    pub lambda: f64,
    pub alpha: f64,
    pub candidates_p: usize,
    pub sampling: SamplingParams,
    pub chunker: ChunkerConfig,
    pub parallelism: usize,
    /// Model names, timeouts and retry policy for the HTTP backend. The base
    /// URL and key always come from the environment.
    pub http: HttpConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            backend: BackendKind::Stub,
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            alpha: DEFAULT_ALPHA,
            candidates_p: 5,
            sampling: SamplingParams::default(),
            chunker: ChunkerConfig::default(),
            parallelism: 4,
            http: HttpConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| CliError::Input(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        validate_weights(self.lambda, self.alpha).map_err(CliError::input)?;
        if self.candidates_p == 0 {
            return Err(CliError::Input("candidates_p must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(CliError::Input("parallelism must be at least 1".into()));
        }
        self.sampling.validate().map_err(CliError::input)?;
        self.chunker.validate().map_err(CliError::input)?;
        Ok(())
    }

    pub fn backend(&self) -> Result<Box<dyn Backend>, CliError> {
        match self.backend {
            BackendKind::Stub => Ok(Box::new(StubBackend::new(self.seed))),
            BackendKind::Http => {
                let cfg = HttpConfig { parallelism: self.parallelism, seed: self.seed, ..self.http.clone() }.with_env()?;
                Ok(Box::new(HttpBackend::connect(cfg)?))
            }
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            seed: self.seed,
            p: self.candidates_p,
            lambda: self.lambda,
            alpha: self.alpha,
            sampling: self.sampling.clone(),
            parallelism: self.parallelism,
            token_rule: self.chunker.token_rule,
            ..PipelineConfig::default()
        }
    }
}
