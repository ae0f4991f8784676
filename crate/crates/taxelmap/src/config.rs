//! Pipeline configuration file (JSON). Every section and field is optional.

use std::path::Path;

use serde::{Deserialize, Serialize};
use taxelmap_core::pipeline::BuildConfig;
use taxelmap_core::scansim::{IntensityField, ScanConfig};
use thiserror::Error;

use crate::server::ServerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scan: ScanConfig,
    /// Field used by `simulate`.
    pub field: IntensityField,
    pub build: BuildConfig,
    pub server: ServerConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scan: ScanConfig::default(),
            field: IntensityField::Checkerboard {
                period_mm: 10.0,
                lo: 0.1,
                hi: 0.5,
            },
            build: BuildConfig::default(),
            server: ServerConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: shown, source })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.scan.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.field.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let b = &self.build;
        if !(b.w > 0.0 && b.w <= 0.5) {
            return Err(ConfigError::Invalid(format!("build.w = {} outside (0, 0.5]", b.w)));
        }
        if b.width_px == 0 || b.height_px == 0 {
            return Err(ConfigError::Invalid("map dimensions must be positive".into()));
        }
        if !b.baseline_g.is_finite() {
            return Err(ConfigError::Invalid("build.baseline_g must be finite".into()));
        }
        self.server
            .synth()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
