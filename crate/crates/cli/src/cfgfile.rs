use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

/// Optional TOML configuration. Every field is optional; precedence is
/// flags > config file > built-in defaults.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct FileConfig {
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub templates_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct PolicySection {
    pub p_description: Option<f64>,
    pub p_pvl: Option<f64>,
    pub p_standard_instruction: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub pretrain_epochs: Option<usize>,
    pub lora_epochs: Option<usize>,
    pub pretrain_lr: Option<f64>,
    pub lora_lr: Option<f64>,
    pub model_dim: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub context_len: Option<usize>,
    pub lora_rank: Option<usize>,
    pub lora_alpha: Option<f64>,
    pub lora_dropout: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct GatewaySection {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub max_in_flight: Option<usize>,
    pub requests_per_minute: Option<f64>,
    pub max_attempts: Option<u32>,
    pub backoff_base_ms: Option<u64>,
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::data(format!("config file {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::data(format!("config file {}: {e}", path.display())))
    }
}

/// flags > config file > default.
pub fn resolve<T: Copy>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
