//! Library surface behind the `ldst` binary: pipeline orchestration,
//! manifests, plotting, and config-file precedence. The binary is a thin
//! argument-parsing layer over these functions.

pub mod cfgfile;
pub mod manifest;
pub mod pipeline;
pub mod plots;

use std::fmt;

/// CLI failure classes, mapped onto documented exit codes:
/// usage → 1, data validation → 2, runtime → 3.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> CliError {
        CliError::Data(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Data(msg) => write!(f, "data validation error: {msg}"),
            CliError::Runtime(msg) => write!(f, "runtime failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ldst_corpus::CorpusError> for CliError {
    fn from(e: ldst_corpus::CorpusError) -> Self {
        match e {
            ldst_corpus::CorpusError::Io(io) => CliError::Runtime(io.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ldst_prompt_forge::ForgeError> for CliError {
    fn from(e: ldst_prompt_forge::ForgeError) -> Self {
        match e {
            ldst_prompt_forge::ForgeError::Io(io) => CliError::Runtime(io.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ldst_lora_engine::LoraError> for CliError {
    fn from(e: ldst_lora_engine::LoraError) -> Self {
        use ldst_lora_engine::LoraError::*;
        match e {
            Io(io) => CliError::Runtime(io.to_string()),
            RankBound { .. } | HeadSplit { .. } | EmptyDataset | Checkpoint(_)
            | BaseMismatch { .. } => CliError::Data(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ldst_llm_gateway::GatewayError> for CliError {
    fn from(e: ldst_llm_gateway::GatewayError) -> Self {
        use ldst_llm_gateway::GatewayError::*;
        match e {
            BadConfig(msg) => CliError::Data(msg),
            Io(io) => CliError::Runtime(io.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ldst_dst_metrics::MetricsError> for CliError {
    fn from(e: ldst_dst_metrics::MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
