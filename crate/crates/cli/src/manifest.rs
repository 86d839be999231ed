use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

/// Written beside every artifact-producing run: enough to reproduce the
/// outputs byte-for-byte (for the deterministic subcommands) from inputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub toolkit_version: String,
    pub created_unix: u64,
    pub wall_clock_ms: u128,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// The fully resolved configuration after flag/file/default precedence.
    pub config: serde_json::Value,
}

impl RunManifest {
    pub fn new(subcommand: &str) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            wall_clock_ms: 0,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            config: serde_json::Value::Null,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.to_path_buf());
        self
    }

    pub fn config(mut self, value: impl Serialize) -> Self {
        self.config = serde_json::to_value(value).unwrap_or(serde_json::Value::Null);
        self
    }

    /// Finish and write `<dir>/manifest.json` (or `<file>.manifest.json`).
    pub fn write(mut self, beside: &Path, started: std::time::Instant) -> std::io::Result<()> {
        self.wall_clock_ms = started.elapsed().as_millis();
        let path = if beside.is_dir() {
            beside.join("manifest.json")
        } else {
            beside.with_extension(format!(
                "{}manifest.json",
                beside
                    .extension()
                    .map(|e| format!("{}.", e.to_string_lossy()))
                    .unwrap_or_default()
            ))
        };
        std::fs::write(
            path,
            serde_json::to_string_pretty(&self).expect("manifest serialization"),
        )
    }
}
