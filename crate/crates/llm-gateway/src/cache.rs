use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CompletionRecord, GatewayError};

/// Cache key: hash of (model, decoding params, prompt).
pub fn cache_key(model: &str, temperature: f64, prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(model.as_bytes());
    hasher.update(temperature.to_le_bytes());
    hasher.update((prompt.len() as u64).to_le_bytes());
    hasher.update(prompt.as_bytes());
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    key: String,
    model: String,
    timestamp: u64,
}

/// One JSON file per record plus an append-only index, written through a
/// single lock so the cache stays consistent under the worker pool.
#[derive(Debug)]
pub struct RecordCache {
    dir: PathBuf,
    writer: Mutex<()>,
}

impl RecordCache {
    pub fn open(dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir)?;
        Ok(RecordCache {
            dir: dir.to_path_buf(),
            writer: Mutex::new(()),
        })
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Option<CompletionRecord> {
        let text = std::fs::read_to_string(self.record_path(key)).ok()?;
        serde_json::from_str(&text).ok()
    }

    pub fn put(&self, key: &str, record: &CompletionRecord) -> Result<(), GatewayError> {
        let _guard = self.writer.lock().expect("cache writer lock");
        let json = serde_json::to_string(record).expect("record serialization");
        std::fs::write(self.record_path(key), json)?;
        let entry = IndexEntry {
            key: key.to_string(),
            model: record.model.clone(),
            timestamp: record.timestamp,
        };
        let mut index = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("index.jsonl"))?;
        writeln!(
            index,
            "{}",
            serde_json::to_string(&entry).expect("index serialization")
        )?;
        Ok(())
    }

    /// Every cached record, in index order (useful for exporting
    /// prediction files straight from the cache).
    pub fn records(&self) -> Result<Vec<CompletionRecord>, GatewayError> {
        let index_path = self.dir.join("index.jsonl");
        if !index_path.exists() {
            return Ok(Vec::new());
        }
        let text = std::fs::read_to_string(index_path)?;
        let mut records = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: IndexEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::BadResponse(format!("index entry: {e}")))?;
            if let Some(record) = self.get(&entry.key) {
                records.push(record);
            }
        }
        Ok(records)
    }
}
