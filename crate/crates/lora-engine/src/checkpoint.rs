use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{ParamRef, ToyDecoder, ToyDecoderConfig};
use crate::LoraError;

/// Flattened row-major tensor payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorData {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub kind: String,
    pub vocab_size: usize,
}

/// Versioned model container: config, tokenizer spec, frozen base tensors,
/// adapter tensors, and a content hash of the base.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ToyDecoderConfig,
    pub tokenizer: TokenizerSpec,
    pub base: BTreeMap<String, TensorData>,
    pub adapters: BTreeMap<String, TensorData>,
    pub base_hash: String,
}

/// Adapters stored standalone, bound to the base they were trained on.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterCheckpoint {
    pub version: u32,
    pub base_hash: String,
    pub adapters: BTreeMap<String, TensorData>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

fn hash_tensors(tensors: &BTreeMap<String, TensorData>) -> String {
    let mut hasher = Sha256::new();
    for (name, tensor) in tensors {
        hasher.update(name.as_bytes());
        for dim in &tensor.shape {
            hasher.update((*dim as u64).to_le_bytes());
        }
        for value in &tensor.data {
            hasher.update(value.to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_model(model: &ToyDecoder) -> Checkpoint {
        let mut base = BTreeMap::new();
        let mut adapters = BTreeMap::new();
        let mut me = model.clone();
        me.visit_named_params(|name, param, is_adapter| {
            let tensor = match param {
                ParamRef::One(p) => TensorData {
                    shape: vec![p.value.len()],
                    data: p.value.to_vec(),
                },
                ParamRef::Two(p) => TensorData {
                    shape: vec![p.value.nrows(), p.value.ncols()],
                    data: p.value.iter().copied().collect(),
                },
            };
            if is_adapter {
                adapters.insert(name.to_string(), tensor);
            } else {
                base.insert(name.to_string(), tensor);
            }
        });
        let base_hash = hash_tensors(&base);
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            tokenizer: TokenizerSpec {
                kind: "byte".into(),
                vocab_size: crate::ByteTokenizer.vocab_size(),
            },
            base,
            adapters,
            base_hash,
        }
    }

    /// Rebuild a model. Adapter tensors absent from the checkpoint (e.g.
    /// after merging) are left at fresh zero-update initialization.
    pub fn to_model(&self) -> Result<ToyDecoder, LoraError> {
        if self.version != CHECKPOINT_VERSION {
            return Err(LoraError::Checkpoint(format!(
                "unsupported version {}",
                self.version
            )));
        }
        let mut model = ToyDecoder::new(self.config.clone(), 0)?;
        let mut missing = Vec::new();
        model.visit_named_params(|name, param, is_adapter| {
            let source = if is_adapter {
                self.adapters.get(name)
            } else {
                self.base.get(name)
            };
            let Some(tensor) = source else {
                if !is_adapter {
                    missing.push(name.to_string());
                }
                return;
            };
            match param {
                ParamRef::One(p) => {
                    if tensor.shape == [p.value.len()] {
                        p.value = Array1::from_vec(tensor.data.clone());
                    } else {
                        missing.push(format!("{name} (shape mismatch)"));
                    }
                }
                ParamRef::Two(p) => {
                    let dim = p.value.dim();
                    if tensor.shape == [dim.0, dim.1] {
                        p.value = Array2::from_shape_vec(dim, tensor.data.clone())
                            .expect("shape checked");
                    } else {
                        missing.push(format!("{name} (shape mismatch)"));
                    }
                }
            }
        });
        if !missing.is_empty() {
            return Err(LoraError::Checkpoint(format!(
                "missing or mismatched tensors: {}",
                missing.join(", ")
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), LoraError> {
        let json = serde_json::to_string(self).expect("checkpoint serialization");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, LoraError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LoraError::Checkpoint(e.to_string()))
    }

    /// Extract the adapters as a standalone artifact bound to this base.
    pub fn adapter_only(&self) -> AdapterCheckpoint {
        AdapterCheckpoint {
            version: self.version,
            base_hash: self.base_hash.clone(),
            adapters: self.adapters.clone(),
        }
    }

    /// Fuse adapters into the base weights: `W' = W + (alpha/r)·AᵀBᵀ` in the
    /// stored `[in, out]` orientation. The result carries no adapters.
    pub fn merged(&self) -> Result<Checkpoint, LoraError> {
        let model = self.to_model()?;
        let scaling = (model.config.lora.alpha / model.config.lora.rank as f64) as f32;
        let mut fused = self.clone();
        for (name, adapter_a) in &self.adapters {
            let Some(stem) = name.strip_suffix(".lora_a") else {
                continue;
            };
            let adapter_b = self
                .adapters
                .get(&format!("{stem}.lora_b"))
                .ok_or_else(|| LoraError::Checkpoint(format!("missing {stem}.lora_b")))?;
            let base = fused
                .base
                .get_mut(&format!("{stem}.w"))
                .ok_or_else(|| LoraError::Checkpoint(format!("missing {stem}.w")))?;
            let (rank, d_in) = (adapter_a.shape[0], adapter_a.shape[1]);
            let d_out = adapter_b.shape[0];
            if base.shape != [d_in, d_out] || adapter_b.shape != [d_out, rank] {
                return Err(LoraError::Checkpoint(format!(
                    "inconsistent adapter shapes at {stem}"
                )));
            }
            let a = Array2::from_shape_vec((rank, d_in), adapter_a.data.clone())
                .expect("shape checked");
            let b = Array2::from_shape_vec((d_out, rank), adapter_b.data.clone())
                .expect("shape checked");
            let delta = a.t().dot(&b.t()) * scaling;
            let mut w = Array2::from_shape_vec((d_in, d_out), base.data.clone())
                .expect("shape checked");
            w += &delta;
            base.data = w.iter().copied().collect();
        }
        fused.adapters.clear();
        fused.base_hash = hash_tensors(&fused.base);
        Ok(fused)
    }
}

impl AdapterCheckpoint {
    pub fn save(&self, path: &Path) -> Result<(), LoraError> {
        let json = serde_json::to_string(self).expect("adapter serialization");
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<AdapterCheckpoint, LoraError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| LoraError::Checkpoint(e.to_string()))
    }

    /// Re-attach to a matching base checkpoint.
    pub fn attach(&self, base: &Checkpoint) -> Result<Checkpoint, LoraError> {
        if base.base_hash != self.base_hash {
            return Err(LoraError::BaseMismatch {
                expected: self.base_hash.clone(),
                got: base.base_hash.clone(),
            });
        }
        let mut combined = base.clone();
        combined.adapters = self.adapters.clone();
        Ok(combined)
    }
}

/// Content hash of a model's base tensors; used to prove the base never
/// moves during adapter training.
pub fn base_hash(model: &ToyDecoder) -> String {
    Checkpoint::from_model(model).base_hash
}
