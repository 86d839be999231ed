use serde::{Deserialize, Serialize};

pub const PAD_TOKEN: u32 = 256;
pub const BOS_TOKEN: u32 = 257;
pub const EOS_TOKEN: u32 = 258;

/// Byte-level tokenizer: the 256 byte values plus pad/bos/eos specials.
/// Total by construction; decode(encode(x)) = x for any string.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub fn vocab_size(&self) -> usize {
        259
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Decode, skipping special tokens. Invalid byte sequences cannot arise
    /// from `encode`, but decoded model output is arbitrary, so lossy
    /// conversion keeps this total.
    pub fn decode(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens
            .iter()
            .filter(|t| **t < 256)
            .map(|t| *t as u8)
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }
}
