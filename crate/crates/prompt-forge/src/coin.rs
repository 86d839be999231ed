use sha2::{Digest, Sha256};

/// Deterministic per-sample randomness.
///
/// Every draw hashes `(seed, dialogue_id, turn_index, slot_id, label)`, so a
/// sample's coins depend only on its identity, never on generation order or
/// worker layout. Distinct labels give independent coins for one sample.
#[derive(Debug, Clone, Copy)]
pub struct KeyedCoins {
    seed: u64,
}

impl KeyedCoins {
    pub fn new(seed: u64) -> Self {
        KeyedCoins { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn draw(&self, dialogue_id: &str, turn_index: usize, slot_id: &str, label: &str) -> u64 {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        for part in [dialogue_id, slot_id, label] {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part.as_bytes());
        }
        hasher.update((turn_index as u64).to_le_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }

    /// A Bernoulli(p) coin for the given key.
    pub fn flip(
        &self,
        dialogue_id: &str,
        turn_index: usize,
        slot_id: &str,
        label: &str,
        p: f64,
    ) -> bool {
        let x = self.draw(dialogue_id, turn_index, slot_id, label);
        // 53 mantissa bits give an exact dyadic fraction in [0, 1).
        let unit = (x >> 11) as f64 / (1u64 << 53) as f64;
        unit < p
    }

    /// The raw 64-bit draw for a key; usable as a deterministic,
    /// order-independent ranking value.
    pub fn rank(&self, dialogue_id: &str, turn_index: usize, slot_id: &str, label: &str) -> u64 {
        self.draw(dialogue_id, turn_index, slot_id, label)
    }

    /// A uniform pick in `0..n` for the given key.
    pub fn pick(
        &self,
        dialogue_id: &str,
        turn_index: usize,
        slot_id: &str,
        label: &str,
        n: usize,
    ) -> usize {
        assert!(n > 0);
        (self.draw(dialogue_id, turn_index, slot_id, label) % n as u64) as usize
    }
}
