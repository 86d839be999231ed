use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::Dialogue;
use crate::error::CorpusError;

/// How a [`CorpusSplit`] was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum SplitProvenance {
    FewShot {
        fraction: f64,
        seed: u64,
        n_train: usize,
        n_eval: usize,
    },
    ZeroShot {
        holdout_domain: String,
        n_train: usize,
        n_eval: usize,
        /// Eval dialogues that also touch non-holdout domains; they are kept
        /// out of train entirely to avoid target-domain leakage.
        n_multi_domain_eval: usize,
    },
}

/// A train/eval partition of a dialogue corpus.
#[derive(Debug, Clone)]
pub struct CorpusSplit {
    pub train: Vec<Dialogue>,
    pub eval: Vec<Dialogue>,
    pub provenance: SplitProvenance,
}

/// Select `round(fraction * N)` dialogues for training by a seeded uniform
/// shuffle. Dialogues are ordered by id before shuffling, so the result
/// depends only on (dialogue ids, fraction, seed).
pub fn few_shot_split(
    dialogues: &[Dialogue],
    fraction: f64,
    seed: u64,
) -> Result<CorpusSplit, CorpusError> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(CorpusError::FractionOutOfRange(fraction));
    }
    let mut ordered: Vec<&Dialogue> = dialogues.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ordered.shuffle(&mut rng);

    let n_train = (fraction * dialogues.len() as f64).round() as usize;
    let train: Vec<Dialogue> = ordered[..n_train].iter().map(|d| (*d).clone()).collect();
    let eval: Vec<Dialogue> = ordered[n_train..].iter().map(|d| (*d).clone()).collect();
    let provenance = SplitProvenance::FewShot {
        fraction,
        seed,
        n_train: train.len(),
        n_eval: eval.len(),
    };
    Ok(CorpusSplit {
        train,
        eval,
        provenance,
    })
}

/// Hold one domain out entirely: eval gets every dialogue touching it,
/// train gets only dialogues that never set a holdout-domain slot.
pub fn zero_shot_split(
    dialogues: &[Dialogue],
    holdout_domain: &str,
) -> Result<CorpusSplit, CorpusError> {
    let holdout = holdout_domain.to_lowercase();
    if !dialogues.iter().any(|d| d.touches(&holdout)) {
        return Err(CorpusError::UnknownDomain(holdout_domain.to_string()));
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    let mut n_multi_domain_eval = 0;
    for dialogue in dialogues {
        if dialogue.touches(&holdout) {
            if dialogue.domains_touched.len() > 1 {
                n_multi_domain_eval += 1;
            }
            eval.push(dialogue.clone());
        } else {
            train.push(dialogue.clone());
        }
    }
    let provenance = SplitProvenance::ZeroShot {
        holdout_domain: holdout,
        n_train: train.len(),
        n_eval: eval.len(),
        n_multi_domain_eval,
    };
    Ok(CorpusSplit {
        train,
        eval,
        provenance,
    })
}
