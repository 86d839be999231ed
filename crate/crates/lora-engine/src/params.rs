use serde::{Deserialize, Serialize};

/// Trainable-vs-total parameter accounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trainable: u64,
    pub total: u64,
    pub ratio: f64,
}

/// Adapter parameter count for a stack of identical adapted matrices:
/// `n_layers × n_target_modules × r × (d_in + d_out)`, with the ratio taken
/// against `total_params`.
pub fn count_trainable(
    n_layers: usize,
    n_target_modules: usize,
    d_in: usize,
    d_out: usize,
    rank: usize,
    total_params: u64,
) -> ParamCount {
    let trainable =
        (n_layers as u64) * (n_target_modules as u64) * (rank as u64) * ((d_in + d_out) as u64);
    let ratio = if total_params == 0 {
        0.0
    } else {
        trainable as f64 / total_params as f64
    };
    ParamCount {
        trainable,
        total: total_params,
        ratio,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_seven_billion_setup() {
        // 32 layers × 4 attention projections × rank 8 × (4096 + 4096).
        let count = count_trainable(32, 4, 4096, 4096, 8, 6_738_415_616);
        assert_eq!(count.trainable, 8_388_608);
        assert!(count.ratio > 0.0011 && count.ratio < 0.0013, "{}", count.ratio);
    }

    #[test]
    fn zero_rank_trains_nothing() {
        let count = count_trainable(32, 4, 4096, 4096, 0, 1_000);
        assert_eq!(count.trainable, 0);
        assert_eq!(count.ratio, 0.0);
    }

    #[test]
    fn small_formula_case() {
        // 2 layers × {q, v} × rank 4 × (64 + 64) = 2048.
        let count = count_trainable(2, 2, 64, 64, 4, 10_000);
        assert_eq!(count.trainable, 2048);
    }
}
