use ndarray::{Array1, Array2, NdFloat};
use num_traits::FromPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::LoraError;

/// The trainable low-rank factors of one adapted matrix.
///
/// `a` is `r × k`, `b` is `d × r`; the update is `ΔW = (alpha/r) · B·A`.
/// `b` starts at zero so a fresh adapter is an exact no-op.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<F> {
    pub a: Array2<F>,
    pub b: Array2<F>,
    pub rank: usize,
    pub alpha: f64,
    pub dropout_p: f64,
}

impl<F: NdFloat + FromPrimitive> LoraAdapter<F> {
    /// `alpha / r`, the standard scaling of the adapter branch.
    pub fn scaling(&self) -> F {
        F::from_f64(self.alpha / self.rank as f64).expect("finite scaling")
    }

    /// The dense update `(alpha/r) · B·A`, shape `d × k`.
    pub fn delta(&self) -> Array2<F> {
        self.b.dot(&self.a) * self.scaling()
    }

    /// Trainable parameter count: `r · (d + k)`.
    pub fn n_params(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

/// Build an adapter for a `d × k` base matrix: `B = 0` exactly and
/// `A ~ N(0, 0.02²)` from the seeded generator.
pub fn init_adapter<F: NdFloat + FromPrimitive>(
    d: usize,
    k: usize,
    rank: usize,
    alpha: f64,
    seed: u64,
) -> Result<LoraAdapter<F>, LoraError> {
    if rank == 0 || rank > d.min(k) / 2 {
        return Err(LoraError::RankBound { rank, d, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Array2::zeros((rank, k));
    for entry in a.iter_mut() {
        let sample: f64 = rng.sample(StandardNormal);
        *entry = F::from_f64(sample * 0.02).expect("finite init");
    }
    Ok(LoraAdapter {
        a,
        b: Array2::zeros((d, rank)),
        rank,
        alpha,
        dropout_p: 0.0,
    })
}

/// A frozen base matrix with its adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear<F> {
    pub w0: Array2<F>,
    pub adapter: LoraAdapter<F>,
}

impl<F: NdFloat + FromPrimitive> LoraLinear<F> {
    /// `h = W0·x + (alpha/r)·B·(A·x)` with the adapter branch computed
    /// through the factors, never the dense product.
    pub fn forward(&self, x: &Array1<F>) -> Result<Array1<F>, LoraError> {
        let (d, k) = self.w0.dim();
        if x.len() != k {
            return Err(LoraError::DimensionMismatch(format!(
                "x has {} entries, W0 is {d}×{k}",
                x.len()
            )));
        }
        let base = self.w0.dot(x);
        let low = self.adapter.a.dot(x);
        let update = self.adapter.b.dot(&low) * self.adapter.scaling();
        Ok(base + update)
    }

    /// The fused weight `W0 + (alpha/r)·B·A`.
    pub fn merge(&self) -> Array2<F> {
        &self.w0 + &self.adapter.delta()
    }
}

/// Compare analytic adapter gradients against central finite differences.
///
/// Uses the scalar loss `L = ½‖h(x)‖²` and returns the largest relative
/// error across every entry of `A` and `B` (absolute error for entries
/// whose gradients are both essentially zero).
pub fn grad_check(layer: &LoraLinear<f64>, x: &Array1<f64>, eps: f64) -> Result<f64, LoraError> {
    let scaling = layer.adapter.scaling();
    let h = layer.forward(x)?;

    // Analytic gradients of L = 0.5 * h.h:
    //   dL/dh = h
    //   dL/dB = s · h ⊗ (A·x)
    //   dL/dA = s · (Bᵀ·h) ⊗ x
    let low = layer.adapter.a.dot(x);
    let grad_b = outer(&h, &low) * scaling;
    let bt_h = layer.adapter.b.t().dot(&h);
    let grad_a = outer(&bt_h, x) * scaling;

    let mut worst: f64 = 0.0;
    let mut probe = layer.clone();
    let loss = |layer: &LoraLinear<f64>| -> Result<f64, LoraError> {
        let h = layer.forward(x)?;
        Ok(0.5 * h.dot(&h))
    };

    for ((i, j), analytic) in grad_a.indexed_iter() {
        let original = probe.adapter.a[(i, j)];
        probe.adapter.a[(i, j)] = original + eps;
        let plus = loss(&probe)?;
        probe.adapter.a[(i, j)] = original - eps;
        let minus = loss(&probe)?;
        probe.adapter.a[(i, j)] = original;
        worst = worst.max(entry_error(*analytic, (plus - minus) / (2.0 * eps)));
    }
    for ((i, j), analytic) in grad_b.indexed_iter() {
        let original = probe.adapter.b[(i, j)];
        probe.adapter.b[(i, j)] = original + eps;
        let plus = loss(&probe)?;
        probe.adapter.b[(i, j)] = original - eps;
        let minus = loss(&probe)?;
        probe.adapter.b[(i, j)] = original;
        worst = worst.max(entry_error(*analytic, (plus - minus) / (2.0 * eps)));
    }
    Ok(worst)
}

fn entry_error(analytic: f64, fd: f64) -> f64 {
    let scale = analytic.abs().max(fd.abs());
    if scale < 1e-8 {
        (analytic - fd).abs()
    } else {
        (analytic - fd).abs() / scale
    }
}

fn outer(u: &Array1<f64>, v: &Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((u.len(), v.len()));
    for (i, ui) in u.iter().enumerate() {
        for (j, vj) in v.iter().enumerate() {
            out[(i, j)] = ui * vj;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn seeded_layer(d: usize, k: usize, rank: usize, seed: u64) -> LoraLinear<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random = |rows: usize, cols: usize| {
            Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
        };
        let w0 = random(d, k);
        let mut adapter = init_adapter::<f64>(d, k, rank, 16.0, seed).unwrap();
        adapter.a = random(rank, k);
        adapter.b = random(d, rank);
        LoraLinear { w0, adapter }
    }

    #[test]
    fn zero_b_means_identity_with_base() {
        let layer = LoraLinear {
            w0: array![[2.0, 0.0], [0.0, 3.0]],
            adapter: init_adapter::<f64>(2, 2, 1, 1.0, 0).unwrap(),
        };
        let x = array![1.0, 1.0];
        let h = layer.forward(&x).unwrap();
        assert_eq!(h, array![2.0, 3.0]);
        assert_eq!(layer.merge(), layer.w0);
    }

    #[test]
    fn scalar_case_matches_hand_arithmetic() {
        // W0 = [[2]], A = [[3]], B = [[1]], scaling = 1 → h(1) = 2 + 3 = 5.
        let layer = LoraLinear {
            w0: array![[2.0]],
            adapter: LoraAdapter {
                a: array![[3.0]],
                b: array![[1.0]],
                rank: 1,
                alpha: 1.0,
                dropout_p: 0.0,
            },
        };
        let h = layer.forward(&array![1.0]).unwrap();
        assert_eq!(h, array![5.0]);
        assert_eq!(layer.merge(), array![[5.0]]);
    }

    #[test]
    fn init_is_deterministic_and_zero_at_b() {
        let a1 = init_adapter::<f64>(8, 8, 2, 16.0, 42).unwrap();
        let a2 = init_adapter::<f64>(8, 8, 2, 16.0, 42).unwrap();
        assert_eq!(a1.a, a2.a);
        assert!(a1.b.iter().all(|v| *v == 0.0));
        assert!(a1.delta().iter().all(|v| *v == 0.0));

        let a3 = init_adapter::<f64>(8, 8, 2, 16.0, 43).unwrap();
        assert_ne!(a1.a, a3.a);
    }

    #[test]
    fn rank_bound_enforced() {
        assert!(matches!(
            init_adapter::<f64>(8, 8, 5, 16.0, 0),
            Err(LoraError::RankBound { .. })
        ));
        assert!(matches!(
            init_adapter::<f64>(8, 8, 0, 16.0, 0),
            Err(LoraError::RankBound { .. })
        ));
        assert!(init_adapter::<f64>(8, 8, 4, 16.0, 0).is_ok());
    }

    #[test]
    fn forward_matches_dense_reference() {
        // Independent dense route: h = (W0 + s·B·A)·x computed elementwise.
        let layer = seeded_layer(6, 4, 2, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let x = Array1::from_shape_fn(4, |_| rng.sample::<f64, _>(StandardNormal));
            let h = layer.forward(&x).unwrap();
            let s = layer.adapter.scaling();
            let mut dense = Array2::<f64>::zeros((6, 4));
            for i in 0..6 {
                for j in 0..4 {
                    let mut delta = 0.0;
                    for r in 0..2 {
                        delta += layer.adapter.b[(i, r)] * layer.adapter.a[(r, j)];
                    }
                    dense[(i, j)] = layer.w0[(i, j)] + s * delta;
                }
            }
            let reference = dense.dot(&x);
            for (a, b) in h.iter().zip(reference.iter()) {
                assert!((a - b).abs() <= 1e-12, "|{a} - {b}| too large");
            }
        }
    }

    #[test]
    fn merge_equals_adapter_forward_over_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..100 {
            let layer = seeded_layer(8, 6, 3, trial);
            let merged = layer.merge();
            let x = Array1::from_shape_fn(6, |_| rng.sample::<f64, _>(StandardNormal));
            let direct = merged.dot(&x);
            let adapted = layer.forward(&x).unwrap();
            let max_diff = direct
                .iter()
                .zip(adapted.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(max_diff <= 1e-10, "trial {trial}: {max_diff}");
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let layer = seeded_layer(4, 3, 1, 0);
        let x = Array1::zeros(5);
        assert!(matches!(
            layer.forward(&x),
            Err(LoraError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn grad_check_scalar_layer() {
        let layer = LoraLinear {
            w0: array![[0.7]],
            adapter: LoraAdapter {
                a: array![[0.3]],
                b: array![[-0.9]],
                rank: 1,
                alpha: 2.0,
                dropout_p: 0.0,
            },
        };
        let err = grad_check(&layer, &array![1.3], 1e-6).unwrap();
        assert!(err <= 1e-7, "relative error {err}");
    }

    #[test]
    fn grad_check_zero_b_agrees_on_zero_a_gradient() {
        let mut layer = seeded_layer(4, 4, 2, 5);
        layer.adapter.b.fill(0.0);
        // With B = 0 the loss is flat in A; both routes must say zero.
        let err = grad_check(&layer, &array![0.4, -1.0, 0.2, 0.9], 1e-6).unwrap();
        assert!(err <= 1e-7, "relative error {err}");
    }

    #[test]
    fn grad_check_random_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..20 {
            let layer = seeded_layer(8, 8, 2, 100 + trial);
            let x = Array1::from_shape_fn(8, |_| rng.sample::<f64, _>(StandardNormal));
            let err = grad_check(&layer, &x, 1e-6).unwrap();
            assert!(err <= 1e-4, "trial {trial}: relative error {err}");
        }
    }
}
