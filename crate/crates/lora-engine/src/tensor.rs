use ndarray::{Array, Dimension, Ix1, Ix2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One trainable tensor with its gradient and Adam moments.
#[derive(Debug, Clone)]
pub(crate) struct Param<D: Dimension> {
    pub value: Array<f32, D>,
    pub grad: Array<f32, D>,
    m: Array<f32, D>,
    v: Array<f32, D>,
}

pub(crate) type Param1 = Param<Ix1>;
pub(crate) type Param2 = Param<Ix2>;

impl<D: Dimension> Param<D> {
    pub fn new(value: Array<f32, D>) -> Self {
        let grad = Array::zeros(value.raw_dim());
        let m = Array::zeros(value.raw_dim());
        let v = Array::zeros(value.raw_dim());
        Param { value, grad, m, v }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// One Adam update (β1 0.9, β2 0.999, ε 1e-8, no weight decay).
    /// `step` is 1-based for bias correction.
    pub fn adam_step(&mut self, lr: f32, step: usize) {
        const BETA1: f32 = 0.9;
        const BETA2: f32 = 0.999;
        const EPS: f32 = 1e-8;
        let bias1 = 1.0 - BETA1.powi(step as i32);
        let bias2 = 1.0 - BETA2.powi(step as i32);
        ndarray::Zip::from(&mut self.value)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(&self.grad)
            .for_each(|value, m, v, grad| {
                *m = BETA1 * *m + (1.0 - BETA1) * grad;
                *v = BETA2 * *v + (1.0 - BETA2) * grad * grad;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *value -= lr * m_hat / (v_hat.sqrt() + EPS);
            });
    }

    pub fn n_params(&self) -> usize {
        self.value.len()
    }
}

/// Gaussian(0, std²) initialization from the shared training generator.
pub(crate) fn randn2(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f32) -> Param2 {
    let value = Array::from_shape_fn((rows, cols), |_| {
        let sample: f64 = rng.sample(StandardNormal);
        sample as f32 * std
    });
    Param::new(value)
}

pub(crate) fn zeros1(len: usize) -> Param1 {
    Param::new(Array::zeros(len))
}

pub(crate) fn ones1(len: usize) -> Param1 {
    Param::new(Array::from_elem(len, 1.0))
}

/// Tanh-approximation GELU and its derivative.
pub(crate) fn gelu(x: f32) -> f32 {
    const C: f32 = 0.797_884_56; // sqrt(2/π)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_deriv(x: f32) -> f32 {
    const C: f32 = 0.797_884_56;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn adam_moves_against_gradient() {
        let mut p = Param::new(array![[1.0f32, -1.0]]);
        p.grad = array![[0.5, -0.5]];
        p.adam_step(0.1, 1);
        assert!(p.value[(0, 0)] < 1.0);
        assert!(p.value[(0, 1)] > -1.0);
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for &x in &[-3.0f32, -1.0, -0.1, 0.0, 0.2, 1.5, 4.0] {
            let eps = 1e-3f32;
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert!(
                (gelu_deriv(x) - fd).abs() < 2e-3,
                "x={x}: {} vs {fd}",
                gelu_deriv(x)
            );
        }
    }
}
