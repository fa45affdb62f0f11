use rand::Rng;

use super::{check_len, uniform_init, Parameters, Tensor};
use crate::{Result, Scalar};

/// Affine layer `y = x·W + b`; activations are applied by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    /// `[in, out]`.
    pub weights: Tensor<T>,
    /// `[out]`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseParams { weights: Tensor::zeros(&[input, output]), bias: Tensor::zeros(&[output]) }
    }

    pub fn uniform<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        DenseParams { weights: uniform_init(&[input, output], input, rng), bias: uniform_init(&[output], input, rng) }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.bias.len()
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        check_len("dense input", self.input_dim(), x.len())?;
        let mut y = self.weights.vecmat(x)?;
        for (v, &b) in y.iter_mut().zip(self.bias.data()) {
            *v += b;
        }
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[T], dy: &[T], grads: &mut DenseParams<T>) -> Vec<T> {
        grads.weights.add_outer(x, dy);
        grads.bias.add_slice(dy);
        self.weights.matvec(dy)
    }
}

impl<T: Scalar> Parameters<T> for DenseParams<T> {
    fn blocks(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("weights".into(), &self.weights), ("bias".into(), &self.bias)]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![("weights".into(), &mut self.weights), ("bias".into(), &mut self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_bias_only() {
        let mut d = DenseParams::<f64>::zeros(2, 2);
        d.weights.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(d.forward(&[3.0, -4.0]).unwrap(), vec![3.0, -4.0]);
        let mut d = DenseParams::<f64>::zeros(2, 2);
        d.bias.data_mut().copy_from_slice(&[0.5, -0.5]);
        assert_eq!(d.forward(&[3.0, -4.0]).unwrap(), vec![0.5, -0.5]);
        assert!(d.forward(&[1.0]).is_err());
    }

    #[test]
    fn two_by_two_hand_product() {
        let mut d = DenseParams::<f64>::zeros(2, 2);
        d.weights.data_mut().copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        d.bias.data_mut().copy_from_slice(&[0.5, 1.0]);
        // [2, 1]·[[1,2],[3,4]] + [0.5, 1] = [5.5, 9]
        assert_eq!(d.forward(&[2.0, 1.0]).unwrap(), vec![5.5, 9.0]);
    }

    #[test]
    fn squared_error_gradient_is_two_residual_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = DenseParams::<f64>::uniform(3, 1, &mut rng);
        let x = [0.3, -1.2, 0.7];
        let y = 0.25;
        let yhat = d.forward(&x).unwrap()[0];
        let mut g = d.zeros_like();
        d.backward(&x, &[2.0 * (yhat - y)], &mut g);
        for (k, &xi) in x.iter().enumerate() {
            assert!((g.weights.data()[k] - 2.0 * (yhat - y) * xi).abs() < 1e-15);
        }
        let loss = |p: &DenseParams<f64>| (p.forward(&x).unwrap()[0] - y).powi(2);
        let report = finite_diff_check(&d, &g, loss, 1e-5, 1e-8);
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let d = DenseParams::<f64>::zeros(2, 3);
        let g = d.zeros_like();
        let report = finite_diff_check(&d, &g, |_| 1.5, 1e-5, 1e-4);
        assert!(report.passed);
    }
}
