use super::{Parameters, Tensor};
use crate::Scalar;

/// Bias-corrected Adam moments for one parameter container.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<P: Parameters<T>>(params: &P, lr: T) -> Self {
        let zeros: Vec<Tensor<T>> = params.blocks().iter().map(|(_, b)| Tensor::zeros(b.shape())).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0, lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8) }
    }

    /// Returns the parameters after one update; `params` is left untouched.
    pub fn step<P: Parameters<T>>(&mut self, params: &P, grads: &P) -> P {
        let mut next = params.clone();
        self.apply(&mut next, grads);
        next
    }

    pub fn apply<P: Parameters<T>>(&mut self, params: &mut P, grads: &P) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for (((_, p), (_, g)), (m, v)) in params.blocks_mut().into_iter().zip(grads.blocks()).zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = self.beta1 * *mi + (one - self.beta1) * gi;
                *vi = self.beta2 * *vi + (one - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm<T: Scalar, P: Parameters<T>>(grads: &mut P, max_norm: T) -> T {
    let norm = grads.blocks().iter().map(|(_, b)| b.norm_sq()).sum::<T>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for (_, b) in grads.blocks_mut() {
            b.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::DenseParams;

    fn scalar_param(w: f64) -> DenseParams<f64> {
        let mut p = DenseParams::zeros(1, 1);
        p.weights.data_mut()[0] = w;
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let p = scalar_param(0.3);
        let mut adam = AdamState::new(&p, 0.001);
        let q = adam.step(&p, &p.zeros_like());
        assert_eq!(p, q);
    }

    #[test]
    fn first_step_of_unit_gradient() {
        let p = scalar_param(0.0);
        let mut g = p.zeros_like();
        g.weights.data_mut()[0] = 1.0;
        let mut adam = AdamState::new(&p, 0.001);
        let q = adam.step(&p, &g);
        let delta = q.weights.data()[0];
        assert!((delta - (-0.001 / (1.0 + 1e-8))).abs() < 1e-18);
        assert!((delta + 0.000999999990).abs() < 1e-12);
        let r = adam.step(&q, &g);
        assert!(r.weights.data()[0] < q.weights.data()[0]);
        assert_eq!(adam.step, 2);
        assert!(adam.v.iter().all(|t| t.data().iter().all(|&x| x >= 0.0)));
    }

    #[test]
    fn deterministic_given_inputs() {
        let p = scalar_param(0.7);
        let mut g = p.zeros_like();
        g.weights.data_mut()[0] = -0.25;
        g.bias.data_mut()[0] = 3.0;
        let mut a = AdamState::new(&p, 0.001);
        let mut b = a.clone();
        assert_eq!(a.step(&p, &g), b.step(&p, &g));
        assert_eq!(a, b);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = scalar_param(3.0);
        g.bias.data_mut()[0] = 4.0;
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g.weights.data()[0] - 0.6).abs() < 1e-15);
        let mut small = scalar_param(0.1);
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small.weights.data()[0], 0.1);
    }
}
