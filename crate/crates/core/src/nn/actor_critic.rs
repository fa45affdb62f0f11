use rand::Rng;

use super::{softmax, DenseParams, LstmCache, LstmParams, LstmState, Parameters, Tensor};
use crate::{Result, Scalar};

/// An LSTM trunk with a two-way softmax policy head and a scalar value head.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic<T> {
    pub lstm: LstmParams<T>,
    pub policy: DenseParams<T>,
    pub value: DenseParams<T>,
}

/// Everything one forward step produced.
#[derive(Debug, Clone)]
pub struct ActorCriticStep<T> {
    pub state: LstmState<T>,
    pub cache: LstmCache<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
    pub value: T,
}

impl<T: Scalar> ActorCritic<T> {
    /// Random trunk, zero heads: the initial policy is uniform and the
    /// initial value is zero.
    pub fn new<R: Rng + ?Sized>(input: usize, units: usize, actions: usize, rng: &mut R) -> Self {
        ActorCritic {
            lstm: LstmParams::uniform(input, units, rng),
            policy: DenseParams::zeros(units, actions),
            value: DenseParams::zeros(units, 1),
        }
    }

    pub fn zeros(input: usize, units: usize, actions: usize) -> Self {
        ActorCritic {
            lstm: LstmParams::zeros(input, units),
            policy: DenseParams::zeros(units, actions),
            value: DenseParams::zeros(units, 1),
        }
    }

    pub fn units(&self) -> usize {
        self.lstm.units()
    }

    pub fn input_dim(&self) -> usize {
        self.lstm.input_dim()
    }

    pub fn forward(&self, x: &[T], state: &LstmState<T>) -> Result<ActorCriticStep<T>> {
        let (next, cache) = self.lstm.forward(x, state)?;
        let logits = self.policy.forward(&next.hidden)?;
        let probs = softmax(&logits);
        let value = self.value.forward(&next.hidden)?[0];
        Ok(ActorCriticStep { state: next, cache, logits, probs, value })
    }

    /// Backward from gradients on the logits, the value and (optionally) the
    /// step's output state. Returns `(dx, d_prev_state)`.
    pub fn backward(
        &self,
        step: &ActorCriticStep<T>,
        d_logits: &[T],
        d_value: T,
        d_state: Option<&LstmState<T>>,
        grads: &mut ActorCritic<T>,
    ) -> (Vec<T>, LstmState<T>) {
        let h = &step.state.hidden;
        let mut dh = self.policy.backward(h, d_logits, &mut grads.policy);
        let dv = self.value.backward(h, &[d_value], &mut grads.value);
        let mut dc = vec![T::zero(); self.units()];
        for (a, b) in dh.iter_mut().zip(dv) {
            *a += b;
        }
        if let Some(ds) = d_state {
            for (a, &b) in dh.iter_mut().zip(&ds.hidden) {
                *a += b;
            }
            for (a, &b) in dc.iter_mut().zip(&ds.cell) {
                *a += b;
            }
        }
        self.lstm.backward(&step.cache, &dh, &dc, &mut grads.lstm)
    }
}

impl<T: Scalar> Parameters<T> for ActorCritic<T> {
    fn blocks(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, blocks) in [("lstm.", self.lstm.blocks()), ("policy.", self.policy.blocks()), ("value.", self.value.blocks())] {
            out.extend(blocks.into_iter().map(|(n, t)| (format!("{prefix}{n}"), t)));
        }
        out
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, blocks) in
            [("lstm.", self.lstm.blocks_mut()), ("policy.", self.policy.blocks_mut()), ("value.", self.value.blocks_mut())]
        {
            out.extend(blocks.into_iter().map(|(n, t)| (format!("{prefix}{n}"), t)));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{entropy, finite_diff_check};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_net_is_uniform_with_zero_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = ActorCritic::<f64>::new(3, 48, 2, &mut rng);
        let s = net.forward(&[1.0, 0.0, 0.5], &LstmState::zeros(48)).unwrap();
        assert_eq!(s.probs, vec![0.5, 0.5]);
        assert_eq!(s.value, 0.0);
        assert_eq!(net.param_count(), 4 * 48 * (48 + 3) + 4 * 48 + 3 * 48 + 3);
    }

    /// Entropy-regularized score surrogate plus half squared TD error.
    fn surrogate(net: &ActorCritic<f64>, x: &[f64], s0: &LstmState<f64>, action: usize, adv: f64, target: f64, beta: f64) -> f64 {
        let s = net.forward(x, s0).unwrap();
        -(s.probs[action].ln() * adv + beta * entropy(&s.probs)) + 0.5 * (target - s.value).powi(2)
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = ActorCritic::<f64>::new(3, 4, 2, &mut rng);
            net.policy = DenseParams::uniform(4, 2, &mut rng);
            net.value = DenseParams::uniform(4, 1, &mut rng);
            let x = [0.2, -0.4, 0.9];
            let s0 = LstmState { cell: vec![0.1, -0.2, 0.3, 0.0], hidden: vec![0.05, 0.1, -0.3, 0.2] };
            let (action, adv, target, beta) = ((seed % 2) as usize, 0.7, 1.3, 0.05);
            let step = net.forward(&x, &s0).unwrap();
            let p = &step.probs;
            let h = entropy(p);
            let d_logits: Vec<f64> = (0..2)
                .map(|k| {
                    let score = if k == action { 1.0 } else { 0.0 } - p[k];
                    -(adv * score - beta * p[k] * (p[k].ln() + h))
                })
                .collect();
            let d_value = -(target - step.value);
            let mut g = net.zeros_like();
            net.backward(&step, &d_logits, d_value, None, &mut g);
            let r = finite_diff_check(&net, &g, |n| surrogate(n, &x, &s0, action, adv, target, beta), 1e-5, 1e-4);
            assert!(r.passed, "seed {seed}: {r:?}");
        }
    }
}
