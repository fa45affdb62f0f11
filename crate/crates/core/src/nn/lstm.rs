use rand::Rng;

use super::{check_len, sigmoid, uniform_init, Parameters, Tensor};
use crate::{Result, Scalar};

/// LSTM cell with the four gates fused column-wise in the order
/// forget, input, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// `[in, 4H]`.
    pub w_x: Tensor<T>,
    /// `[H, 4H]`.
    pub w_h: Tensor<T>,
    /// `[4H]`.
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub cell: Vec<T>,
    pub hidden: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(units: usize) -> Self {
        LstmState { cell: vec![T::zero(); units], hidden: vec![T::zero(); units] }
    }

    pub fn units(&self) -> usize {
        self.hidden.len()
    }
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub x: Vec<T>,
    pub prev: LstmState<T>,
    pub forget: Vec<T>,
    pub input: Vec<T>,
    pub candidate: Vec<T>,
    pub output: Vec<T>,
    pub tanh_cell: Vec<T>,
}

impl<T: Scalar> LstmParams<T> {
    pub fn zeros(input: usize, units: usize) -> Self {
        LstmParams { w_x: Tensor::zeros(&[input, 4 * units]), w_h: Tensor::zeros(&[units, 4 * units]), bias: Tensor::zeros(&[4 * units]) }
    }

    pub fn uniform<R: Rng + ?Sized>(input: usize, units: usize, rng: &mut R) -> Self {
        let fan_in = input + units;
        LstmParams {
            w_x: uniform_init(&[input, 4 * units], fan_in, rng),
            w_h: uniform_init(&[units, 4 * units], fan_in, rng),
            bias: uniform_init(&[4 * units], fan_in, rng),
        }
    }

    pub fn units(&self) -> usize {
        self.w_h.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.w_x.shape()[0]
    }

    pub fn forward(&self, x: &[T], state: &LstmState<T>) -> Result<(LstmState<T>, LstmCache<T>)> {
        let h = self.units();
        check_len("lstm input", self.input_dim(), x.len())?;
        check_len("lstm state", h, state.units())?;
        check_len("lstm cell", h, state.cell.len())?;
        let mut pre = self.w_x.vecmat(x)?;
        let rec = self.w_h.vecmat(&state.hidden)?;
        for ((p, r), b) in pre.iter_mut().zip(rec).zip(self.bias.data()) {
            *p += r + *b;
        }
        let forget: Vec<T> = pre[..h].iter().map(|&v| sigmoid(v)).collect();
        let input: Vec<T> = pre[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
        let candidate: Vec<T> = pre[2 * h..3 * h].iter().map(|&v| v.tanh()).collect();
        let output: Vec<T> = pre[3 * h..].iter().map(|&v| sigmoid(v)).collect();
        let cell: Vec<T> = (0..h).map(|k| candidate[k] * input[k] + forget[k] * state.cell[k]).collect();
        let tanh_cell: Vec<T> = cell.iter().map(|c| c.tanh()).collect();
        let hidden: Vec<T> = (0..h).map(|k| tanh_cell[k] * output[k]).collect();
        let cache = LstmCache { x: x.to_vec(), prev: state.clone(), forget, input, candidate, output, tanh_cell };
        Ok((LstmState { cell, hidden }, cache))
    }

    /// Backward through one step given gradients on the new hidden and cell
    /// state. Accumulates into `grads`; returns `(dx, d_prev_state)`.
    pub fn backward(&self, cache: &LstmCache<T>, d_hidden: &[T], d_cell: &[T], grads: &mut LstmParams<T>) -> (Vec<T>, LstmState<T>) {
        let h = self.units();
        let one = T::one();
        let mut d_pre = vec![T::zero(); 4 * h];
        let mut d_prev_cell = vec![T::zero(); h];
        for k in 0..h {
            let (f, i, e, o, tc) = (cache.forget[k], cache.input[k], cache.candidate[k], cache.output[k], cache.tanh_cell[k]);
            let dc = d_cell[k] + d_hidden[k] * o * (one - tc * tc);
            let d_o = d_hidden[k] * tc;
            d_pre[k] = dc * cache.prev.cell[k] * f * (one - f);
            d_pre[h + k] = dc * e * i * (one - i);
            d_pre[2 * h + k] = dc * i * (one - e * e);
            d_pre[3 * h + k] = d_o * o * (one - o);
            d_prev_cell[k] = dc * f;
        }
        grads.w_x.add_outer(&cache.x, &d_pre);
        grads.w_h.add_outer(&cache.prev.hidden, &d_pre);
        grads.bias.add_slice(&d_pre);
        let dx = self.w_x.matvec(&d_pre);
        let d_prev_hidden = self.w_h.matvec(&d_pre);
        (dx, LstmState { cell: d_prev_cell, hidden: d_prev_hidden })
    }
}

impl<T: Scalar> Parameters<T> for LstmParams<T> {
    fn blocks(&self) -> Vec<(String, &Tensor<T>)> {
        vec![("w_x".into(), &self.w_x), ("w_h".into(), &self.w_h), ("bias".into(), &self.bias)]
    }

    fn blocks_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![("w_x".into(), &mut self.w_x), ("w_h".into(), &mut self.w_h), ("bias".into(), &mut self.bias)]
    }
}
