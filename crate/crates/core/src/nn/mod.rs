//! Dense linear algebra, the LSTM cell, fully connected heads, Adam and a
//! finite-difference gradient checker.
//!
//! Vectors are row vectors multiplied on the left of weight matrices, so a
//! weight of shape `[in, out]` maps `x[in]` to `x·W[out]`.

mod actor_critic;
mod adam;
mod checkpoint;
mod dense;
mod gradcheck;
mod lstm;
mod tensor;

pub use actor_critic::{ActorCritic, ActorCriticStep};
pub use adam::{clip_global_norm, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dense::DenseParams;
pub use gradcheck::{finite_diff_check, BlockCheck, GradCheckReport};
pub use lstm::{LstmCache, LstmParams, LstmState};
pub use tensor::Tensor;

use rand::Rng;

use crate::{Error, Result, Scalar};

/// A container of named parameter blocks.
pub trait Parameters<T: Scalar>: Clone {
    fn blocks(&self) -> Vec<(String, &Tensor<T>)>;
    fn blocks_mut(&mut self) -> Vec<(String, &mut Tensor<T>)>;

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, b) in z.blocks_mut() {
            b.fill(T::zero());
        }
        z
    }

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// `self += alpha * other`, block by block.
    fn axpy(&mut self, alpha: T, other: &Self) {
        let src: Vec<Vec<T>> = other.blocks().into_iter().map(|(_, b)| b.data().to_vec()).collect();
        for ((_, dst), s) in self.blocks_mut().into_iter().zip(src) {
            for (d, v) in dst.data_mut().iter_mut().zip(s) {
                *d += alpha * v;
            }
        }
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.is_finite())
    }

    /// Copies matching blocks from `(name, tensor)` pairs, prefixed by `prefix`.
    fn load_blocks(&mut self, prefix: &str, source: &[(String, Tensor<f64>)]) -> Result<()> {
        for (name, dst) in self.blocks_mut() {
            let key = format!("{prefix}{name}");
            let src = source.iter().find(|(n, _)| *n == key).ok_or_else(|| Error::Missing(format!("checkpoint block `{key}`")))?;
            if src.1.shape() != dst.shape() {
                return Err(Error::Dimension { what: "checkpoint block", expected: dst.len(), got: src.1.len() });
            }
            for (d, s) in dst.data_mut().iter_mut().zip(src.1.data()) {
                *d = T::lit(*s);
            }
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-shifted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn entropy<T: Scalar>(p: &[T]) -> T {
    -p.iter().filter(|&&q| q > T::zero()).map(|&q| q * q.ln()).sum::<T>()
}

/// Uniform in `±1/√fan_in`.
pub fn uniform_init<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-a..=a))).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { what, expected, got });
    }
    Ok(())
}
