//! Minimal deterministic neural-network building blocks.
//!
//! Everything here runs in `f64` on the CPU with hand-written backward passes.
//! Layers expose their parameters through [`Parameterized`]; gradients are
//! plain `Vec<Tensor>` buffers laid out in the same order as
//! [`Parameterized::params`], which is what [`Adam`] and [`gradient_check`]
//! consume.

mod dense;
mod error;
mod gradcheck;
mod loss;
mod lstm;
mod optim;
mod tensor;
pub mod weights;

pub use dense::{Activation, Dense};
pub use error::NnError;
pub use gradcheck::{gradient_check, numeric_gradient, relative_error, GradCheckReport};
pub use loss::{softmax, weighted_softmax_xent};
pub use lstm::{Lstm, LstmCache, LstmState};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;

pub type Result<T> = std::result::Result<T, NnError>;

/// Anything that owns trainable tensors.
///
/// `params` and `params_mut` must return the tensors in the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Zero-filled gradient buffers shaped like `params()`.
    fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.shape())).collect()
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// `acc += other`, elementwise over matching gradient buffers.
pub fn accumulate(acc: &mut [Tensor], other: &[Tensor]) -> Result<()> {
    if acc.len() != other.len() {
        return Err(NnError::ShapeMismatch {
            expected: vec![acc.len()],
            got: vec![other.len()],
        });
    }
    for (a, o) in acc.iter_mut().zip(other) {
        a.add_assign(o)?;
    }
    Ok(())
}

pub fn scale_all(grads: &mut [Tensor], factor: f64) {
    for g in grads {
        g.scale(factor);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
