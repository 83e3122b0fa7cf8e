//! Dense `f64` tensors and a reverse-mode tape.

mod gradcheck;
pub(crate) mod kernels;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{AttentionLayout, Mask, NodeId, ScoreScale, Tape};
pub use tensor::Tensor;

use crate::error::Result;

/// Row softmax of a matrix outside any training graph.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let mut tape = Tape::new();
    let id = tape.leaf(x);
    let mask = match mask {
        Some(m) => Mask::Explicit(m.to_vec()),
        None => Mask::None,
    };
    let out = tape.softmax_rows(id, &mask)?;
    Ok(tape.tensor(out))
}

/// Mean cross-entropy of `targets` under row-softmax of `logits`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let id = tape.leaf(logits);
    let out = tape.cross_entropy(id, targets)?;
    Ok(tape.scalar_value(out))
}
