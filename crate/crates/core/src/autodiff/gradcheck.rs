use crate::error::{Error, Result};

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;

/// Compares the tape gradient of a scalar function against central
/// differences and returns the largest relative error
/// `|a - d| / (|a| + |d| + 1e-12)` over all entries of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::Invalid(format!(
            "grad_check eps must be positive, got {eps}"
        )));
    }
    let mut tape = Tape::new();
    let xid = tape.param(x);
    let loss = f(&mut tape, xid)?;
    tape.backward(loss)?;
    let analytic = tape.grad(xid).expect("param has grad").to_vec();

    let eval = |t: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let id = tape.leaf(t);
        let out = f(&mut tape, id)?;
        Ok(tape.scalar_value(out))
    };

    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        if !a.is_finite() || !numeric.is_finite() {
            return Err(Error::NonFinite(format!(
                "entry {i}: analytic {a}, numeric {numeric}"
            )));
        }
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
