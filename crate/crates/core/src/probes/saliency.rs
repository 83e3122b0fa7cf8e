use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::model::{attention_kinds, TransformerModel};
use crate::taskgen::IclInstance;

/// Per-layer `|Σ_heads A ⊙ ∂L/∂A|` for the final-token cross-entropy against gold.
pub fn saliency_map(model: &TransformerModel, inst: &IclInstance) -> Result<Vec<Tensor>> {
    let c = model.config();
    if !attention_kinds().get(&c.attention_kind)?.is_softmax() {
        return Err(Error::Unsupported(format!(
            "saliency needs attention maps; `{}` attention has none",
            c.attention_kind
        )));
    }
    let p = inst.len();
    let mut tape = Tape::new();
    let rec = model.record(&mut tape, &[&inst.tokens], &[], true)?;
    let logits = model.record_logits(&mut tape, &rec, &[p - 1])?;
    let loss = tape.cross_entropy(logits, &[inst.gold])?;
    tape.backward(loss)?;
    rec.attn
        .iter()
        .map(|&a| {
            let w = tape.value(a);
            let g = tape.grad(a).expect("attention weights need gradients");
            let mut map = vec![0.0; p * p];
            for h in 0..c.n_heads {
                let off = h * p * p;
                for (m, (wi, gi)) in map
                    .iter_mut()
                    .zip(w[off..off + p * p].iter().zip(&g[off..off + p * p]))
                {
                    *m += wi * gi;
                }
            }
            for (i, row) in map.chunks_mut(p).enumerate() {
                for (j, m) in row.iter_mut().enumerate() {
                    *m = if j > i { 0.0 } else { m.abs() };
                }
            }
            Tensor::matrix(p, p, map)
        })
        .collect()
}
