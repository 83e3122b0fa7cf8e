//! Single-layer normalized linear attention read out at the query token.

use crate::autodiff::{kernels::dot, Tensor};
use crate::error::{Error, Result};

use super::attention::FeatureMap;

/// Query/key/value maps of the single-layer model, each `[d×d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl LinearAttentionParams {
    pub fn identity(d: usize) -> Self {
        Self {
            wq: Tensor::identity(d),
            wk: Tensor::identity(d),
            wv: Tensor::identity(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.wq.shape()[0]
    }

    fn check(&self, d: usize) -> Result<()> {
        for w in [&self.wq, &self.wk, &self.wv] {
            if w.shape() != [d, d] {
                return Err(Error::shape("linear attention weights", w.shape(), &[d, d]));
            }
        }
        Ok(())
    }
}

/// Per-token summands `a_i = z_i v_i` with `z_i = φ(W_Q h_q)ᵀ φ(W_K h_i)`;
/// the query's own term comes last.
pub fn attention_terms(
    demos: &[Vec<f64>],
    query: &[f64],
    params: &LinearAttentionParams,
    phi: &dyn FeatureMap,
) -> Result<Vec<Vec<f64>>> {
    let d = query.len();
    params.check(d)?;
    let fq = phi.apply(&params.wq.matvec(query)?);
    let term = |h: &[f64]| -> Result<Vec<f64>> {
        if h.len() != d {
            return Err(Error::shape("linear attention token", &[d], &[h.len()]));
        }
        let z = dot(&fq, &phi.apply(&params.wk.matvec(h)?));
        Ok(params.wv.matvec(h)?.into_iter().map(|v| z * v).collect())
    };
    let mut terms = demos.iter().map(|h| term(h)).collect::<Result<Vec<_>>>()?;
    terms.push(term(query)?);
    Ok(terms)
}

/// Output at the query position: the mean of the `K + 1` attention terms.
pub fn linear_attention_step(
    demos: &[Vec<f64>],
    query: &[f64],
    params: &LinearAttentionParams,
    phi: &dyn FeatureMap,
) -> Result<Vec<f64>> {
    let terms = attention_terms(demos, query, params, phi)?;
    let n = terms.len() as f64;
    let mut out = vec![0.0; query.len()];
    for t in &terms {
        for (o, v) in out.iter_mut().zip(t) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}
