use std::collections::BTreeMap;

use crate::autodiff::{self, NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::taskgen::IclInstance;

/// Mean cross-entropy over the separator positions of one sequence; each
/// separator predicts the token that follows it.
pub fn ce_loss_on_separators(logits: &Tensor, inst: &IclInstance) -> Result<f64> {
    let (p, v) = logits.dims2()?;
    if p < inst.len() {
        return Err(Error::shape(
            "ce_loss_on_separators",
            &[p, v],
            &[inst.len()],
        ));
    }
    let mut data = Vec::with_capacity(inst.sep_positions.len() * v);
    for &s in &inst.sep_positions {
        data.extend_from_slice(logits.row(s));
    }
    let rows = Tensor::matrix(inst.sep_positions.len(), v, data)?;
    autodiff::cross_entropy(&rows, &inst.separator_targets())
}

/// Unit-normalized representations with task labels, and the positive pair set.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveBatch {
    pub vectors: Vec<Vec<f64>>,
    pub task_ids: Vec<usize>,
}

impl ContrastiveBatch {
    pub fn new(vectors: &[Vec<f64>], task_ids: &[usize]) -> Result<Self> {
        if vectors.len() != task_ids.len() {
            return Err(Error::shape(
                "contrastive batch",
                &[vectors.len()],
                &[task_ids.len()],
            ));
        }
        let vectors = vectors
            .iter()
            .map(|v| {
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n == 0.0 || !n.is_finite() {
                    return Err(Error::Degenerate("cannot normalize a zero vector".into()));
                }
                Ok(v.iter().map(|x| x / n).collect())
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            vectors,
            task_ids: task_ids.to_vec(),
        })
    }

    /// Ordered pairs `(i, j)`, `i ≠ j`, sharing a task.
    pub fn positive_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.task_ids.len();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && self.task_ids[i] == self.task_ids[j])
            .collect()
    }
}

fn check_groups(task_ids: &[usize]) -> Result<()> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &t in task_ids {
        *counts.entry(t).or_default() += 1;
    }
    if counts.len() < 2 {
        return Err(Error::Invalid(format!(
            "contrastive loss needs at least 2 tasks, got {}",
            counts.len()
        )));
    }
    for (t, c) in &counts {
        if *c == 1 {
            log::warn!("task {t} has a single sample in the contrastive batch; it contributes no positive pair");
        }
    }
    Ok(())
}

/// Records the contrastive term on `h` (rows = samples): normalize, cosine
/// similarities over `tau`, then the mean negative log-ratio over positive pairs.
pub fn record_contrastive(
    tape: &mut Tape,
    h: NodeId,
    task_ids: &[usize],
    tau: f64,
) -> Result<NodeId> {
    if !(tau > 0.0) {
        return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
    }
    check_groups(task_ids)?;
    let z = tape.l2_normalize_rows(h)?;
    let sim = tape.matmul_nt(z, z)?;
    let sim = tape.scale(sim, 1.0 / tau)?;
    tape.contrastive_nll(sim, task_ids)
}

/// Contrastive loss of a batch, evaluated without gradients.
pub fn contrastive_loss(batch: &ContrastiveBatch, tau: f64) -> Result<f64> {
    let h = Tensor::from_rows(&batch.vectors)?;
    let mut tape = Tape::new();
    let id = tape.leaf(&h);
    let loss = record_contrastive(&mut tape, id, &batch.task_ids, tau)?;
    Ok(tape.scalar_value(loss))
}
