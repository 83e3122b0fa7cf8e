use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How TDNV combines ordered task pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairAggregation {
    /// Average over the `T(T−1)` ordered pairs.
    #[default]
    Mean,
    /// Plain sum over ordered pairs.
    Sum,
}

pub fn mean_vector(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Invalid("mean of an empty set".into()))?;
    let d = first.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        if v.len() != d {
            return Err(Error::shape("mean_vector", &[d], &[v.len()]));
        }
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    Ok(mean)
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("squared_distance", &[a.len()], &[b.len()]));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// `(1/N) Σ ‖h_i − h̄‖²`.
pub fn within_task_variance(vectors: &[Vec<f64>]) -> Result<f64> {
    let mean = mean_vector(vectors)?;
    let mut total = 0.0;
    for v in vectors {
        total += squared_distance(v, &mean)?;
    }
    Ok(total / vectors.len() as f64)
}

/// Squared Euclidean distance between two task means.
pub fn between_task_distance(mean_a: &[f64], mean_b: &[f64]) -> Result<f64> {
    squared_distance(mean_a, mean_b)
}

/// Per-task `(mean, within-task variance)` from vectors grouped by task.
pub fn task_statistics(groups: &[Vec<Vec<f64>>]) -> Result<Vec<(Vec<f64>, f64)>> {
    groups
        .iter()
        .map(|g| Ok((mean_vector(g)?, within_task_variance(g)?)))
        .collect()
}

/// Task-distance normalized variance over groups of vectors (one group per task):
/// ordered pairs `t ≠ t′` contribute `(var_t + var_t′) / (2‖μ_t − μ_t′‖²)`.
pub fn tdnv_grouped(groups: &[Vec<Vec<f64>>], agg: PairAggregation) -> Result<f64> {
    if groups.len() < 2 {
        return Err(Error::Invalid(format!(
            "TDNV needs at least 2 tasks, got {}",
            groups.len()
        )));
    }
    let stats = task_statistics(groups)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for (a, (mu_a, var_a)) in stats.iter().enumerate() {
        for (b, (mu_b, var_b)) in stats.iter().enumerate() {
            if a == b {
                continue;
            }
            let dist = between_task_distance(mu_a, mu_b)?;
            if dist <= 0.0 {
                return Err(Error::Degenerate(format!(
                    "tasks {a} and {b} have coincident means"
                )));
            }
            total += (var_a + var_b) / (2.0 * dist);
            pairs += 1;
        }
    }
    Ok(match agg {
        PairAggregation::Mean => total / pairs as f64,
        PairAggregation::Sum => total,
    })
}

/// TDNV of vectors labeled with task ids (any order).
pub fn tdnv(vectors: &[Vec<f64>], task_ids: &[usize], agg: PairAggregation) -> Result<f64> {
    if vectors.len() != task_ids.len() {
        return Err(Error::shape("tdnv", &[vectors.len()], &[task_ids.len()]));
    }
    let mut ids: Vec<usize> = task_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let groups: Vec<Vec<Vec<f64>>> = ids
        .iter()
        .map(|&t| {
            vectors
                .iter()
                .zip(task_ids)
                .filter(|(_, &id)| id == t)
                .map(|(v, _)| v.clone())
                .collect()
        })
        .collect();
    tdnv_grouped(&groups, agg)
}
