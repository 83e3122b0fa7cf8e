use crate::error::{Error, Result};

use super::metrics::{mean_vector, squared_distance, within_task_variance};
use super::stats::loglog_slope;

/// Minimum number of grid points entering a log–log fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Bias and variance of task representations as the demonstration count grows.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVarianceReport {
    pub k_grid: Vec<usize>,
    /// Reference count standing in for infinitely many demonstrations.
    pub k_inf: usize,
    /// `means[k][t]`.
    pub means: Vec<Vec<Vec<f64>>>,
    /// `bias[k][t] = ‖μ_t(K) − μ_t(K∞)‖ / ‖μ_t(0) − μ_t(K∞)‖`.
    pub bias: Vec<Vec<f64>>,
    /// `variance[k][t]`: mean squared distance to `μ_t(K)`.
    pub variance: Vec<Vec<f64>>,
    /// Task-averaged bias ratio per grid point.
    pub bias_mean: Vec<f64>,
    pub variance_mean: Vec<f64>,
    /// Log–log slope of `bias_mean` over `1 ≤ K < K∞`.
    pub bias_slope: f64,
    /// Log–log slope of `variance_mean` over `K ≥ 1`.
    pub variance_slope: f64,
}

/// `reps[k][t][i]`: vectors at one layer for grid point `k_grid[k]`, task `t`, instance `i`.
/// The grid must contain 0 and `k_inf`, with `k_inf` its maximum.
pub fn bias_variance_decompose(
    reps: &[Vec<Vec<Vec<f64>>>],
    k_grid: &[usize],
    k_inf: usize,
) -> Result<BiasVarianceReport> {
    if reps.len() != k_grid.len() {
        return Err(Error::shape(
            "bias_variance grid",
            &[k_grid.len()],
            &[reps.len()],
        ));
    }
    if k_grid.iter().max() != Some(&k_inf) {
        return Err(Error::Invalid(format!(
            "k_inf {k_inf} must be the largest grid value"
        )));
    }
    let zero = k_grid
        .iter()
        .position(|&k| k == 0)
        .ok_or_else(|| Error::Invalid("K grid must contain 0 for the bias reference".into()))?;
    let inf = k_grid
        .iter()
        .position(|&k| k == k_inf)
        .expect("checked above");
    let tasks = reps[0].len();
    if tasks == 0 || reps.iter().any(|r| r.len() != tasks) {
        return Err(Error::Invalid(
            "every grid point needs the same nonempty task list".into(),
        ));
    }

    let means: Vec<Vec<Vec<f64>>> = reps
        .iter()
        .map(|per_k| per_k.iter().map(|v| mean_vector(v)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let variance: Vec<Vec<f64>> = reps
        .iter()
        .map(|per_k| {
            per_k
                .iter()
                .map(|v| within_task_variance(v))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let mut denom = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let d = squared_distance(&means[zero][t], &means[inf][t])?.sqrt();
        if d == 0.0 {
            return Err(Error::Degenerate(format!("task {t}: μ(0) equals μ(K∞)")));
        }
        denom.push(d);
    }
    let bias: Vec<Vec<f64>> = (0..k_grid.len())
        .map(|k| {
            (0..tasks)
                .map(|t| Ok(squared_distance(&means[k][t], &means[inf][t])?.sqrt() / denom[t]))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let avg = |rows: &[Vec<f64>]| -> Vec<f64> {
        rows.iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect()
    };
    let bias_mean = avg(&bias);
    let variance_mean = avg(&variance);

    let fit = |keep: &dyn Fn(usize) -> bool, ys: &[f64], what: &str| -> Result<f64> {
        let (xs, ys): (Vec<f64>, Vec<f64>) = k_grid
            .iter()
            .zip(ys)
            .filter(|(&k, _)| keep(k))
            .map(|(&k, &y)| (k as f64, y))
            .unzip();
        if xs.len() < MIN_FIT_POINTS {
            return Err(Error::Invalid(format!(
                "{what} slope needs {MIN_FIT_POINTS} grid points, got {}",
                xs.len()
            )));
        }
        loglog_slope(&xs, &ys)
    };
    let bias_slope = fit(&|k| k >= 1 && k < k_inf, &bias_mean, "bias")?;
    let variance_slope = fit(&|k| k >= 1, &variance_mean, "variance")?;
    Ok(BiasVarianceReport {
        k_grid: k_grid.to_vec(),
        k_inf,
        means,
        bias,
        variance,
        bias_mean,
        variance_mean,
        bias_slope,
        variance_slope,
    })
}
