use crate::autodiff::kernels::dot;
use crate::error::{Error, Result};

use super::metrics::mean_vector;

const TOL: f64 = 1e-10;
const MAX_ITERS: usize = 10_000;

/// Top-2 principal components of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca2 {
    pub coords: Vec<[f64; 2]>,
    /// Eigenvalues of the sample covariance for the two components.
    pub explained: [f64; 2],
    /// Unit loading vectors; the first nonzero loading of each is positive.
    pub components: [Vec<f64>; 2],
    pub mean: Vec<f64>,
}

fn matvec(a: &[f64], d: usize, v: &[f64]) -> Vec<f64> {
    (0..d).map(|i| dot(&a[i * d..(i + 1) * d], v)).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenpair of a symmetric PSD matrix. Power iteration, started from
/// a column of a high matrix power (repeated squaring) so small eigengaps
/// still converge within the iteration cap.
fn leading_eigen(a: &[f64], d: usize) -> (f64, Vec<f64>) {
    let scale = (0..d).map(|i| a[i * d + i]).sum::<f64>();
    if scale <= 0.0 {
        let mut e = vec![0.0; d];
        e[0] = 1.0;
        return (0.0, e);
    }
    let mut p: Vec<f64> = a.iter().map(|x| x / scale).collect();
    let squarings = if d <= 128 { 40 } else { 12 };
    for _ in 0..squarings {
        let mut q = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let aik = p[i * d + k];
                if aik != 0.0 {
                    for j in 0..d {
                        q[i * d + j] += aik * p[k * d + j];
                    }
                }
            }
        }
        let tr: f64 = (0..d).map(|i| q[i * d + i]).sum();
        if tr <= 0.0 || !tr.is_finite() {
            break;
        }
        q.iter_mut().for_each(|x| *x /= tr);
        p = q;
    }
    // the largest column of the power is the best-conditioned start
    let best = (0..d)
        .max_by(|&x, &y| {
            let nx: f64 = (0..d).map(|i| p[i * d + x].powi(2)).sum();
            let ny: f64 = (0..d).map(|i| p[i * d + y].powi(2)).sum();
            nx.total_cmp(&ny)
        })
        .unwrap_or(0);
    let mut v: Vec<f64> = (0..d).map(|i| p[i * d + best]).collect();
    if normalize(&mut v) == 0.0 {
        v = vec![1.0 / (d as f64).sqrt(); d];
    }
    let mut lambda = dot(&v, &matvec(a, d, &v));
    for _ in 0..MAX_ITERS {
        let mut w = matvec(a, d, &v);
        if normalize(&mut w) == 0.0 {
            return (0.0, v);
        }
        let change = w
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        v = w;
        lambda = dot(&v, &matvec(a, d, &v));
        if change < TOL {
            break;
        }
    }
    (lambda.max(0.0), v)
}

fn fix_sign(v: &mut [f64]) {
    if let Some(&first) = v.iter().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Sample covariance (divisor `n − 1`) of centered rows.
pub fn covariance(points: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
    if points.len() < 2 {
        return Err(Error::Invalid(format!(
            "covariance needs at least 2 points, got {}",
            points.len()
        )));
    }
    let mean = mean_vector(points)?;
    let d = mean.len();
    let mut cov = vec![0.0; d * d];
    for p in points {
        let c: Vec<f64> = p.iter().zip(&mean).map(|(x, m)| x - m).collect();
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += c[i] * c[j];
            }
        }
    }
    let denom = (points.len() - 1) as f64;
    cov.iter_mut().for_each(|x| *x /= denom);
    Ok((cov, mean))
}

/// Projection onto the top-2 covariance eigenvectors, found by power
/// iteration with deflation.
pub fn pca_2d(points: &[Vec<f64>]) -> Result<Pca2> {
    let (mut cov, mean) = covariance(points)?;
    let d = mean.len();
    if d < 2 {
        return Err(Error::Invalid("pca_2d needs at least 2 dimensions".into()));
    }
    let (l1, mut v1) = leading_eigen(&cov, d);
    for i in 0..d {
        for j in 0..d {
            cov[i * d + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (l2, mut v2) = leading_eigen(&cov, d);
    // re-orthogonalize against the first direction after deflation
    let overlap = dot(&v1, &v2);
    v2.iter_mut().zip(&v1).for_each(|(x, y)| *x -= overlap * y);
    if normalize(&mut v2) == 0.0 {
        v2 = (0..d).map(|i| if i == 1 { 1.0 } else { 0.0 }).collect();
    }
    fix_sign(&mut v1);
    fix_sign(&mut v2);
    let coords = points
        .iter()
        .map(|p| {
            let c: Vec<f64> = p.iter().zip(&mean).map(|(x, m)| x - m).collect();
            [dot(&c, &v1), dot(&c, &v2)]
        })
        .collect();
    Ok(Pca2 {
        coords,
        explained: [l1, l2.max(0.0)],
        components: [v1, v2],
        mean,
    })
}
