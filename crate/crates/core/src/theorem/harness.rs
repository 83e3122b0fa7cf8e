use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels::dot, Tensor};
use crate::error::{Error, Result};
use crate::geometry::stats::{loglog_slope, Moments};
use crate::model::{
    attention_terms, feature_maps, linear_attention_step, FeatureMap, LinearAttentionParams,
};
use crate::rng::{self, Rng};

use super::distribution::{DemoDistribution, DistributionSpec};

/// How the attention maps are chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSpec {
    Identity,
    /// Entries i.i.d. `N(0, scale²/d)`.
    Random {
        seed: u64,
        scale: f64,
    },
}

/// How the query token is handled across Monte-Carlo samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuerySpec {
    /// One query for the whole run; drawn from the distribution when `value` is absent.
    Fixed { value: Option<Vec<f64>> },
    /// A fresh query for every sample.
    Resampled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    pub distribution: DistributionSpec,
    pub weights: WeightSpec,
    pub feature_map: String,
    pub query: QuerySpec,
    pub k_grid: Vec<usize>,
    /// Monte-Carlo samples per grid point.
    pub m: usize,
    /// Demonstration draws for the infinite-context mean; `None` means `m · max K`.
    pub m_inf: Option<usize>,
    pub seed: u64,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        Self {
            distribution: DistributionSpec::standard_gaussian(8),
            weights: WeightSpec::Identity,
            feature_map: "identity".into(),
            query: QuerySpec::Fixed { value: None },
            k_grid: default_k_grid(256),
            m: 100_000,
            m_inf: None,
            seed: 0,
        }
    }
}

/// `{0, 1, 2, 4, …, k_max}`.
pub fn default_k_grid(k_max: usize) -> Vec<usize> {
    let mut g = vec![0];
    let mut k = 1;
    while k <= k_max {
        g.push(k);
        k *= 2;
    }
    g
}

impl WeightSpec {
    pub fn build(&self, d: usize) -> Result<LinearAttentionParams> {
        match self {
            WeightSpec::Identity => Ok(LinearAttentionParams::identity(d)),
            WeightSpec::Random { seed, scale } => {
                let normal = Normal::new(0.0, scale / (d as f64).sqrt())
                    .map_err(|e| Error::Config(format!("weight scale: {e}")))?;
                let mut r = rng::stream(*seed, rng::stream_id(&["theorem-weights"], 0));
                let mut m =
                    || Tensor::matrix(d, d, (0..d * d).map(|_| normal.sample(&mut r)).collect());
                Ok(LinearAttentionParams {
                    wq: m()?,
                    wk: m()?,
                    wv: m()?,
                })
            }
        }
    }
}

/// Statistics of `h′_q(K)` over Monte-Carlo samples at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStats {
    pub k: usize,
    /// Moments of `‖h′_q(K)‖²`.
    pub norm_sq: Moments,
    pub mean: Vec<f64>,
    /// Sample covariance of `h′_q(K)`, row-major `[d×d]`.
    pub cov: Vec<f64>,
}

/// Streaming mean and covariance of vectors.
#[derive(Debug, Clone)]
struct VecMoments {
    n: u64,
    mean: Vec<f64>,
    co: Vec<f64>,
}

impl VecMoments {
    fn new(d: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; d],
            co: vec![0.0; d * d],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        let d = self.mean.len();
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for i in 0..d {
            let after = x[i] - self.mean[i];
            for j in 0..d {
                self.co[i * d + j] += after * delta[j];
            }
        }
    }

    fn cov(&self) -> Vec<f64> {
        let denom = (self.n.max(2) - 1) as f64;
        self.co.iter().map(|c| c / denom).collect()
    }
}

fn quad(cov: &[f64], u: &[f64]) -> f64 {
    let d = u.len();
    (0..d)
        .map(|i| u[i] * dot(&cov[i * d..(i + 1) * d], u))
        .sum()
}

/// Samples and the fixed pieces of one theorem run.
pub struct Harness {
    pub dist: Box<dyn DemoDistribution>,
    pub params: LinearAttentionParams,
    pub phi: &'static dyn FeatureMap,
    /// `None` when the query is resampled per draw.
    pub query: Option<Vec<f64>>,
    pub seed: u64,
}

impl Harness {
    pub fn new(cfg: &TheoremConfig) -> Result<Self> {
        let dist = cfg.distribution.build()?;
        let d = dist.dim();
        let params = cfg.weights.build(d)?;
        let phi = feature_maps().get(&cfg.feature_map)?;
        let query = match &cfg.query {
            QuerySpec::Fixed { value: Some(v) } => {
                if v.len() != d {
                    return Err(Error::shape("theorem query", &[d], &[v.len()]));
                }
                Some(v.clone())
            }
            QuerySpec::Fixed { value: None } => {
                let mut r = rng::stream(cfg.seed, rng::stream_id(&["theorem-query"], 0));
                Some(dist.sample(&mut r))
            }
            QuerySpec::Resampled => None,
        };
        Ok(Self {
            dist,
            params,
            phi,
            query,
            seed: cfg.seed,
        })
    }

    fn draw_query(&self, r: &mut Rng) -> Vec<f64> {
        match &self.query {
            Some(q) => q.clone(),
            None => self.dist.sample(r),
        }
    }

    /// One draw of `h′_q(K)`.
    pub fn sample_output(&self, k: usize, r: &mut Rng) -> Result<Vec<f64>> {
        let query = self.draw_query(r);
        let demos: Vec<Vec<f64>> = (0..k).map(|_| self.dist.sample(r)).collect();
        linear_attention_step(&demos, &query, &self.params, self.phi)
    }

    /// `m` independent draws at demonstration count `k`, from the grid point's own stream.
    pub fn grid_stats(&self, k: usize, m: usize) -> Result<GridStats> {
        if m < 2 {
            return Err(Error::Invalid("need at least 2 Monte-Carlo samples".into()));
        }
        let mut r = rng::stream(self.seed, rng::stream_id(&["theorem-k"], k as u64));
        let mut norm_sq = Moments::default();
        let mut vm = VecMoments::new(self.dist.dim());
        for _ in 0..m {
            let h = self.sample_output(k, &mut r)?;
            norm_sq.push(dot(&h, &h));
            vm.push(&h);
        }
        Ok(GridStats {
            k,
            norm_sq,
            cov: vm.cov(),
            mean: vm.mean,
        })
    }

    /// Empirical mean and covariance of the demonstration terms `a_i = z_i v_i`,
    /// which is what `h′_q(K)` tends to as `K → ∞`.
    pub fn infinite_mean(&self, draws: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut r = rng::stream(self.seed, rng::stream_id(&["theorem-inf"], 0));
        let mut vm = VecMoments::new(self.dist.dim());
        for _ in 0..draws {
            let query = self.draw_query(&mut r);
            let h = self.dist.sample(&mut r);
            let terms = attention_terms(std::slice::from_ref(&h), &query, &self.params, self.phi)?;
            vm.push(&terms[0]);
        }
        let cov = vm.cov();
        Ok((vm.mean, cov))
    }
}

/// `W_V (W_K)ᵀ W_Q h_q` scaled for `N(m, s²I)`: the exact `E[z_i v_i]` under an
/// isotropic Gaussian with identity feature map.
pub fn closed_form_infinite_mean(
    dist: &dyn DemoDistribution,
    params: &LinearAttentionParams,
    phi: &dyn FeatureMap,
    query: &[f64],
) -> Result<Vec<f64>> {
    if phi.name() != "identity" {
        return Err(Error::Unsupported(format!(
            "closed-form mean needs the identity feature map, got `{}`",
            phi.name()
        )));
    }
    let (mean, std) = dist.as_isotropic_gaussian().ok_or_else(|| {
        Error::Unsupported(format!(
            "closed-form mean needs a Gaussian, got `{}`",
            dist.name()
        ))
    })?;
    // E[h hᵀ] = s²I + m mᵀ, so E[(qᵀ W_K h) W_V h] = W_V (s²I + m mᵀ) W_Kᵀ q
    let q = params.wq.matvec(query)?;
    let kq = params.wk.transpose()?.matvec(&q)?;
    let proj = dot(mean, &kq);
    let inner: Vec<f64> = kq
        .iter()
        .zip(mean)
        .map(|(x, m)| std * std * x + m * proj)
        .collect();
    params.wv.matvec(&inner)
}

/// Exact `Var(h′²)` for `d = 1`, identity maps, `h ~ N(0, 1)` and fixed scalar query:
/// `h′ = h_q (h_q² + X)/(K+1)` with `X ~ χ²_K`.
pub fn exact_variance_d1(query: f64, k: usize) -> f64 {
    let kf = k as f64;
    let c = query * query;
    // raw moments of X ~ χ²_K
    let m1 = kf;
    let m2 = kf * (kf + 2.0);
    let m3 = m2 * (kf + 4.0);
    let m4 = m3 * (kf + 6.0);
    let e2 = c * c + 2.0 * c * m1 + m2;
    let e4 = c.powi(4) + 4.0 * c.powi(3) * m1 + 6.0 * c * c * m2 + 4.0 * c * m3 + m4;
    c * c * (e4 - e2 * e2) / (kf + 1.0).powi(4)
}

/// One grid row of `theorem_report.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoremRow {
    pub k: usize,
    pub var_est: f64,
    pub var_stderr: f64,
    pub lambda_est: f64,
    pub lambda_stderr: f64,
    pub lambda_pred: f64,
    /// Size of the part of `E[h′(K)] − E[h′(∞)]` orthogonal to `E[h′(0)] − E[h′(∞)]`, relative to the latter.
    pub residual: f64,
    /// Whether the residual stays within five noise standard deviations.
    pub collinear: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceDecay {
    pub k: Vec<usize>,
    pub var_est: Vec<f64>,
    pub var_stderr: Vec<f64>,
    /// Log–log slope against `K + 1` over `K ≥ 1`; `None` when the variance vanishes.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShift {
    pub rows: Vec<TheoremRow>,
    /// Monte-Carlo estimate of `E[z_i v_i]`.
    pub infinite_mean: Vec<f64>,
    pub infinite_mean_stderr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremReport {
    pub rows: Vec<TheoremRow>,
    pub variance_slope: Option<f64>,
    /// `max/min` of `(K+1)·Var` over `K ≥ 1`.
    pub scaled_variance_ratio: Option<f64>,
    pub query: Option<Vec<f64>>,
    pub infinite_mean: Vec<f64>,
    pub infinite_mean_stderr: Vec<f64>,
    /// Exact Gaussian value when available.
    pub closed_form_infinite_mean: Option<Vec<f64>>,
}

fn check_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty K grid".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Invalid("K grid must be strictly increasing".into()));
    }
    Ok(())
}

fn decay_from(stats: &[GridStats]) -> Result<VarianceDecay> {
    let k: Vec<usize> = stats.iter().map(|s| s.k).collect();
    let var_est: Vec<f64> = stats.iter().map(|s| s.norm_sq.variance()).collect();
    let var_stderr = stats.iter().map(|s| s.norm_sq.variance_stderr()).collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = k
        .iter()
        .zip(&var_est)
        .filter(|(&k, _)| k >= 1)
        .map(|(&k, &v)| ((k + 1) as f64, v))
        .unzip();
    let slope = if xs.len() >= 2 && ys.iter().all(|&v| v > 0.0) {
        Some(loglog_slope(&xs, &ys)?)
    } else {
        log::warn!("variance is zero somewhere on the grid; slope is undefined");
        None
    };
    Ok(VarianceDecay {
        k,
        var_est,
        var_stderr,
        slope,
    })
}

fn shift_from(h: &Harness, stats: &[GridStats], m: usize, m_inf: usize) -> Result<MeanShift> {
    let base = stats
        .iter()
        .find(|s| s.k == 0)
        .ok_or_else(|| Error::Invalid("mean-shift estimation needs K = 0 in the grid".into()))?;
    let (e_inf, cov_inf) = h.infinite_mean(m_inf)?;
    let d = e_inf.len();
    let u: Vec<f64> = base.mean.iter().zip(&e_inf).map(|(a, b)| a - b).collect();
    let uu = dot(&u, &u);
    if uu == 0.0 {
        return Err(Error::Degenerate("E[h′(0)] coincides with E[h′(∞)]".into()));
    }
    let tr = |c: &[f64]| (0..d).map(|i| c[i * d + i]).sum::<f64>();
    let rows = stats
        .iter()
        .map(|s| {
            let diff: Vec<f64> = s.mean.iter().zip(&e_inf).map(|(a, b)| a - b).collect();
            let lambda = dot(&diff, &u) / uu;
            let orth: f64 = diff
                .iter()
                .zip(&u)
                .map(|(x, y)| (x - lambda * y).powi(2))
                .sum::<f64>()
                .sqrt();
            let w = 1.0 - lambda;
            let lambda_var = (quad(&s.cov, &u) / m as f64
                + w * w * quad(&cov_inf, &u) / m_inf as f64)
                / (uu * uu);
            let noise = ((tr(&s.cov) / m as f64 + w * w * tr(&cov_inf) / m_inf as f64) / uu).sqrt();
            let residual = orth / uu.sqrt();
            // absolute slack covers rounding when the sampling noise is zero
            let collinear = residual <= 5.0 * noise + 1e-12;
            if !collinear {
                log::warn!(
                    "K={}: mean shift leaves the interpolation line (residual {residual:.3e})",
                    s.k
                );
            }
            TheoremRow {
                k: s.k,
                var_est: s.norm_sq.variance(),
                var_stderr: s.norm_sq.variance_stderr(),
                lambda_est: lambda,
                lambda_stderr: lambda_var.sqrt(),
                lambda_pred: 1.0 / (s.k as f64 + 1.0),
                residual,
                collinear,
            }
        })
        .collect();
    Ok(MeanShift {
        rows,
        infinite_mean_stderr: (0..d)
            .map(|i| (cov_inf[i * d + i] / m_inf as f64).sqrt())
            .collect(),
        infinite_mean: e_inf,
    })
}

fn m_inf(cfg: &TheoremConfig) -> usize {
    cfg.m_inf
        .unwrap_or_else(|| cfg.m * cfg.k_grid.iter().copied().max().unwrap_or(1).max(1))
}

fn all_stats(h: &Harness, cfg: &TheoremConfig) -> Result<Vec<GridStats>> {
    check_grid(&cfg.k_grid)?;
    cfg.k_grid.iter().map(|&k| h.grid_stats(k, cfg.m)).collect()
}

/// Sample variance of `‖h′_q(K)‖²` per grid point and its log–log slope.
pub fn estimate_variance_decay(cfg: &TheoremConfig) -> Result<VarianceDecay> {
    let h = Harness::new(cfg)?;
    decay_from(&all_stats(&h, cfg)?)
}

/// `λ̂_K` by projecting `E[h′(K)] − E[h′(∞)]` onto `E[h′(0)] − E[h′(∞)]`.
pub fn estimate_mean_shift(cfg: &TheoremConfig) -> Result<MeanShift> {
    let h = Harness::new(cfg)?;
    shift_from(&h, &all_stats(&h, cfg)?, cfg.m, m_inf(cfg))
}

/// Both estimates from a single set of samples, plus the closed-form mean when one exists.
pub fn run_theorem(cfg: &TheoremConfig) -> Result<TheoremReport> {
    let h = Harness::new(cfg)?;
    let stats = all_stats(&h, cfg)?;
    let decay = decay_from(&stats)?;
    let shift = shift_from(&h, &stats, cfg.m, m_inf(cfg))?;
    let scaled: Vec<f64> = decay
        .k
        .iter()
        .zip(&decay.var_est)
        .filter(|(&k, _)| k >= 1)
        .map(|(&k, &v)| (k + 1) as f64 * v)
        .collect();
    let scaled_variance_ratio = match (
        scaled.iter().copied().reduce(f64::max),
        scaled.iter().copied().reduce(f64::min),
    ) {
        (Some(hi), Some(lo)) if lo > 0.0 => Some(hi / lo),
        _ => None,
    };
    let closed = match &h.query {
        Some(q) => match closed_form_infinite_mean(h.dist.as_ref(), &h.params, h.phi, q) {
            Ok(v) => Some(v),
            Err(Error::Unsupported(_)) => None,
            Err(e) => return Err(e),
        },
        None => None,
    };
    Ok(TheoremReport {
        rows: shift.rows,
        variance_slope: decay.slope,
        scaled_variance_ratio,
        query: h.query.clone(),
        infinite_mean: shift.infinite_mean,
        infinite_mean_stderr: shift.infinite_mean_stderr,
        closed_form_infinite_mean: closed,
    })
}
