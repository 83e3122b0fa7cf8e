use std::sync::OnceLock;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::rng::Rng;

/// A law for i.i.d. demonstration vectors.
pub trait DemoDistribution: Send + Sync {
    fn name(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn sample(&self, rng: &mut Rng) -> Vec<f64>;
    /// `(mean, isotropic std)` when the law is an isotropic Gaussian.
    fn as_isotropic_gaussian(&self) -> Option<(&[f64], f64)> {
        None
    }
}

/// `N(mean, std²·I)`; `std = 0` is a point mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Uniform on the sphere of the given radius.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformSphere {
    pub dim: usize,
    pub radius: f64,
}

/// Finite mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub weights: Vec<f64>,
    pub components: Vec<Gaussian>,
}

fn normals(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

impl DemoDistribution for Gaussian {
    fn name(&self) -> &'static str {
        "gaussian"
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        normals(rng, self.mean.len())
            .into_iter()
            .zip(&self.mean)
            .map(|(z, m)| m + self.std * z)
            .collect()
    }

    fn as_isotropic_gaussian(&self) -> Option<(&[f64], f64)> {
        Some((&self.mean, self.std))
    }
}

impl DemoDistribution for UniformSphere {
    fn name(&self) -> &'static str {
        "uniform_sphere"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        loop {
            let z = normals(rng, self.dim);
            let n = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                return z.into_iter().map(|x| self.radius * x / n).collect();
            }
        }
    }
}

impl DemoDistribution for Mixture {
    fn name(&self) -> &'static str {
        "mixture"
    }

    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = self.components.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if u < *w {
                pick = i;
                break;
            }
            u -= w;
        }
        self.components[pick].sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub std: f64,
}

/// Flat, config-friendly description of a demonstration law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: String,
    pub dim: usize,
    /// Gaussian mean; zeros when absent.
    pub mean: Option<Vec<f64>>,
    pub std: f64,
    pub radius: f64,
    pub components: Vec<ComponentSpec>,
}

impl Default for DistributionSpec {
    fn default() -> Self {
        Self {
            kind: "gaussian".into(),
            dim: 8,
            mean: None,
            std: 1.0,
            radius: 1.0,
            components: Vec::new(),
        }
    }
}

type Builder = dyn Fn(&DistributionSpec) -> Result<Box<dyn DemoDistribution>> + Send + Sync;

fn build_gaussian(s: &DistributionSpec) -> Result<Box<dyn DemoDistribution>> {
    let mean = s.mean.clone().unwrap_or_else(|| vec![0.0; s.dim]);
    if mean.len() != s.dim {
        return Err(Error::shape("gaussian mean", &[s.dim], &[mean.len()]));
    }
    if !(s.std >= 0.0) {
        return Err(Error::Config(format!(
            "gaussian std must be ≥ 0, got {}",
            s.std
        )));
    }
    Ok(Box::new(Gaussian { mean, std: s.std }))
}

fn build_sphere(s: &DistributionSpec) -> Result<Box<dyn DemoDistribution>> {
    if !(s.radius >= 0.0) {
        return Err(Error::Config(format!(
            "sphere radius must be ≥ 0, got {}",
            s.radius
        )));
    }
    Ok(Box::new(UniformSphere {
        dim: s.dim,
        radius: s.radius,
    }))
}

fn build_mixture(s: &DistributionSpec) -> Result<Box<dyn DemoDistribution>> {
    if s.components.is_empty() {
        return Err(Error::Config("mixture needs at least one component".into()));
    }
    let mut weights = Vec::new();
    let mut components = Vec::new();
    for c in &s.components {
        if c.mean.len() != s.dim {
            return Err(Error::shape(
                "mixture component mean",
                &[s.dim],
                &[c.mean.len()],
            ));
        }
        if !(c.weight > 0.0) || !(c.std >= 0.0) {
            return Err(Error::Config(
                "mixture weights must be > 0 and stds ≥ 0".into(),
            ));
        }
        weights.push(c.weight);
        components.push(Gaussian {
            mean: c.mean.clone(),
            std: c.std,
        });
    }
    Ok(Box::new(Mixture {
        weights,
        components,
    }))
}

pub fn distributions() -> &'static Registry<Builder> {
    static REG: OnceLock<Registry<Builder>> = OnceLock::new();
    REG.get_or_init(|| {
        Registry::<Builder>::new("demo distribution")
            .with("gaussian", Box::new(build_gaussian))
            .with("uniform_sphere", Box::new(build_sphere))
            .with("mixture", Box::new(build_mixture))
    })
}

impl DistributionSpec {
    pub fn standard_gaussian(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn build(&self) -> Result<Box<dyn DemoDistribution>> {
        if self.dim == 0 {
            return Err(Error::Config("distribution dim must be positive".into()));
        }
        distributions().get(&self.kind)?(self)
    }
}
