use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Mixture of axis-aligned Gaussians. Convolving with `N(0, sigma^2 I)` keeps
/// the family closed: component k becomes `N(mu_k, diag(var_k) + sigma^2 I)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Model("mixture has no components".into()));
        }
        if means.len() != weights.len() || variances.len() != weights.len() {
            return Err(Error::Model(format!(
                "mixture has {} weights, {} means, {} variances",
                weights.len(),
                means.len(),
                variances.len()
            )));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::Model("mixture dimension must be positive".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            check_dim("mixture mean", dim, m.len())?;
            check_dim("mixture variance", dim, v.len())?;
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::Model("non-finite mixture mean".into()));
            }
            if v.iter().any(|x| !(*x > 0.0 && x.is_finite())) {
                return Err(Error::Model("mixture variances must be positive".into()));
            }
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::Model("mixture weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Model("mixture weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            weights,
            means,
            variances,
        })
    }

    /// Single isotropic Gaussian `N(mean, var I)`.
    pub fn isotropic(mean: Vec<f64>, var: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(vec![1.0], vec![mean], vec![vec![var; d]])
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    /// Sub-mixture over the given component indices, weights renormalized.
    pub fn subset(&self, components: &[usize]) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Model("empty component subset".into()));
        }
        let mut w = Vec::with_capacity(components.len());
        let mut m = Vec::with_capacity(components.len());
        let mut v = Vec::with_capacity(components.len());
        for &k in components {
            if k >= self.n_components() {
                return Err(Error::Model(format!(
                    "component {k} out of range ({} components)",
                    self.n_components()
                )));
            }
            w.push(self.weights[k]);
            m.push(self.means[k].clone());
            v.push(self.variances[k].clone());
        }
        Self::new(w, m, v)
    }

    /// Per-component log of `w_k N(x; mu_k, var_k + sigma^2)`.
    fn component_log_terms(&self, x: &[f64], sigma: f64) -> Vec<f64> {
        let s2 = sigma * sigma;
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.variances))
            .map(|(&w, (mu, var))| {
                let mut acc = 0.0;
                for ((xi, mi), vi) in x.iter().zip(mu).zip(var) {
                    let v = vi + s2;
                    let r = xi - mi;
                    acc += r * r / v + v.ln() + LN_2PI;
                }
                w.ln() - 0.5 * acc
            })
            .collect()
    }

    /// `log p_sigma(x)` for the mixture convolved with `N(0, sigma^2 I)`.
    pub fn log_density(&self, x: &[f64], sigma: f64) -> Result<f64> {
        check_dim("gmm point", self.dim(), x.len())?;
        Ok(log_sum_exp(&self.component_log_terms(x, sigma)))
    }

    /// Exact `grad_x log p_sigma(x)`.
    pub fn score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_dim("gmm point", self.dim(), x.len())?;
        if !(sigma >= 0.0) {
            return Err(Error::Parameter(format!("sigma must be >= 0, got {sigma}")));
        }
        let terms = self.component_log_terms(x, sigma);
        let lse = log_sum_exp(&terms);
        let s2 = sigma * sigma;
        let mut out = vec![0.0; x.len()];
        for (k, t) in terms.iter().enumerate() {
            let r = (t - lse).exp();
            if r == 0.0 {
                continue;
            }
            for (o, ((xi, mi), vi)) in out
                .iter_mut()
                .zip(x.iter().zip(&self.means[k]).zip(&self.variances[k]))
            {
                *o -= r * (xi - mi) / (vi + s2);
            }
        }
        Ok(out)
    }

    /// Posterior component responsibilities at `x` under noise level `sigma`.
    pub fn responsibilities(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>> {
        check_dim("gmm point", self.dim(), x.len())?;
        let terms = self.component_log_terms(x, sigma);
        let lse = log_sum_exp(&terms);
        Ok(terms.iter().map(|t| (t - lse).exp()).collect())
    }

    /// Draw from the clean (`sigma = 0`) mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.n_components() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }
}

pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
