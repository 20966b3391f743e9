//! Score functions and noise predictors.
//!
//! A score model exposes both `grad log p_sigma(x)` and the noise estimate
//! `eps_hat(x, sigma)`, tied together by Tweedie's formula
//! `eps_hat = -sigma * score`.

mod gmm;
pub mod remote;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub use gmm::GaussianMixture;
pub use remote::{RemoteScoreModel, StubBackend, StubServer};

/// Name of the unconditional density in every [`AnalyticScoreModel`].
pub const UNCONDITIONAL: &str = "uncond";

/// Selects a (sub-)density of a score model, optionally tagged with a view.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConditioningLabel {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub view: Option<String>,
}

impl ConditioningLabel {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            view: None,
        }
    }

    pub fn unconditional() -> Self {
        Self::new(UNCONDITIONAL)
    }

    pub fn with_view(mut self, view: impl Into<String>) -> Self {
        self.view = Some(view.into());
        self
    }

    /// Text form sent over the wire: `name` or `name|view`.
    pub fn prompt(&self) -> String {
        match &self.view {
            Some(v) => format!("{}|{}", self.name, v),
            None => self.name.clone(),
        }
    }

    pub fn from_prompt(prompt: &str) -> Self {
        match prompt.split_once('|') {
            Some((n, v)) => Self::new(n).with_view(v),
            None => Self::new(prompt),
        }
    }
}

impl Default for ConditioningLabel {
    fn default() -> Self {
        Self::unconditional()
    }
}

pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Noise estimates for a batch evaluated at a shared noise level. One call
    /// is one network function evaluation regardless of batch size.
    fn eps_hat_batch(
        &self,
        xs: &[Vec<f64>],
        sigma: f64,
        labels: &[ConditioningLabel],
        cfg_scale: f64,
    ) -> Result<Vec<Vec<f64>>>;

    fn eps_hat(
        &self,
        x: &[f64],
        sigma: f64,
        label: &ConditioningLabel,
        cfg_scale: f64,
    ) -> Result<Vec<f64>> {
        let mut out =
            self.eps_hat_batch(&[x.to_vec()], sigma, std::slice::from_ref(label), cfg_scale)?;
        Ok(out.pop().expect("batch of one"))
    }

    /// Score of the labelled density, recovered from the noise estimate.
    fn score(&self, x: &[f64], sigma: f64, label: &ConditioningLabel) -> Result<Vec<f64>> {
        let eps = self.eps_hat(x, sigma, label, 1.0)?;
        score_from_eps(&eps, sigma)
    }
}

/// Tweedie: `eps_hat = -sigma * score`.
pub fn eps_from_score(score: &[f64], sigma: f64) -> Vec<f64> {
    score.iter().map(|s| -sigma * s).collect()
}

/// Inverse of [`eps_from_score`]; undefined at `sigma = 0`.
pub fn score_from_eps(eps: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "cannot recover a score from a noise estimate at sigma = {sigma}"
        )));
    }
    Ok(eps.iter().map(|e| -e / sigma).collect())
}

/// Classifier-free guidance: `eps_u + w (eps_c - eps_u)`.
pub fn cfg_combine(eps_uncond: &[f64], eps_cond: &[f64], cfg_scale: f64) -> Result<Vec<f64>> {
    check_dim("cfg operands", eps_uncond.len(), eps_cond.len())?;
    Ok(eps_uncond
        .iter()
        .zip(eps_cond)
        .map(|(u, c)| u + cfg_scale * (c - u))
        .collect())
}

/// Closed-form score model: an unconditional mixture plus named conditional
/// sub-densities. The view tag of a label is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScoreModel {
    uncond: GaussianMixture,
    conditionals: BTreeMap<String, GaussianMixture>,
}

impl AnalyticScoreModel {
    pub fn new(uncond: GaussianMixture) -> Self {
        Self {
            uncond,
            conditionals: BTreeMap::new(),
        }
    }

    pub fn with_condition(mut self, name: impl Into<String>, density: GaussianMixture) -> Result<Self> {
        let name = name.into();
        if name == UNCONDITIONAL || name.is_empty() {
            return Err(Error::Model(format!("reserved conditioning name `{name}`")));
        }
        check_dim("conditional density", self.uncond.dim(), density.dim())?;
        self.conditionals.insert(name, density);
        Ok(self)
    }

    /// Registers `name` as the sub-mixture over `components` of the unconditional density.
    pub fn with_component_condition(self, name: impl Into<String>, components: &[usize]) -> Result<Self> {
        let sub = self.uncond.subset(components)?;
        self.with_condition(name, sub)
    }

    pub fn unconditional(&self) -> &GaussianMixture {
        &self.uncond
    }

    pub fn density(&self, label: &ConditioningLabel) -> Result<&GaussianMixture> {
        if label.name == UNCONDITIONAL || label.name.is_empty() {
            return Ok(&self.uncond);
        }
        self.conditionals
            .get(&label.name)
            .ok_or_else(|| Error::Model(format!("unknown conditioning label `{}`", label.name)))
    }

    fn eps_one(&self, x: &[f64], sigma: f64, label: &ConditioningLabel, cfg_scale: f64) -> Result<Vec<f64>> {
        let eps_u = eps_from_score(&self.uncond.score(x, sigma)?, sigma);
        let density = self.density(label)?;
        if std::ptr::eq(density, &self.uncond) {
            return Ok(eps_u);
        }
        let eps_c = eps_from_score(&density.score(x, sigma)?, sigma);
        cfg_combine(&eps_u, &eps_c, cfg_scale)
    }
}

impl ScoreModel for AnalyticScoreModel {
    fn dim(&self) -> usize {
        self.uncond.dim()
    }

    fn eps_hat_batch(
        &self,
        xs: &[Vec<f64>],
        sigma: f64,
        labels: &[ConditioningLabel],
        cfg_scale: f64,
    ) -> Result<Vec<Vec<f64>>> {
        check_dim("labels per batch", xs.len(), labels.len())?;
        xs.iter()
            .zip(labels)
            .map(|(x, l)| self.eps_one(x, sigma, l, cfg_scale))
            .collect()
    }

    fn score(&self, x: &[f64], sigma: f64, label: &ConditioningLabel) -> Result<Vec<f64>> {
        self.density(label)?.score(x, sigma)
    }
}

/// Score model that always predicts zero noise (the score vanishes).
#[derive(Debug, Clone, Copy)]
pub struct ZeroScoreModel {
    pub dim: usize,
}

impl ScoreModel for ZeroScoreModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eps_hat_batch(
        &self,
        xs: &[Vec<f64>],
        _sigma: f64,
        _labels: &[ConditioningLabel],
        _cfg_scale: f64,
    ) -> Result<Vec<Vec<f64>>> {
        xs.iter()
            .map(|x| {
                check_dim("zero model point", self.dim, x.len())?;
                Ok(vec![0.0; x.len()])
            })
            .collect()
    }

    fn score(&self, x: &[f64], _sigma: f64, _label: &ConditioningLabel) -> Result<Vec<f64>> {
        check_dim("zero model point", self.dim, x.len())?;
        Ok(vec![0.0; x.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_mode() -> AnalyticScoreModel {
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![3.0, 0.0], vec![-3.0, 0.0]],
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
        )
        .unwrap();
        AnalyticScoreModel::new(g)
            .with_component_condition("left", &[1])
            .unwrap()
    }

    #[test]
    fn tweedie_on_standard_normal() {
        assert_eq!(eps_from_score(&[-1.0], 1.0), vec![1.0]);
        assert_eq!(eps_from_score(&[0.0, 0.0], 3.7), vec![-0.0, -0.0]);
    }

    #[test]
    fn tweedie_round_trip() {
        let eps = [0.3, -1.2, 4.0];
        let back = eps_from_score(&score_from_eps(&eps, 0.3).unwrap(), 0.3);
        for (a, b) in eps.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
        assert!(score_from_eps(&eps, 0.0).is_err());
    }

    #[test]
    fn cfg_endpoints() {
        let u = [0.5, -2.0];
        let c = [1.5, 4.0];
        assert_eq!(cfg_combine(&u, &c, 0.0).unwrap(), u.to_vec());
        assert_eq!(cfg_combine(&u, &c, 1.0).unwrap(), c.to_vec());
        assert_eq!(cfg_combine(&[0.0, 0.0], &[1.0, 0.0], 10.0).unwrap(), vec![10.0, 0.0]);
        assert!(cfg_combine(&u, &[1.0], 2.0).is_err());
    }

    #[test]
    fn cfg_is_affine_in_scale() {
        let u = [0.25, -1.5, 2.0];
        let c = [1.0, 0.5, -3.0];
        let e0 = cfg_combine(&u, &c, 2.0).unwrap();
        let e1 = cfg_combine(&u, &c, 3.0).unwrap();
        for i in 0..3 {
            assert_eq!(e1[i] - e0[i], c[i] - u[i]);
        }
    }

    #[test]
    fn analytic_tweedie_consistency() {
        let m = two_mode();
        let unc = ConditioningLabel::unconditional();
        for sigma in [0.01, 0.1, 1.0, 10.0] {
            let x = [0.7, -0.4];
            let s = m.score(&x, sigma, &unc).unwrap();
            let e = m.eps_hat(&x, sigma, &unc, 1.0).unwrap();
            assert_eq!(eps_from_score(&s, sigma), e);
            assert_eq!(m.eps_hat(&x, sigma, &unc, 7.5).unwrap(), e);
        }
    }

    #[test]
    fn conditional_label_selects_component() {
        let m = two_mode();
        let left = ConditioningLabel::new("left").with_view("w3");
        let x = [0.0, 0.0];
        let s = m.score(&x, 1.0, &left).unwrap();
        // N(-3 e1, I) convolved to variance 2: score = -(x - mu) / 2
        assert!((s[0] + 1.5).abs() < 1e-14 && s[1].abs() < 1e-14);
        let e = m.eps_hat(&x, 1.0, &left, 1.0).unwrap();
        assert!((e[0] - 1.5).abs() < 1e-14);
        assert!(m.score(&x, 1.0, &ConditioningLabel::new("nope")).is_err());
    }

    #[test]
    fn prompt_round_trip() {
        let l = ConditioningLabel::new("cond").with_view("origin=0.25");
        assert_eq!(ConditioningLabel::from_prompt(&l.prompt()), l);
        assert_eq!(ConditioningLabel::from_prompt("uncond"), ConditioningLabel::unconditional());
    }
}
