//! Mode-seeking gradient-ascent baselines (SDS and SJC).
//!
//! Both push `theta` along the covector pullback `J^T` of an image-space
//! direction evaluated at a freshly noised render. They converge to critical
//! points of a smoothed density rather than sampling from it.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::diffrep::{norm, DiffRep, View};
use crate::error::{check_dim, Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::sampler::{standard_normal_vec, StepRecord};
use crate::schedule::NoiseSchedule;
use crate::score::{ConditioningLabel, ScoreModel};

/// Per-noise-level weight `w(sigma)` of the SDS estimator.
///
/// Because `eps_hat = -sigma * score`, the SDS term `w J^T eps_hat` equals
/// `-J^T score` (the SJC term) when `w = 1 / sigma`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Sigma,
    InverseSigma,
    Unit,
}

impl Weighting {
    pub fn weight(self, sigma: f64) -> f64 {
        match self {
            Weighting::Sigma => sigma,
            Weighting::InverseSigma => 1.0 / sigma,
            Weighting::Unit => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `w J^T (eps_hat - eps)`, descended.
    Sds,
    /// `J^T score`, ascended.
    Sjc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SigmaSampling {
    /// Uniform over the positive levels of the schedule.
    Uniform,
    /// Linear sweep through the schedule indices from the top level down to the lowest.
    Annealed,
    Fixed { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaConfig {
    pub estimator: Estimator,
    pub iterations: usize,
    pub weighting: Weighting,
    pub sigma_sampling: SigmaSampling,
    pub optimizer: AdamConfig,
    /// Learning rate decays geometrically to this fraction by the last iteration.
    pub final_lr_fraction: f64,
    pub views_per_iteration: usize,
    /// Average each noise draw with its negation.
    pub antithetic: bool,
    pub cfg_scale: f64,
    pub conditioning: ConditioningLabel,
    /// Noise draws per level in the gradient-norm probe.
    pub probe_draws: usize,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            estimator: Estimator::Sds,
            iterations: 2000,
            weighting: Weighting::Sigma,
            sigma_sampling: SigmaSampling::Uniform,
            optimizer: AdamConfig {
                learning_rate: 5e-2,
                ..AdamConfig::default()
            },
            final_lr_fraction: 1e-3,
            views_per_iteration: 1,
            antithetic: true,
            cfg_scale: 1.0,
            conditioning: ConditioningLabel::unconditional(),
            probe_draws: 16,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 || self.views_per_iteration == 0 || self.probe_draws == 0 {
            return Err(Error::Parameter(
                "iterations, views_per_iteration and probe_draws must be >= 1".into(),
            ));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::Parameter("final_lr_fraction must lie in (0, 1]".into()));
        }
        if let SigmaSampling::Fixed { sigma } = self.sigma_sampling {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(Error::Parameter(format!("fixed sigma must be positive, got {sigma}")));
            }
        }
        Ok(())
    }
}

fn noised(rep: &dyn DiffRep, theta: &[f64], view: &View, sigma: f64, eps: &[f64]) -> Result<Vec<f64>> {
    let f = rep.render(theta, view)?;
    check_dim("injected noise", f.len(), eps.len())?;
    Ok(f.iter().zip(eps).map(|(a, e)| a + sigma * e).collect())
}

fn label_for(label: &ConditioningLabel, view: &View) -> ConditioningLabel {
    match view.tag() {
        Some(tag) => label.clone().with_view(tag),
        None => label.clone(),
    }
}

/// SDS estimate for a given noise draw: `w(sigma) J^T (eps_hat(f + sigma eps) - eps)`.
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient_with_noise(
    rep: &dyn DiffRep,
    theta: &[f64],
    view: &View,
    score: &dyn ScoreModel,
    sigma: f64,
    label: &ConditioningLabel,
    cfg_scale: f64,
    weighting: Weighting,
    eps: &[f64],
) -> Result<Vec<f64>> {
    let x = noised(rep, theta, view, sigma, eps)?;
    let e = score.eps_hat(&x, sigma, &label_for(label, view), cfg_scale)?;
    let w = weighting.weight(sigma);
    let diff: Vec<f64> = e.iter().zip(eps).map(|(a, b)| w * (a - b)).collect();
    rep.vjp(theta, view, &diff)
}

/// Single Monte-Carlo SDS draw with fresh noise.
#[allow(clippy::too_many_arguments)]
pub fn sds_gradient(
    rep: &dyn DiffRep,
    theta: &[f64],
    view: &View,
    score: &dyn ScoreModel,
    sigma: f64,
    label: &ConditioningLabel,
    cfg_scale: f64,
    weighting: Weighting,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>> {
    let eps = standard_normal_vec(rep.output_dim(), rng);
    sds_gradient_with_noise(rep, theta, view, score, sigma, label, cfg_scale, weighting, &eps)
}

/// SJC estimate for a given noise draw: `J^T score(f + sigma eps)`.
pub fn sjc_gradient_with_noise(
    rep: &dyn DiffRep,
    theta: &[f64],
    view: &View,
    score: &dyn ScoreModel,
    sigma: f64,
    label: &ConditioningLabel,
    eps: &[f64],
) -> Result<Vec<f64>> {
    let x = noised(rep, theta, view, sigma, eps)?;
    let s = score.score(&x, sigma, &label_for(label, view))?;
    rep.vjp(theta, view, &s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaOutput {
    pub theta: Vec<f64>,
    pub records: Vec<StepRecord>,
    pub initial_grad_norm: f64,
    pub final_grad_norm: f64,
    pub nfe: usize,
}

pub struct GradientAscent<'a> {
    pub rep: &'a dyn DiffRep,
    pub score: &'a dyn ScoreModel,
    pub schedule: &'a NoiseSchedule,
    pub config: &'a GaConfig,
}

impl<'a> GradientAscent<'a> {
    pub fn new(
        rep: &'a dyn DiffRep,
        score: &'a dyn ScoreModel,
        schedule: &'a NoiseSchedule,
        config: &'a GaConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_dim("score model dimension", rep.output_dim(), score.dim())?;
        Ok(Self {
            rep,
            score,
            schedule,
            config,
        })
    }

    fn sigma_at(&self, k: usize, rng: &mut dyn RngCore) -> f64 {
        let n = self.schedule.n_steps();
        match self.config.sigma_sampling {
            SigmaSampling::Uniform => self.schedule.sigma(rng.random_range(1..=n)),
            SigmaSampling::Annealed => {
                let iters = self.config.iterations.max(2) - 1;
                let frac = k.min(iters) as f64 / iters as f64;
                let idx = (n as f64 - frac * (n - 1) as f64).round() as usize;
                self.schedule.sigma(idx.clamp(1, n))
            }
            SigmaSampling::Fixed { sigma } => sigma,
        }
    }

    /// Levels the gradient-norm probe averages over.
    fn probe_levels(&self) -> Vec<f64> {
        match self.config.sigma_sampling {
            SigmaSampling::Uniform => self.schedule.levels()[1..].to_vec(),
            SigmaSampling::Annealed => vec![self.schedule.sigma(1)],
            SigmaSampling::Fixed { sigma } => vec![sigma],
        }
    }

    /// Update direction (descent convention) from one noise draw at one view.
    fn direction(&self, theta: &[f64], view: &View, sigma: f64, eps: &[f64]) -> Result<Vec<f64>> {
        let c = self.config;
        let mut g = match c.estimator {
            Estimator::Sds => sds_gradient_with_noise(
                self.rep, theta, view, self.score, sigma, &c.conditioning, c.cfg_scale, c.weighting, eps,
            )?,
            Estimator::Sjc => {
                let mut g = sjc_gradient_with_noise(self.rep, theta, view, self.score, sigma, &c.conditioning, eps)?;
                g.iter_mut().for_each(|x| *x = -*x);
                g
            }
        };
        if c.antithetic {
            let neg: Vec<f64> = eps.iter().map(|e| -e).collect();
            let h = self.direction_plain(theta, view, sigma, &neg)?;
            for (a, b) in g.iter_mut().zip(h) {
                *a = 0.5 * (*a + b);
            }
        }
        Ok(g)
    }

    fn direction_plain(&self, theta: &[f64], view: &View, sigma: f64, eps: &[f64]) -> Result<Vec<f64>> {
        let c = self.config;
        match c.estimator {
            Estimator::Sds => sds_gradient_with_noise(
                self.rep, theta, view, self.score, sigma, &c.conditioning, c.cfg_scale, c.weighting, eps,
            ),
            Estimator::Sjc => Ok(sjc_gradient_with_noise(self.rep, theta, view, self.score, sigma, &c.conditioning, eps)?
                .into_iter()
                .map(|x| -x)
                .collect()),
        }
    }

    /// Norm of the mean update direction over a fixed set of probe draws
    /// (common random numbers across calls).
    pub fn grad_norm_estimate(&self, theta: &[f64], probe: &[(View, Vec<f64>)]) -> Result<f64> {
        let levels = self.probe_levels();
        let mut mean = vec![0.0; theta.len()];
        let count = (levels.len() * probe.len()) as f64;
        for &sigma in &levels {
            for (view, eps) in probe {
                for (m, g) in mean.iter_mut().zip(self.direction(theta, view, sigma, eps)?) {
                    *m += g / count;
                }
            }
        }
        Ok(norm(&mean))
    }

    fn probe_set(&self, rng: &mut dyn RngCore) -> Vec<(View, Vec<f64>)> {
        let dist = self.rep.view_distribution();
        (0..self.config.probe_draws)
            .map(|_| {
                let v = dist.sample(rng);
                (v, standard_normal_vec(self.rep.output_dim(), rng))
            })
            .collect()
    }

    /// Runs from `theta0` (usually random parameters: a zero render can be a
    /// symmetric stationary point).
    pub fn run(&self, theta0: Vec<f64>, seed: u64, trajectory: u64, rng: &mut dyn RngCore) -> Result<GaOutput> {
        check_dim("gradient-ascent parameters", self.rep.param_dim(), theta0.len())?;
        let c = self.config;
        let probe = self.probe_set(rng);
        let mut theta = theta0;
        let initial = self.grad_norm_estimate(&theta, &probe)?;
        let mut opt = Adam::with_config(theta.len(), c.optimizer);
        let dist = self.rep.view_distribution();
        let mut records = Vec::with_capacity(c.iterations);
        let mut nfe = 0;
        let decay = c.final_lr_fraction.powf(1.0 / (c.iterations.max(2) - 1) as f64);
        for k in 0..c.iterations {
            let sigma = self.sigma_at(k, rng);
            let mut g = vec![0.0; theta.len()];
            for _ in 0..c.views_per_iteration {
                let view = dist.sample(rng);
                let eps = standard_normal_vec(self.rep.output_dim(), rng);
                for (acc, x) in g.iter_mut().zip(self.direction(&theta, &view, sigma, &eps)?) {
                    *acc += x / c.views_per_iteration as f64;
                }
            }
            nfe += 1;
            opt.set_learning_rate(c.optimizer.learning_rate * decay.powi(k as i32));
            opt.step(&mut theta, &g);
            if theta.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    step: k,
                    sigma,
                    reason: "non-finite parameters during gradient ascent".into(),
                });
            }
            records.push(StepRecord {
                seed,
                trajectory,
                step: k,
                sigma,
                direction: "ascent".into(),
                residual: norm(&g),
                nfe,
            });
        }
        let final_grad_norm = self.grad_norm_estimate(&theta, &probe)?;
        Ok(GaOutput {
            theta,
            records,
            initial_grad_norm: initial,
            final_grad_norm,
            nfe,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffrep::LinearRep;
    use crate::sampler::trajectory_rng;
    use crate::score::{AnalyticScoreModel, GaussianMixture};

    struct EchoModel;

    impl ScoreModel for EchoModel {
        fn dim(&self) -> usize {
            2
        }
        fn eps_hat_batch(
            &self,
            xs: &[Vec<f64>],
            _sigma: f64,
            _labels: &[ConditioningLabel],
            _cfg: f64,
        ) -> Result<Vec<Vec<f64>>> {
            // with theta = 0 and identity render, x = sigma * eps
            Ok(xs.iter().map(|x| x.iter().map(|v| v / 0.5).collect()).collect())
        }
    }

    #[test]
    fn perfect_predictor_gives_zero() {
        let rep = LinearRep::identity(2);
        let eps = [0.3, -1.2];
        let g = sds_gradient_with_noise(
            &rep,
            &[0.0, 0.0],
            &View::Whole,
            &EchoModel,
            0.5,
            &ConditioningLabel::default(),
            1.0,
            Weighting::Sigma,
            &eps,
        )
        .unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn sds_with_inverse_sigma_matches_sjc_draw_for_draw() {
        let model = AnalyticScoreModel::new(
            GaussianMixture::new(
                vec![0.3, 0.7],
                vec![vec![1.0, -1.0, 0.0], vec![-2.0, 0.5, 1.0]],
                vec![vec![0.5, 1.0, 2.0], vec![1.0, 1.0, 0.3]],
            )
            .unwrap(),
        );
        let rep = LinearRep::from_rows(&[vec![1.0, 0.2], vec![0.0, -1.0], vec![0.5, 0.5]]).unwrap();
        let mut rng = trajectory_rng(3, 0);
        let label = ConditioningLabel::default();
        for _ in 0..20 {
            let theta = standard_normal_vec(2, &mut rng);
            let eps = standard_normal_vec(3, &mut rng);
            let sigma = 0.1 + rng.random::<f64>() * 3.0;
            let sds = sds_gradient_with_noise(
                &rep, &theta, &View::Whole, &model, sigma, &label, 1.0, Weighting::InverseSigma, &eps,
            )
            .unwrap();
            let sjc = sjc_gradient_with_noise(&rep, &theta, &View::Whole, &model, sigma, &label, &eps).unwrap();
            let jte = rep.vjp(&theta, &View::Whole, &eps).unwrap();
            for k in 0..2 {
                let lhs = -sds[k] - sjc[k];
                let rhs = jte[k] / sigma;
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn gaussian_mode_is_reached() {
        let mu = vec![1.5, -0.5];
        let model = AnalyticScoreModel::new(GaussianMixture::isotropic(mu.clone(), 1.0).unwrap());
        let rep = LinearRep::identity(2);
        let schedule = NoiseSchedule::power_law(50, 0.02, 2.0, 7.0).unwrap();
        let config = GaConfig::default();
        let ga = GradientAscent::new(&rep, &model, &schedule, &config).unwrap();
        let mut rng = trajectory_rng(9, 0);
        let out = ga.run(vec![-2.0, 2.0], 9, 0, &mut rng).unwrap();
        for (t, m) in out.theta.iter().zip(&mu) {
            assert!((t - m).abs() < 1e-2, "{:?}", out.theta);
        }
        assert_eq!(out.records.len(), config.iterations);
    }

    #[test]
    fn annealed_and_fixed_sigma_reach_critical_points() {
        let mu = vec![0.5, 2.0];
        let model = AnalyticScoreModel::new(GaussianMixture::isotropic(mu, 1.0).unwrap());
        let rep = LinearRep::identity(2);
        let schedule = NoiseSchedule::power_law(50, 0.02, 2.0, 7.0).unwrap();
        for sampling in [SigmaSampling::Annealed, SigmaSampling::Fixed { sigma: 0.5 }] {
            for estimator in [Estimator::Sds, Estimator::Sjc] {
                let config = GaConfig {
                    sigma_sampling: sampling,
                    estimator,
                    ..GaConfig::default()
                };
                let ga = GradientAscent::new(&rep, &model, &schedule, &config).unwrap();
                let mut rng = trajectory_rng(11, 0);
                let out = ga.run(vec![-1.0, -1.0], 11, 0, &mut rng).unwrap();
                assert!(
                    out.final_grad_norm < 1e-3 * out.initial_grad_norm,
                    "{sampling:?} {estimator:?}: {} vs {}",
                    out.final_grad_norm,
                    out.initial_grad_norm
                );
            }
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let c = GaConfig {
            iterations: 0,
            ..GaConfig::default()
        };
        assert!(c.validate().is_err());
        let c = GaConfig {
            sigma_sampling: SigmaSampling::Fixed { sigma: -1.0 },
            ..GaConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
