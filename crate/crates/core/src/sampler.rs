//! Sampling engines.
//!
//! The x-space samplers integrate the probability-flow ODE (or its stochastic
//! DDIM relative) directly on points. [`DdrepSampler`] runs the same dynamics
//! on representation parameters: at every schedule entry it forms the noisy
//! render `x = f(theta, pi) + sigma eps(pi)` from a persistent lattice noise
//! field, takes one DDIM move in image space, refreshes the noise field, and
//! pulls the remaining image increment back to `theta` with
//! [`solve_delta_theta`].
//!
//! Convention: variance exploding, unit signal scale, so `x(sigma) = x0 + sigma eps`
//! and the probability-flow ODE reads `dx/dsigma = eps_hat(x, sigma)`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffrep::{init_params, sample_views, DiffRep, InitConfig, NoiseField, View};
use crate::error::{check_dim, Error, Result};
use crate::pullback::{solve_delta_theta, PullbackStepProblem, SolverConfig};
use crate::schedule::{sigma_langevin, Direction, NoiseSchedule, RePaintSchedule};
use crate::score::{ConditioningLabel, ScoreModel};

/// Generator for trajectory `stream` of a run seeded with `seed`.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_finite(x: &[f64], step: usize, sigma: f64) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            sigma,
            reason: "non-finite state".into(),
        })
    }
}

/// Euler integration of the probability-flow ODE from `sigma_max` down to 0.
/// One noise-predictor call per step.
pub fn pf_ode_sample_x(
    score: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    label: &ConditioningLabel,
    cfg_scale: f64,
) -> Result<Vec<f64>> {
    check_dim("initial point", score.dim(), x_init.len())?;
    let mut x = x_init.to_vec();
    for i in (1..=schedule.n_steps()).rev() {
        let sigma = schedule.sigma(i);
        let eps = score.eps_hat(&x, sigma, label, cfg_scale)?;
        let ds = schedule.reverse_increment(i);
        for (xv, e) in x.iter_mut().zip(&eps) {
            *xv += ds * e;
        }
        check_finite(&x, i, sigma)?;
    }
    Ok(x)
}

/// Stochastic DDIM in x-space. Returns the states at indices `N, N-1, .., 0`.
/// With `eta = 0` this coincides with [`pf_ode_sample_x`].
pub fn ddim_sample_x(
    score: &dyn ScoreModel,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    label: &ConditioningLabel,
    cfg_scale: f64,
    eta: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<Vec<f64>>> {
    check_dim("initial point", score.dim(), x_init.len())?;
    let mut path = Vec::with_capacity(schedule.n_steps() + 1);
    let mut x = x_init.to_vec();
    path.push(x.clone());
    for i in (1..=schedule.n_steps()).rev() {
        let (s_t, s_prev) = (schedule.sigma(i), schedule.sigma(i - 1));
        let sl = sigma_langevin(eta, s_t, s_prev)?;
        let eps = score.eps_hat(&x, s_t, label, cfg_scale)?;
        let draw: Vec<f64> = standard_normal_vec(x.len(), rng).into_iter().map(|z| sl * z).collect();
        x = ddim_reverse_step(&x, &eps, s_t, s_prev, sl, &draw)?;
        check_finite(&x, i, s_t)?;
        path.push(x.clone());
    }
    Ok(path)
}

/// One stochastic DDIM reverse move from `sigma_t` to `sigma_prev`:
///
/// `x - sigma_t eps_hat + sqrt(1 - sigma_l^2) sigma_prev eps_hat + sigma_prev noise`
///
/// where `noise ~ N(0, sigma_l^2)` is the already-scaled Langevin draw.
pub fn ddim_reverse_step(
    x_t: &[f64],
    eps_hat: &[f64],
    sigma_t: f64,
    sigma_prev: f64,
    sigma_l: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if !(sigma_prev >= 0.0 && sigma_prev < sigma_t) {
        return Err(Error::ScheduleOrder {
            lower: sigma_prev,
            upper: sigma_t,
        });
    }
    if !(0.0..=1.0).contains(&sigma_l) {
        return Err(Error::Parameter(format!("sigma_langevin must lie in [0, 1], got {sigma_l}")));
    }
    check_dim("noise estimate", x_t.len(), eps_hat.len())?;
    check_dim("Langevin draw", x_t.len(), noise.len())?;
    let keep = (1.0 - sigma_l * sigma_l).sqrt() * sigma_prev;
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .zip(noise)
        .map(|((x, e), z)| x - sigma_t * e + keep * e + sigma_prev * z)
        .collect())
}

/// Non-Markovian forward (renoising) move from `sigma_prev` up to `sigma_t`:
///
/// `s_t x0 + (sigma_t / sigma_prev) (sqrt(sigma_prev^2 - tau^2) eps0 + tau noise)`
///
/// with `noise ~ N(0, 1)` and `0 <= tau <= sigma_prev`. If `x0 + sigma_prev eps0`
/// has the perturbation marginal at `sigma_prev`, the output has it at `sigma_t`.
#[allow(clippy::too_many_arguments)]
pub fn ddim_forward_step(
    x0: &[f64],
    eps0: &[f64],
    sigma_t: f64,
    sigma_prev: f64,
    tau: f64,
    s_t: f64,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if !(sigma_prev >= 0.0 && sigma_prev < sigma_t) {
        return Err(Error::ScheduleOrder {
            lower: sigma_prev,
            upper: sigma_t,
        });
    }
    if !(tau >= 0.0 && tau <= sigma_prev) {
        return Err(Error::Parameter(format!(
            "need 0 <= tau <= sigma_prev = {sigma_prev}, got tau = {tau}"
        )));
    }
    check_dim("forward noise", x0.len(), eps0.len())?;
    check_dim("forward draw", x0.len(), noise.len())?;
    // fraction of fresh noise; sigma_prev = 0 forces tau = 0
    let fresh = if sigma_prev > 0.0 { tau / sigma_prev } else { 0.0 };
    let kept = (1.0 - fresh * fresh).max(0.0).sqrt();
    Ok(x0
        .iter()
        .zip(eps0)
        .zip(noise)
        .map(|((x, e), z)| s_t * x + sigma_t * (kept * e + fresh * z))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Langevin noise fraction in `[0, 1]`.
    pub eta: f64,
    pub cfg_scale: f64,
    pub conditioning: ConditioningLabel,
    /// Views rendered per schedule entry.
    pub views_per_step: usize,
    pub solver: SolverConfig,
    pub init: InitConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            eta: 0.75,
            cfg_scale: 1.0,
            conditioning: ConditioningLabel::unconditional(),
            views_per_step: 8,
            solver: SolverConfig::default(),
            init: InitConfig::default(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Parameter(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !self.cfg_scale.is_finite() {
            return Err(Error::Parameter("cfg_scale must be finite".into()));
        }
        if self.views_per_step == 0 {
            return Err(Error::Parameter("views_per_step must be >= 1".into()));
        }
        Ok(())
    }
}

/// Separated-noise state of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryState {
    /// Current schedule index.
    pub index: usize,
    pub theta: Vec<f64>,
    pub noise: NoiseField,
    /// Noise-predictor calls so far.
    pub nfe: usize,
}

/// One line of the per-trajectory trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub seed: u64,
    pub trajectory: u64,
    /// Ordinal of the schedule entry.
    pub step: usize,
    /// Noise level reached by the entry.
    pub sigma: f64,
    /// `reverse`, `forward`, or `ascent` for gradient-ascent baselines.
    pub direction: String,
    /// Root-mean per-view residual of the parameter solve (gradient norm for baselines).
    pub residual: f64,
    /// Cumulative noise-predictor calls.
    pub nfe: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdrepOutput {
    pub state: TrajectoryState,
    pub records: Vec<StepRecord>,
}

/// Pulled-back DDIM sampler with separated noise and RePaint jumps.
pub struct DdrepSampler<'a> {
    pub rep: &'a dyn DiffRep,
    pub score: &'a dyn ScoreModel,
    pub schedule: &'a NoiseSchedule,
    pub repaint: &'a RePaintSchedule,
    pub config: &'a SamplerConfig,
}

impl<'a> DdrepSampler<'a> {
    pub fn new(
        rep: &'a dyn DiffRep,
        score: &'a dyn ScoreModel,
        schedule: &'a NoiseSchedule,
        repaint: &'a RePaintSchedule,
        config: &'a SamplerConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_dim("score model dimension", rep.output_dim(), score.dim())?;
        check_dim("RePaint top index", schedule.n_steps(), repaint.reverse_steps)?;
        Ok(Self {
            rep,
            score,
            schedule,
            repaint,
            config,
        })
    }

    /// Zero-render parameters and a fresh standard-normal noise field.
    pub fn initial_state(&self, rng: &mut dyn RngCore) -> Result<TrajectoryState> {
        let report = init_params(self.rep, &self.rep.view_distribution(), &self.config.init, rng)?;
        let noise = NoiseField::standard(self.rep.lattice_size(), rng);
        Ok(TrajectoryState {
            index: self.schedule.n_steps(),
            theta: report.theta,
            noise,
            nfe: 0,
        })
    }

    /// `seed` and `trajectory` only label the emitted records; all randomness comes from `rng`.
    pub fn sample(&self, seed: u64, trajectory: u64, rng: &mut dyn RngCore) -> Result<DdrepOutput> {
        let state = self.initial_state(rng)?;
        self.run_from(state, seed, trajectory, rng)
    }

    /// Runs every schedule entry starting from `state` (which must sit at the top index).
    pub fn run_from(
        &self,
        mut state: TrajectoryState,
        seed: u64,
        trajectory: u64,
        rng: &mut dyn RngCore,
    ) -> Result<DdrepOutput> {
        check_dim("trajectory start index", self.schedule.n_steps(), state.index)?;
        check_dim("trajectory parameters", self.rep.param_dim(), state.theta.len())?;
        check_dim("trajectory noise field", self.rep.lattice_size(), state.noise.len())?;
        let mut records = Vec::with_capacity(self.repaint.len());
        for (k, step) in self.repaint.steps.iter().enumerate() {
            debug_assert_eq!(step.index, state.index);
            let residual = self.step(&mut state, step.direction, rng)?;
            records.push(StepRecord {
                seed,
                trajectory,
                step: k,
                sigma: self.schedule.sigma(state.index),
                direction: step.direction.as_str().to_string(),
                residual,
                nfe: state.nfe,
            });
        }
        Ok(DdrepOutput { state, records })
    }

    fn labels(&self, views: &[View]) -> Vec<ConditioningLabel> {
        views
            .iter()
            .map(|v| match v.tag() {
                Some(tag) => self.config.conditioning.clone().with_view(tag),
                None => self.config.conditioning.clone(),
            })
            .collect()
    }

    /// One schedule entry; returns the solve residual.
    pub fn step(&self, state: &mut TrajectoryState, direction: Direction, rng: &mut dyn RngCore) -> Result<f64> {
        let i = state.index;
        let (next, sigma_t, sigma_next, sigma_l) = match direction {
            Direction::Reverse => {
                let (hi, lo) = (self.schedule.sigma(i), self.schedule.sigma(i - 1));
                (i - 1, hi, lo, sigma_langevin(self.config.eta, hi, lo)?)
            }
            Direction::Forward => {
                let (lo, hi) = (self.schedule.sigma(i), self.schedule.sigma(i + 1));
                (i + 1, hi, hi, sigma_langevin(self.config.eta, hi, lo)?)
            }
        };
        let keep = (1.0 - sigma_l * sigma_l).sqrt();
        let views = sample_views(&self.rep.view_distribution(), self.config.views_per_step, rng);
        let lattice = self.rep.lattice_size();
        let langevin: Vec<f64> = standard_normal_vec(lattice, rng)
            .into_iter()
            .map(|z| sigma_l * z)
            .collect();

        let mut renders = Vec::with_capacity(views.len());
        let mut sites = Vec::with_capacity(views.len());
        let mut x_next = Vec::with_capacity(views.len());
        for v in &views {
            renders.push(self.rep.render(&state.theta, v)?);
            sites.push(self.rep.sites(v)?);
        }
        match direction {
            Direction::Reverse => {
                let xs: Vec<Vec<f64>> = renders
                    .iter()
                    .zip(&sites)
                    .map(|(f, s)| {
                        let e = state.noise.extract(s)?;
                        Ok(f.iter().zip(&e).map(|(a, b)| a + sigma_t * b).collect())
                    })
                    .collect::<Result<_>>()?;
                let eps_hat = self.score.eps_hat_batch(&xs, sigma_t, &self.labels(&views), self.config.cfg_scale)?;
                state.nfe += 1;
                for ((x, e), s) in xs.iter().zip(&eps_hat).zip(&sites) {
                    check_dim("noise estimate", x.len(), e.len())?;
                    let z: Vec<f64> = s.iter().map(|&k| langevin[k]).collect();
                    x_next.push(ddim_reverse_step(x, e, sigma_t, sigma_next, sigma_l, &z)?);
                }
            }
            Direction::Forward => {
                for (f, s) in renders.iter().zip(&sites) {
                    let e = state.noise.extract(s)?;
                    x_next.push(
                        f.iter()
                            .zip(&e)
                            .zip(s)
                            .map(|((a, b), &k)| a + sigma_t * (keep * b + langevin[k]))
                            .collect(),
                    );
                }
            }
        }

        // noise update precedes the parameter update; each touched site mixes once
        let mut touched = vec![false; lattice];
        for s in &sites {
            for &k in s {
                touched[k] = true;
            }
        }
        state.noise.mix(&touched, keep, &langevin)?;

        let mut targets = Vec::with_capacity(views.len());
        for ((f, xn), s) in renders.iter().zip(&x_next).zip(&sites) {
            let e = state.noise.extract(s)?;
            targets.push(
                f.iter()
                    .zip(xn)
                    .zip(&e)
                    .map(|((a, b), c)| a - (b - sigma_next * c))
                    .collect(),
            );
        }
        let problem = PullbackStepProblem {
            theta: state.theta.clone(),
            views,
            targets,
        };
        let report = solve_delta_theta(&problem, self.rep, &self.config.solver).map_err(|e| match e {
            Error::SolverDivergence { iterations } => Error::Divergence {
                step: i,
                sigma: sigma_t,
                reason: format!("parameter solve diverged after {iterations} iterations"),
            },
            other => other,
        })?;
        for (t, d) in state.theta.iter_mut().zip(&report.delta) {
            *t -= d;
        }
        check_finite(&state.theta, i, sigma_t)?;
        state.index = next;
        Ok(report.residual())
    }
}
