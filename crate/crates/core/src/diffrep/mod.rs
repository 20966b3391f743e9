//! Differentiable representations: render maps `f(theta, view)` with exact
//! Jacobian-vector and vector-Jacobian products.
//!
//! Every representation owns a global lattice of output sites. A view renders
//! a subset of those sites (possibly all of them), and [`DiffRep::sites`] maps
//! each rendered value back to its lattice index. The separated noise field is
//! stored on that lattice so overlapping views always read the same noise.

mod linear;
mod noise;
mod siren;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::optim::Adam;

pub use linear::{LinearRep, LowPassRep};
pub use noise::NoiseField;
pub use siren::{Geometry, SirenConfig, SirenRep};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum View {
    /// The single view of a single-image representation.
    Whole,
    /// Panorama window whose left edge sits at horizontal coordinate `origin` (mod 1).
    Window { origin: f64 },
}

impl View {
    /// Tag passed to the score model alongside the conditioning label.
    pub fn tag(&self) -> Option<String> {
        match self {
            View::Whole => None,
            View::Window { origin } => Some(format!("origin={:.6}", origin.rem_euclid(1.0))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ViewDistribution {
    Singleton,
    /// Window origins `r ~ U(0, 1)`; each window spans `1 / aspect_ratio` of the width.
    Panorama { aspect_ratio: usize },
}

impl ViewDistribution {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> View {
        match self {
            ViewDistribution::Singleton => View::Whole,
            ViewDistribution::Panorama { .. } => View::Window {
                origin: rng.random::<f64>(),
            },
        }
    }
}

/// `n` i.i.d. views.
pub fn sample_views<R: Rng + ?Sized>(dist: &ViewDistribution, n: usize, rng: &mut R) -> Vec<View> {
    (0..n).map(|_| dist.sample(rng)).collect()
}

pub trait DiffRep: Send + Sync {
    fn name(&self) -> &'static str;

    fn param_dim(&self) -> usize;

    /// Number of values a single view renders.
    fn output_dim(&self) -> usize;

    fn lattice_size(&self) -> usize;

    fn view_distribution(&self) -> ViewDistribution;

    /// Lattice index of every value `render` produces for `view`, in render order.
    fn sites(&self, view: &View) -> Result<Vec<usize>>;

    fn render(&self, theta: &[f64], view: &View) -> Result<Vec<f64>>;

    /// `J(theta, view) v`.
    fn jvp(&self, theta: &[f64], view: &View, v: &[f64]) -> Result<Vec<f64>>;

    /// `J(theta, view)^T w`.
    fn vjp(&self, theta: &[f64], view: &View, w: &[f64]) -> Result<Vec<f64>>;

    /// Renders every lattice site once (for export).
    fn render_lattice(&self, theta: &[f64]) -> Result<Vec<f64>>;

    /// Shape of the lattice as `(rows, cols, channels)` for CSV export.
    fn lattice_shape(&self) -> (usize, usize, usize);

    /// Parameters with an identically zero render, when known in closed form.
    fn zero_render_params(&self) -> Option<Vec<f64>> {
        None
    }

    /// Default random initialization.
    fn random_params(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Settings for the zero-render initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub views_per_iteration: usize,
    /// Success when the mean render norm drops below this fraction of its value
    /// at the random starting point.
    pub target_ratio: f64,
    pub probe_views: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            learning_rate: 1e-2,
            views_per_iteration: 4,
            target_ratio: 0.05,
            probe_views: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitReport {
    pub theta: Vec<f64>,
    pub initial_mean_norm: f64,
    pub final_mean_norm: f64,
    pub iterations: usize,
    pub reached_target: bool,
}

fn mean_render_norm(rep: &dyn DiffRep, theta: &[f64], views: &[View]) -> Result<f64> {
    let mut total = 0.0;
    for v in views {
        total += norm(&rep.render(theta, v)?);
    }
    Ok(total / views.len() as f64)
}

/// Initial parameters with (approximately) zero render across views.
///
/// Representations with a closed-form zero are returned directly. Otherwise a
/// random start is driven toward `argmin E ||f(theta, view)||^2` with Adam; if the
/// budget runs out before the target ratio is met the best iterate is returned
/// and a warning is logged.
pub fn init_params(
    rep: &dyn DiffRep,
    dist: &ViewDistribution,
    config: &InitConfig,
    rng: &mut dyn RngCore,
) -> Result<InitReport> {
    if let Some(theta) = rep.zero_render_params() {
        return Ok(InitReport {
            theta,
            initial_mean_norm: 0.0,
            final_mean_norm: 0.0,
            iterations: 0,
            reached_target: true,
        });
    }
    let probes = sample_views(dist, config.probe_views.max(1), rng);
    let mut theta = rep.random_params(rng);
    let initial = mean_render_norm(rep, &theta, &probes)?;
    let target = config.target_ratio * initial;
    let mut best = (initial, theta.clone());
    let mut adam = Adam::new(theta.len(), config.learning_rate, 0.9, 0.999);
    let mut iterations = 0;
    while iterations < config.max_iterations && best.0 >= target {
        let views = sample_views(dist, config.views_per_iteration.max(1), rng);
        let mut grad = vec![0.0; theta.len()];
        for v in &views {
            let out = rep.render(&theta, v)?;
            for (g, x) in grad.iter_mut().zip(rep.vjp(&theta, v, &out)?) {
                *g += x / views.len() as f64;
            }
        }
        adam.step(&mut theta, &grad);
        iterations += 1;
        if iterations % 10 == 0 || iterations == config.max_iterations {
            let n = mean_render_norm(rep, &theta, &probes)?;
            if n < best.0 {
                best = (n, theta.clone());
            }
        }
    }
    let reached = best.0 < target;
    if !reached {
        log::warn!(
            "zero-render init stopped after {iterations} iterations at mean norm {:.3e} (target {:.3e})",
            best.0,
            target
        );
    }
    Ok(InitReport {
        theta: best.1,
        initial_mean_norm: initial,
        final_mean_norm: best.0,
        iterations,
        reached_target: reached,
    })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
