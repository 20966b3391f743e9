//! Fixed-seed fixtures shared by the benchmarks under `benches/`.

use diffrep_core::diffrep::{DiffRep, Geometry, LinearRep, SirenConfig, SirenRep, View};
use diffrep_core::pullback::{explicit_jacobian, PullbackStepProblem};
use diffrep_core::sampler::{standard_normal_vec, trajectory_rng, SamplerConfig};
use diffrep_core::schedule::{NoiseSchedule, RePaintParams, RePaintSchedule};
use diffrep_core::score::{AnalyticScoreModel, GaussianMixture};
use nalgebra::DMatrix;

pub struct SirenFixture {
    pub rep: SirenRep,
    pub theta: Vec<f64>,
    pub tangent: Vec<f64>,
    pub cotangent: Vec<f64>,
}

/// A 16x16 image SIREN at a random parameter point.
pub fn siren_fixture() -> SirenFixture {
    let rep = SirenRep::new(
        SirenConfig {
            n_freq: 8,
            hidden: vec![32, 32],
            channels: 1,
            omega: 1.0,
        },
        Geometry::Grid { rows: 16, cols: 16 },
    )
    .expect("valid SIREN");
    let mut rng = trajectory_rng(0, 0);
    let theta = rep.random_params(&mut rng);
    let tangent = standard_normal_vec(rep.param_dim(), &mut rng);
    let cotangent = standard_normal_vec(rep.output_dim(), &mut rng);
    SirenFixture {
        rep,
        theta,
        tangent,
        cotangent,
    }
}

/// Explicit Jacobian of a small SIREN plus a matching image-space increment.
pub fn jacobian_fixture() -> (DMatrix<f64>, Vec<f64>) {
    let rep = SirenRep::new(
        SirenConfig {
            n_freq: 4,
            hidden: vec![8],
            channels: 1,
            omega: 1.0,
        },
        Geometry::Grid { rows: 8, cols: 8 },
    )
    .expect("valid SIREN");
    let mut rng = trajectory_rng(1, 0);
    let theta = rep.random_params(&mut rng);
    let j = explicit_jacobian(&rep, &theta, &View::Whole).expect("jacobian");
    let v = standard_normal_vec(rep.output_dim(), &mut rng);
    (j, v)
}

/// Single-view parameter solve for the SIREN fixture.
pub fn solve_fixture(fixture: &SirenFixture) -> PullbackStepProblem {
    let scale = 1e-2 / fixture.cotangent.iter().map(|x| x * x).sum::<f64>().sqrt();
    PullbackStepProblem {
        theta: fixture.theta.clone(),
        views: vec![View::Whole],
        targets: vec![fixture.cotangent.iter().map(|x| x * scale).collect()],
    }
}

pub struct StepFixture {
    pub rep: LinearRep,
    pub score: AnalyticScoreModel,
    pub schedule: NoiseSchedule,
    pub repaint: RePaintSchedule,
    pub config: SamplerConfig,
}

/// Random 64x32 linear representation under a 4-component mixture target.
pub fn step_fixture() -> StepFixture {
    let (m, p) = (64, 32);
    let mut rng = trajectory_rng(2, 0);
    let rep = LinearRep::new(DMatrix::from_column_slice(m, p, &standard_normal_vec(m * p, &mut rng)))
        .expect("valid matrix");
    let means: Vec<Vec<f64>> = (0..4).map(|_| standard_normal_vec(m, &mut rng)).collect();
    let gmm = GaussianMixture::new(vec![0.25; 4], means, vec![vec![0.1; m]; 4]).expect("valid mixture");
    StepFixture {
        rep,
        score: AnalyticScoreModel::new(gmm),
        schedule: NoiseSchedule::power_law(50, 0.002, 20.0, 7.0).expect("valid schedule"),
        repaint: RePaintSchedule::build(50, RePaintParams::disabled()).expect("valid RePaint schedule"),
        config: SamplerConfig {
            views_per_step: 1,
            ..SamplerConfig::default()
        },
    }
}
