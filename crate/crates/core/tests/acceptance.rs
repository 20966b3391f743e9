//! Acceptance suite. Runs every criterion in sequence (timed sections must not
//! share the CPU with other tests), prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion failed.

use std::error::Error as StdError;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use diffrep_core::baselines::{Estimator, GaConfig, GradientAscent, SigmaSampling, Weighting};
use diffrep_core::diffrep::{DiffRep, Geometry, LinearRep, LowPassRep, SirenConfig, SirenRep, View};
use diffrep_core::harness::{run_baseline, run_sample, RunConfig, RunOptions, TRACE_FILE};
use diffrep_core::metrics::{
    assign_mode, binomial_band, default_mode_radius, ks_test_normal, mean_pairwise_distance, mode_coverage,
    shell_stats, sign_test_p, within_group_pairwise_distance,
};
use diffrep_core::pullback::{exact_pullback, explicit_jacobian, solve_delta_theta, PullbackStepProblem, SolverConfig};
use diffrep_core::sampler::{
    ddim_forward_step, pf_ode_sample_x, standard_normal_vec, trajectory_rng, DdrepSampler, SamplerConfig,
};
use diffrep_core::schedule::{NoiseSchedule, RePaintParams, RePaintSchedule};
use diffrep_core::score::{AnalyticScoreModel, ConditioningLabel, GaussianMixture, ScoreModel, ZeroScoreModel};

type Outcome = Result<(bool, String), Box<dyn StdError>>;
type Check = (&'static str, fn() -> Outcome);

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, cols, &standard_normal_vec(rows * cols, rng))
}

fn uncond() -> ConditioningLabel {
    ConditioningLabel::unconditional()
}

/// Criterion 1: Euler PF-ODE on N(0, 1) reproduces the closed-form output variance.
fn gaussian_exactness() -> Outcome {
    let start = Instant::now();
    let (a2, sigma_max, n) = (1.0, 80.0, 2000);
    let score = AnalyticScoreModel::new(GaussianMixture::isotropic(vec![0.0], a2)?);
    let schedule = NoiseSchedule::power_law(256, 0.002, sigma_max, 7.0)?;
    let mut rng = trajectory_rng(1, 0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let x_init = [sigma_max * standard_normal_vec(1, &mut rng)[0]];
        out.push(pf_ode_sample_x(&score, &schedule, &x_init, &uncond(), 1.0)?[0]);
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    let oracle = sigma_max * sigma_max * a2 / (a2 + sigma_max * sigma_max);
    let ratio = var / oracle;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        (0.93..=1.07).contains(&ratio) && secs < 10.0,
        format!("variance {var:.5} vs oracle {oracle:.5} (ratio {ratio:.4}), {secs:.2}s"),
    ))
}

/// Criterion 2: Optimality, square exactness and reparameterization behaviour of the exact pullback.
fn pullback_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = trajectory_rng(2, 0);
    let (mut orth, mut square, mut equi, mut cov) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let m = rng.random_range(1..=64);
        let p = rng.random_range(1..=64);
        let j = gaussian_matrix(m, p, &mut rng);
        let v = standard_normal_vec(m, &mut rng);
        let delta = exact_pullback(&j, &v)?;
        let r = DVector::from_column_slice(&v) - &j * DVector::from_column_slice(&delta);
        let jt_r = j.transpose() * r;
        orth = orth.max(jt_r.norm() / (j.norm() * norm(&v)));

        let s = gaussian_matrix(p, p, &mut rng);
        let w = standard_normal_vec(p, &mut rng);
        let got = exact_pullback(&s, &w)?;
        let want = s.clone().lu().solve(&DVector::from_column_slice(&w)).ok_or("singular square draw")?;
        square = square.max(norm(&sub(&got, want.as_slice())) / want.norm());

        // Full column rank: m >= p. M is a well-conditioned invertible change of basis.
        let mt = rng.random_range(p..=64);
        let jt = gaussian_matrix(mt, p, &mut rng);
        let vt = standard_normal_vec(mt, &mut rng);
        let mm = gaussian_matrix(p, p, &mut rng) / (p as f64).sqrt() + DMatrix::identity(p, p) * 3.0;
        let lhs = exact_pullback(&(&jt * &mm), &vt)?;
        let base = exact_pullback(&jt, &vt)?;
        let rhs = mm.clone().lu().solve(&DVector::from_column_slice(&base)).ok_or("singular change of basis")?;
        equi = equi.max(norm(&sub(&lhs, rhs.as_slice())) / rhs.norm().max(f64::MIN_POSITIVE));

        let vtv = DVector::from_column_slice(&vt);
        let covector = (&jt * &mm).transpose() * &vtv;
        let transformed = mm.transpose() * (jt.transpose() * &vtv);
        cov = cov.max((covector - &transformed).norm() / transformed.norm().max(f64::MIN_POSITIVE));
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        orth < 1e-8 && square < 1e-10 && equi < 1e-8 && cov < 1e-10 && secs < 5.0,
        format!(
            "orthogonality {orth:.1e}, square {square:.1e}, equivariance {equi:.1e}, covector {cov:.1e}, {secs:.2}s"
        ),
    ))
}

/// Criterion 3: The iterative parameter solve reaches the explicit least-squares answer.
fn suboptimizer_convergence() -> Outcome {
    let mut rng = trajectory_rng(3, 0);
    let solver = SolverConfig::default();
    let mut lin_worst = 0.0f64;
    let mut max_iters = 0;
    for _ in 0..50 {
        let p = rng.random_range(2..=32);
        let m = rng.random_range(p..=64);
        let j = gaussian_matrix(m, p, &mut rng);
        let rep = LinearRep::new(j.clone())?;
        let theta = standard_normal_vec(p, &mut rng);
        let d = standard_normal_vec(m, &mut rng);
        let problem = PullbackStepProblem {
            theta,
            views: vec![View::Whole],
            targets: vec![d.clone()],
        };
        let report = solve_delta_theta(&problem, &rep, &solver)?;
        // Normal equations, solved independently of the pullback module.
        let jtj = j.transpose() * &j;
        let rhs = j.transpose() * DVector::from_column_slice(&d);
        let want = jtj.cholesky().ok_or("rank-deficient draw")?.solve(&rhs);
        lin_worst = lin_worst.max(norm(&sub(&report.delta, want.as_slice())) / want.norm());
        max_iters = max_iters.max(report.iterations);
    }

    // Small SIREN, linearized at random parameter points: the solver runs on the
    // tangent map and is compared with the minimum-norm explicit-Jacobian answer.
    let siren = SirenRep::new(
        SirenConfig {
            n_freq: 1,
            hidden: vec![3, 2],
            channels: 1,
            omega: 1.0,
        },
        Geometry::Grid { rows: 1, cols: 16 },
    )?;
    let mut siren_gaps = Vec::new();
    let mut nonlinear = Vec::new();
    let mut cond_max = 0.0f64;
    for _ in 0..20 {
        let theta = siren.random_params(&mut rng);
        let j = explicit_jacobian(&siren, &theta, &View::Whole)?;
        let sv = j.singular_values();
        cond_max = cond_max.max(sv.max() / sv.min());
        let d = standard_normal_vec(siren.output_dim(), &mut rng);
        let oracle = exact_pullback(&j, &d)?;
        let tangent = LinearRep::new(j.clone())?;
        let report = solve_delta_theta(
            &PullbackStepProblem {
                theta: vec![0.0; theta.len()],
                views: vec![View::Whole],
                targets: vec![d.clone()],
            },
            &tangent,
            &solver,
        )?;
        siren_gaps.push(norm(&sub(&report.delta, &oracle)) / norm(&oracle));

        // Diagnostic only: the same solve through the nonlinear render map,
        // with a small increment so the linearization is meaningful.
        let scale = 1e-3 / norm(&d);
        let small: Vec<f64> = d.iter().map(|x| x * scale).collect();
        let oracle_small = exact_pullback(&j, &small)?;
        let direct = solve_delta_theta(
            &PullbackStepProblem {
                theta: theta.clone(),
                views: vec![View::Whole],
                targets: vec![small],
            },
            &siren,
            &solver,
        )?;
        let gap = &j * DVector::from_column_slice(&sub(&direct.delta, &oracle_small));
        let reference = &j * DVector::from_column_slice(&oracle_small);
        nonlinear.push(gap.norm() / reference.norm());
    }
    nonlinear.sort_by(|a, b| a.total_cmp(b));
    siren_gaps.sort_by(|a, b| a.total_cmp(b));
    let siren_worst = siren_gaps[siren_gaps.len() - 1];
    Ok((
        lin_worst < 1e-4 && max_iters <= 200 && siren_worst < 1e-3,
        format!(
            "linear worst {lin_worst:.1e} in <= {max_iters} iterations; linearized SIREN worst {siren_worst:.1e}, \
             median {:.1e} (max condition {cond_max:.1e}); ungraded nonlinear solve at |d|=1e-3 median {:.1e}",
            siren_gaps[siren_gaps.len() / 2],
            nonlinear[nonlinear.len() / 2]
        ),
    ))
}

/// Criterion 4: With identity or invertible linear representations and no Langevin noise
/// the pulled-back sampler reduces to the PF-ODE.
fn ode_equivalence() -> Outcome {
    let gmm = GaussianMixture::new(
        vec![0.3, 0.7],
        vec![vec![-2.0, 1.0], vec![2.5, -0.5]],
        vec![vec![0.3, 0.3], vec![0.5, 0.2]],
    )?;
    let score = AnalyticScoreModel::new(gmm.clone());
    let schedule = NoiseSchedule::power_law(40, 0.002, 20.0, 7.0)?;
    let repaint = RePaintSchedule::build(40, RePaintParams::disabled())?;
    let config = SamplerConfig {
        eta: 0.0,
        views_per_step: 1,
        ..SamplerConfig::default()
    };
    let identity = LinearRep::identity(2);
    let sampler = DdrepSampler::new(&identity, &score, &schedule, &repaint, &config)?;
    let mut id_worst = 0.0f64;
    for seed in 0..50 {
        let mut rng = trajectory_rng(seed, 0);
        let state = sampler.initial_state(&mut rng)?;
        let x_init: Vec<f64> = state.noise.values().iter().map(|e| schedule.sigma_max() * e).collect();
        let out = sampler.run_from(state, seed, 0, &mut rng)?;
        let ode = pf_ode_sample_x(&score, &schedule, &x_init, &uncond(), 1.0)?;
        for (a, b) in out.state.theta.iter().zip(&ode) {
            id_worst = id_worst.max((a - b).abs());
        }
    }

    let a = DMatrix::from_row_slice(2, 2, &[1.5, 0.4, -0.3, 0.8]);
    let linear = LinearRep::new(a.clone())?;
    let sampler = DdrepSampler::new(&linear, &score, &schedule, &repaint, &config)?;
    let a_inv = a.try_inverse().ok_or("singular test matrix")?;
    let mut lin_worst = 0.0f64;
    for seed in 0..50 {
        let mut rng = trajectory_rng(seed, 1);
        let state = sampler.initial_state(&mut rng)?;
        let x_init: Vec<f64> = state.noise.values().iter().map(|e| schedule.sigma_max() * e).collect();
        let out = sampler.run_from(state, seed, 0, &mut rng)?;
        let x0 = pf_ode_sample_x(&score, &schedule, &x_init, &uncond(), 1.0)?;
        let want = &a_inv * DVector::from_column_slice(&x0);
        for (a, b) in out.state.theta.iter().zip(want.iter()) {
            lin_worst = lin_worst.max((a - b).abs());
        }
    }
    Ok((
        id_worst < 1e-3 && lin_worst < 1e-3,
        format!("identity max gap {id_worst:.1e}, invertible linear max gap {lin_worst:.1e}"),
    ))
}

/// Criterion 5: The tracked noise field stays standard normal through repeated updates.
/// The 1e4 sites come from 100 independent trajectories of 100 sites each.
fn noise_bookkeeping() -> Outcome {
    let (sites, trajectories) = (100, 100);
    let rep = LinearRep::identity(sites);
    let score = ZeroScoreModel { dim: sites };
    let schedule = NoiseSchedule::power_law(50, 0.002, 80.0, 7.0)?;
    let repaint = RePaintSchedule::build(50, RePaintParams::disabled())?;
    let config = SamplerConfig {
        eta: 0.75,
        views_per_step: 1,
        ..SamplerConfig::default()
    };
    let sampler = DdrepSampler::new(&rep, &score, &schedule, &repaint, &config)?;
    let mut values = Vec::with_capacity(sites * trajectories);
    let mut updates = usize::MAX;
    for t in 0..trajectories as u64 {
        let mut rng = trajectory_rng(5, t);
        let out = sampler.sample(5, t, &mut rng)?;
        updates = updates.min(out.records.len());
        values.extend_from_slice(out.state.noise.values());
    }
    let ks = ks_test_normal(&values, 0.0, 1.0)?;
    Ok((
        ks.p_value > 0.01 && updates == 50,
        format!(
            "{updates} updates, {} sites, KS statistic {:.4}, p = {:.3}",
            values.len(),
            ks.statistic,
            ks.p_value
        ),
    ))
}

/// Criterion 6: Forward (renoising) steps preserve the perturbation-kernel variance.
fn forward_step_marginal() -> Outcome {
    let (sigma_prev, sigma_t, draws) = (0.8, 1.3, 10_000);
    let mut rng = trajectory_rng(6, 0);
    let x0 = standard_normal_vec(draws, &mut rng);
    let mut details = Vec::new();
    let mut pass = true;
    for tau in [0.0, sigma_prev / 2.0, sigma_prev] {
        let eps0 = standard_normal_vec(draws, &mut rng);
        let fresh = standard_normal_vec(draws, &mut rng);
        let xt = ddim_forward_step(&x0, &eps0, sigma_t, sigma_prev, tau, 1.0, &fresh)?;
        let r = sub(&xt, &x0);
        let mean = r.iter().sum::<f64>() / draws as f64;
        let var = r.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (draws - 1) as f64;
        let rel = var / (sigma_t * sigma_t) - 1.0;
        pass &= rel.abs() < 0.05;
        details.push(format!("tau={tau:.2}: {:+.2}%", 100.0 * rel));
    }
    Ok((pass, details.join(", ")))
}

/// Criterion 7: Sampling covers both modes of a symmetric mixture; gradient ascent collapses.
fn mode_coverage_vs_ascent() -> Outcome {
    let start = Instant::now();
    let means = vec![vec![-3.0, 0.0], vec![3.0, 0.0]];
    let gmm = GaussianMixture::new(vec![0.5, 0.5], means.clone(), vec![vec![0.25, 0.25]; 2])?;
    let score = AnalyticScoreModel::new(gmm);
    let rep = LinearRep::identity(2);

    let schedule = NoiseSchedule::power_law(40, 0.002, 20.0, 7.0)?;
    let repaint = RePaintSchedule::build(40, RePaintParams::disabled())?;
    let config = SamplerConfig {
        views_per_step: 1,
        ..SamplerConfig::default()
    };
    let sampler = DdrepSampler::new(&rep, &score, &schedule, &repaint, &config)?;
    let mut samples = Vec::with_capacity(200);
    for t in 0..200 {
        let mut rng = trajectory_rng(7, t);
        samples.push(sampler.sample(7, t, &mut rng)?.state.theta);
    }
    let hits = mode_coverage(&samples, &means, default_mode_radius(&means)?)?;
    let nearest: Vec<usize> = samples
        .iter()
        .map(|x| assign_mode(x, &means, f64::INFINITY).unwrap_or(0))
        .collect();
    let right = nearest.iter().filter(|&&g| g == 1).count() as u64;
    let minority = right.min(200 - right);
    let (lo, hi) = binomial_band(200, 0.5, 0.99)?;
    let coverage_ok = hits.counts.iter().all(|&c| c > 0) && (lo..=hi).contains(&minority);

    let ga_schedule = NoiseSchedule::power_law(40, 0.002, 2.0, 7.0)?;
    let ga_config = GaConfig {
        estimator: Estimator::Sds,
        weighting: Weighting::Sigma,
        sigma_sampling: SigmaSampling::Uniform,
        ..GaConfig::default()
    };
    let ga = GradientAscent::new(&rep, &score, &ga_schedule, &ga_config)?;
    let mut finals = Vec::with_capacity(50);
    let mut basins = Vec::with_capacity(50);
    for t in 0..50 {
        let mut rng = trajectory_rng(70, t);
        let theta0 = rep.random_params(&mut rng);
        let out = ga.run(theta0, 70, t, &mut rng)?;
        basins.push(assign_mode(&out.theta, &means, 1.5));
        finals.push(out.theta);
    }
    let in_one_basin = basins.iter().filter(|b| b.is_some()).count();
    let ga_groups: Vec<usize> = basins.iter().map(|b| b.unwrap_or(usize::MAX)).collect();
    let dd_within = within_group_pairwise_distance(&samples, &nearest)?;
    let ga_within = within_group_pairwise_distance(&finals, &ga_groups)?;
    let ratio = dd_within / ga_within.max(f64::MIN_POSITIVE);
    let overall = mean_pairwise_distance(&samples)? / mean_pairwise_distance(&finals)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        coverage_ok && in_one_basin == 50 && ratio > 5.0 && secs < 300.0,
        format!(
            "mode counts {:?}, minority {minority} in [{lo}, {hi}]; ascent runs in one basin {in_one_basin}/50; \
             within-basin diversity ratio {ratio:.1} (overall {overall:.2}), {secs:.1}s",
            hits.counts
        ),
    ))
}

/// Out-of-range component of the one-step denoising correction at `sigma`.
fn off_range_residual(rep: &LowPassRep, score: &dyn ScoreModel, f: &[f64], sigma: f64) -> Result<f64, Box<dyn StdError>> {
    let eps = score.eps_hat(f, sigma, &uncond(), 1.0)?;
    let correction: Vec<f64> = eps.iter().map(|e| -sigma * e).collect();
    Ok(norm(&rep.out_of_range(&correction)?))
}

/// Criterion 8: RePaint jumps leave a smaller constrained-direction residual at equal NFE.
fn repaint_harmonization() -> Outcome {
    let grid = 16;
    let rep = LowPassRep::with_fraction(grid, 0.25)?;
    let mut target_rng = trajectory_rng(99, 0);
    let means: Vec<Vec<f64>> = (0..8).map(|_| standard_normal_vec(grid, &mut target_rng)).collect();
    let var = 0.05;
    let gmm = GaussianMixture::new(vec![1.0 / 8.0; 8], means, vec![vec![var; grid]; 8])?;
    let score = AnalyticScoreModel::new(gmm);
    let config = SamplerConfig {
        eta: 0.75,
        views_per_step: 1,
        ..SamplerConfig::default()
    };
    let jumped_schedule = NoiseSchedule::power_law(50, 0.002, 20.0, 7.0)?;
    let jumped = RePaintSchedule::build(
        50,
        RePaintParams {
            jump_interval: 1,
            jump_len: 1,
            jump_repeat: 1,
        },
    )?;
    let nfe = jumped.reverse_count();
    let plain_schedule = NoiseSchedule::power_law(nfe, 0.002, 20.0, 7.0)?;
    let plain = RePaintSchedule::build(nfe, RePaintParams::disabled())?;
    let arms = [
        DdrepSampler::new(&rep, &score, &jumped_schedule, &jumped, &config)?,
        DdrepSampler::new(&rep, &score, &plain_schedule, &plain, &config)?,
    ];
    let probe = var.sqrt();
    let mut wins = 0;
    let mut sums = [0.0; 2];
    let mut nfes = [0; 2];
    for seed in 0..20 {
        let mut res = [0.0; 2];
        for (k, arm) in arms.iter().enumerate() {
            let mut rng = trajectory_rng(seed, 0);
            let out = arm.sample(seed, 0, &mut rng)?;
            let f = rep.render(&out.state.theta, &View::Whole)?;
            res[k] = off_range_residual(&rep, &score, &f, probe)?;
            sums[k] += res[k];
            nfes[k] = out.state.nfe;
        }
        if res[0] < res[1] {
            wins += 1;
        }
    }
    let p = sign_test_p(wins, 20)?;
    Ok((
        p < 0.05 && nfes[0] == nfes[1],
        format!(
            "NFE {} vs {}; mean residual {:.4} with jumps vs {:.4} without; jumps win {wins}/20, sign test p = {p:.3}",
            nfes[0],
            nfes[1],
            sums[0] / 20.0,
            sums[1] / 20.0
        ),
    ))
}

/// Criterion 9: High-dimensional Gaussian samples sit on the sqrt(d) shell.
fn thin_shell() -> Outcome {
    let d = 1000;
    let score = AnalyticScoreModel::new(GaussianMixture::isotropic(vec![0.0; d], 1.0)?);
    let schedule = NoiseSchedule::power_law(256, 0.002, 80.0, 7.0)?;
    let mut rng = trajectory_rng(9, 0);
    let mut batch = Vec::with_capacity(100);
    for _ in 0..100 {
        let x_init: Vec<f64> = standard_normal_vec(d, &mut rng).into_iter().map(|z| 80.0 * z).collect();
        batch.push(pf_ode_sample_x(&score, &schedule, &x_init, &uncond(), 1.0)?);
    }
    let stats = shell_stats(&batch)?;
    let (center, band) = ((d as f64).sqrt(), 3.0 / 2f64.sqrt());
    Ok((
        (stats.mean_norm - center).abs() <= band && stats.std_norm <= band,
        format!(
            "mean norm {:.3} (sqrt(d) = {center:.3} +/- {band:.3}), norm sd {:.3}",
            stats.mean_norm, stats.std_norm
        ),
    ))
}

/// Criterion 10: Identical configuration and seed produce bitwise-identical traces.
fn determinism() -> Outcome {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/bimodal.toml");
    let config = RunConfig::load(&path)?;
    let dir = tempfile::tempdir()?;
    let mut same = true;
    for (kind, run) in [
        ("sample", run_sample as fn(&RunConfig, &RunOptions) -> _),
        ("baseline", run_baseline),
    ] {
        let mut traces = Vec::new();
        for rerun in 0..2 {
            let opts = RunOptions {
                out: Some(dir.path().join(format!("{kind}-{rerun}"))),
                jobs: 1,
                ..RunOptions::default()
            };
            let summary = run(&config, &opts)?;
            traces.push(std::fs::read(summary.out_dir.join(TRACE_FILE))?);
        }
        same &= !traces[0].is_empty() && traces[0] == traces[1];
    }
    Ok((same, "sample and baseline traces compared byte for byte".into()))
}

fn main() {
    let criteria: [Check; 10] = [
        ("gaussian sampler exactness", gaussian_exactness),
        ("pullback oracle suite", pullback_suite),
        ("suboptimizer convergence", suboptimizer_convergence),
        ("ODE equivalence", ode_equivalence),
        ("noise bookkeeping", noise_bookkeeping),
        ("forward step marginal", forward_step_marginal),
        ("mode coverage vs gradient ascent", mode_coverage_vs_ascent),
        ("RePaint harmonization", repaint_harmonization),
        ("thin shell", thin_shell),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        if !pass {
            failed += 1;
        }
        println!("{} criterion {:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" }, k + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
