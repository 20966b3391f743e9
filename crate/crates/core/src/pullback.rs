//! Moving image-space increments into parameter space.
//!
//! [`exact_pullback`] is the dense least-squares oracle (minimum-norm
//! pseudoinverse). [`solve_delta_theta`] is the matrix-free per-step solver
//! used by the samplers: it minimizes the empirical multiview objective
//!
//! `L(delta) = (1/B) sum_j || f(theta, pi_j) - f(theta - delta, pi_j) - d_j ||^2`
//!
//! with a first-order method that only touches `render`, `jvp` and `vjp`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diffrep::{dot, norm, DiffRep, View};
use crate::error::{check_dim, Error, Result};
use crate::optim::{Adam, AdamConfig};

/// Largest `m` or `p` for which dense Jacobians are materialized.
pub const ORACLE_MAX_DIM: usize = 512;

/// Minimum-norm least-squares solution of `J u ~= v`.
///
/// Singular values below `eps * max(m, p) * s_max` are treated as zero.
pub fn exact_pullback(j: &DMatrix<f64>, v: &[f64]) -> Result<Vec<f64>> {
    check_dim("pullback right-hand side", j.nrows(), v.len())?;
    let p = j.ncols();
    if j.iter().any(|x| !x.is_finite()) || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter("pullback inputs must be finite".into()));
    }
    let svd = j.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if s_max == 0.0 {
        return Ok(vec![0.0; p]);
    }
    let tol = f64::EPSILON * j.nrows().max(p) as f64 * s_max;
    let u = svd
        .solve(&DVector::from_column_slice(v), tol)
        .map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(u.as_slice().to_vec())
}

/// `J^T v`: the covector pullback.
pub fn sjc_pullback(j: &DMatrix<f64>, v: &[f64]) -> Result<Vec<f64>> {
    scaled_sjc_pullback(j, v, 1.0)
}

/// `lambda J^T v`.
pub fn scaled_sjc_pullback(j: &DMatrix<f64>, v: &[f64], lambda: f64) -> Result<Vec<f64>> {
    check_dim("pullback right-hand side", j.nrows(), v.len())?;
    let u = j.tr_mul(&DVector::from_column_slice(v)) * lambda;
    Ok(u.as_slice().to_vec())
}

/// Dense Jacobian of `rep` at `(theta, view)`, built one column per `jvp`.
pub fn explicit_jacobian(rep: &dyn DiffRep, theta: &[f64], view: &View) -> Result<DMatrix<f64>> {
    let (m, p) = (rep.output_dim(), rep.param_dim());
    if m > ORACLE_MAX_DIM || p > ORACLE_MAX_DIM {
        return Err(Error::Parameter(format!(
            "explicit Jacobian limited to {ORACLE_MAX_DIM} rows and columns, got {m} x {p}"
        )));
    }
    let mut jac = DMatrix::zeros(m, p);
    let mut e = vec![0.0; p];
    for k in 0..p {
        e[k] = 1.0;
        let col = rep.jvp(theta, view, &e)?;
        jac.set_column(k, &DVector::from_vec(col));
        e[k] = 0.0;
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    /// Nonlinear conjugate gradient (Polak-Ribiere+) with Gauss-Newton step
    /// lengths; exact in at most `rank(J)` iterations on linear maps.
    #[serde(rename = "cg")]
    ConjugateGradient,
    /// Accelerated gradient with backtracking and function-value restarts.
    Nesterov,
    /// Adam with a fixed learning rate.
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub kind: SolverKind,
    pub iterations: usize,
    /// Adam only.
    pub learning_rate: f64,
    /// Adam only.
    pub beta1: f64,
    /// Adam only.
    pub beta2: f64,
    /// Stop once an accepted iteration lowers the objective by less than this
    /// fraction. The conjugate-gradient solver applies it to the decrease over
    /// its last `p` accepted iterations instead, `p` being the parameter count.
    pub tolerance: f64,
    /// Power iterations for the initial curvature estimate (accelerated solver only).
    pub power_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: SolverKind::ConjugateGradient,
            iterations: 200,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            tolerance: 1e-10,
            power_iterations: 12,
        }
    }
}

/// One suboptimization: match the image increments `d_j` on views `pi_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PullbackStepProblem {
    pub theta: Vec<f64>,
    pub views: Vec<View>,
    /// `f(theta, pi_j) - x_next_j`, one per view.
    pub targets: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// `Delta theta`; the caller applies `theta - delta`.
    pub delta: Vec<f64>,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted iteration.
    pub trace: Vec<f64>,
}

impl SolveReport {
    /// Root-mean residual norm per view.
    pub fn residual(&self) -> f64 {
        self.objective.max(0.0).sqrt()
    }

    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "iteration,objective")?;
        writeln!(w, "0,{:e}", self.initial_objective)?;
        for (k, o) in self.trace.iter().enumerate() {
            writeln!(w, "{},{:e}", k + 1, o)?;
        }
        Ok(())
    }
}

struct Objective<'a> {
    rep: &'a dyn DiffRep,
    problem: &'a PullbackStepProblem,
    /// `f(theta, pi_j) - d_j`: what `f(theta - delta, pi_j)` should become.
    goals: Vec<Vec<f64>>,
}

impl<'a> Objective<'a> {
    fn new(rep: &'a dyn DiffRep, problem: &'a PullbackStepProblem) -> Result<Self> {
        if problem.views.is_empty() {
            return Err(Error::Parameter("pullback step needs at least one view".into()));
        }
        check_dim("pullback targets", problem.views.len(), problem.targets.len())?;
        check_dim("pullback parameters", rep.param_dim(), problem.theta.len())?;
        let mut goals = Vec::with_capacity(problem.views.len());
        for (v, d) in problem.views.iter().zip(&problem.targets) {
            check_dim("pullback target", rep.output_dim(), d.len())?;
            if d.iter().any(|x| !x.is_finite()) {
                return Err(Error::Parameter("pullback targets must be finite".into()));
            }
            let f = rep.render(&problem.theta, v)?;
            goals.push(f.iter().zip(d).map(|(a, b)| a - b).collect());
        }
        Ok(Self {
            rep,
            problem,
            goals,
        })
    }

    fn batch(&self) -> f64 {
        self.problem.views.len() as f64
    }

    fn shifted(&self, delta: &[f64]) -> Vec<f64> {
        self.problem.theta.iter().zip(delta).map(|(t, d)| t - d).collect()
    }

    fn residuals(&self, delta: &[f64]) -> Result<Vec<Vec<f64>>> {
        let th = self.shifted(delta);
        self.problem
            .views
            .iter()
            .zip(&self.goals)
            .map(|(v, g)| {
                let f = self.rep.render(&th, v)?;
                Ok(g.iter().zip(&f).map(|(a, b)| a - b).collect())
            })
            .collect()
    }

    fn value(&self, delta: &[f64]) -> Result<f64> {
        let r = self.residuals(delta)?;
        Ok(r.iter().map(|x| sq(x)).sum::<f64>() / self.batch())
    }

    /// Value and gradient; `dr/d(delta) = +J(theta - delta)`.
    fn value_grad(&self, delta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let th = self.shifted(delta);
        let mut grad = vec![0.0; delta.len()];
        let mut value = 0.0;
        let scale = 2.0 / self.batch();
        for (v, g) in self.problem.views.iter().zip(&self.goals) {
            let f = self.rep.render(&th, v)?;
            let r: Vec<f64> = g.iter().zip(&f).map(|(a, b)| a - b).collect();
            value += sq(&r);
            for (acc, x) in grad.iter_mut().zip(self.rep.vjp(&th, v, &r)?) {
                *acc += scale * x;
            }
        }
        Ok((value / self.batch(), grad))
    }

    /// `(2/B) sum |J(theta - delta) s|^2`: curvature of the Gauss-Newton model along `s`.
    fn model_curvature(&self, delta: &[f64], s: &[f64]) -> Result<f64> {
        let th = self.shifted(delta);
        let mut c = 0.0;
        for v in &self.problem.views {
            c += sq(&self.rep.jvp(&th, v, s)?);
        }
        Ok(2.0 * c / self.batch())
    }

    /// Largest eigenvalue of the Gauss-Newton curvature `(2/B) sum J^T J` at `theta`.
    fn curvature(&self, iterations: usize) -> Result<f64> {
        let p = self.problem.theta.len();
        // deterministic, non-degenerate start vector
        let mut u: Vec<f64> = (0..p).map(|k| 1.0 + 0.5 * ((k as f64) * 0.618_033_988_7).sin()).collect();
        let mut lambda = 0.0;
        for _ in 0..iterations.max(1) {
            let n = norm(&u);
            if n == 0.0 {
                return Ok(0.0);
            }
            u.iter_mut().for_each(|x| *x /= n);
            let mut w = vec![0.0; p];
            for v in &self.problem.views {
                let ju = self.rep.jvp(&self.problem.theta, v, &u)?;
                for (acc, x) in w.iter_mut().zip(self.rep.vjp(&self.problem.theta, v, &ju)?) {
                    *acc += 2.0 * x / self.batch();
                }
            }
            lambda = norm(&w);
            u = w;
        }
        Ok(lambda)
    }
}

fn sq(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum()
}

fn finite_or_diverged(value: f64, iterations: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::SolverDivergence { iterations })
    }
}

/// Solve one pullback step. Starts from `delta = 0`.
pub fn solve_delta_theta(
    problem: &PullbackStepProblem,
    rep: &dyn DiffRep,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let obj = Objective::new(rep, problem)?;
    let p = problem.theta.len();
    let initial = finite_or_diverged(obj.value(&vec![0.0; p])?, 0)?;
    let mut report = SolveReport {
        delta: vec![0.0; p],
        initial_objective: initial,
        objective: initial,
        iterations: 0,
        converged: false,
        trace: Vec::new(),
    };
    if initial == 0.0 {
        report.converged = true;
        return Ok(report);
    }
    match config.kind {
        SolverKind::ConjugateGradient => conjugate_gradient(&obj, config, &mut report)?,
        SolverKind::Nesterov => accelerated(&obj, config, &mut report)?,
        SolverKind::Adam => adam(&obj, config, &mut report)?,
    }
    Ok(report)
}

/// Objective small enough that further progress is round-off.
fn negligible(value: f64, initial: f64) -> bool {
    value <= 1e-28 * initial
}

fn conjugate_gradient(obj: &Objective<'_>, config: &SolverConfig, report: &mut SolveReport) -> Result<()> {
    let p = report.delta.len();
    let mut x = vec![0.0; p];
    let (mut fx, mut g) = obj.value_grad(&x)?;
    let mut s: Vec<f64> = g.iter().map(|a| -a).collect();
    let mut since_restart = 0;
    for k in 0..config.iterations {
        report.iterations = k + 1;
        let slope = dot(&g, &s);
        if slope >= 0.0 {
            // not a descent direction
            if since_restart == 0 {
                break;
            }
            s = g.iter().map(|a| -a).collect();
            since_restart = 0;
            continue;
        }
        let curv = obj.model_curvature(&x, &s)?;
        if !(curv > 0.0 && curv.is_finite()) {
            report.converged = true;
            break;
        }
        // minimizer of the quadratic model, then Armijo backtracking on the true objective
        let mut alpha = -slope / curv;
        let mut accepted = None;
        for _ in 0..=40 {
            let trial: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + alpha * b).collect();
            let (ft, gt) = obj.value_grad(&trial)?;
            finite_or_diverged(ft, k)?;
            if ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if since_restart == 0 {
                break;
            }
            s = g.iter().map(|a| -a).collect();
            since_restart = 0;
            continue;
        };
        since_restart += 1;
        // PR+ restarts by itself; a periodic restart would discard the Krylov
        // subspace that finite-precision CG still needs past p iterations.
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let beta = (dot(&g_new, &y) / sq(&g)).max(0.0);
        s = g_new.iter().zip(&s).map(|(a, b)| -a + beta * b).collect();
        x = x_new;
        fx = f_new;
        g = g_new;
        report.trace.push(fx);
        // Ill-conditioned problems plateau for many iterations before the next
        // drop, so a stall means no progress over a whole conjugate cycle.
        let cycle = p.max(1);
        let stalled = report.trace.len() >= cycle && {
            let base = match report.trace.len() - cycle {
                0 => report.initial_objective,
                j => report.trace[j - 1],
            };
            base - fx < config.tolerance * base
        };
        if negligible(fx, report.initial_objective) || stalled {
            report.converged = true;
            break;
        }
    }
    report.delta = x;
    report.objective = fx;
    Ok(())
}

fn accelerated(obj: &Objective<'_>, config: &SolverConfig, report: &mut SolveReport) -> Result<()> {
    let p = report.delta.len();
    let mut lip = obj.curvature(config.power_iterations)?;
    if !(lip > 0.0 && lip.is_finite()) {
        // render does not depend on theta along any probed direction
        report.converged = true;
        return Ok(());
    }
    let mut x = vec![0.0; p];
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut fx = report.initial_objective;
    for k in 0..config.iterations {
        let (fy, g) = obj.value_grad(&y)?;
        finite_or_diverged(fy, k)?;
        let gg = sq(&g);
        let mut x_new;
        let mut f_new;
        let mut doublings = 0;
        loop {
            x_new = y.iter().zip(&g).map(|(a, b)| a - b / lip).collect::<Vec<f64>>();
            f_new = finite_or_diverged(obj.value(&x_new)?, k)?;
            // sufficient decrease for a 1/lip gradient step
            if f_new <= fy - 0.5 * gg / lip + 1e-15 * fy || doublings >= 40 {
                break;
            }
            lip *= 2.0;
            doublings += 1;
        }
        report.iterations = k + 1;
        if f_new > fx {
            // momentum overshot: restart from the last accepted point
            t = 1.0;
            if y == x {
                break;
            }
            y = x.clone();
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        y = x_new
            .iter()
            .zip(&x)
            .map(|(a, b)| a + beta * (a - b))
            .collect();
        let decrease = (fx - f_new) / fx;
        x = x_new;
        fx = f_new;
        t = t_new;
        report.trace.push(fx);
        if negligible(fx, report.initial_objective) || decrease < config.tolerance {
            report.converged = true;
            break;
        }
    }
    report.delta = x;
    report.objective = fx;
    Ok(())
}

fn adam(obj: &Objective<'_>, config: &SolverConfig, report: &mut SolveReport) -> Result<()> {
    let p = report.delta.len();
    let mut opt = Adam::with_config(
        p,
        AdamConfig {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            ..AdamConfig::default()
        },
    );
    let mut delta = vec![0.0; p];
    let mut best = (report.initial_objective, delta.clone());
    let mut prev = report.initial_objective;
    for k in 0..config.iterations {
        let (_, g) = obj.value_grad(&delta)?;
        opt.step(&mut delta, &g);
        let f = finite_or_diverged(obj.value(&delta)?, k + 1)?;
        report.iterations = k + 1;
        report.trace.push(f);
        if f < best.0 {
            best = (f, delta.clone());
        }
        if negligible(f, report.initial_objective) || (prev > f && (prev - f) / prev < config.tolerance) {
            report.converged = true;
            break;
        }
        prev = f;
    }
    report.objective = best.0;
    report.delta = best.1;
    Ok(())
}
