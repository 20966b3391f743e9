//! Cheap correctness checks that run against whatever representation a
//! configuration builds: derivative consistency, pullback optimality and
//! view agreement on shared lattice sites.

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::diffrep::{dot, DiffRep, LinearRep, View, ViewDistribution};
use crate::error::Result;
use crate::metrics::view_consistency_residual;
use crate::pullback::{exact_pullback, explicit_jacobian, solve_delta_theta, PullbackStepProblem, ORACLE_MAX_DIM};
use crate::sampler::{standard_normal_vec, trajectory_rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

impl OracleCheck {
    fn graded(name: &str, value: f64, tol: f64, what: &str) -> Self {
        let status = if value.is_finite() && value <= tol {
            CheckStatus::Pass
        } else {
            CheckStatus::Fail
        };
        Self {
            name: name.into(),
            status,
            detail: format!("{what} = {value:.3e} (tolerance {tol:.1e})"),
        }
    }

    fn skip(name: &str, why: &str) -> Self {
        Self {
            name: name.into(),
            status: CheckStatus::Skip,
            detail: why.into(),
        }
    }
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn probe_view(rep: &dyn DiffRep) -> View {
    match rep.view_distribution() {
        ViewDistribution::Singleton => View::Whole,
        ViewDistribution::Panorama { .. } => View::Window { origin: 0.3 },
    }
}

/// Runs every applicable check at a random parameter point.
pub fn oracle_check(config: &RunConfig, seed: u64) -> Result<Vec<OracleCheck>> {
    let rep = config.rep.build()?;
    let rep = rep.as_ref();
    let mut rng = trajectory_rng(seed, 0);
    let theta = rep.random_params(&mut rng);
    let view = probe_view(rep);
    let p = rep.param_dim();
    let m = rep.output_dim();
    let v = standard_normal_vec(p, &mut rng);
    let w = standard_normal_vec(m, &mut rng);
    let mut out = Vec::new();

    // <J v, w> = <v, J^T w>
    let jv = rep.jvp(&theta, &view, &v)?;
    let jtw = rep.vjp(&theta, &view, &w)?;
    let (lhs, rhs) = (dot(&jv, &w), dot(&v, &jtw));
    let adj = (lhs - rhs).abs() / (norm(&jv) * norm(&w)).max(f64::MIN_POSITIVE);
    out.push(OracleCheck::graded("jvp_vjp_adjoint", adj, 1e-10, "relative adjoint gap"));

    // Central differences agree with the tangent map to O(h^2).
    let h = 1e-5;
    let shifted = |s: f64| -> Result<Vec<f64>> {
        let t: Vec<f64> = theta.iter().zip(&v).map(|(a, b)| a + s * b).collect();
        rep.render(&t, &view)
    };
    let (fp, fm) = (shifted(h)?, shifted(-h)?);
    let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let diff: Vec<f64> = fd.iter().zip(&jv).map(|(a, b)| a - b).collect();
    let fd_err = norm(&diff) / norm(&jv).max(1e-12);
    out.push(OracleCheck::graded("jvp_finite_difference", fd_err, 1e-5, "relative error"));

    if p.max(m) > ORACLE_MAX_DIM {
        out.push(OracleCheck::skip("pullback_orthogonality", "jacobian too large to form"));
        out.push(OracleCheck::skip("solver_matches_oracle", "jacobian too large to form"));
    } else {
        let j = explicit_jacobian(rep, &theta, &view)?;
        let d = standard_normal_vec(m, &mut rng);
        let delta = exact_pullback(&j, &d)?;

        // Least squares: the residual is orthogonal to range(J).
        let jd = &j * nalgebra::DVector::from_column_slice(&delta);
        let resid: Vec<f64> = d.iter().zip(jd.iter()).map(|(a, b)| a - b).collect();
        let jt_r = j.transpose() * nalgebra::DVector::from_column_slice(&resid);
        let scale = (j.norm() * norm(&d)).max(f64::MIN_POSITIVE);
        out.push(OracleCheck::graded(
            "pullback_orthogonality",
            jt_r.norm() / scale,
            1e-9,
            "|J^T r| / (|J| |d|)",
        ));

        // Run the iterative solver on the tangent map itself, so the
        // comparison isolates the solver from the curvature of `rep`.
        let tangent = LinearRep::new(j.clone())?;
        let mut solver = config.sampler.solver;
        solver.iterations = solver.iterations.max(2000);
        solver.tolerance = 0.0;
        let problem = PullbackStepProblem {
            theta: vec![0.0; p],
            views: vec![View::Whole],
            targets: vec![d.clone()],
        };
        let report = solve_delta_theta(&problem, &tangent, &solver)?;
        // Compare in image space; parameter-space minimizers differ along ker(J).
        let gap: Vec<f64> = delta.iter().zip(&report.delta).map(|(a, b)| a - b).collect();
        let jgap = &j * nalgebra::DVector::from_column_slice(&gap);
        let rel = jgap.norm() / jd.norm().max(f64::MIN_POSITIVE);
        let mut check = OracleCheck::graded("solver_matches_oracle", rel, 1e-3, "relative image-space gap");
        let sv = j.singular_values();
        let smin = sv.iter().copied().filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
        check.detail.push_str(&format!("; jacobian condition number {:.1e}", sv.max() / smin));
        out.push(check);
    }

    match rep.view_distribution() {
        ViewDistribution::Singleton => out.push(OracleCheck::skip("view_consistency", "single-view representation")),
        ViewDistribution::Panorama { aspect_ratio } => {
            let step = 1.0 / aspect_ratio as f64;
            let pairs = vec![
                (View::Window { origin: 0.0 }, View::Window { origin: step / 2.0 }),
                (View::Window { origin: 1.0 - step / 2.0 }, View::Window { origin: 0.0 }),
            ];
            let r = view_consistency_residual(rep, &theta, &pairs)?;
            out.push(OracleCheck::graded("view_consistency", r, 1e-12, "shared-site disagreement"));
        }
    }
    Ok(out)
}
