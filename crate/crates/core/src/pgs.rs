//! Over-relaxed projected Gauss-Seidel on the second-order cone NCP.
//!
//! Contacts are swept in index order. Each contact block takes one
//! diagonally preconditioned step on `σ + Γ(σ)` followed by a projection
//! onto its friction cone, using the freshest impulses of the sweep.
//!
//! The projection is taken in the metric of the step. A Euclidean
//! projection after a non-scalar step has fixed points that are not NCP
//! solutions. The two tangential diagonal entries are replaced by their
//! maximum so the metric stays isotropic in the tangent plane.

use nalgebra::{DVector, Vector3};

use crate::cones::{block, desaxce_block, project_soc_diag_metric, set_block};
use crate::error::{check_len, Error, Result};
use crate::problem::{check_complementarity, ContactProblem, ResidualReport};
use crate::solver::{ResidualNorms, SolverResult, SolverSettings, Status, TraceRow, WarmStartPolicy};

/// Diagonal entries below this are regularized by `η`.
const DIAG_FLOOR: f64 = 1e-12;

fn report_norms(r: &ResidualReport) -> ResidualNorms {
    let max = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(*x));
    ResidualNorms {
        prim: max(&r.primal_cone_violation),
        dual: max(&r.dual_cone_violation),
        comp: max(&r.ncp_comp).max(max(&r.signorini_comp)),
    }
}

/// Solves the contact problem with PGS and relaxation factor `omega`.
///
/// Stops when the NCP residual report is within `eps_abs`, checked after
/// every sweep. `cholesky_updates` is always zero.
pub fn solve_pgs(
    problem: &ContactProblem,
    settings: &SolverSettings,
    omega: f64,
    warm: Option<&DVector<f64>>,
) -> Result<SolverResult> {
    settings.validate()?;
    if !(omega > 0.0 && omega < 2.0) {
        return Err(Error::InvalidSettings(format!(
            "relaxation factor must lie in (0, 2), got {omega}"
        )));
    }
    let n_c = problem.n_contacts();
    if n_c == 0 {
        return Ok(SolverResult::empty(omega));
    }
    let mode = settings.complementarity;
    let mu = problem.mu();
    let g_mat = problem.delassus();
    let r_diag = problem.r_diag();

    let metric: Vec<Vector3<f64>> = {
        let d = g_mat.diagonal() + r_diag;
        (0..n_c)
            .map(|i| {
                let m = Vector3::from_fn(|k, _| {
                    let v = d[3 * i + k];
                    if v < DIAG_FLOOR {
                        v + settings.eta
                    } else {
                        v
                    }
                });
                let t = m[0].max(m[1]);
                Vector3::new(t, t, m[2])
            })
            .collect()
    };

    let mut lambda = match (settings.warm_start_policy, warm) {
        (WarmStartPolicy::Provided, Some(w)) => {
            check_len("warm start", w.len(), problem.dim())?;
            w.clone()
        }
        _ => DVector::zeros(problem.dim()),
    };
    // σ = (G + R) λ + g, kept current as λ changes.
    let mut sigma = problem.apply_w(&lambda) + problem.g();

    let mut trace = settings.record_trace.then(Vec::new);
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut norms = ResidualNorms::default();

    for k in 1..=settings.max_iter {
        iterations = k;
        for i in 0..n_c {
            let s = block(&sigma, i);
            let w = if mode.uses_desaxce() {
                s + desaxce_block(&s, mu[i])
            } else {
                s
            };
            let old = block(&lambda, i);
            let d = &metric[i];
            let step = w.component_div(d) * omega;
            let new = project_soc_diag_metric(&(old - step), d, mu[i])?;
            let delta = new - old;
            if delta != Vector3::zeros() {
                set_block(&mut lambda, i, &new);
                g_mat.axpy_block_col(i, &delta, &mut sigma);
                for c in 0..3 {
                    sigma[3 * i + c] += r_diag[3 * i + c] * delta[c];
                }
            }
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            status = Status::NumericalFailure { iteration: k };
            break;
        }
        let report = ResidualReport::evaluate(&lambda, &sigma, mu, mode);
        norms = report_norms(&report);
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iter: k,
                r_prim: norms.prim,
                r_dual: norms.dual,
                r_comp: norms.comp,
                rho: omega,
            });
        }
        if report.max_violation <= settings.eps_abs {
            // Confirm against a fresh evaluation to rule out drift in σ.
            sigma = problem.apply_w(&lambda) + problem.g();
            let fresh = check_complementarity(problem, &lambda, mode)?;
            norms = report_norms(&fresh);
            if fresh.max_violation <= settings.eps_abs {
                status = Status::Converged;
                break;
            }
        }
    }

    Ok(SolverResult {
        lambda,
        sigma,
        status,
        iterations,
        cholesky_updates: 0,
        final_residuals: norms,
        final_rho: omega,
        trace,
    })
}
