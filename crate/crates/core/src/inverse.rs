//! Contact inverse dynamics by proximal fixed-point iteration.
//!
//! Given a reference velocity `v_ref`, the contact velocities are
//! `σ = R λ + J v_ref + γ` and the impulses solve the same NCP as forward
//! dynamics with the Delassus matrix replaced by the diagonal compliance.
//! Each iteration refreshes the De Saxcé term and projects under the metric
//! `R + ρ Id`, which is diagonal and therefore cheap.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::cones::{block, desaxce_block, project_soc_diag_metric, set_block};
use crate::error::{check_len, Error, Result};
use crate::problem::{Complementarity, ResidualReport};

/// Default proximal parameter.
pub const DEFAULT_ID_RHO: f64 = 1e-8;

/// `‖λ‖∞` above which the iteration is declared divergent.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct IdProblem {
    pub v_ref: DVector<f64>,
    /// `3n_c × n_v` contact Jacobian, rows ordered `[T1, T2, N]`.
    pub jacobian: DMatrix<f64>,
    pub gamma: DVector<f64>,
    pub r_diag: DVector<f64>,
    pub mu: DVector<f64>,
    pub rho: f64,
}

impl IdProblem {
    pub fn validate(&self) -> Result<()> {
        let n_c = self.mu.len();
        if self.jacobian.nrows() != 3 * n_c {
            return Err(Error::Dimension(format!(
                "Jacobian has {} rows, expected {}",
                self.jacobian.nrows(),
                3 * n_c
            )));
        }
        check_len("v_ref", self.v_ref.len(), self.jacobian.ncols())?;
        check_len("gamma", self.gamma.len(), 3 * n_c)?;
        check_len("R_diag", self.r_diag.len(), 3 * n_c)?;
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "proximal parameter must be positive, got {}",
                self.rho
            )));
        }
        if let Some(bad) = self.mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidProblem(format!(
                "friction coefficients must be positive and finite, got {bad}"
            )));
        }
        for i in 0..n_c {
            let r = block(&self.r_diag, i);
            if r.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || r[0] != r[1] {
                return Err(Error::InvalidProblem(format!(
                    "compliance of contact {i} must be nonnegative and tangentially isotropic"
                )));
            }
        }
        Ok(())
    }

    pub fn n_contacts(&self) -> usize {
        self.mu.len()
    }

    /// `J v_ref + γ`.
    pub fn reference_velocity(&self) -> DVector<f64> {
        &self.jacobian * &self.v_ref + &self.gamma
    }

    /// `σ = R λ + J v_ref + γ`.
    pub fn velocity(&self, lambda: &DVector<f64>) -> DVector<f64> {
        self.r_diag.component_mul(lambda) + self.reference_velocity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdStatus {
    Converged,
    MaxIter,
    Diverged,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdResult {
    pub lambda: DVector<f64>,
    pub status: IdStatus,
    pub iterations: usize,
}

/// One fixed-point update `λ ← P^{R+ρ}_K(−(R+ρ)⁻¹(c + s − ρλ))` with
/// `s = Γ(Rλ + c)` (or `s = 0` in CCP mode).
pub fn id_update(problem: &IdProblem, lambda: &DVector<f64>, c: &DVector<f64>, mode: Complementarity) -> DVector<f64> {
    let rho = problem.rho;
    let mut out = DVector::zeros(lambda.len());
    for i in 0..problem.n_contacts() {
        let l = block(lambda, i);
        let ci = block(c, i);
        let r = block(&problem.r_diag, i);
        let sigma = r.component_mul(&l) + ci;
        let s = if mode.uses_desaxce() {
            desaxce_block(&sigma, problem.mu[i])
        } else {
            Vector3::zeros()
        };
        let d = r.add_scalar(rho);
        let x = -(ci + s - l * rho).component_div(&d);
        let p = project_soc_diag_metric(&x, &d, problem.mu[i])
            .expect("metric validated by IdProblem::validate");
        set_block(&mut out, i, &p);
    }
    out
}

/// NCP-mode inverse dynamics.
pub fn solve_id(problem: &IdProblem, n_iter: usize, eps_abs: f64) -> Result<IdResult> {
    solve_id_mode(problem, n_iter, eps_abs, Complementarity::Ncp)
}

/// Runs the fixed-point iteration from `λ = 0` until the increment
/// `‖λ_k − λ_{k−1}‖∞` is at most `eps_abs`, the iterate blows past
/// [`DIVERGENCE_THRESHOLD`], or `n_iter` iterations elapse.
pub fn solve_id_mode(
    problem: &IdProblem,
    n_iter: usize,
    eps_abs: f64,
    mode: Complementarity,
) -> Result<IdResult> {
    problem.validate()?;
    if !(eps_abs > 0.0) {
        return Err(Error::InvalidSettings(format!("eps_abs must be positive, got {eps_abs}")));
    }
    let c = problem.reference_velocity();
    let mut lambda = DVector::zeros(3 * problem.n_contacts());
    if problem.n_contacts() == 0 {
        return Ok(IdResult {
            lambda,
            status: IdStatus::Converged,
            iterations: 0,
        });
    }
    for k in 1..=n_iter {
        let next = id_update(problem, &lambda, &c, mode);
        let norm = next.amax();
        if !norm.is_finite() || norm > DIVERGENCE_THRESHOLD || next.iter().any(|v| !v.is_finite()) {
            return Ok(IdResult {
                lambda: next,
                status: IdStatus::Diverged,
                iterations: k,
            });
        }
        let increment = (&next - &lambda).amax();
        lambda = next;
        if increment <= eps_abs {
            return Ok(IdResult {
                lambda,
                status: IdStatus::Converged,
                iterations: k,
            });
        }
    }
    Ok(IdResult {
        lambda,
        status: IdStatus::MaxIter,
        iterations: n_iter,
    })
}

/// Residuals of the inverse-dynamics NCP at `lambda`.
pub fn check_id_ncp(problem: &IdProblem, lambda: &DVector<f64>) -> Result<ResidualReport> {
    problem.validate()?;
    check_len("lambda", lambda.len(), 3 * problem.n_contacts())?;
    Ok(ResidualReport::evaluate(
        lambda,
        &problem.velocity(lambda),
        &problem.mu,
        Complementarity::Ncp,
    ))
}

/// Constant generalized force over a step of length `dt` that, together
/// with the contact impulses, takes `v` to `v_ref` under symplectic Euler:
/// `τ = M (v_ref − v)/dt + b − Jᵀλ/dt`.
///
/// `b` is the bias force, so gravity on a mass `m` enters as `−m g`.
pub fn recover_torque(
    mass: &DMatrix<f64>,
    bias: &DVector<f64>,
    v: &DVector<f64>,
    v_ref: &DVector<f64>,
    dt: f64,
    jacobian: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n_v = mass.nrows();
    if mass.ncols() != n_v || jacobian.ncols() != n_v {
        return Err(Error::Dimension(format!(
            "mass is {}x{}, Jacobian has {} columns",
            n_v,
            mass.ncols(),
            jacobian.ncols()
        )));
    }
    check_len("bias", bias.len(), n_v)?;
    check_len("v", v.len(), n_v)?;
    check_len("v_ref", v_ref.len(), n_v)?;
    check_len("lambda", lambda.len(), jacobian.nrows())?;
    if !(dt > 0.0) {
        return Err(Error::InvalidProblem(format!("time step must be positive, got {dt}")));
    }
    Ok(mass * (v_ref - v) / dt + bias - jacobian.transpose() * lambda / dt)
}

/// On-disk inverse-dynamics problem. The dynamics fields are optional and
/// only needed to recover the torque.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdProblemFile {
    pub v_ref: Vec<f64>,
    /// Row-major `3n_c × n_v`.
    #[serde(rename = "J")]
    pub jacobian: Vec<f64>,
    #[serde(default)]
    pub gamma: Option<Vec<f64>>,
    #[serde(rename = "R_diag", default)]
    pub r_diag: Option<Vec<f64>>,
    pub mu: Vec<f64>,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_n_iter")]
    pub n_iter: usize,
    #[serde(default = "default_eps")]
    pub eps_abs: f64,
    #[serde(default)]
    pub mode: Complementarity,
    /// Row-major `n_v × n_v` mass matrix.
    #[serde(rename = "M", default)]
    pub mass: Option<Vec<f64>>,
    #[serde(default)]
    pub bias: Option<Vec<f64>>,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    #[serde(default)]
    pub dt: Option<f64>,
}

fn default_rho() -> f64 {
    DEFAULT_ID_RHO
}

fn default_n_iter() -> usize {
    1000
}

fn default_eps() -> f64 {
    1e-6
}

/// Mass matrix, bias, current velocity and step for torque recovery.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueInputs {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub v: DVector<f64>,
    pub dt: f64,
}

impl IdProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_problem(&self) -> Result<IdProblem> {
        let n_c = self.mu.len();
        let n_v = self.v_ref.len();
        check_len("J", self.jacobian.len(), 3 * n_c * n_v)?;
        let zeros = || vec![0.0; 3 * n_c];
        let p = IdProblem {
            v_ref: DVector::from_vec(self.v_ref.clone()),
            jacobian: DMatrix::from_row_slice(3 * n_c, n_v, &self.jacobian),
            gamma: DVector::from_vec(self.gamma.clone().unwrap_or_else(zeros)),
            r_diag: DVector::from_vec(self.r_diag.clone().unwrap_or_else(zeros)),
            mu: DVector::from_vec(self.mu.clone()),
            rho: self.rho,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn torque_inputs(&self) -> Result<Option<TorqueInputs>> {
        let n_v = self.v_ref.len();
        match (&self.mass, &self.dt) {
            (Some(m), Some(dt)) => {
                check_len("M", m.len(), n_v * n_v)?;
                let bias = self.bias.clone().unwrap_or_else(|| vec![0.0; n_v]);
                let v = self.v.clone().unwrap_or_else(|| self.v_ref.clone());
                check_len("bias", bias.len(), n_v)?;
                check_len("v", v.len(), n_v)?;
                Ok(Some(TorqueInputs {
                    mass: DMatrix::from_row_slice(n_v, n_v, m),
                    bias: DVector::from_vec(bias),
                    v: DVector::from_vec(v),
                    dt: *dt,
                }))
            }
            _ => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cones::dual_cone_contains;
    use approx::assert_relative_eq;

    fn single(c_ref: [f64; 3], r: [f64; 3], mu: f64, rho: f64) -> IdProblem {
        IdProblem {
            v_ref: DVector::from_row_slice(&c_ref),
            jacobian: DMatrix::identity(3, 3),
            gamma: DVector::zeros(3),
            r_diag: DVector::from_row_slice(&r),
            mu: DVector::from_element(1, mu),
            rho,
        }
    }

    #[test]
    fn separating_reference_needs_no_force() {
        let p = single([0.1, 0.0, 1.0], [0.0; 3], 0.5, DEFAULT_ID_RHO);
        assert!(dual_cone_contains(&Vector3::new(0.1, 0.0, 1.0), 0.5, 0.0));
        let r = solve_id(&p, 100, 1e-9).unwrap();
        assert_eq!(r.status, IdStatus::Converged);
        assert_eq!(r.lambda, DVector::zeros(3));
    }

    #[test]
    fn static_rigid_reference_converges_fast() {
        let p = single([0.0; 3], [0.0; 3], 0.5, DEFAULT_ID_RHO);
        let r = solve_id(&p, 100, 1e-6).unwrap();
        assert_eq!(r.status, IdStatus::Converged);
        assert!(r.iterations <= 2);
        assert!(check_id_ncp(&p, &r.lambda).unwrap().max_violation <= 1e-6);
    }

    #[test]
    fn sliding_reference_ncp_converges_and_ccp_diverges() {
        // c_ref = (−1, 0, 0) is outside the dual cone, so the convex
        // relaxation has no solution.
        assert!(!dual_cone_contains(&Vector3::new(-1.0, 0.0, 0.0), 0.5, 0.0));
        let p = single([-1.0, 0.0, 0.0], [0.0; 3], 0.5, DEFAULT_ID_RHO);
        let r = solve_id(&p, 100_000, 1e-6).unwrap();
        assert_eq!(r.status, IdStatus::Converged);
        assert!(r.iterations <= 2);
        assert!(check_id_ncp(&p, &r.lambda).unwrap().max_violation <= 1e-6);
        let ccp = solve_id_mode(&p, 100_000, 1e-6, Complementarity::Ccp).unwrap();
        assert_eq!(ccp.status, IdStatus::Diverged);
    }

    #[test]
    fn compliant_sliding_reference_lands_on_cone_boundary() {
        let p = single([-1.0, 0.0, -0.5], [1e-2, 1e-2, 1e-2], 0.5, DEFAULT_ID_RHO);
        let r = solve_id(&p, 10_000, 1e-12).unwrap();
        assert_eq!(r.status, IdStatus::Converged);
        let l = &r.lambda;
        assert!(l[2] > 0.0);
        assert!(l[0] > 0.0, "friction opposes slip: {l:?}");
        assert_relative_eq!(l[0].hypot(l[1]), 0.5 * l[2], max_relative = 1e-8);
        assert!(check_id_ncp(&p, l).unwrap().max_violation <= 1e-10);
        // Fixed-point certificate.
        let c = p.reference_velocity();
        let again = id_update(&p, l, &c, Complementarity::Ncp);
        assert!((again - l).amax() <= 1e-10);
    }

    #[test]
    fn torque_recovery() {
        let m = DMatrix::<f64>::identity(3, 3);
        let z = DVector::zeros(3);
        let j = DMatrix::identity(3, 3);
        let tau = recover_torque(&m, &z, &z, &z, 1e-3, &j, &z).unwrap();
        assert_eq!(tau, z);

        // Point mass resting under gravity: the contact impulse carries the weight.
        let dt = 1e-3;
        let bias = DVector::from_vec(vec![0.0, 0.0, 9.81]);
        let lambda = DVector::from_vec(vec![0.0, 0.0, 9.81 * dt]);
        let tau = recover_torque(&m, &bias, &z, &z, dt, &j, &lambda).unwrap();
        assert!(tau.amax() <= 1e-12);
        assert!(recover_torque(&m, &bias, &z, &z, 0.0, &j, &lambda).is_err());
    }

    #[test]
    fn validation() {
        let mut p = single([0.0; 3], [0.0; 3], 0.5, 0.0);
        assert!(solve_id(&p, 10, 1e-6).is_err());
        p.rho = 1e-8;
        p.r_diag = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        assert!(solve_id(&p, 10, 1e-6).is_err());
    }

    #[test]
    fn file_parsing() {
        let text = r#"{"v_ref": [-1, 0, 0], "J": [1,0,0, 0,1,0, 0,0,1], "mu": [0.5],
                       "M": [1,0,0, 0,1,0, 0,0,1], "bias": [0, 0, 9.81], "dt": 0.001}"#;
        let f = IdProblemFile::from_json(text).unwrap();
        let p = f.to_problem().unwrap();
        assert_eq!(p.rho, DEFAULT_ID_RHO);
        assert_eq!(p.r_diag, DVector::zeros(3));
        let t = f.torque_inputs().unwrap().unwrap();
        assert_eq!(t.v, p.v_ref);
    }
}
