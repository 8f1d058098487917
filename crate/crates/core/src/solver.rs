//! Settings, results and traces shared by the contact solvers.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Complementarity;

/// Penalty-parameter adaptation rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RhoStrategy {
    /// Multiply or divide ρ by a constant factor.
    Linear { tau_inc: f64, tau_dec: f64 },
    /// `ρ = sqrt(mL) κ^p`, stepping the exponent `p`.
    Spectral { p_inc: f64, p_dec: f64, p_init: f64 },
}

impl RhoStrategy {
    pub fn linear(tau: f64) -> Self {
        RhoStrategy::Linear {
            tau_inc: tau,
            tau_dec: tau,
        }
    }

    pub fn spectral(p: f64) -> Self {
        RhoStrategy::Spectral {
            p_inc: p,
            p_dec: p,
            p_init: 0.0,
        }
    }

    pub fn is_spectral(&self) -> bool {
        matches!(self, RhoStrategy::Spectral { .. })
    }
}

impl Default for RhoStrategy {
    fn default() -> Self {
        RhoStrategy::spectral(0.05)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WarmStartPolicy {
    #[default]
    Zero,
    Provided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub eps_abs: f64,
    pub max_iter: usize,
    /// Proximal regularization of the force update.
    pub eta: f64,
    /// Initial penalty. `None` means `sqrt(mL) κ^{p_init}` for the spectral
    /// rule and `1.0` for the linear one.
    pub rho_init: Option<f64>,
    pub strategy: RhoStrategy,
    /// Residual-ratio tube diameter shared by both ρ rules.
    pub alpha: f64,
    pub warm_start_policy: WarmStartPolicy,
    pub complementarity: Complementarity,
    pub record_trace: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            max_iter: 1000,
            eta: 1e-6,
            rho_init: None,
            strategy: RhoStrategy::default(),
            alpha: 10.0,
            warm_start_policy: WarmStartPolicy::Zero,
            complementarity: Complementarity::Ncp,
            record_trace: false,
        }
    }
}

/// Sweep cap used by the PGS baseline.
pub const PGS_DEFAULT_MAX_ITER: usize = 20_000;

impl SolverSettings {
    /// Defaults for the PGS baseline (larger sweep cap).
    pub fn pgs() -> Self {
        Self {
            max_iter: PGS_DEFAULT_MAX_ITER,
            ..Self::default()
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps_abs = eps;
        self
    }

    pub fn with_strategy(mut self, strategy: RhoStrategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_complementarity(mut self, mode: Complementarity) -> Self {
        self.complementarity = mode;
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.record_trace = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSettings(msg));
        if !(self.eps_abs > 0.0) {
            return bad(format!("eps_abs must be positive, got {}", self.eps_abs));
        }
        if !(self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.alpha > 1.0) {
            return bad(format!("alpha must exceed 1, got {}", self.alpha));
        }
        if let Some(r) = self.rho_init {
            if !(r > 0.0 && r.is_finite()) {
                return bad(format!("rho_init must be positive, got {r}"));
            }
        }
        match self.strategy {
            RhoStrategy::Linear { tau_inc, tau_dec } => {
                if !(tau_inc > 1.0 && tau_dec > 1.0) {
                    return bad(format!(
                        "linear factors must exceed 1, got tau_inc = {tau_inc}, tau_dec = {tau_dec}"
                    ));
                }
            }
            RhoStrategy::Spectral {
                p_inc,
                p_dec,
                p_init,
            } => {
                if !(p_inc > 0.0 && p_dec > 0.0) || !p_init.is_finite() {
                    return bad(format!(
                        "spectral increments must be positive, got p_inc = {p_inc}, p_dec = {p_dec}"
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIter,
    NumericalFailure { iteration: usize },
}

impl Status {
    pub fn is_converged(&self) -> bool {
        matches!(self, Status::Converged)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIter => "max_iter",
            Status::NumericalFailure { .. } => "numerical_failure",
        }
    }
}

/// One row of a convergence trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub r_prim: f64,
    pub r_dual: f64,
    pub r_comp: f64,
    pub rho: f64,
}

/// Writes `iter,r_prim,r_dual,r_comp,rho` rows with a header line.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,r_prim,r_dual,r_comp,rho")?;
    for r in rows {
        writeln!(
            out,
            "{},{:e},{:e},{:e},{:e}",
            r.iter, r.r_prim, r.r_dual, r.r_comp, r.rho
        )?;
    }
    Ok(())
}

/// Infinity norms of the three stopping residuals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub prim: f64,
    pub dual: f64,
    pub comp: f64,
}

impl ResidualNorms {
    pub fn max(&self) -> f64 {
        self.prim.max(self.dual).max(self.comp)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub lambda: DVector<f64>,
    pub sigma: DVector<f64>,
    pub status: Status,
    pub iterations: usize,
    /// Factorizations of `G + R + (η + ρ) Id` (zero for PGS).
    pub cholesky_updates: usize,
    pub final_residuals: ResidualNorms,
    pub final_rho: f64,
    pub trace: Option<Vec<TraceRow>>,
}

impl SolverResult {
    pub(crate) fn empty(rho: f64) -> Self {
        Self {
            lambda: DVector::zeros(0),
            sigma: DVector::zeros(0),
            status: Status::Converged,
            iterations: 0,
            cholesky_updates: 0,
            final_residuals: ResidualNorms::default(),
            final_rho: rho,
            trace: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_validation() {
        assert!(SolverSettings::default().validate().is_ok());
        assert!(SolverSettings::default().with_eps(0.0).validate().is_err());
        let s = SolverSettings {
            alpha: 1.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        let s = SolverSettings::default().with_strategy(RhoStrategy::linear(1.0));
        assert!(s.validate().is_err());
        let s = SolverSettings::default().with_strategy(RhoStrategy::spectral(0.0));
        assert!(s.validate().is_err());
        assert_eq!(SolverSettings::pgs().max_iter, 20_000);
    }

    #[test]
    fn partial_settings_json_uses_defaults() {
        let s: SolverSettings =
            serde_json::from_str(r#"{"strategy": {"kind": "linear", "tau_inc": 2, "tau_dec": 2}}"#)
                .unwrap();
        assert_eq!(s.strategy, RhoStrategy::linear(2.0));
        assert_eq!(s.eps_abs, 1e-6);
    }

    #[test]
    fn trace_csv_format() {
        let mut buf = Vec::new();
        let rows = [TraceRow {
            iter: 1,
            r_prim: 0.5,
            r_dual: 0.0,
            r_comp: 2.0,
            rho: 1.0,
        }];
        write_trace_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "iter,r_prim,r_dual,r_comp,rho\n1,5e-1,0e0,2e0,1e0\n");
    }
}
