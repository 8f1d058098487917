//! Proximal ADMM for the frictional contact NCP.
//!
//! Each iteration refreshes the De Saxcé estimate `s = Γ(z)`, solves the
//! proximal force update against a cached Cholesky factorization of
//! `G + R + (η + ρ) Id`, projects onto the friction cones, and updates the
//! multiplier. The penalty `ρ` is adapted after the stopping check and
//! the factorization is rebuilt only when `ρ` actually changes.

use nalgebra::DVector;

use crate::cones::{desaxce_unchecked, project_soc};
use crate::error::{check_len, Error, Result};
use crate::linalg::ShiftedCholesky;
use crate::problem::{shifted_spectrum, ContactProblem};
use crate::solver::{
    ResidualNorms, RhoStrategy, SolverResult, SolverSettings, Status, TraceRow, WarmStartPolicy,
};

/// The spectral exponent is kept in `[-P_BOUND, P_BOUND]`.
pub const P_BOUND: f64 = 2.0;

/// Relative change below which a new ρ does not trigger refactorization.
const RHO_CHANGE_TOL: f64 = 1e-15;

/// Cholesky factorization of `G + R + (η + ρ) Id`.
#[derive(Debug)]
pub struct ShiftedFactorization {
    chol: ShiftedCholesky,
    rho: f64,
}

impl ShiftedFactorization {
    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(rhs)
    }
}

pub fn factorize_shifted(problem: &ContactProblem, eta: f64, rho: f64) -> Result<ShiftedFactorization> {
    if !(eta + rho > 0.0) {
        return Err(Error::Contract(format!(
            "shift eta + rho must be positive, got {}",
            eta + rho
        )));
    }
    let shift = problem.r_diag().add_scalar(eta + rho);
    let chol = ShiftedCholesky::factor(problem.delassus(), &shift)?;
    Ok(ShiftedFactorization { chol, rho })
}

/// Primal, dual and complementarity residual vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub prim: DVector<f64>,
    pub dual: DVector<f64>,
    /// One entry per contact.
    pub comp: DVector<f64>,
}

impl Residuals {
    pub fn norms(&self) -> ResidualNorms {
        ResidualNorms {
            prim: self.prim.amax(),
            dual: self.dual.amax(),
            comp: self.comp.amax(),
        }
    }
}

/// `r_prim = f − y`, `r_dual = η(f − f⁻) + ρ(y − y⁻)`,
/// `r_comp_i = |f_iᵀ z_i|`.
pub fn residuals(
    f: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    prev_f: &DVector<f64>,
    prev_y: &DVector<f64>,
    rho: f64,
    eta: f64,
) -> Residuals {
    let prim = f - y;
    let dual = (f - prev_f) * eta + (y - prev_y) * rho;
    let n_c = f.len() / 3;
    let comp = DVector::from_fn(n_c, |i, _| {
        (f[3 * i] * z[3 * i] + f[3 * i + 1] * z[3 * i + 1] + f[3 * i + 2] * z[3 * i + 2]).abs()
    });
    Residuals { prim, dual, comp }
}

/// Which side of the residual tube the iterate is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tube {
    PrimalHigh,
    DualHigh,
    Inside,
}

fn tube(prim: f64, dual: f64, alpha: f64) -> Tube {
    let up = prim >= alpha * dual;
    let down = dual >= alpha * prim;
    match (up, down) {
        (true, false) => Tube::PrimalHigh,
        (false, true) => Tube::DualHigh,
        // Both hold only when both norms vanish.
        _ => Tube::Inside,
    }
}

/// Linear rule: scale ρ up by `tau_inc` or down by `tau_dec` when the
/// residual ratio leaves the tube of diameter `alpha`.
pub fn update_rho_linear(
    r_prim_norm: f64,
    r_dual_norm: f64,
    rho: f64,
    tau_inc: f64,
    tau_dec: f64,
    alpha: f64,
) -> (f64, bool) {
    match tube(r_prim_norm, r_dual_norm, alpha) {
        Tube::PrimalHigh => (tau_inc * rho, true),
        Tube::DualHigh => (rho / tau_dec, true),
        Tube::Inside => (rho, false),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralUpdate {
    pub rho: f64,
    pub p: f64,
    pub changed: bool,
}

/// `ρ = sqrt(mL) κ^p` for the given exponent.
pub fn spectral_rho(m: f64, l: f64, p: f64) -> f64 {
    (m * l).sqrt() * (l / m).powf(p)
}

/// Spectral rule: step the exponent `p` by `p_inc`/`p_dec` on the same tube
/// test as the linear rule, then set `ρ = sqrt(mL) (L/m)^p`.
#[allow(clippy::too_many_arguments)]
pub fn update_rho_spectral(
    r_prim_norm: f64,
    r_dual_norm: f64,
    p: f64,
    m: f64,
    l: f64,
    p_inc: f64,
    p_dec: f64,
    alpha: f64,
) -> SpectralUpdate {
    let (p_new, changed) = match tube(r_prim_norm, r_dual_norm, alpha) {
        Tube::PrimalHigh => (p + p_inc, true),
        Tube::DualHigh => (p - p_dec, true),
        Tube::Inside => (p, false),
    };
    let p_new = p_new.clamp(-P_BOUND, P_BOUND);
    SpectralUpdate {
        rho: spectral_rho(m, l, p_new),
        p: p_new,
        changed,
    }
}

/// Mutable ADMM iterate; owns the factorization for the current ρ.
pub(crate) struct AdmmState<'a> {
    problem: &'a ContactProblem,
    settings: &'a SolverSettings,
    pub(crate) f: DVector<f64>,
    pub(crate) y: DVector<f64>,
    pub(crate) z: DVector<f64>,
    pub(crate) s: DVector<f64>,
    pub(crate) rho: f64,
    p: f64,
    /// `(m, L)` of `G + R + η Id`, only for the spectral rule.
    bounds: Option<(f64, f64)>,
    factorization: ShiftedFactorization,
    pub(crate) cholesky_updates: usize,
}

/// Outcome of a single iteration.
pub(crate) struct StepOutcome {
    pub(crate) norms: ResidualNorms,
    pub(crate) finite: bool,
}

impl<'a> AdmmState<'a> {
    pub(crate) fn new(
        problem: &'a ContactProblem,
        settings: &'a SolverSettings,
        warm: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let n = problem.dim();
        let bounds = if settings.strategy.is_spectral() {
            let sp = shifted_spectrum(problem, settings.eta);
            Some((sp.min, sp.max))
        } else {
            None
        };
        let p = match settings.strategy {
            RhoStrategy::Spectral { p_init, .. } => p_init.clamp(-P_BOUND, P_BOUND),
            RhoStrategy::Linear { .. } => 0.0,
        };
        let rho = match (settings.rho_init, bounds) {
            (Some(r), _) => r,
            (None, Some((m, l))) => spectral_rho(m, l, p),
            (None, None) => 1.0,
        };
        let (f, y, z) = match (settings.warm_start_policy, warm) {
            (WarmStartPolicy::Provided, Some(w)) => {
                check_len("warm start", w.len(), n)?;
                if w.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidProblem("warm start has non-finite entries".into()));
                }
                // Seed the multiplier with the velocity the warm impulse implies.
                let sigma = problem.apply_w(w) + problem.g();
                let z = if settings.complementarity.uses_desaxce() {
                    &sigma + desaxce_unchecked(&sigma, problem.mu())
                } else {
                    sigma
                };
                (w.clone(), w.clone(), z)
            }
            _ => (DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)),
        };
        let factorization = factorize_shifted(problem, settings.eta, rho)?;
        Ok(Self {
            problem,
            settings,
            f,
            y,
            z,
            s: DVector::zeros(n),
            rho,
            p,
            bounds,
            factorization,
            cholesky_updates: 1,
        })
    }

    /// s-update, f-update, y-update, z-update and residual evaluation.
    pub(crate) fn step(&mut self) -> StepOutcome {
        let problem = self.problem;
        let eta = self.settings.eta;
        let rho = self.rho;
        let mu = problem.mu();

        if self.settings.complementarity.uses_desaxce() {
            self.s = desaxce_unchecked(&self.z, mu);
        }

        let rhs = problem.g() + &self.s - &self.f * eta - &self.y * rho - &self.z;
        let f_new = -self.factorization.solve(&rhs);

        let mut y_new = DVector::zeros(f_new.len());
        for i in 0..mu.len() {
            let x = nalgebra::Vector3::new(
                f_new[3 * i] - self.z[3 * i] / rho,
                f_new[3 * i + 1] - self.z[3 * i + 1] / rho,
                f_new[3 * i + 2] - self.z[3 * i + 2] / rho,
            );
            let p = project_soc(&x, mu[i]);
            y_new[3 * i] = p[0];
            y_new[3 * i + 1] = p[1];
            y_new[3 * i + 2] = p[2];
        }
        let z_new = &self.z - (&f_new - &y_new) * rho;

        let res = residuals(&f_new, &y_new, &z_new, &self.f, &self.y, rho, eta);
        let finite = f_new.iter().chain(y_new.iter()).chain(z_new.iter()).all(|v| v.is_finite());
        self.f = f_new;
        self.y = y_new;
        self.z = z_new;
        StepOutcome {
            norms: res.norms(),
            finite,
        }
    }

    /// Applies the ρ rule; refactorizes when ρ changed.
    pub(crate) fn adapt_rho(&mut self, norms: &ResidualNorms) -> Result<()> {
        let settings = self.settings;
        let (rho_new, changed) = match (settings.strategy, self.bounds) {
            (RhoStrategy::Linear { tau_inc, tau_dec }, _) => {
                update_rho_linear(norms.prim, norms.dual, self.rho, tau_inc, tau_dec, settings.alpha)
            }
            (RhoStrategy::Spectral { p_inc, p_dec, .. }, Some((m, l))) => {
                let u = update_rho_spectral(
                    norms.prim,
                    norms.dual,
                    self.p,
                    m,
                    l,
                    p_inc,
                    p_dec,
                    settings.alpha,
                );
                self.p = u.p;
                (u.rho, u.changed)
            }
            (RhoStrategy::Spectral { .. }, None) => unreachable!("spectral bounds computed at setup"),
        };
        if changed && (rho_new - self.rho).abs() > RHO_CHANGE_TOL * self.rho {
            self.factorization = factorize_shifted(self.problem, settings.eta, rho_new)?;
            self.rho = rho_new;
            self.cholesky_updates += 1;
        }
        Ok(())
    }

    /// `σ = z − Γ(z)` (or `z` in CCP mode).
    pub(crate) fn sigma(&self) -> DVector<f64> {
        if self.settings.complementarity.uses_desaxce() {
            &self.z - desaxce_unchecked(&self.z, self.problem.mu())
        } else {
            self.z.clone()
        }
    }
}

/// Solves the contact problem with proximal ADMM.
///
/// `warm` is used only under [`WarmStartPolicy::Provided`]; the multiplier
/// is then seeded with `σ + Γ(σ)` of the warm impulse.
pub fn solve(
    problem: &ContactProblem,
    settings: &SolverSettings,
    warm: Option<&DVector<f64>>,
) -> Result<SolverResult> {
    settings.validate()?;
    if problem.n_contacts() == 0 {
        return Ok(SolverResult::empty(settings.rho_init.unwrap_or(1.0)));
    }
    let mut state = match AdmmState::new(problem, settings, warm) {
        Ok(s) => s,
        Err(Error::Factorization { .. }) => return Ok(failure(problem, 0, 0)),
        Err(e) => return Err(e),
    };
    let mut trace = settings.record_trace.then(Vec::new);
    let mut status = Status::MaxIter;
    let mut iterations = 0;
    let mut norms = ResidualNorms::default();

    for k in 1..=settings.max_iter {
        iterations = k;
        let out = state.step();
        norms = out.norms;
        if !out.finite || !norms.max().is_finite() {
            status = Status::NumericalFailure { iteration: k };
            break;
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                iter: k,
                r_prim: norms.prim,
                r_dual: norms.dual,
                r_comp: norms.comp,
                rho: state.rho,
            });
        }
        if norms.prim <= settings.eps_abs
            && norms.dual <= settings.eps_abs
            && norms.comp <= settings.eps_abs
        {
            status = Status::Converged;
            break;
        }
        if k == settings.max_iter {
            break;
        }
        match state.adapt_rho(&norms) {
            Ok(()) => {}
            Err(Error::Factorization { .. }) => {
                status = Status::NumericalFailure { iteration: k };
                break;
            }
            Err(e) => return Err(e),
        }
    }

    Ok(SolverResult {
        sigma: state.sigma(),
        lambda: state.y.clone(),
        status,
        iterations,
        cholesky_updates: state.cholesky_updates,
        final_residuals: norms,
        final_rho: state.rho,
        trace,
    })
}

fn failure(problem: &ContactProblem, iteration: usize, updates: usize) -> SolverResult {
    let n = problem.dim();
    SolverResult {
        lambda: DVector::from_element(n, f64::NAN),
        sigma: DVector::from_element(n, f64::NAN),
        status: Status::NumericalFailure { iteration },
        iterations: iteration,
        cholesky_updates: updates,
        final_residuals: ResidualNorms {
            prim: f64::NAN,
            dual: f64::NAN,
            comp: f64::NAN,
        },
        final_rho: f64::NAN,
        trace: None,
    }
}
