//! Contact problem data model, Delassus assembly and the NCP residual
//! checker used to validate every solver.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::cones::{block, desaxce_block, FrictionCone};
use crate::error::{check_len, Error, Result};
use crate::linalg::{power_iteration, DenseCholesky, ShiftedCholesky, SymMatrix};

/// Whether the De Saxcé correction couples normal and tangential velocities.
///
/// `Ncp` is the exact Coulomb/Signorini model; `Ccp` drops the correction
/// and yields the convex cone complementarity relaxation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complementarity {
    #[default]
    Ncp,
    Ccp,
}

impl Complementarity {
    pub fn uses_desaxce(self) -> bool {
        matches!(self, Complementarity::Ncp)
    }
}

/// Frictional contact NCP: find `λ ∈ K_μ` with
/// `λ ⊥ σ + Γ(σ) ∈ K_μ*`, `σ = (G + R) λ + g`.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactProblem {
    delassus: SymMatrix,
    g: DVector<f64>,
    mu: DVector<f64>,
    r_diag: DVector<f64>,
}

impl ContactProblem {
    /// Builds a problem from a dense Delassus matrix. `G` is symmetrized
    /// by averaging with its transpose.
    pub fn new(
        delassus: DMatrix<f64>,
        g: DVector<f64>,
        mu: DVector<f64>,
        r_diag: DVector<f64>,
    ) -> Result<Self> {
        let n_c = mu.len();
        if delassus.nrows() != 3 * n_c || delassus.ncols() != 3 * n_c {
            return Err(Error::Dimension(format!(
                "Delassus matrix is {}x{}, expected {}x{} for {} contacts",
                delassus.nrows(),
                delassus.ncols(),
                3 * n_c,
                3 * n_c,
                n_c
            )));
        }
        check_symmetric(&delassus)?;
        let sym = (&delassus + delassus.transpose()) * 0.5;
        Self::from_parts(SymMatrix::from_dense(sym, n_c), g, mu, r_diag)
    }

    /// Builds a problem from `(row, col, value)` triplets of `G`.
    pub fn from_triplets(
        n_c: usize,
        triplets: &[(usize, usize, f64)],
        g: DVector<f64>,
        mu: DVector<f64>,
        r_diag: DVector<f64>,
    ) -> Result<Self> {
        check_len("mu", mu.len(), n_c)?;
        let m = SymMatrix::from_triplets(3 * n_c, triplets, n_c)?;
        match m {
            SymMatrix::Dense(d) => Self::new(d, g, mu, r_diag),
            SymMatrix::Sparse(s) => {
                let t = s.transpose();
                let scale = s.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let mut asym = 0.0f64;
                for (i, j, v) in s.triplet_iter() {
                    let vt = t.get_entry(i, j).map(|e| e.into_value()).unwrap_or(0.0);
                    asym = asym.max((v - vt).abs());
                }
                if asym > SYMMETRY_REL_TOL * scale.max(1.0) {
                    return Err(Error::InvalidProblem(format!(
                        "Delassus matrix is not symmetric (max asymmetry {asym:e})"
                    )));
                }
                let halves: Vec<_> = s
                    .triplet_iter()
                    .chain(t.triplet_iter())
                    .map(|(i, j, v)| (i, j, 0.5 * v))
                    .collect();
                let sym = SymMatrix::from_triplets(3 * n_c, &halves, n_c)?;
                Self::from_parts(sym, g, mu, r_diag)
            }
        }
    }

    fn from_parts(
        delassus: SymMatrix,
        g: DVector<f64>,
        mu: DVector<f64>,
        r_diag: DVector<f64>,
    ) -> Result<Self> {
        let n_c = mu.len();
        check_len("g", g.len(), 3 * n_c)?;
        check_len("R_diag", r_diag.len(), 3 * n_c)?;
        if let Some(bad) = mu.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidProblem(format!(
                "friction coefficients must be positive and finite, got {bad}"
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("g has non-finite entries".into()));
        }
        for i in 0..n_c {
            let (rt1, rt2, rn) = (r_diag[3 * i], r_diag[3 * i + 1], r_diag[3 * i + 2]);
            if [rt1, rt2, rn].iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
                return Err(Error::InvalidProblem(format!(
                    "compliance of contact {i} must be finite and nonnegative"
                )));
            }
            if rt1 != rt2 {
                return Err(Error::InvalidProblem(format!(
                    "compliance of contact {i} is not tangentially isotropic ({rt1} vs {rt2})"
                )));
            }
        }
        let diag = delassus.diagonal();
        if let Some((i, d)) = diag.iter().enumerate().find(|(_, d)| !(**d >= 0.0)) {
            return Err(Error::InvalidProblem(format!(
                "Delassus diagonal entry {i} is {d}, expected nonnegative"
            )));
        }
        Ok(Self {
            delassus,
            g,
            mu,
            r_diag,
        })
    }

    /// The empty problem (no contacts).
    pub fn empty() -> Self {
        Self {
            delassus: SymMatrix::Dense(DMatrix::zeros(0, 0)),
            g: DVector::zeros(0),
            mu: DVector::zeros(0),
            r_diag: DVector::zeros(0),
        }
    }

    pub fn n_contacts(&self) -> usize {
        self.mu.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.mu.len()
    }

    pub fn delassus(&self) -> &SymMatrix {
        &self.delassus
    }

    pub fn g(&self) -> &DVector<f64> {
        &self.g
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn r_diag(&self) -> &DVector<f64> {
        &self.r_diag
    }

    /// `(G + R) x`.
    pub fn apply_w(&self, x: &DVector<f64>) -> DVector<f64> {
        self.delassus.mul_vec(x) + self.r_diag.component_mul(x)
    }

    /// Contact velocities `σ = (G + R) λ + g`.
    pub fn velocity(&self, lambda: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("lambda", lambda.len(), self.dim())?;
        Ok(self.apply_w(lambda) + &self.g)
    }

    /// Same problem with a different free velocity.
    pub fn with_g(&self, g: DVector<f64>) -> Result<Self> {
        check_len("g", g.len(), self.dim())?;
        Ok(Self { g, ..self.clone() })
    }
}

const SYMMETRY_REL_TOL: f64 = 1e-8;

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > SYMMETRY_REL_TOL * scale {
        return Err(Error::InvalidProblem(format!(
            "Delassus matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

/// `G = J M⁻¹ Jᵀ`, computed from one Cholesky factorization of `M` and a
/// triangular solve against `Jᵀ`.
pub fn assemble_delassus(mass: &DMatrix<f64>, jacobian: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if mass.nrows() != mass.ncols() {
        return Err(Error::Dimension(format!(
            "mass matrix is {}x{}, expected square",
            mass.nrows(),
            mass.ncols()
        )));
    }
    if jacobian.ncols() != mass.nrows() {
        return Err(Error::Dimension(format!(
            "Jacobian has {} columns, mass matrix is {}x{}",
            jacobian.ncols(),
            mass.nrows(),
            mass.nrows()
        )));
    }
    if !jacobian.nrows().is_multiple_of(3) {
        return Err(Error::Dimension(format!(
            "Jacobian has {} rows, expected a multiple of 3",
            jacobian.nrows()
        )));
    }
    let chol = DenseCholesky::factor(mass)?;
    // L⁻¹ Jᵀ, then G = (L⁻¹Jᵀ)ᵀ (L⁻¹Jᵀ).
    let mut half = jacobian.transpose();
    chol.l().solve_lower_triangular_mut(&mut half);
    let g = half.transpose() * &half;
    Ok((&g + g.transpose()) * 0.5)
}

/// Per-contact violations of the contact NCP for a candidate impulse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `|λ_N σ_N|`.
    pub signorini_comp: Vec<f64>,
    /// Distance of `λ` to the friction cone.
    pub primal_cone_violation: Vec<f64>,
    /// Distance of `σ + Γ(σ)` to the dual cone.
    pub dual_cone_violation: Vec<f64>,
    /// `|λᵀ(σ + Γ(σ))|`.
    pub ncp_comp: Vec<f64>,
    pub max_violation: f64,
}

impl ResidualReport {
    /// Evaluates the violations for given impulses and velocities. The De
    /// Saxcé term is applied only in `Ncp` mode, and in `Ccp` mode the
    /// Signorini product is reported but left out of `max_violation`, since
    /// the relaxation does not enforce it.
    pub fn evaluate(
        lambda: &DVector<f64>,
        sigma: &DVector<f64>,
        mu: &DVector<f64>,
        mode: Complementarity,
    ) -> Self {
        let n_c = mu.len();
        let mut report = Self {
            signorini_comp: Vec::with_capacity(n_c),
            primal_cone_violation: Vec::with_capacity(n_c),
            dual_cone_violation: Vec::with_capacity(n_c),
            ncp_comp: Vec::with_capacity(n_c),
            max_violation: 0.0,
        };
        for i in 0..n_c {
            let l = block(lambda, i);
            let s = block(sigma, i);
            let w = if mode.uses_desaxce() {
                s + desaxce_block(&s, mu[i])
            } else {
                s
            };
            let cone = FrictionCone { mu: mu[i] };
            report.signorini_comp.push((l[2] * s[2]).abs());
            report.primal_cone_violation.push(cone.distance(&l));
            report.dual_cone_violation.push(cone.dual().distance(&w));
            report.ncp_comp.push(l.dot(&w).abs());
        }
        let signorini: &[f64] = if mode.uses_desaxce() {
            &report.signorini_comp
        } else {
            &[]
        };
        report.max_violation = signorini
            .iter()
            .chain(&report.primal_cone_violation)
            .chain(&report.dual_cone_violation)
            .chain(&report.ncp_comp)
            .fold(0.0f64, |a, v| a.max(*v));
        report
    }
}

/// Residuals of the contact NCP at `lambda`.
pub fn check_ncp(problem: &ContactProblem, lambda: &DVector<f64>) -> Result<ResidualReport> {
    check_complementarity(problem, lambda, Complementarity::Ncp)
}

/// Residuals of either the NCP or its convex (`Γ ≡ 0`) relaxation.
pub fn check_complementarity(
    problem: &ContactProblem,
    lambda: &DVector<f64>,
    mode: Complementarity,
) -> Result<ResidualReport> {
    let sigma = problem.velocity(lambda)?;
    Ok(ResidualReport::evaluate(lambda, &sigma, problem.mu(), mode))
}

/// Extreme eigenvalue estimates of `G + R + (η + ρ) Id`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionEstimate {
    /// Lower eigenvalue estimate (`≥ η + ρ`).
    pub m: f64,
    /// Upper eigenvalue estimate.
    pub l: f64,
    pub converged: bool,
}

impl ConditionEstimate {
    pub fn kappa(&self) -> f64 {
        self.l / self.m
    }
}

/// Extreme eigenvalues of `G + R`, both by power iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub min: f64,
    pub max: f64,
    pub converged: bool,
}

pub const POWER_ITER_CAP: usize = 500;
const POWER_ITER_TOL: f64 = 1e-10;

/// Extreme eigenvalues of `G + R + shift·Id`.
///
/// `λ_max` comes from power iteration. `λ_min` comes from inverse
/// iteration with a Cholesky factor of the shifted matrix, which converges
/// in a few steps when `G` is rank deficient (the usual hyperstatic case)
/// where power iteration on `λ̂_max Id − (G + R)` would crawl. `shift` must be
/// positive.
pub fn shifted_spectrum(problem: &ContactProblem, shift: f64) -> Spectrum {
    let n = problem.dim();
    if n == 0 {
        return Spectrum {
            min: shift,
            max: shift,
            converged: true,
        };
    }
    let top = power_iteration(n, |v| problem.apply_w(v), POWER_ITER_CAP, POWER_ITER_TOL);
    let l = top.value.max(0.0) + shift;
    let diag = DVector::from_element(n, shift) + problem.r_diag();
    let bottom = ShiftedCholesky::factor(problem.delassus(), &diag).map(|chol| {
        power_iteration(n, |v| chol.solve(v), POWER_ITER_CAP, POWER_ITER_TOL)
    });
    match bottom {
        Ok(inv) if inv.value > 0.0 => Spectrum {
            min: (1.0 / inv.value).clamp(shift, l),
            max: l,
            converged: top.converged && inv.converged,
        },
        _ => {
            let shifted = power_iteration(n, |v| v * l - problem.apply_w(v), POWER_ITER_CAP, POWER_ITER_TOL);
            Spectrum {
                min: (l - shifted.value).clamp(shift, l),
                max: l,
                converged: false,
            }
        }
    }
}

/// Extreme eigenvalues of `G + R`, clamped to `[0, λ_max]`.
pub fn spectrum(problem: &ContactProblem) -> Spectrum {
    let scale = power_iteration(problem.dim(), |v| problem.apply_w(v), POWER_ITER_CAP, POWER_ITER_TOL)
        .value
        .max(1.0);
    let delta = 1e-10 * scale;
    let s = shifted_spectrum(problem, delta);
    Spectrum {
        min: (s.min - delta).max(0.0),
        max: (s.max - delta).max(0.0),
        converged: s.converged,
    }
}

/// `(m, L)` for `G + R + (η + ρ) Id`; the shift is added exactly.
pub fn condition_estimate(problem: &ContactProblem, eta: f64, rho: f64) -> Result<ConditionEstimate> {
    if !(eta > 0.0) || !(rho > 0.0) {
        return Err(Error::Contract(format!(
            "condition estimate needs eta > 0 and rho > 0, got eta = {eta}, rho = {rho}"
        )));
    }
    let s = shifted_spectrum(problem, eta + rho);
    Ok(ConditionEstimate {
        m: s.min,
        l: s.max,
        converged: s.converged,
    })
}

/// Serialized Delassus matrix: dense row-major or sparse triplets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixData {
    Dense(Vec<f64>),
    Sparse(Vec<(usize, usize, f64)>),
}

/// On-disk problem format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub n_c: usize,
    #[serde(rename = "G")]
    pub g_matrix: MatrixData,
    pub g: Vec<f64>,
    pub mu: Vec<f64>,
    #[serde(rename = "R_diag")]
    pub r_diag: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<Vec<f64>>,
}

impl ProblemFile {
    pub fn from_problem(problem: &ContactProblem, warm_start: Option<&DVector<f64>>) -> Self {
        let g_matrix = match problem.delassus() {
            SymMatrix::Dense(m) => MatrixData::Dense(m.transpose().as_slice().to_vec()),
            s @ SymMatrix::Sparse(_) => MatrixData::Sparse(s.triplets()),
        };
        Self {
            n_c: problem.n_contacts(),
            g_matrix,
            g: problem.g().as_slice().to_vec(),
            mu: problem.mu().as_slice().to_vec(),
            r_diag: problem.r_diag().as_slice().to_vec(),
            warm_start: warm_start.map(|w| w.as_slice().to_vec()),
        }
    }

    pub fn to_problem(&self) -> Result<ContactProblem> {
        let n = 3 * self.n_c;
        let g = DVector::from_vec(self.g.clone());
        let mu = DVector::from_vec(self.mu.clone());
        let r = DVector::from_vec(self.r_diag.clone());
        check_len("mu", mu.len(), self.n_c)?;
        match &self.g_matrix {
            MatrixData::Dense(v) => {
                check_len("dense G", v.len(), n * n)?;
                ContactProblem::new(DMatrix::from_row_slice(n, n, v), g, mu, r)
            }
            MatrixData::Sparse(t) => ContactProblem::from_triplets(self.n_c, t, g, mu, r),
        }
    }

    pub fn warm_start(&self) -> Result<Option<DVector<f64>>> {
        match &self.warm_start {
            None => Ok(None),
            Some(w) => {
                check_len("warm_start", w.len(), 3 * self.n_c)?;
                Ok(Some(DVector::from_vec(w.clone())))
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Serializes with shortest round-trip float formatting (at most 17
    /// significant digits).
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Single-contact helper used by examples and tests.
pub fn single_contact(
    delassus: nalgebra::Matrix3<f64>,
    g: Vector3<f64>,
    mu: f64,
    r: Vector3<f64>,
) -> Result<ContactProblem> {
    ContactProblem::new(
        DMatrix::from_iterator(3, 3, delassus.iter().copied()),
        DVector::from_column_slice(g.as_slice()),
        DVector::from_element(1, mu),
        DVector::from_column_slice(r.as_slice()),
    )
}
