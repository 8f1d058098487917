//! Second-order friction cone geometry.
//!
//! Every 3-vector is laid out as `[T1, T2, N]`: two tangential components
//! followed by the normal one. Stacked vectors concatenate contact blocks.

use nalgebra::{DVector, Vector3};

use crate::error::{check_len, Error, Result};

/// Default absolute tolerance for membership tests.
pub const DEFAULT_MEMBERSHIP_TOL: f64 = 1e-10;

/// Coulomb cone `{x : ‖x_T‖ ≤ μ x_N}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionCone {
    pub mu: f64,
}

impl FrictionCone {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(Self { mu })
        } else {
            Err(Error::InvalidProblem(format!(
                "friction coefficient must be positive and finite, got {mu}"
            )))
        }
    }

    /// The dual cone, which is the friction cone with coefficient `1/μ`.
    pub fn dual(&self) -> Self {
        Self { mu: 1.0 / self.mu }
    }

    pub fn contains(&self, x: &Vector3<f64>, tol: f64) -> bool {
        tangential_norm(x) <= self.mu * x[2] + tol
    }

    pub fn project(&self, x: &Vector3<f64>) -> Vector3<f64> {
        project_soc(x, self.mu)
    }

    /// Euclidean distance from `x` to the cone.
    pub fn distance(&self, x: &Vector3<f64>) -> f64 {
        (x - self.project(x)).norm()
    }
}

#[inline]
pub fn tangential_norm(x: &Vector3<f64>) -> f64 {
    x[0].hypot(x[1])
}

/// Euclidean projection onto the friction cone of coefficient `mu`.
pub fn project_soc(x: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    let t = tangential_norm(x);
    let n = x[2];
    if t <= mu * n {
        return *x;
    }
    // Polar cone, including the t = 0, n < 0 case.
    if mu * t <= -n {
        return Vector3::zeros();
    }
    let lambda_n = (mu * t + n) / (mu * mu + 1.0);
    let scale = mu * lambda_n / t;
    Vector3::new(scale * x[0], scale * x[1], lambda_n)
}

/// Blockwise projection onto the product of friction cones.
pub fn project_cone_product(x: &DVector<f64>, mu: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("stacked vector", x.len(), 3 * mu.len())?;
    let mut out = DVector::zeros(x.len());
    for (i, &m) in mu.iter().enumerate() {
        let p = project_soc(&block(x, i), m);
        set_block(&mut out, i, &p);
    }
    Ok(out)
}

/// Projection onto the friction cone in the norm `‖v‖_D = sqrt(vᵀ D v)`
/// for a positive diagonal `D = (d_T, d_T, d_N)`.
///
/// Uses `P^D(x) = D^{-1/2} P(D^{1/2} x)` on the cone with coefficient
/// `sqrt(d_T / d_N) μ`, which requires equal tangential weights.
pub fn project_soc_diag_metric(
    x: &Vector3<f64>,
    d: &Vector3<f64>,
    mu: f64,
) -> Result<Vector3<f64>> {
    if !(d[0] > 0.0 && d[1] > 0.0 && d[2] > 0.0) {
        return Err(Error::Contract(format!(
            "metric diagonal must be positive, got ({}, {}, {})",
            d[0], d[1], d[2]
        )));
    }
    if d[0] != d[1] {
        return Err(Error::Contract(format!(
            "metric must be tangentially isotropic, got d_T1 = {} and d_T2 = {}",
            d[0], d[1]
        )));
    }
    let sqrt_t = d[0].sqrt();
    let sqrt_n = d[2].sqrt();
    let mu_scaled = (d[0] / d[2]).sqrt() * mu;
    let scaled = Vector3::new(sqrt_t * x[0], sqrt_t * x[1], sqrt_n * x[2]);
    let p = project_soc(&scaled, mu_scaled);
    Ok(Vector3::new(p[0] / sqrt_t, p[1] / sqrt_t, p[2] / sqrt_n))
}

/// De Saxcé correction of one contact velocity: `(0, 0, μ‖σ_T‖)`.
#[inline]
pub fn desaxce_block(sigma: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    Vector3::new(0.0, 0.0, mu * tangential_norm(sigma))
}

/// Stacked De Saxcé correction.
pub fn desaxce(sigma: &DVector<f64>, mu: &DVector<f64>) -> Result<DVector<f64>> {
    check_len("stacked velocity", sigma.len(), 3 * mu.len())?;
    Ok(desaxce_unchecked(sigma, mu))
}

pub(crate) fn desaxce_unchecked(sigma: &DVector<f64>, mu: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(sigma.len());
    for (i, &m) in mu.iter().enumerate() {
        out[3 * i + 2] = m * sigma[3 * i].hypot(sigma[3 * i + 1]);
    }
    out
}

/// `‖x_T‖ ≤ x_N / μ + tol`: membership in the dual cone `K_{1/μ}`.
pub fn dual_cone_contains(x: &Vector3<f64>, mu: f64, tol: f64) -> bool {
    tangential_norm(x) <= x[2] / mu + tol
}

#[inline]
pub fn block(x: &DVector<f64>, i: usize) -> Vector3<f64> {
    Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
}

#[inline]
pub fn set_block(x: &mut DVector<f64>, i: usize, v: &Vector3<f64>) {
    x[3 * i] = v[0];
    x[3 * i + 1] = v[1];
    x[3 * i + 2] = v[2];
}
