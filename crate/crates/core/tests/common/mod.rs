//! Independent oracles and scene builders shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use proxncp::cones::project_soc;
use proxncp::problem::{single_contact, ContactProblem};
use proxncp::sim::{Body, Scene};

/// All solutions of the rigid single-contact NCP with `G ≻ 0`, found by
/// case enumeration: take-off, sticking, then sliding directions scanned
/// on a fine angle grid and refined by bisection.
pub fn single_contact_solutions(g_mat: &Matrix3<f64>, g: &Vector3<f64>, mu: f64) -> Vec<Vector3<f64>> {
    let mut out = Vec::new();

    // Take-off: λ = 0 and σ = g must satisfy g + Γ(g) ∈ K*, i.e. g_N ≥ 0.
    if g.z >= 0.0 {
        out.push(Vector3::zeros());
    }

    // Sticking: σ = 0.
    if let Some(inv) = g_mat.try_inverse() {
        let l = -inv * g;
        if l.z > 0.0 && l.x.hypot(l.y) <= mu * l.z * (1.0 + 1e-12) {
            out.push(l);
        }
    }

    // Sliding along d = (cos θ, sin θ): λ = λ_N (−μ d, 1), σ_N = 0 and
    // σ_T = s d with s > 0.
    let slide = |theta: f64| -> Option<(f64, Vector3<f64>, Vector3<f64>)> {
        let (s, c) = theta.sin_cos();
        let u = Vector3::new(-mu * c, -mu * s, 1.0);
        let gu = g_mat * u;
        if gu.z <= 0.0 {
            return None;
        }
        let ln = -g.z / gu.z;
        let lambda = u * ln;
        let sigma = gu * ln + g;
        Some((sigma.x * s - sigma.y * c, lambda, sigma))
    };
    let n = 20_000;
    let step = std::f64::consts::TAU / n as f64;
    for k in 0..n {
        let (a, b) = (k as f64 * step, (k + 1) as f64 * step);
        let (Some((fa, ..)), Some((fb, ..))) = (slide(a), slide(b)) else {
            continue;
        };
        if fa == 0.0 || fa.signum() != fb.signum() {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                let Some((fm, ..)) = slide(mid) else { break };
                if fm.signum() == flo.signum() && fm != 0.0 {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            let theta = 0.5 * (lo + hi);
            if let Some((_, lambda, sigma)) = slide(theta) {
                let (s, c) = theta.sin_cos();
                let along = sigma.x * c + sigma.y * s;
                if lambda.z > 0.0 && along > 1e-12 {
                    out.push(lambda);
                }
            }
        }
    }
    out
}

/// Closest oracle solution to `lambda`, with its distance.
pub fn nearest(solutions: &[Vector3<f64>], lambda: &Vector3<f64>) -> Option<(Vector3<f64>, f64)> {
    solutions
        .iter()
        .map(|s| (*s, (s - lambda).amax()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

/// Random single-contact problem with `G = Q diag(U[1, 2]) Qᵀ`,
/// `g ∈ U[−1, 1]³` and `μ ∈ U[0.1, 1]`.
pub fn random_single_contact(rng: &mut ChaCha8Rng) -> (Matrix3<f64>, Vector3<f64>, f64) {
    let a = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = Matrix3::from_diagonal(&Vector3::from_fn(|_, _| rng.random_range(1.0..2.0)));
    let g_mat = q * d * q.transpose();
    let g_mat = (g_mat + g_mat.transpose()) * 0.5;
    let g = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let mu = rng.random_range(0.1..1.0);
    (g_mat, g, mu)
}

pub fn to_problem(g_mat: &Matrix3<f64>, g: &Vector3<f64>, mu: f64) -> ContactProblem {
    single_contact(*g_mat, *g, mu, Vector3::zeros()).unwrap()
}

/// Projection onto `K_μ` in the metric `D = diag(d)` by projected gradient
/// on `½‖λ − x‖²_D` with Euclidean projections.
pub fn projected_gradient_diag(x: &Vector3<f64>, d: &Vector3<f64>, mu: f64) -> Vector3<f64> {
    let step = 1.0 / d.max();
    let mut l = project_soc(x, mu);
    for _ in 0..2_000_000 {
        let grad = d.component_mul(&(l - x));
        let next = project_soc(&(l - grad * step), mu);
        let change = (next - l).amax();
        l = next;
        if change <= 1e-17 * (1.0 + x.amax()) {
            break;
        }
    }
    l
}

/// Dense `J M⁻¹ Jᵀ`.
pub fn dense_delassus(mass: &DMatrix<f64>, jacobian: &DMatrix<f64>) -> DMatrix<f64> {
    jacobian * mass.clone().try_inverse().unwrap() * jacobian.transpose()
}

pub fn unit_box(mass: f64, z: f64) -> Body {
    Body::cuboid(mass, Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.0, 0.0, z))
}

/// Unit box on the ground with an initial horizontal speed.
pub fn sliding_block(mu: f64, v0: f64, margin: f64) -> Scene {
    Scene::new(vec![unit_box(1.0, 0.5).with_velocity(Vector3::new(v0, 0.0, 0.0))])
        .with_mu(mu)
        .with_margin(margin)
}

pub fn resting_box(mass: f64) -> Scene {
    Scene::new(vec![unit_box(mass, 0.5)])
}

pub fn max_normal(sigma: &DVector<f64>) -> f64 {
    (0..sigma.len() / 3).map(|k| sigma[3 * k + 2].abs()).fold(0.0, f64::max)
}
