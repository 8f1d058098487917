//! Translational rigid-body scenes stepped with symplectic Euler.
//!
//! Bodies carry no rotational state, so the mass matrix is diagonal and the
//! contact Jacobian is made of constant frames. Supported contacts are
//! point/sphere/box against the ground plane `z = 0` and axis-aligned box
//! on box.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::admm;
use crate::cones::{block, set_block};
use crate::error::{check_len, Error, Result};
use crate::pgs::solve_pgs;
use crate::problem::ContactProblem;
use crate::solver::{SolverResult, SolverSettings, Status, WarmStartPolicy};

pub const DEFAULT_MARGIN: f64 = 1e-4;
pub const DEFAULT_BAUMGARTE: f64 = 0.2;
pub const DEFAULT_DT: f64 = 1e-3;
pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Shape {
    #[default]
    Point,
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: Vector3<f64>,
    },
}

impl Shape {
    /// Distance from the center to the lowest point.
    fn bottom_offset(&self) -> f64 {
        match self {
            Shape::Point => 0.0,
            Shape::Sphere { radius } => *radius,
            Shape::Box { half_extents } => half_extents.z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Body {
    pub mass: f64,
    pub position: Vector3<f64>,
    #[serde(default = "Vector3::zeros")]
    pub velocity: Vector3<f64>,
    #[serde(default)]
    pub shape: Shape,
    /// Constant applied force, added to any force passed to [`step`].
    #[serde(default = "Vector3::zeros")]
    pub external_force: Vector3<f64>,
}

impl Body {
    pub fn point(mass: f64, position: Vector3<f64>) -> Self {
        Self {
            mass,
            position,
            velocity: Vector3::zeros(),
            shape: Shape::Point,
            external_force: Vector3::zeros(),
        }
    }

    pub fn sphere(mass: f64, radius: f64, position: Vector3<f64>) -> Self {
        Self {
            shape: Shape::Sphere { radius },
            ..Self::point(mass, position)
        }
    }

    pub fn cuboid(mass: f64, half_extents: Vector3<f64>, position: Vector3<f64>) -> Self {
        Self {
            shape: Shape::Box { half_extents },
            ..Self::point(mass, position)
        }
    }

    pub fn with_velocity(mut self, velocity: Vector3<f64>) -> Self {
        self.velocity = velocity;
        self
    }
}

/// Friction override for one pair. `body_b = None` is the ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFriction {
    pub body_a: usize,
    #[serde(default)]
    pub body_b: Option<usize>,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub bodies: Vec<Body>,
    #[serde(default = "default_gravity")]
    pub gravity: Vector3<f64>,
    /// Friction coefficient for pairs without an override.
    #[serde(default = "default_mu")]
    pub friction_mu: f64,
    #[serde(default)]
    pub pair_mu: Vec<PairFriction>,
    /// Contacts are created up to this separation.
    #[serde(default = "default_margin")]
    pub margin: f64,
}

fn default_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, -STANDARD_GRAVITY)
}

fn default_mu() -> f64 {
    0.5
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

impl Scene {
    pub fn new(bodies: Vec<Body>) -> Self {
        Self {
            bodies,
            gravity: default_gravity(),
            friction_mu: default_mu(),
            pair_mu: Vec::new(),
            margin: DEFAULT_MARGIN,
        }
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.friction_mu = mu;
        self
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidProblem(msg));
        for (i, b) in self.bodies.iter().enumerate() {
            if !(b.mass > 0.0 && b.mass.is_finite()) {
                return bad(format!("body {i} has mass {}, expected positive", b.mass));
            }
            let ok = match b.shape {
                Shape::Point => true,
                Shape::Sphere { radius } => radius > 0.0 && radius.is_finite(),
                Shape::Box { half_extents } => half_extents.iter().all(|h| *h > 0.0 && h.is_finite()),
            };
            if !ok {
                return bad(format!("body {i} has a degenerate shape"));
            }
            if b.position.iter().chain(b.velocity.iter()).any(|v| !v.is_finite()) {
                return bad(format!("body {i} has a non-finite state"));
            }
        }
        if !(self.friction_mu > 0.0 && self.friction_mu.is_finite()) {
            return bad(format!("friction coefficient must be positive, got {}", self.friction_mu));
        }
        for p in &self.pair_mu {
            if !(p.mu > 0.0 && p.mu.is_finite()) {
                return bad(format!("pair friction must be positive, got {}", p.mu));
            }
        }
        if !(self.margin >= 0.0) {
            return bad(format!("margin must be nonnegative, got {}", self.margin));
        }
        Ok(())
    }

    fn pair_mu(&self, a: usize, b: Option<usize>) -> f64 {
        self.pair_mu
            .iter()
            .find(|p| (p.body_a, p.body_b) == (a, b) || (Some(p.body_a), p.body_b) == (b, Some(a)))
            .map_or(self.friction_mu, |p| p.mu)
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.bodies.len()
    }
}

/// Identifies a contact across steps: the pair plus the corner index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContactKey {
    pub body_a: usize,
    pub body_b: Option<usize>,
    pub corner: usize,
}

/// A contact point. The impulse `λ n` acts on `body_a` and `−λ n` on
/// `body_b` (the ground when `None`); `normal` points from `b` into `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Contact {
    pub body_a: usize,
    pub body_b: Option<usize>,
    pub corner: usize,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub separation: f64,
    pub mu: f64,
}

impl Contact {
    pub fn key(&self) -> ContactKey {
        ContactKey {
            body_a: self.body_a,
            body_b: self.body_b,
            corner: self.corner,
        }
    }

    /// Rows `[T1, T2, N]` mapping world vectors into the contact frame.
    pub fn frame(&self) -> Matrix3<f64> {
        contact_frame(&self.normal)
    }
}

/// Frame with rows `T1 = normalize(n × e)`, `T2 = n × T1`, `N = n`, where
/// `e` is the coordinate axis least aligned with `n`.
pub fn contact_frame(n: &Vector3<f64>) -> Matrix3<f64> {
    let axis = n.iamin();
    let e = Vector3::ith(axis, 1.0);
    let t1 = n.cross(&e).normalize();
    let t2 = n.cross(&t1);
    Matrix3::from_rows(&[t1.transpose(), t2.transpose(), n.transpose()])
}

/// Corners of the axis-aligned rectangle `[lo, hi]` at height `z`, in the
/// order (−,−), (+,−), (+,+), (−,+).
fn rectangle_corners(lo: (f64, f64), hi: (f64, f64), z: f64) -> [Vector3<f64>; 4] {
    [
        Vector3::new(lo.0, lo.1, z),
        Vector3::new(hi.0, lo.1, z),
        Vector3::new(hi.0, hi.1, z),
        Vector3::new(lo.0, hi.1, z),
    ]
}

pub fn detect_contacts(scene: &Scene) -> Vec<Contact> {
    let up = Vector3::z();
    let mut out = Vec::new();
    for (i, b) in scene.bodies.iter().enumerate() {
        let sep = b.position.z - b.shape.bottom_offset();
        if sep > scene.margin {
            continue;
        }
        let mu = scene.pair_mu(i, None);
        let mut push = |corner, point| {
            out.push(Contact {
                body_a: i,
                body_b: None,
                corner,
                point,
                normal: up,
                separation: sep,
                mu,
            })
        };
        match b.shape {
            Shape::Point | Shape::Sphere { .. } => push(0, Vector3::new(b.position.x, b.position.y, 0.0)),
            Shape::Box { half_extents: h } => {
                let lo = (b.position.x - h.x, b.position.y - h.y);
                let hi = (b.position.x + h.x, b.position.y + h.y);
                for (k, p) in rectangle_corners(lo, hi, 0.0).into_iter().enumerate() {
                    push(k, p);
                }
            }
        }
    }

    for (lower, a) in scene.bodies.iter().enumerate() {
        let Shape::Box { half_extents: ha } = a.shape else {
            continue;
        };
        for (upper, b) in scene.bodies.iter().enumerate() {
            let Shape::Box { half_extents: hb } = b.shape else {
                continue;
            };
            if upper == lower || b.position.z <= a.position.z {
                continue;
            }
            let top = a.position.z + ha.z;
            let sep = b.position.z - hb.z - top;
            if sep > scene.margin {
                continue;
            }
            let lo = (
                (a.position.x - ha.x).max(b.position.x - hb.x),
                (a.position.y - ha.y).max(b.position.y - hb.y),
            );
            let hi = (
                (a.position.x + ha.x).min(b.position.x + hb.x),
                (a.position.y + ha.y).min(b.position.y + hb.y),
            );
            if hi.0 <= lo.0 || hi.1 <= lo.1 {
                continue;
            }
            let mu = scene.pair_mu(upper, Some(lower));
            for (k, p) in rectangle_corners(lo, hi, top).into_iter().enumerate() {
                out.push(Contact {
                    body_a: upper,
                    body_b: Some(lower),
                    corner: k,
                    point: p,
                    normal: up,
                    separation: sep,
                    mu,
                });
            }
        }
    }
    out
}

/// Diagonal contact compliance, identical for every contact.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Compliance {
    #[serde(default)]
    pub tangential: f64,
    #[serde(default)]
    pub normal: f64,
}

impl Compliance {
    pub fn rigid() -> Self {
        Self::default()
    }

    pub fn normal(r: f64) -> Self {
        Self {
            tangential: 0.0,
            normal: r,
        }
    }
}

/// Everything the solver and the integrator need for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepProblem {
    pub problem: ContactProblem,
    pub contacts: Vec<Contact>,
    /// `3n_c × 3n_b` contact Jacobian, rows `[T1, T2, N]` per contact.
    pub jacobian: DMatrix<f64>,
    /// Velocities after external forces, before contact impulses.
    pub v_free: DVector<f64>,
    pub gamma: DVector<f64>,
}

/// Normal offset added to the contact velocity.
///
/// An open gap `Φ ≥ 0` is spent over one step, so contacts inside the
/// margin do not act before the bodies touch. Penetration `Φ < 0` is
/// corrected at the Baumgarte rate, which also gives compliant contacts a
/// finite steady penetration.
pub fn normal_offset(separation: f64, dt: f64, baumgarte: f64) -> f64 {
    if separation >= 0.0 {
        separation / dt
    } else {
        baumgarte * separation / dt
    }
}

/// Builds the contact problem `σ = (G + R)λ + J v_f + γ` for one step.
///
/// `tau` holds one force per body (or is empty for none); gravity and
/// each body's `external_force` are added.
pub fn assemble_step_problem(
    scene: &Scene,
    contacts: &[Contact],
    tau: &[Vector3<f64>],
    dt: f64,
    baumgarte: f64,
    compliance: Compliance,
) -> Result<StepProblem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidProblem(format!("time step must be positive, got {dt}")));
    }
    if !(baumgarte >= 0.0) {
        return Err(Error::InvalidProblem(format!("Baumgarte gain must be nonnegative, got {baumgarte}")));
    }
    if !tau.is_empty() {
        check_len("tau", tau.len(), scene.bodies.len())?;
    }
    let n_b = scene.bodies.len();
    let n_c = contacts.len();

    let mut v_free = DVector::zeros(3 * n_b);
    for (i, b) in scene.bodies.iter().enumerate() {
        let f = b.external_force + tau.get(i).copied().unwrap_or_else(Vector3::zeros);
        let v = b.velocity + dt * (f / b.mass + scene.gravity);
        v_free.fixed_rows_mut::<3>(3 * i).copy_from(&v);
    }

    let frames: Vec<Matrix3<f64>> = contacts.iter().map(Contact::frame).collect();
    let mut jacobian = DMatrix::zeros(3 * n_c, 3 * n_b);
    for (k, c) in contacts.iter().enumerate() {
        jacobian.fixed_view_mut::<3, 3>(3 * k, 3 * c.body_a).copy_from(&frames[k]);
        if let Some(b) = c.body_b {
            jacobian.fixed_view_mut::<3, 3>(3 * k, 3 * b).copy_from(&(-frames[k]));
        }
    }

    // G = J M⁻¹ Jᵀ block by block; contacts couple through shared bodies.
    let mut by_body: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_b];
    for (k, c) in contacts.iter().enumerate() {
        by_body[c.body_a].push((k, 1.0));
        if let Some(b) = c.body_b {
            by_body[b].push((k, -1.0));
        }
    }
    let mut blocks: HashMap<(usize, usize), Matrix3<f64>> = HashMap::new();
    for (body, list) in by_body.iter().enumerate() {
        let inv_m = 1.0 / scene.bodies[body].mass;
        for &(i, si) in list {
            for &(j, sj) in list {
                let blk = frames[i] * frames[j].transpose() * (si * sj * inv_m);
                *blocks.entry((i, j)).or_insert_with(Matrix3::zeros) += blk;
            }
        }
    }
    let mut keys: Vec<_> = blocks.keys().copied().collect();
    keys.sort_unstable();
    let mut triplets = Vec::with_capacity(9 * keys.len());
    for (i, j) in keys {
        let blk = &blocks[&(i, j)];
        for r in 0..3 {
            for c in 0..3 {
                if blk[(r, c)] != 0.0 {
                    triplets.push((3 * i + r, 3 * j + c, blk[(r, c)]));
                }
            }
        }
    }

    let mut gamma = DVector::zeros(3 * n_c);
    for (k, c) in contacts.iter().enumerate() {
        gamma[3 * k + 2] = normal_offset(c.separation, dt, baumgarte);
    }
    let g = &jacobian * &v_free + &gamma;
    let mu = DVector::from_iterator(n_c, contacts.iter().map(|c| c.mu));
    let r_diag = DVector::from_iterator(
        3 * n_c,
        (0..n_c).flat_map(|_| [compliance.tangential, compliance.tangential, compliance.normal]),
    );
    let problem = ContactProblem::from_triplets(n_c, &triplets, g, mu, r_diag)?;
    Ok(StepProblem {
        problem,
        contacts: contacts.to_vec(),
        jacobian,
        v_free,
        gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Admm,
    Pgs {
        #[serde(default = "default_omega")]
        omega: f64,
    },
}

fn default_omega() -> f64 {
    1.0
}

impl SolverKind {
    pub fn solve(
        &self,
        problem: &ContactProblem,
        settings: &SolverSettings,
        warm: Option<&DVector<f64>>,
    ) -> Result<SolverResult> {
        match *self {
            SolverKind::Admm => admm::solve(problem, settings, warm),
            SolverKind::Pgs { omega } => solve_pgs(problem, settings, omega, warm),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SolverKind::Admm => "admm",
            SolverKind::Pgs { .. } => "pgs",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepConfig {
    pub dt: f64,
    pub baumgarte: f64,
    pub compliance: Compliance,
    pub solver: SolverKind,
    pub settings: SolverSettings,
    /// Reuse the previous impulses when the contact set is unchanged.
    pub warm_start: bool,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            dt: DEFAULT_DT,
            baumgarte: DEFAULT_BAUMGARTE,
            compliance: Compliance::rigid(),
            solver: SolverKind::Admm,
            settings: SolverSettings::default(),
            warm_start: true,
        }
    }
}

impl StepConfig {
    pub fn with_solver(mut self, solver: SolverKind, settings: SolverSettings) -> Self {
        self.solver = solver;
        self.settings = settings;
        self
    }

    pub fn with_compliance(mut self, compliance: Compliance) -> Self {
        self.compliance = compliance;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    pub n_contacts: usize,
    pub status: Status,
    pub iterations: usize,
    pub cholesky_updates: usize,
    pub residual: f64,
    pub solve_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub assembly: StepProblem,
    pub result: SolverResult,
    /// Velocities after the step, `v_f + M⁻¹ Jᵀ λ`.
    pub velocity: DVector<f64>,
    pub stats: StepStats,
}

/// `v_f + M⁻¹ Jᵀ λ`.
pub fn apply_impulses(scene: &Scene, step: &StepProblem, lambda: &DVector<f64>) -> DVector<f64> {
    let mut v = step.v_free.clone();
    for (k, c) in step.contacts.iter().enumerate() {
        let world = c.frame().transpose() * block(lambda, k);
        let a = c.body_a;
        let va = v.fixed_rows::<3>(3 * a) + world / scene.bodies[a].mass;
        v.fixed_rows_mut::<3>(3 * a).copy_from(&va);
        if let Some(b) = c.body_b {
            let vb = v.fixed_rows::<3>(3 * b) - world / scene.bodies[b].mass;
            v.fixed_rows_mut::<3>(3 * b).copy_from(&vb);
        }
    }
    v
}

/// Steps a scene and keeps the warm-start cache between steps.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub scene: Scene,
    pub config: StepConfig,
    step_index: usize,
    previous: Option<(Vec<ContactKey>, DVector<f64>)>,
}

impl Simulator {
    pub fn new(scene: Scene, config: StepConfig) -> Result<Self> {
        scene.validate()?;
        config.settings.validate()?;
        Ok(Self {
            scene,
            config,
            step_index: 0,
            previous: None,
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step_index
    }

    /// Impulses to warm start from, if the contact set matches the
    /// previous step pair by pair and corner by corner.
    fn warm_start_for(&self, contacts: &[Contact]) -> Option<DVector<f64>> {
        if !self.config.warm_start {
            return None;
        }
        let (keys, lambda) = self.previous.as_ref()?;
        let same = keys.len() == contacts.len() && keys.iter().zip(contacts).all(|(k, c)| *k == c.key());
        (same && !contacts.is_empty()).then(|| lambda.clone())
    }

    /// Advances one step with optional per-body forces.
    pub fn step(&mut self, tau: &[Vector3<f64>]) -> Result<StepOutcome> {
        let contacts = detect_contacts(&self.scene);
        let assembly = assemble_step_problem(
            &self.scene,
            &contacts,
            tau,
            self.config.dt,
            self.config.baumgarte,
            self.config.compliance,
        )?;
        let warm = self.warm_start_for(&contacts);
        let mut settings = self.config.settings.clone();
        if warm.is_some() {
            settings.warm_start_policy = WarmStartPolicy::Provided;
        }
        let start = Instant::now();
        let result = self.config.solver.solve(&assembly.problem, &settings, warm.as_ref())?;
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;

        let velocity = apply_impulses(&self.scene, &assembly, &result.lambda);
        let dt = self.config.dt;
        for (i, b) in self.scene.bodies.iter_mut().enumerate() {
            b.velocity = velocity.fixed_rows::<3>(3 * i).into_owned();
            b.position += dt * b.velocity;
        }
        self.previous = Some((contacts.iter().map(Contact::key).collect(), result.lambda.clone()));
        let stats = StepStats {
            step: self.step_index,
            n_contacts: contacts.len(),
            status: result.status,
            iterations: result.iterations,
            cholesky_updates: result.cholesky_updates,
            residual: result.final_residuals.max(),
            solve_ms,
        };
        self.step_index += 1;
        Ok(StepOutcome {
            assembly,
            result,
            velocity,
            stats,
        })
    }
}

/// One symplectic Euler step of `scene` without warm starting.
pub fn step(scene: &Scene, tau: &[Vector3<f64>], config: &StepConfig) -> Result<(Scene, StepOutcome)> {
    let mut config = config.clone();
    config.warm_start = false;
    let mut sim = Simulator::new(scene.clone(), config)?;
    let out = sim.step(tau)?;
    Ok((sim.scene, out))
}

/// `n_layers` unit boxes resting on each other, masses spaced
/// geometrically from 1 kg at the bottom to `mass_ratio` kg at the top.
pub fn make_stack_scene(n_layers: usize, mass_ratio: f64) -> Scene {
    let h = Vector3::new(0.5, 0.5, 0.5);
    let bodies = (0..n_layers)
        .map(|k| {
            let t = if n_layers > 1 {
                k as f64 / (n_layers - 1) as f64
            } else {
                0.0
            };
            Body::cuboid(mass_ratio.powf(t), h, Vector3::new(0.0, 0.0, 0.5 + k as f64))
        })
        .collect();
    Scene::new(bodies)
}

/// Scene file: the scene, the step configuration and a step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    #[serde(flatten)]
    pub scene: Scene,
    #[serde(default)]
    pub config: StepConfig,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

fn default_steps() -> usize {
    1000
}

impl SceneFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub const TRAJECTORY_HEADER: &str = "step,body,px,py,pz,vx,vy,vz";
pub const STATS_HEADER: &str = "step,n_contacts,status,iterations,cholesky_updates,residual,solve_ms";

/// Appends one row per body for the state after step `step`.
pub fn write_trajectory_rows<W: Write>(scene: &Scene, step: usize, mut out: W) -> std::io::Result<()> {
    for (i, b) in scene.bodies.iter().enumerate() {
        let (p, v) = (b.position, b.velocity);
        writeln!(out, "{step},{i},{:e},{:e},{:e},{:e},{:e},{:e}", p.x, p.y, p.z, v.x, v.y, v.z)?;
    }
    Ok(())
}

pub fn write_stats_row<W: Write>(s: &StepStats, mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "{},{},{},{},{},{:e},{:e}",
        s.step,
        s.n_contacts,
        s.status.name(),
        s.iterations,
        s.cholesky_updates,
        s.residual,
        s.solve_ms
    )
}

/// Runs `steps` steps, writing the trajectory (initial state as step 0)
/// and per-step solver statistics.
pub fn run<W: Write, S: Write>(
    sim: &mut Simulator,
    steps: usize,
    mut trajectory: W,
    mut stats: S,
) -> Result<Vec<StepStats>> {
    writeln!(trajectory, "{TRAJECTORY_HEADER}")?;
    writeln!(stats, "{STATS_HEADER}")?;
    write_trajectory_rows(&sim.scene, 0, &mut trajectory)?;
    let mut all = Vec::with_capacity(steps);
    for k in 1..=steps {
        let out = sim.step(&[])?;
        write_trajectory_rows(&sim.scene, k, &mut trajectory)?;
        let mut s = out.stats;
        s.step = k;
        write_stats_row(&s, &mut stats)?;
        all.push(s);
    }
    Ok(all)
}

/// Total impulse applied to `body` by all contacts.
pub fn body_impulse(step: &StepProblem, lambda: &DVector<f64>, body: usize) -> Vector3<f64> {
    let mut total = Vector3::zeros();
    for (k, c) in step.contacts.iter().enumerate() {
        let world = c.frame().transpose() * block(lambda, k);
        if c.body_a == body {
            total += world;
        }
        if c.body_b == Some(body) {
            total -= world;
        }
    }
    total
}

/// Per-contact normal impulses.
pub fn normal_impulses(lambda: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(lambda.len() / 3, (0..lambda.len() / 3).map(|k| lambda[3 * k + 2]))
}

/// Rearranges impulses from one contact ordering to another by key,
/// zero-filling contacts absent from `from`.
pub fn remap_impulses(from: &[ContactKey], lambda: &DVector<f64>, to: &[ContactKey]) -> DVector<f64> {
    let index: HashMap<_, _> = from.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut out = DVector::zeros(3 * to.len());
    for (j, k) in to.iter().enumerate() {
        if let Some(&i) = index.get(k) {
            set_block(&mut out, j, &block(lambda, i));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::condition_estimate;
    use approx::assert_relative_eq;

    #[test]
    fn frame_for_vertical_normal() {
        let f = contact_frame(&Vector3::z());
        assert_eq!(f.row(0).transpose(), Vector3::y());
        assert_eq!(f.row(1).transpose(), -Vector3::x());
        assert_eq!(f.row(2).transpose(), Vector3::z());
        let n = Vector3::new(1.0, 2.0, 3.0).normalize();
        let f = contact_frame(&n);
        assert_relative_eq!(f * f.transpose(), Matrix3::identity(), epsilon = 1e-14);
        assert_relative_eq!(f.determinant(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sphere_detection() {
        let far = Scene::new(vec![Body::sphere(1.0, 0.5, Vector3::new(0.0, 0.0, 1.0))]);
        assert!(detect_contacts(&far).is_empty());
        let touching = Scene::new(vec![Body::sphere(1.0, 0.5, Vector3::new(0.3, -0.2, 0.5))]);
        let c = detect_contacts(&touching);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].point, Vector3::new(0.3, -0.2, 0.0));
        assert_eq!(c[0].normal, Vector3::z());
        assert_eq!(c[0].separation, 0.0);
    }

    #[test]
    fn box_detection() {
        let scene = make_stack_scene(1, 1.0);
        let c = detect_contacts(&scene);
        assert_eq!(c.len(), 4);
        let mut pts: Vec<_> = c.iter().map(|c| (c.point.x, c.point.y, c.point.z)).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(
            pts,
            vec![(-0.5, -0.5, 0.0), (-0.5, 0.5, 0.0), (0.5, -0.5, 0.0), (0.5, 0.5, 0.0)]
        );

        let mut scene = make_stack_scene(2, 1.0);
        scene.bodies[1].position.x = 0.25;
        let c = detect_contacts(&scene);
        assert_eq!(c.len(), 8);
        let stacked: Vec<_> = c.iter().filter(|c| c.body_b == Some(0)).collect();
        assert_eq!(stacked.len(), 4);
        assert!(stacked.iter().all(|c| c.body_a == 1 && c.point.z == 1.0));
        let xs: Vec<_> = stacked.iter().map(|c| c.point.x).collect();
        assert_eq!(xs, vec![-0.25, 0.5, 0.5, -0.25]);
    }

    #[test]
    fn resting_point_mass_assembly() {
        let scene = Scene::new(vec![Body::point(1.0, Vector3::zeros())]);
        let contacts = detect_contacts(&scene);
        let step = assemble_step_problem(&scene, &contacts, &[], 1e-3, DEFAULT_BAUMGARTE, Compliance::rigid())
            .unwrap();
        assert_relative_eq!(step.problem.delassus().to_dense(), DMatrix::identity(3, 3));
        assert_relative_eq!(step.problem.g()[2], -9.81e-3, epsilon = 1e-15);
        assert_eq!(step.problem.g()[0], 0.0);
        assert!(assemble_step_problem(&scene, &contacts, &[], 0.0, 0.2, Compliance::rigid()).is_err());
    }

    #[test]
    fn delassus_matches_dense_product() {
        let mut scene = make_stack_scene(3, 100.0);
        scene.bodies[2].position.y = 0.2;
        let contacts = detect_contacts(&scene);
        let step = assemble_step_problem(&scene, &contacts, &[], 1e-3, 0.2, Compliance::rigid()).unwrap();
        let m_inv = DMatrix::from_diagonal(&DVector::from_iterator(
            scene.n_dofs(),
            scene.bodies.iter().flat_map(|b| [1.0 / b.mass; 3]),
        ));
        let g = &step.jacobian * m_inv * step.jacobian.transpose();
        assert_relative_eq!(step.problem.delassus().to_dense(), g, epsilon = 1e-14);
    }

    #[test]
    fn heavy_stack_is_ill_conditioned() {
        let scene = make_stack_scene(2, 1e4);
        assert_eq!(scene.bodies[1].mass, 1e4);
        let contacts = detect_contacts(&scene);
        let step = assemble_step_problem(&scene, &contacts, &[], 1e-3, 0.2, Compliance::rigid()).unwrap();
        let est = condition_estimate(&step.problem, 1e-6, 1e-12).unwrap();
        assert!(est.kappa() >= 1e3);
    }

    #[test]
    fn empty_scene_gives_empty_problem() {
        let scene = Scene::new(vec![Body::point(1.0, Vector3::new(0.0, 0.0, 3.0))]);
        let step = assemble_step_problem(&scene, &[], &[], 1e-3, 0.2, Compliance::rigid()).unwrap();
        assert_eq!(step.problem.n_contacts(), 0);
        assert_relative_eq!(step.v_free[2], -9.81e-3);
    }

    #[test]
    fn stack_masses() {
        let s = make_stack_scene(4, 1e4);
        let m: Vec<_> = s.bodies.iter().map(|b| b.mass).collect();
        assert_relative_eq!(m[0], 1.0);
        assert_relative_eq!(m[1], 1e4f64.powf(1.0 / 3.0), max_relative = 1e-14);
        assert_relative_eq!(m[2], 464.158_883_361_277_9, max_relative = 1e-12);
        assert_relative_eq!(m[3], 1e4, max_relative = 1e-14);
        assert_eq!(make_stack_scene(2, 1.0).bodies.iter().map(|b| b.mass).sum::<f64>(), 2.0);
        assert_eq!(make_stack_scene(1, 1e4).bodies[0].mass, 1.0);
    }

    #[test]
    fn warm_start_only_on_matching_contact_sets() {
        let mut sim = Simulator::new(make_stack_scene(1, 1.0), StepConfig::default()).unwrap();
        let first = sim.step(&[]).unwrap();
        let second = sim.step(&[]).unwrap();
        assert!(second.result.iterations <= first.result.iterations);
        let c = detect_contacts(&sim.scene);
        assert!(sim.warm_start_for(&c).is_some());
        assert!(sim.warm_start_for(&c[..3]).is_none());
    }

    #[test]
    fn scene_file_round_trip() {
        let text = r#"{
            "bodies": [{"mass": 2, "position": [0, 0, 0.5],
                        "shape": {"type": "box", "half_extents": [0.5, 0.5, 0.5]}}],
            "friction_mu": 0.3,
            "config": {"dt": 0.002, "solver": {"kind": "pgs", "omega": 0.9}},
            "steps": 10
        }"#;
        let f = SceneFile::from_json(text).unwrap();
        assert_eq!(f.scene.gravity, Vector3::new(0.0, 0.0, -9.81));
        assert_eq!(f.config.solver, SolverKind::Pgs { omega: 0.9 });
        assert_eq!(f.config.baumgarte, DEFAULT_BAUMGARTE);
        let back = SceneFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn remap_by_key() {
        let k = |corner| ContactKey {
            body_a: 0,
            body_b: None,
            corner,
        };
        let lambda = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let out = remap_impulses(&[k(0), k(1)], &lambda, &[k(1), k(2)]);
        assert_eq!(out.as_slice(), &[4.0, 5.0, 6.0, 0.0, 0.0, 0.0]);
    }
}
