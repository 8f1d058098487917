//! Problem fixtures shared by the benchmarks.

use proxncp::nalgebra::Vector3;
use proxncp::sim::{
    assemble_step_problem, detect_contacts, make_stack_scene, Body, Compliance, Scene, DEFAULT_BAUMGARTE, DEFAULT_DT,
};
use proxncp::{ContactProblem, Result};

/// First-step problem of a resting scene.
pub fn first_step_problem(scene: &Scene) -> Result<ContactProblem> {
    let contacts = detect_contacts(scene);
    let step = assemble_step_problem(scene, &contacts, &[], DEFAULT_DT, DEFAULT_BAUMGARTE, Compliance::rigid())?;
    Ok(step.problem)
}

/// Box stack with masses spaced from 1 kg to `ratio` kg.
pub fn stack_problem(layers: usize, ratio: f64) -> Result<ContactProblem> {
    first_step_problem(&make_stack_scene(layers, ratio))
}

/// A row of `n` unit boxes on the ground, `4n` contacts.
pub fn row_scene(n: usize) -> Scene {
    let h = Vector3::new(0.5, 0.5, 0.5);
    Scene::new(
        (0..n)
            .map(|k| Body::cuboid(1.0, h, Vector3::new(1.5 * k as f64, 0.0, 0.5)))
            .collect(),
    )
}

/// A sliding unit box, one ground contact per corner.
pub fn sliding_scene(mu: f64, speed: f64) -> Scene {
    let b = Body::cuboid(1.0, Vector3::new(0.5, 0.5, 0.5), Vector3::new(0.0, 0.0, 0.5))
        .with_velocity(Vector3::new(speed, 0.0, 0.0));
    Scene::new(vec![b]).with_mu(mu)
}
