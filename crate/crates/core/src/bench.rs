//! Solver comparison: ablation runs, Dolan–Moré performance profiles and
//! mean ± std summaries of Cholesky updates and solve time.

use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ContactProblem;
use crate::sim::{assemble_step_problem, detect_contacts, make_stack_scene, Compliance, SolverKind, DEFAULT_BAUMGARTE, DEFAULT_DT};
use crate::solver::{ResidualNorms, RhoStrategy, SolverSettings, Status};

pub const PROFILE_POINTS: usize = 50;
pub const PROFILE_TAU_MAX: f64 = 100.0;

/// A solver configuration under a display name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSolver {
    pub name: String,
    #[serde(default)]
    pub solver: SolverKind,
    #[serde(default)]
    pub settings: SolverSettings,
}

impl NamedSolver {
    pub fn admm(name: impl Into<String>, settings: SolverSettings) -> Self {
        Self {
            name: name.into(),
            solver: SolverKind::Admm,
            settings,
        }
    }
}

/// The ρ-rule grid: linear with τ ∈ {2, 4, 8, 16} and spectral with
/// p ∈ {0.01, 0.05, 0.08}.
pub fn strategy_grid(base: &SolverSettings) -> Vec<NamedSolver> {
    let linear = [2.0, 4.0, 8.0, 16.0]
        .map(|t| NamedSolver::admm(format!("linear(tau={t})"), base.clone().with_strategy(RhoStrategy::linear(t))));
    let spectral = [0.01, 0.05, 0.08]
        .map(|p| NamedSolver::admm(format!("spectral(p={p})"), base.clone().with_strategy(RhoStrategy::spectral(p))));
    linear.into_iter().chain(spectral).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRun {
    pub problem_id: String,
    pub solver: String,
    pub status: Status,
    pub iterations: usize,
    pub time_ms: f64,
    pub cholesky_updates: usize,
    pub final_residuals: ResidualNorms,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (zero for fewer than two values).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self::default();
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSummary {
    pub solver: String,
    /// Runs that ended Converged or MaxIter.
    pub runs: usize,
    pub converged: usize,
    pub cholesky_updates: MeanStd,
    pub time_ms: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub solver: String,
    /// `(τ, fraction of problems solved within τ times the best time)`.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BenchReport {
    pub per_problem: Vec<ProblemRun>,
    pub profile_curves: Vec<ProfileCurve>,
    pub summary: Vec<SolverSummary>,
}

impl BenchReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn summary_for(&self, solver: &str) -> Option<&SolverSummary> {
        self.summary.iter().find(|s| s.solver == solver)
    }
}

/// `PROFILE_POINTS` log-spaced values from 1 to `PROFILE_TAU_MAX`.
pub fn profile_grid() -> Vec<f64> {
    let top = PROFILE_TAU_MAX.ln();
    (0..PROFILE_POINTS)
        .map(|k| {
            if k + 1 == PROFILE_POINTS {
                PROFILE_TAU_MAX
            } else {
                (top * k as f64 / (PROFILE_POINTS - 1) as f64).exp()
            }
        })
        .collect()
}

/// Dolan–Moré profiles. `times[s][p]` is the cost of solver `s` on problem
/// `p`; unsolved runs count as infinitely slow.
pub fn performance_profile(names: &[String], times: &[Vec<f64>], solved: &[Vec<bool>]) -> Result<Vec<ProfileCurve>> {
    if names.len() != times.len() || times.len() != solved.len() {
        return Err(Error::Dimension(format!(
            "{} names, {} time rows, {} solved rows",
            names.len(),
            times.len(),
            solved.len()
        )));
    }
    let n_p = times.first().map_or(0, Vec::len);
    if times.iter().any(|r| r.len() != n_p) || solved.iter().any(|r| r.len() != n_p) {
        return Err(Error::Dimension("ragged time or solved matrix".into()));
    }
    let cost = |s: usize, p: usize| if solved[s][p] { times[s][p] } else { f64::INFINITY };
    let best: Vec<f64> = (0..n_p)
        .map(|p| (0..names.len()).map(|s| cost(s, p)).fold(f64::INFINITY, f64::min))
        .collect();
    let grid = profile_grid();
    Ok(names
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let ratios: Vec<f64> = (0..n_p)
                .map(|p| {
                    let t = cost(s, p);
                    if !t.is_finite() {
                        f64::INFINITY
                    } else if best[p] > 0.0 {
                        t / best[p]
                    } else if t == 0.0 {
                        1.0
                    } else {
                        f64::INFINITY
                    }
                })
                .collect();
            let points = grid
                .iter()
                .map(|&tau| {
                    let frac = if n_p == 0 {
                        0.0
                    } else {
                        ratios.iter().filter(|r| **r <= tau).count() as f64 / n_p as f64
                    };
                    (tau, frac)
                })
                .collect();
            ProfileCurve {
                solver: name.clone(),
                points,
            }
        })
        .collect())
}

fn run_one(id: &str, problem: &ContactProblem, solver: &NamedSolver) -> Result<ProblemRun> {
    let start = Instant::now();
    let r = solver.solver.solve(problem, &solver.settings, None)?;
    let time_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ProblemRun {
        problem_id: id.to_string(),
        solver: solver.name.clone(),
        status: r.status,
        iterations: r.iterations,
        time_ms,
        cholesky_updates: r.cholesky_updates,
        final_residuals: r.final_residuals,
    })
}

/// Solves every problem with every solver, one problem per rayon task,
/// and aggregates the runs into a report.
pub fn run_ablation(problems: &[(String, ContactProblem)], solvers: &[NamedSolver]) -> Result<BenchReport> {
    let per_problem: Vec<Vec<ProblemRun>> = problems
        .par_iter()
        .map(|(id, p)| solvers.iter().map(|s| run_one(id, p, s)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(build_report(per_problem.into_iter().flatten().collect(), solvers))
}

/// Assembles profiles and summaries from finished runs. Runs are grouped
/// by solver name in the order of `solvers`.
pub fn build_report(per_problem: Vec<ProblemRun>, solvers: &[NamedSolver]) -> BenchReport {
    if per_problem.is_empty() {
        return BenchReport::default();
    }
    let names: Vec<String> = solvers.iter().map(|s| s.name.clone()).collect();
    fn runs_of<'a>(runs: &'a [ProblemRun], name: &'a str) -> impl Iterator<Item = &'a ProblemRun> {
        runs.iter().filter(move |r| r.solver == name)
    }
    let times: Vec<Vec<f64>> = names.iter().map(|n| runs_of(&per_problem, n).map(|r| r.time_ms).collect()).collect();
    let solved: Vec<Vec<bool>> = names
        .iter()
        .map(|n| runs_of(&per_problem, n).map(|r| r.status.is_converged()).collect())
        .collect();
    let profile_curves = performance_profile(&names, &times, &solved).unwrap_or_default();
    let summary = names
        .iter()
        .map(|n| {
            let counted: Vec<&ProblemRun> = runs_of(&per_problem, n)
                .filter(|r| matches!(r.status, Status::Converged | Status::MaxIter))
                .collect();
            let chol: Vec<f64> = counted.iter().map(|r| r.cholesky_updates as f64).collect();
            let time: Vec<f64> = counted.iter().map(|r| r.time_ms).collect();
            SolverSummary {
                solver: n.clone(),
                runs: counted.len(),
                converged: counted.iter().filter(|r| r.status.is_converged()).count(),
                cholesky_updates: MeanStd::of(&chol),
                time_ms: MeanStd::of(&time),
            }
        })
        .collect();
    BenchReport {
        per_problem,
        profile_curves,
        summary,
    }
}

/// Cold-start contact problems of resting box stacks: `n` problems cycling
/// through 2 to 6 layers, with mass ratios log-spaced from 1 to 1e4.
pub fn stack_suite(n: usize) -> Result<Vec<(String, ContactProblem)>> {
    (0..n)
        .map(|k| {
            let layers = 2 + k % 5;
            let exponent = if n > 1 { 4.0 * k as f64 / (n - 1) as f64 } else { 0.0 };
            let ratio = 10f64.powf(exponent);
            let scene = make_stack_scene(layers, ratio);
            let contacts = detect_contacts(&scene);
            let step = assemble_step_problem(&scene, &contacts, &[], DEFAULT_DT, DEFAULT_BAUMGARTE, Compliance::rigid())?;
            Ok((format!("stack{layers}_ratio{ratio:.3e}"), step.problem))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: &[&str]) -> Vec<String> {
        n.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn grid_shape() {
        let g = profile_grid();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 1.0);
        assert_eq!(g[49], 100.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_solver_all_solved() {
        let c = performance_profile(&names(&["a"]), &[vec![1.0, 3.0]], &[vec![true, true]]).unwrap();
        assert!(c[0].points.iter().all(|(_, f)| *f == 1.0));
    }

    #[test]
    fn twice_slower_solver() {
        let c = performance_profile(
            &names(&["a", "b"]),
            &[vec![2.0, 4.0, 6.0], vec![1.0, 2.0, 3.0]],
            &[vec![true; 3], vec![true; 3]],
        )
        .unwrap();
        for &(tau, f) in &c[0].points {
            assert_eq!(f, if tau < 2.0 { 0.0 } else { 1.0 }, "tau = {tau}");
        }
        assert!(c[1].points.iter().all(|(_, f)| *f == 1.0));
    }

    #[test]
    fn unsolved_problem_never_counts() {
        let c = performance_profile(&names(&["a"]), &[vec![1.0; 4]], &[vec![true, true, false, true]]).unwrap();
        assert_eq!(c[0].points.last().unwrap(), &(100.0, 0.75));
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
        assert_eq!(MeanStd::of(&[]), MeanStd::default());
    }

    #[test]
    fn empty_ablation() {
        let r = run_ablation(&[], &strategy_grid(&SolverSettings::default())).unwrap();
        assert_eq!(r, BenchReport::default());
    }

    #[test]
    fn well_conditioned_spectral_factorizes_once() {
        use crate::problem::single_contact;
        use nalgebra::{Matrix3, Vector3};
        let p = single_contact(Matrix3::identity(), Vector3::new(-0.3, 0.1, -1.0), 0.5, Vector3::zeros()).unwrap();
        let solvers = [NamedSolver::admm("spectral", SolverSettings::default())];
        let r = run_ablation(&[("unit".into(), p)], &solvers).unwrap();
        assert_eq!(r.per_problem[0].status, Status::Converged);
        assert_eq!(r.per_problem[0].cholesky_updates, 1);
        assert_eq!(r.summary[0].cholesky_updates, MeanStd { mean: 1.0, std: 0.0 });
    }

    #[test]
    fn report_round_trip() {
        let suite = stack_suite(3).unwrap();
        let r = run_ablation(&suite, &strategy_grid(&SolverSettings::default())[..2]).unwrap();
        assert_eq!(r.per_problem.len(), 6);
        let back = BenchReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
