//! `proxncp` command-line front end.
//!
//! Exit codes: 0 success (solver converged, verification passed), 1 other
//! errors or a failed verification, 2 iteration cap reached, 3 numerical
//! failure or divergence, 4 malformed input JSON.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use proxncp::bench::{self, BenchReport, NamedSolver};
use proxncp::inverse::{recover_torque, solve_id_mode, IdProblemFile, IdStatus};
use proxncp::pgs::solve_pgs;
use proxncp::problem::{check_ncp, ContactProblem, ProblemFile};
use proxncp::sim::{self, SceneFile, Simulator};
use proxncp::solver::write_trace_csv;
use proxncp::{admm, RhoStrategy, SolverSettings, Status, WarmStartPolicy};

#[derive(Parser)]
#[command(name = "proxncp", version, about = "Frictional contact solvers: proximal ADMM and PGS")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a contact problem file.
    Solve {
        problem: PathBuf,
        #[arg(long, value_enum, default_value_t = SolverChoice::Admm)]
        solver: SolverChoice,
        #[arg(long, default_value_t = 1e-6)]
        eps: f64,
        #[arg(long, value_enum, default_value_t = StrategyChoice::Spectral)]
        strategy: StrategyChoice,
        /// Linear rule factor.
        #[arg(long, default_value_t = 2.0)]
        tau: f64,
        /// Spectral rule exponent step.
        #[arg(long, default_value_t = 0.05)]
        p: f64,
        #[arg(long)]
        max_iter: Option<usize>,
        /// PGS relaxation factor.
        #[arg(long, default_value_t = 1.0)]
        omega: f64,
        /// Write the per-iteration residuals and ρ as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the impulses as `{"lambda": [...]}`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check impulses against the contact NCP.
    Verify {
        problem: PathBuf,
        lambda: PathBuf,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Run a scene file and write the trajectory as CSV.
    Simulate {
        scene: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        /// Trajectory CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-step solver statistics CSV.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Solve every problem file in a directory under several solvers.
    Bench {
        dir: PathBuf,
        /// JSON list of `{name, solver, settings}`; defaults to the ρ-rule grid.
        #[arg(long)]
        strategies: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Performance profile CSV (`solver,tau,fraction`).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Worker threads (defaults to the number of cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Solve an inverse-dynamics problem file.
    Id { problem: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverChoice {
    Admm,
    Pgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyChoice {
    Linear,
    Spectral,
}

enum Failure {
    Json { path: PathBuf, err: serde_json::Error },
    Other(String),
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Json { path, err } => {
                let text = err.to_string();
                let message = text.rsplit_once(" at line ").map_or(text.as_str(), |(m, _)| m);
                eprintln!(
                    "error: malformed JSON in {} at line {}, column {}: {message}",
                    path.display(),
                    err.line(),
                    err.column()
                );
                ExitCode::from(4)
            }
            Failure::Other(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(1)
            }
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

impl From<proxncp::Error> for Failure {
    fn from(e: proxncp::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

type CliResult = Result<ExitCode, Failure>;

/// Reads and parses a JSON file, keeping the path for diagnostics.
fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Other(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|err| {
        if err.is_io() {
            Failure::Other(err.to_string())
        } else {
            Failure::Json {
                path: path.to_owned(),
                err,
            }
        }
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Other(format!("{}: {e}", path.display())))
}

fn status_code(status: Status) -> ExitCode {
    match status {
        Status::Converged => ExitCode::SUCCESS,
        Status::MaxIter => ExitCode::from(2),
        Status::NumericalFailure { .. } => ExitCode::from(3),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
    format!("[{}]", items.join(", "))
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LambdaFile {
    Bare(Vec<f64>),
    Wrapped { lambda: Vec<f64> },
}

impl LambdaFile {
    fn into_vec(self) -> Vec<f64> {
        match self {
            LambdaFile::Bare(v) | LambdaFile::Wrapped { lambda: v } => v,
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn solve(
    path: &Path,
    solver: SolverChoice,
    eps: f64,
    strategy: StrategyChoice,
    tau: f64,
    p: f64,
    max_iter: Option<usize>,
    omega: f64,
    trace: Option<&Path>,
    out: Option<&Path>,
) -> CliResult {
    let file: ProblemFile = read_json(path)?;
    let problem = file.to_problem()?;
    let warm = file.warm_start()?;

    let mut settings = match solver {
        SolverChoice::Admm => SolverSettings::default().with_strategy(match strategy {
            StrategyChoice::Linear => RhoStrategy::linear(tau),
            StrategyChoice::Spectral => RhoStrategy::spectral(p),
        }),
        SolverChoice::Pgs => SolverSettings::pgs(),
    }
    .with_eps(eps);
    if let Some(n) = max_iter {
        settings = settings.with_max_iter(n);
    }
    if trace.is_some() {
        settings = settings.with_trace();
    }
    if warm.is_some() {
        settings.warm_start_policy = WarmStartPolicy::Provided;
    }

    let result = match solver {
        SolverChoice::Admm => admm::solve(&problem, &settings, warm.as_ref())?,
        SolverChoice::Pgs => solve_pgs(&problem, &settings, omega, warm.as_ref())?,
    };

    let r = &result.final_residuals;
    println!("status: {}", result.status.name());
    println!("iterations: {}", result.iterations);
    println!("cholesky_updates: {}", result.cholesky_updates);
    println!("residuals: prim {:e} dual {:e} comp {:e}", r.prim, r.dual, r.comp);
    println!("lambda: {}", fmt_vec(result.lambda.as_slice()));

    if let (Some(path), Some(rows)) = (trace, &result.trace) {
        let mut w = create(path)?;
        write_trace_csv(rows, &mut w)?;
        w.flush()?;
    }
    if let Some(path) = out {
        let body = LambdaFile::Wrapped {
            lambda: result.lambda.as_slice().to_vec(),
        };
        let text = serde_json::to_string_pretty(&body).map_err(|e| Failure::Other(e.to_string()))?;
        std::fs::write(path, text)?;
    }
    Ok(status_code(result.status))
}

fn verify(problem: &Path, lambda: &Path, tol: f64) -> CliResult {
    let problem: ContactProblem = read_json::<ProblemFile>(problem)?.to_problem()?;
    let lambda = proxncp::nalgebra::DVector::from_vec(read_json::<LambdaFile>(lambda)?.into_vec());
    let report = check_ncp(&problem, &lambda)?;
    println!("signorini_comp: {}", fmt_vec(&report.signorini_comp));
    println!("primal_cone_violation: {}", fmt_vec(&report.primal_cone_violation));
    println!("dual_cone_violation: {}", fmt_vec(&report.dual_cone_violation));
    println!("ncp_comp: {}", fmt_vec(&report.ncp_comp));
    println!("max_violation: {:e}", report.max_violation);
    let ok = report.max_violation <= tol;
    println!("{} (tol {tol:e})", if ok { "ok" } else { "violated" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn simulate(path: &Path, steps: Option<usize>, out: Option<&Path>, stats: Option<&Path>) -> CliResult {
    let file: SceneFile = read_json(path)?;
    let steps = steps.unwrap_or(file.steps);
    let mut simulator = Simulator::new(file.scene, file.config)?;
    let trajectory: Box<dyn Write> = match out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let stats_out: Box<dyn Write> = match stats {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::sink()),
    };
    let mut trajectory = trajectory;
    let mut stats_out = stats_out;
    let all = sim::run(&mut simulator, steps, &mut trajectory, &mut stats_out)?;
    trajectory.flush()?;
    stats_out.flush()?;

    let unconverged = all.iter().filter(|s| !s.status.is_converged()).count();
    let failed = all.iter().any(|s| matches!(s.status, Status::NumericalFailure { .. }));
    eprintln!(
        "{steps} steps, {} solver calls, {unconverged} not converged",
        all.iter().filter(|s| s.n_contacts > 0).count()
    );
    Ok(if failed { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

/// Problem files in `dir`, sorted by name, identified by file stem.
fn load_suite(dir: &Path) -> Result<Vec<(String, ContactProblem)>, Failure> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Failure::Other(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((id, read_json::<ProblemFile>(p)?.to_problem()?))
        })
        .collect()
}

fn run_bench(
    dir: &Path,
    strategies: Option<&Path>,
    out: Option<&Path>,
    profile: Option<&Path>,
    jobs: Option<usize>,
) -> CliResult {
    let problems = load_suite(dir)?;
    let solvers: Vec<NamedSolver> = match strategies {
        Some(p) => read_json(p)?,
        None => bench::strategy_grid(&SolverSettings::default()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Other(e.to_string()))?;
    let report = pool.install(|| bench::run_ablation(&problems, &solvers))?;

    print_summary(&report, problems.len());
    if let Some(path) = out {
        report.write(path)?;
    }
    if let Some(path) = profile {
        let mut w = create(path)?;
        writeln!(w, "solver,tau,fraction")?;
        for c in &report.profile_curves {
            for (t, f) in &c.points {
                writeln!(w, "{},{t:e},{f}", c.solver)?;
            }
        }
        w.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(report: &BenchReport, n_problems: usize) {
    println!("{n_problems} problems");
    println!(
        "{:<20} {:>9} {:>22} {:>22}",
        "solver", "converged", "cholesky updates", "time ms"
    );
    for s in &report.summary {
        println!(
            "{:<20} {:>4}/{:<4} {:>10.2} +/- {:<8.2} {:>10.3} +/- {:<8.3}",
            s.solver, s.converged, s.runs, s.cholesky_updates.mean, s.cholesky_updates.std, s.time_ms.mean, s.time_ms.std
        );
    }
}

fn inverse_dynamics(path: &Path) -> CliResult {
    let file: IdProblemFile = read_json(path)?;
    let problem = file.to_problem()?;
    let result = solve_id_mode(&problem, file.n_iter, file.eps_abs, file.mode)?;
    let status = match result.status {
        IdStatus::Converged => "converged",
        IdStatus::MaxIter => "max_iter",
        IdStatus::Diverged => "diverged",
    };
    println!("status: {status}");
    println!("iterations: {}", result.iterations);
    println!("lambda: {}", fmt_vec(result.lambda.as_slice()));
    if let Some(t) = file.torque_inputs()? {
        let tau = recover_torque(&t.mass, &t.bias, &t.v, &problem.v_ref, t.dt, &problem.jacobian, &result.lambda)?;
        println!("tau: {}", fmt_vec(tau.as_slice()));
    }
    Ok(match result.status {
        IdStatus::Converged => ExitCode::SUCCESS,
        IdStatus::MaxIter => ExitCode::from(2),
        IdStatus::Diverged => ExitCode::from(3),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve {
            problem,
            solver,
            eps,
            strategy,
            tau,
            p,
            max_iter,
            omega,
            trace,
            out,
        } => solve(
            problem,
            *solver,
            *eps,
            *strategy,
            *tau,
            *p,
            *max_iter,
            *omega,
            trace.as_deref(),
            out.as_deref(),
        ),
        Command::Verify { problem, lambda, tol } => verify(problem, lambda, *tol),
        Command::Simulate {
            scene,
            steps,
            out,
            stats,
        } => simulate(scene, *steps, out.as_deref(), stats.as_deref()),
        Command::Bench {
            dir,
            strategies,
            out,
            profile,
            jobs,
        } => run_bench(dir, strategies.as_deref(), out.as_deref(), profile.as_deref(), *jobs),
        Command::Id { problem } => inverse_dynamics(problem),
    };
    outcome.unwrap_or_else(|f| f.report())
}
