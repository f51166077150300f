//! Command-line driver: presets, configuration, run orchestration and writers.

pub mod config;
pub mod output;
pub mod presets;

use std::path::PathBuf;

use log::info;

use crate::baselines::{oc_solve, pgd_solve};
use crate::error::Result;
use crate::fields::DensityField;
use crate::simpl::{simpl_solve, OptTrace, Termination};

pub use config::{Optimizer, RunConfig, StopRule};
use output::{write_convergence_csv, write_pgm, write_vtk, PgmFlavor, VtkField};
use presets::{build, strip_design, InitialDesign, Problem};

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_ITERATION_CAP: i32 = 2;

/// Volume within this fraction of `|Ω|` of the bound counts as active.
const ACTIVE_TOL: f64 = 1e-8;

#[derive(Debug)]
pub struct RunOutcome {
    pub trace: OptTrace,
    pub volume_fraction: f64,
    pub constraint_active: bool,
    pub files: Vec<PathBuf>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.trace.termination {
            Termination::Converged | Termination::StationaryStart => EXIT_CONVERGED,
            Termination::MaxIterations => EXIT_ITERATION_CAP,
            Termination::LineSearchFailed => EXIT_FAILED,
        }
    }
}

/// Sizes the global thread pool from `SIMPL_THREADS` (unset or 0 = automatic).
pub fn configure_threads() {
    let threads = std::env::var("SIMPL_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
}

/// Assembles the problem described by a configuration.
pub fn build_problem(config: &RunConfig) -> Result<Problem> {
    let mut problem = build(config.problem, &config.discretization(), config.custom.as_ref())?;
    problem.objective = problem.objective.with_solver(config.solver_settings());
    Ok(problem)
}

fn starting_design(config: &RunConfig, problem: &Problem) -> Result<Option<DensityField>> {
    match &config.initial_design {
        InitialDesign::Uniform => Ok(None),
        InitialDesign::Strip {
            points,
            density,
            width_cells,
        } => strip_design(problem.mesh(), &problem.admissible, points, *density, *width_cells).map(Some),
    }
}

/// Runs the optimizer and writes the enabled output files.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let resolved = config.resolved();
    std::fs::create_dir_all(&config.out)?;
    let mut files = Vec::new();

    let echo = config.out.join("config_echo.json");
    std::fs::write(&echo, serde_json::to_string_pretty(&resolved)? + "\n")?;
    files.push(echo);

    let problem = build_problem(&resolved)?;
    let mesh = problem.mesh();
    info!(
        "{:?}: {}x{} cells, {} free dofs",
        resolved.problem,
        mesh.nx,
        mesh.ny,
        problem.objective.model.spaces.num_free()
    );
    let rho0 = starting_design(&resolved, &problem)?;
    let obj = &problem.objective;
    let adm = &problem.admissible;
    let trace = match resolved.optimizer {
        Optimizer::Simpl => simpl_solve(obj, adm, &resolved.simpl_config(), rho0)?,
        Optimizer::Pgd => pgd_solve(obj, adm, &resolved.pgd_config(), rho0)?,
        Optimizer::Oc => oc_solve(obj, adm, &resolved.oc_config(), rho0)?,
    };

    let csv = config.out.join("convergence.csv");
    write_convergence_csv(&trace, &csv)?;
    files.push(csv);

    let (_, cache) = obj.evaluate(&trace.rho)?;
    if resolved.write_pgm {
        let path = config.out.join("density_final.pgm");
        write_pgm(mesh, &trace.rho.values, PgmFlavor::Design, problem.mirror_y, &path)?;
        files.push(path);
    }
    if resolved.write_filtered_pgm {
        let path = config.out.join("density_filtered.pgm");
        write_pgm(mesh, &cache.rho_tilde_cells, PgmFlavor::Filtered, problem.mirror_y, &path)?;
        files.push(path);
    }
    if resolved.write_vtk {
        let path = config.out.join("fields_final.vtk");
        write_vtk(
            mesh,
            &[
                VtkField::Scalar("rho", &trace.rho.values),
                VtkField::Scalar("E", &cache.young),
            ],
            &[
                VtkField::Scalar("rho_tilde", &cache.rho_tilde),
                VtkField::Vector2("displacement", &cache.u),
            ],
            "final design",
            &path,
        )?;
        files.push(path);
    }

    let volume = trace.rho.volume();
    let omega = adm.domain_volume;
    Ok(RunOutcome {
        volume_fraction: volume / omega,
        constraint_active: (adm.volume_bound() - volume).abs() <= ACTIVE_TOL * omega,
        trace,
        files,
    })
}

/// Runs a configuration, prints a summary and returns the process exit code.
pub fn run(config: &RunConfig) -> i32 {
    match execute(config) {
        Ok(outcome) => {
            let t = &outcome.trace;
            let last = t.records.last();
            println!("termination: {:?}", t.termination);
            println!("iterations: {}", t.iterations());
            println!("objective evaluations: {}", t.evaluations());
            println!("final objective: {:.10e}", t.final_objective());
            if let Some(k) = last.and_then(|r| r.kkt) {
                println!("final KKT: {k:.4e}");
            }
            if let Some(s) = last.and_then(|r| r.stationarity) {
                println!("final stationarity: {s:.4e}");
            }
            println!(
                "volume fraction: {:.6} ({})",
                outcome.volume_fraction,
                if outcome.constraint_active {
                    "constraint active"
                } else {
                    "constraint inactive"
                }
            );
            println!("output: {}", config.out.display());
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILED
        }
    }
}
