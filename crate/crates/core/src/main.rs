use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use simpl::cli::presets::ProblemKind;
use simpl::cli::{configure_threads, run, Optimizer, RunConfig, StopRule, EXIT_FAILED};
use simpl::physics::PreconditionerKind;
use simpl::simpl::{KktVariant, LineSearch};

#[derive(Parser)]
#[command(name = "simpl", version, about = "Density-based topology optimization with latent mirror descent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a preset or custom problem and write results to the output directory.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON configuration; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    problem: Option<ProblemKind>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Volume fraction bound.
    #[arg(long)]
    theta: Option<f64>,
    /// Filter radius.
    #[arg(long)]
    rmin: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<Optimizer>,
    #[arg(long, value_enum)]
    line_search: Option<LineSearch>,
    #[arg(long, value_enum)]
    kkt_variant: Option<KktVariant>,
    #[arg(long, value_enum)]
    stop: Option<StopRule>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    preconditioner: Option<PreconditionerKind>,
    /// Relative residual of the state and adjoint solves.
    #[arg(long)]
    state_tol: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Skip the image outputs.
    #[arg(long)]
    no_pgm: bool,
    /// Skip the VTK output.
    #[arg(long)]
    no_vtk: bool,
}

impl RunArgs {
    fn into_config(self) -> simpl::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($flag:ident => $field:ident),* $(,)?) => {
                $(if let Some(v) = self.$flag { c.$field = Some(v); })*
            };
        }
        take!(nx => nx, ny => ny, theta => theta, rmin => r_min, line_search => line_search,
              kkt_variant => kkt_variant, stop => stop, tol => tol, max_iters => max_iters);
        if let Some(p) = self.problem {
            c.problem = p;
        }
        if let Some(o) = self.optimizer {
            c.optimizer = o;
        }
        if let Some(o) = self.out {
            c.out = o;
        }
        if let Some(p) = self.preconditioner {
            c.preconditioner = p;
        }
        if let Some(t) = self.state_tol {
            c.state_tol = t;
        }
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if self.no_pgm {
            c.write_pgm = false;
            c.write_filtered_pgm = false;
        }
        if self.no_vtk {
            c.write_vtk = false;
        }
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads();
    let Command::Run(args) = Cli::parse().command;
    let code = match args.into_config() {
        Ok(config) => run(&config),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILED
        }
    };
    ExitCode::from(code as u8)
}
