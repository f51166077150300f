//! Run configuration and its resolution against preset defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::{OcConfig, PgdConfig};
use crate::error::{Error, Result};
use crate::physics::{PreconditionerKind, SolverSettings};
use crate::simpl::{KktVariant, LineSearch, SimplConfig, StopMeasure, TolMode};

use super::presets::{CustomProblem, Discretization, InitialDesign, ProblemKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Simpl,
    Pgd,
    Oc,
}

/// Stopping rule as named on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StopRule {
    /// `KKT_k ≤ tol`.
    Kkt,
    /// `KKT_k ≤ tol · KKT_0`.
    KktRelative,
    /// `S_k ≤ tol`.
    S,
}

impl StopRule {
    pub fn measure(self) -> (StopMeasure, TolMode) {
        match self {
            Self::Kkt => (StopMeasure::Kkt, TolMode::Absolute),
            Self::KktRelative => (StopMeasure::Kkt, TolMode::Relative),
            Self::S => (StopMeasure::Stationarity, TolMode::Absolute),
        }
    }
}

/// Everything a run needs. Unset options fall back to the preset defaults;
/// [`RunConfig::resolved`] fills them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub nx: Option<usize>,
    pub ny: Option<usize>,
    pub theta: Option<f64>,
    pub r_min: Option<f64>,
    pub optimizer: Optimizer,
    pub line_search: Option<LineSearch>,
    pub kkt_variant: Option<KktVariant>,
    pub stop: Option<StopRule>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub out: PathBuf,
    pub preconditioner: PreconditionerKind,
    /// Relative residual of the state and adjoint solves.
    pub state_tol: f64,
    pub initial_design: InitialDesign,
    pub custom: Option<CustomProblem>,
    /// Seed for randomized diagnostics; the optimizers themselves are deterministic.
    pub seed: u64,
    pub write_pgm: bool,
    /// Also write `density_filtered.pgm`.
    pub write_filtered_pgm: bool,
    pub write_vtk: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::Mbb,
            nx: None,
            ny: None,
            theta: None,
            r_min: None,
            optimizer: Optimizer::Simpl,
            line_search: None,
            kkt_variant: None,
            stop: None,
            tol: None,
            max_iters: None,
            out: PathBuf::from("out"),
            preconditioner: PreconditionerKind::Multigrid,
            state_tol: SolverSettings::default().state_tol,
            initial_design: InitialDesign::Uniform,
            custom: None,
            seed: 0,
            write_pgm: true,
            write_filtered_pgm: true,
            write_vtk: true,
        }
    }
}

/// Optimizer settings a preset uses unless told otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetSolverDefaults {
    pub line_search: LineSearch,
    pub kkt_variant: KktVariant,
    pub stop: StopRule,
    pub tol: f64,
    pub max_iters: usize,
}

pub fn solver_defaults(kind: ProblemKind, optimizer: Optimizer) -> PresetSolverDefaults {
    let simpl = match kind {
        ProblemKind::Mbb => PresetSolverDefaults {
            line_search: LineSearch::Armijo,
            kkt_variant: KktVariant::A,
            stop: StopRule::S,
            tol: 1e-5,
            max_iters: 500,
        },
        ProblemKind::Bridge => PresetSolverDefaults {
            line_search: LineSearch::Bregman,
            kkt_variant: KktVariant::A,
            stop: StopRule::KktRelative,
            tol: 1e-5,
            max_iters: 500,
        },
        ProblemKind::Inverter => PresetSolverDefaults {
            line_search: LineSearch::Bregman,
            kkt_variant: KktVariant::B,
            stop: StopRule::Kkt,
            tol: 5e-5,
            max_iters: 500,
        },
        ProblemKind::Custom => PresetSolverDefaults {
            line_search: LineSearch::Armijo,
            kkt_variant: KktVariant::A,
            stop: StopRule::Kkt,
            tol: 1e-5,
            max_iters: 500,
        },
    };
    match optimizer {
        Optimizer::Simpl => simpl,
        Optimizer::Pgd => PresetSolverDefaults {
            stop: StopRule::S,
            max_iters: PgdConfig::default().max_iters,
            ..simpl
        },
        Optimizer::Oc => PresetSolverDefaults {
            stop: StopRule::S,
            max_iters: OcConfig::default().max_iters,
            ..simpl
        },
    }
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Copy with every optional setting filled from the preset defaults.
    pub fn resolved(&self) -> Self {
        let disc = self.problem.defaults();
        let d = solver_defaults(self.problem, self.optimizer);
        Self {
            nx: Some(self.nx.unwrap_or(disc.nx)),
            ny: Some(self.ny.unwrap_or(disc.ny)),
            theta: Some(self.theta.unwrap_or(disc.theta)),
            r_min: Some(self.r_min.unwrap_or(disc.r_min)),
            line_search: Some(self.line_search.unwrap_or(d.line_search)),
            kkt_variant: Some(self.kkt_variant.unwrap_or(d.kkt_variant)),
            stop: Some(self.stop.unwrap_or(d.stop)),
            tol: Some(self.tol.unwrap_or(d.tol)),
            max_iters: Some(self.max_iters.unwrap_or(d.max_iters)),
            ..self.clone()
        }
    }

    pub fn discretization(&self) -> Discretization {
        let r = self.resolved();
        Discretization {
            nx: r.nx.unwrap_or_default(),
            ny: r.ny.unwrap_or_default(),
            theta: r.theta.unwrap_or_default(),
            r_min: r.r_min.unwrap_or_default(),
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            state_tol: self.state_tol,
            preconditioner: self.preconditioner,
            ..SolverSettings::default()
        }
    }

    pub fn simpl_config(&self) -> SimplConfig {
        let r = self.resolved();
        let (stop, tol_mode) = r.stop.unwrap_or(StopRule::Kkt).measure();
        SimplConfig {
            line_search: r.line_search.unwrap_or(LineSearch::Armijo),
            tol: r.tol.unwrap_or(1e-5),
            tol_mode,
            stop,
            max_iters: r.max_iters.unwrap_or(500),
            kkt_variant: r.kkt_variant.unwrap_or(KktVariant::A),
            ..SimplConfig::default()
        }
    }

    pub fn pgd_config(&self) -> PgdConfig {
        let r = self.resolved();
        PgdConfig {
            tol: r.tol.unwrap_or(1e-5),
            max_iters: r.max_iters.unwrap_or(1000),
            ..PgdConfig::default()
        }
    }

    pub fn oc_config(&self) -> OcConfig {
        let r = self.resolved();
        OcConfig {
            tol: r.tol.unwrap_or(1e-5),
            max_iters: r.max_iters.unwrap_or(300),
            ..OcConfig::default()
        }
    }

    /// Rejects combinations no optimizer can honor.
    pub fn validate(&self) -> Result<()> {
        let r = self.resolved();
        let usage = |msg: &str| Err(Error::InvalidParameter(msg.to_string()));
        if r.nx == Some(0) || r.ny == Some(0) {
            return usage("--nx and --ny must be positive");
        }
        if !r.theta.is_some_and(|t| t > 0.0 && t < 1.0) {
            return usage("--theta must lie in (0, 1)");
        }
        if !r.r_min.is_some_and(|v| v > 0.0) {
            return usage("--rmin must be positive");
        }
        if !r.tol.is_some_and(|v| v > 0.0) {
            return usage("--tol must be positive");
        }
        if !(self.state_tol > 0.0 && self.state_tol < 1.0) {
            return usage("state_tol must lie in (0, 1)");
        }
        if self.optimizer != Optimizer::Simpl {
            if r.stop != Some(StopRule::S) {
                return usage("pgd and oc stop on the stationarity residual only; use --stop s");
            }
            if self.problem == ProblemKind::Bridge {
                return usage("pgd and oc do not support the passive deck of the bridge problem");
            }
            if self.problem == ProblemKind::Custom && self.custom.as_ref().is_some_and(|c| !c.passive.is_empty()) {
                return usage("pgd and oc do not support passive regions");
            }
        }
        if self.optimizer == Optimizer::Oc && self.problem == ProblemKind::Inverter {
            return usage("oc needs a compliance-type objective with nonpositive sensitivities");
        }
        if self.problem == ProblemKind::Custom && self.custom.is_none() {
            return usage("problem `custom` needs a `custom` section in the configuration file");
        }
        if !matches!(self.initial_design, InitialDesign::Uniform) && self.optimizer != Optimizer::Simpl {
            return usage("non-uniform initial designs are only supported with --optimizer simpl");
        }
        Ok(())
    }
}
