//! Sigmoidal mirror descent with a projected latent variable.
//!
//! The iterate is stored as a latent field `ψ` with `ρ = σ(ψ)`. Each step
//! takes a gradient step in latent space, shifts the result by a scalar so the
//! volume bound holds, and accepts the trial by an Armijo or Bregman
//! sufficient-decrease test, halving the step on rejection.

use serde::{Deserialize, Serialize};

use crate::baselines::stationarity;
use crate::error::{check_len, Error, Result};
use crate::fields::{
    bregman_divergence, bregman_divergence_latent, density_increment, pairwise_map_sum, sigmoid,
    weighted_inner, AdmissibleParams, DensityField, LatentField, DEFAULT_CLAMP_BOUND,
};
use crate::physics::Objective;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LineSearch {
    Armijo,
    Bregman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum KktVariant {
    /// `η = max{-ρλ, (1-ρ)λ}`.
    A,
    /// `η = λ - min{0, ρ+λ} - max{0, ρ-1+λ}`.
    B,
}

/// Quantity compared against the tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopMeasure {
    Kkt,
    /// Projected-gradient residual `S`.
    Stationarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TolMode {
    Absolute,
    /// Relative to the first measured value.
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimplConfig {
    pub line_search: LineSearch,
    pub c1: f64,
    pub tol: f64,
    pub tol_mode: TolMode,
    pub stop: StopMeasure,
    pub max_iters: usize,
    pub kkt_variant: KktVariant,
    pub clamp_bound: f64,
    pub entropy_penalty_weight: f64,
    /// Volume residual tolerance relative to `|Ω|`.
    pub bisection_tol: f64,
    pub max_backtracks: usize,
}

impl Default for SimplConfig {
    fn default() -> Self {
        Self {
            line_search: LineSearch::Armijo,
            c1: 1e-4,
            tol: 1e-5,
            tol_mode: TolMode::Absolute,
            stop: StopMeasure::Kkt,
            max_iters: 500,
            kkt_variant: KktVariant::A,
            clamp_bound: DEFAULT_CLAMP_BOUND,
            entropy_penalty_weight: 0.0,
            bisection_tol: 1e-12,
            max_backtracks: 30,
        }
    }
}

impl SimplConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return bad(format!("c1 must lie in (0, 1), got {}", self.c1));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if !(self.clamp_bound > 0.0) {
            return bad(format!("clamp bound must be positive, got {}", self.clamp_bound));
        }
        if !(self.entropy_penalty_weight >= 0.0) {
            return bad(format!(
                "entropy penalty weight must be nonnegative, got {}",
                self.entropy_penalty_weight
            ));
        }
        if !(self.bisection_tol > 0.0) {
            return bad(format!("bisection tolerance must be positive, got {}", self.bisection_tol));
        }
        Ok(())
    }
}

/// One row of an optimization history. Row 0 describes the initial design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub objective: f64,
    pub alpha: Option<f64>,
    pub mu: Option<f64>,
    pub kkt: Option<f64>,
    pub stationarity: Option<f64>,
    pub backtracks: usize,
    /// Cumulative objective evaluations.
    pub evaluations: usize,
    /// `1ᵀ M ρ`.
    pub volume: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// The initial gradient vanished.
    StationaryStart,
    MaxIterations,
    /// No trial step passed the sufficient-decrease test.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptTrace {
    pub records: Vec<IterationRecord>,
    pub rho: DensityField,
    /// Final latent field; absent for optimizers that work on `ρ` directly.
    pub psi: Option<LatentField>,
    pub termination: Termination,
}

impl OptTrace {
    /// Number of accepted steps.
    pub fn iterations(&self) -> usize {
        self.records.len() - 1
    }

    pub fn final_objective(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.objective)
    }

    pub fn evaluations(&self) -> usize {
        self.records.last().map_or(0, |r| r.evaluations)
    }

    pub fn converged(&self) -> bool {
        matches!(
            self.termination,
            Termination::Converged | Termination::StationaryStart
        )
    }
}

/// `(1 - α ε̂) ψ - α g`.
pub fn latent_step(psi: &LatentField, g: &[f64], alpha: f64, entropy_penalty_weight: f64) -> LatentField {
    let shrink = 1.0 - alpha * entropy_penalty_weight;
    LatentField {
        values: psi
            .values
            .iter()
            .zip(g)
            .map(|(p, g)| shrink * p - alpha * g)
            .collect(),
        clamp_bound: psi.clamp_bound,
    }
}

/// Result of the volume correction stage.
#[derive(Debug, Clone)]
pub struct VolumeCorrection {
    /// Clamped, passive-pinned latent field.
    pub psi: LatentField,
    /// `ψ_half - α μ 1` before clamping.
    pub psi_unclamped: Vec<f64>,
    pub mu: f64,
}

fn clamped_volume(psi_half: &[f64], shift: f64, bound: f64, vols: &[f64], passive: Option<&[bool]>) -> f64 {
    pairwise_map_sum(vols.len(), |i| {
        let p = match passive {
            Some(mask) if mask[i] => bound,
            _ => (psi_half[i] - shift).clamp(-bound, bound),
        };
        vols[i] * sigmoid(p)
    })
}

/// Finds `μ ≥ 0` with `1ᵀ M σ(ψ_half - α μ 1) = θ|Ω|` (or `μ = 0` when the
/// bound is inactive), then clamps and pins passive cells to the upper bound.
///
/// The volume map is evaluated after clamping, so the returned field meets
/// the bound to `bisection_tol · |Ω|` exactly as stored.
pub fn volume_correct(
    psi_half: &LatentField,
    alpha: f64,
    adm: &AdmissibleParams,
    cell_volumes: &[f64],
    g: &[f64],
    passive: Option<&[bool]>,
    bisection_tol: f64,
) -> Result<VolumeCorrection> {
    check_len(cell_volumes.len(), psi_half.len())?;
    check_len(cell_volumes.len(), g.len())?;
    if let Some(mask) = passive {
        check_len(cell_volumes.len(), mask.len())?;
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("step size must be positive, got {alpha}")));
    }
    let bound = psi_half.clamp_bound;
    let target = adm.volume_bound();
    let tol = bisection_tol * adm.domain_volume;
    let volume = |mu: f64| clamped_volume(&psi_half.values, alpha * mu, bound, cell_volumes, passive);

    let mu = if volume(0.0) <= target {
        0.0
    } else {
        let max_neg_g = g
            .iter()
            .enumerate()
            .filter(|(i, _)| passive.map_or(true, |m| !m[*i]))
            .map(|(_, v)| -v)
            .fold(0.0, f64::max);
        let mut lo = 0.0;
        let mut hi = if max_neg_g > 0.0 { max_neg_g } else { 1.0 / alpha };
        let mut widenings = 0;
        while volume(hi) > target {
            if widenings == 64 {
                return Err(Error::Bracket {
                    lo: 0.0,
                    hi,
                    residual: volume(hi) - target,
                });
            }
            lo = hi;
            hi *= 2.0;
            widenings += 1;
        }
        // invariant: volume(lo) > target >= volume(hi)
        for _ in 0..300 {
            if target - volume(hi) <= tol {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if volume(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    };

    let psi_unclamped: Vec<f64> = psi_half.values.iter().map(|p| p - alpha * mu).collect();
    let values = psi_unclamped
        .iter()
        .enumerate()
        .map(|(i, p)| match passive {
            Some(mask) if mask[i] => bound,
            _ => p.clamp(-bound, bound),
        })
        .collect();
    Ok(VolumeCorrection {
        psi: LatentField {
            values,
            clamp_bound: bound,
        },
        psi_unclamped,
        mu,
    })
}

/// `F_new ≤ F_old + c1 gᵀ M (ρ_new - ρ_old)`.
pub fn armijo_accept(
    f_new: f64,
    f_old: f64,
    g: &[f64],
    rho_new: &DensityField,
    rho_old: &DensityField,
    c1: f64,
) -> Result<bool> {
    let diff: Vec<f64> = rho_new.values.iter().zip(&rho_old.values).map(|(a, b)| a - b).collect();
    let slope = weighted_inner(g, &diff, &rho_old.cell_volumes)?;
    Ok(f_new <= f_old + c1 * slope)
}

/// `F_new ≤ F_old + gᵀ M (ρ_new - ρ_old) + D(ρ_new, ρ_old) / α`.
pub fn bregman_accept(
    f_new: f64,
    f_old: f64,
    g: &[f64],
    rho_new: &DensityField,
    rho_old: &DensityField,
    alpha: f64,
) -> Result<bool> {
    let diff: Vec<f64> = rho_new.values.iter().zip(&rho_old.values).map(|(a, b)| a - b).collect();
    let slope = weighted_inner(g, &diff, &rho_old.cell_volumes)?;
    let divergence = bregman_divergence(rho_new, rho_old)?;
    Ok(f_new <= f_old + slope + divergence / alpha)
}

/// Generalized Barzilai–Borwein step
/// `(Δψ)ᵀ M Δρ / |(Δg)ᵀ M Δρ|`; `None` when the denominator vanishes.
pub fn gbb_stepsize(
    psi_k: &[f64],
    psi_prev: &[f64],
    rho_k: &DensityField,
    rho_prev: &DensityField,
    g_k: &[f64],
    g_prev: &[f64],
) -> Option<f64> {
    let vols = &rho_k.cell_volumes;
    let n = vols.len();
    let d_rho = density_increment(psi_k, psi_prev);
    debug_assert_eq!(rho_prev.len(), n);
    let num = pairwise_map_sum(n, |i| (psi_k[i] - psi_prev[i]) * vols[i] * d_rho[i]);
    let den = pairwise_map_sum(n, |i| (g_k[i] - g_prev[i]) * vols[i] * d_rho[i]).abs();
    let alpha = num / den;
    (den > 0.0 && alpha.is_finite() && alpha > 0.0).then_some(alpha)
}

/// `1 / max|g₀|` at the first step, `√(α_GBB α_prev)` afterwards. Returns
/// `None` when the first gradient vanishes.
pub fn seed_stepsize(k: usize, alpha_gbb: Option<f64>, alpha_prev: f64, g0: &[f64]) -> Option<f64> {
    if k == 0 {
        let m = g0.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        (m > 0.0).then(|| 1.0 / m)
    } else {
        Some(alpha_gbb.map_or(alpha_prev, |a| (a * alpha_prev).sqrt()))
    }
}

/// Multiplier estimate `λ = (ψ_next - ψ_k) / α` and the scalar `μ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktMultiplierEstimate {
    pub lambda: Vec<f64>,
    pub mu: f64,
}

/// Complementarity measure `1ᵀ M |η|` for the density `rho` and the
/// multiplier estimate `(ψ_next - ψ_k) / α`. Cells flagged in `exclude`
/// contribute nothing.
pub fn kkt_estimate(
    psi_next: &[f64],
    psi_k: &[f64],
    alpha: f64,
    mu: f64,
    rho: &DensityField,
    variant: KktVariant,
    exclude: Option<&[bool]>,
) -> Result<(f64, KktMultiplierEstimate)> {
    check_len(rho.len(), psi_next.len())?;
    check_len(rho.len(), psi_k.len())?;
    let lambda: Vec<f64> = psi_next.iter().zip(psi_k).map(|(a, b)| (a - b) / alpha).collect();
    let kkt = pairwise_map_sum(rho.len(), |i| {
        if exclude.is_some_and(|m| m[i]) {
            return 0.0;
        }
        let (r, l) = (rho.values[i], lambda[i]);
        let eta = match variant {
            KktVariant::A => (-r * l).max((1.0 - r) * l),
            KktVariant::B => (l - (r + l).min(0.0) - (r - 1.0 + l).max(0.0)).abs(),
        };
        rho.cell_volumes[i] * eta
    });
    Ok((kkt, KktMultiplierEstimate { lambda, mu }))
}

/// Default starting design: `ρ ≡ θ`, or with passive cells held at `σ(M)`, a
/// uniform value on the remaining cells so the volume equals `θ|Ω|`.
pub fn initial_design(
    adm: &AdmissibleParams,
    cell_volumes: &[f64],
    passive: Option<&[bool]>,
    clamp_bound: f64,
) -> Result<DensityField> {
    let Some(mask) = passive else {
        return DensityField::uniform(adm.theta, cell_volumes.to_vec());
    };
    check_len(cell_volumes.len(), mask.len())?;
    let solid = sigmoid(clamp_bound);
    let (mut fixed, mut free) = (0.0, 0.0);
    for (m, &p) in cell_volumes.iter().zip(mask) {
        if p {
            fixed += m * solid;
        } else {
            free += m;
        }
    }
    let background = (adm.volume_bound() - fixed) / free;
    if !(background > 0.0 && background < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "passive region leaves no feasible uniform background (value {background})"
        )));
    }
    let values = mask.iter().map(|&p| if p { solid } else { background }).collect();
    DensityField::new(values, cell_volumes.to_vec())
}

fn zero_passive(g: &mut [f64], passive: Option<&[bool]>) {
    if let Some(mask) = passive {
        for (v, &p) in g.iter_mut().zip(mask) {
            if p {
                *v = 0.0;
            }
        }
    }
}

struct Stopper {
    measure: StopMeasure,
    mode: TolMode,
    tol: f64,
    reference: Option<f64>,
}

impl Stopper {
    fn done(&mut self, kkt: Option<f64>, s: f64) -> bool {
        let value = match self.measure {
            StopMeasure::Kkt => match kkt {
                Some(v) => v,
                None => return false,
            },
            StopMeasure::Stationarity => s,
        };
        let scale = match self.mode {
            TolMode::Absolute => 1.0,
            TolMode::Relative => *self.reference.get_or_insert(value),
        };
        value <= self.tol * scale
    }
}

/// Runs the optimizer from `rho0` (default [`initial_design`]).
pub fn simpl_solve<O: Objective>(
    obj: &O,
    adm: &AdmissibleParams,
    cfg: &SimplConfig,
    rho0: Option<DensityField>,
) -> Result<OptTrace> {
    cfg.validate()?;
    let vols = obj.cell_volumes().to_vec();
    let passive = obj.passive();
    let start_evals = obj.evaluations();
    let evals = || obj.evaluations() - start_evals;

    let rho0 = match rho0 {
        Some(r) => r,
        None => initial_design(adm, &vols, passive, cfg.clamp_bound)?,
    };
    check_len(vols.len(), rho0.len())?;
    let mut psi = rho0.to_latent(cfg.clamp_bound)?;
    if let Some(mask) = passive {
        for (p, &m) in psi.values.iter_mut().zip(mask) {
            if m {
                *p = cfg.clamp_bound;
            }
        }
    }
    let mut rho = psi.density(&vols)?;
    let (mut f, cache) = obj.evaluate(&rho)?;
    let mut g = obj.gradient(&rho, &cache)?;
    zero_passive(&mut g, passive);

    let mut stopper = Stopper {
        measure: cfg.stop,
        mode: cfg.tol_mode,
        tol: cfg.tol,
        reference: None,
    };
    let s0 = stationarity(&rho, &g, adm)?;
    let mut records = vec![IterationRecord {
        iter: 0,
        objective: f,
        alpha: None,
        mu: None,
        kkt: None,
        stationarity: Some(s0),
        backtracks: 0,
        evaluations: evals(),
        volume: rho.volume(),
    }];
    let finish = |records, rho, psi, termination| {
        Ok(OptTrace {
            records,
            rho,
            psi: Some(psi),
            termination,
        })
    };
    if cfg.stop == StopMeasure::Stationarity && stopper.done(None, s0) {
        return finish(records, rho, psi, Termination::Converged);
    }

    let mut alpha_prev = f64::NAN;
    let mut alpha_gbb = None;
    for k in 0..cfg.max_iters {
        let Some(mut alpha) = seed_stepsize(k, alpha_gbb, alpha_prev, &g) else {
            return finish(records, rho, psi, Termination::StationaryStart);
        };
        let mut backtracks = 0;
        let (step, rho_new, f_new, cache_new) = loop {
            let half = latent_step(&psi, &g, alpha, cfg.entropy_penalty_weight);
            let step = volume_correct(&half, alpha, adm, &vols, &g, passive, cfg.bisection_tol)?;
            let rho_new = step.psi.density(&vols)?;
            let (f_new, cache_new) = obj.evaluate(&rho_new)?;
            let d_rho = density_increment(&step.psi.values, &psi.values);
            let slope = pairwise_map_sum(vols.len(), |i| g[i] * vols[i] * d_rho[i]);
            let accepted = match cfg.line_search {
                LineSearch::Armijo => f_new <= f + cfg.c1 * slope,
                LineSearch::Bregman => {
                    let div = bregman_divergence_latent(&step.psi.values, &psi.values, &vols)?;
                    f_new <= f + slope + div / alpha
                }
            };
            log::trace!("trial alpha {:.3e}: dF {:.3e}, slope {:.3e}", alpha, f_new - f, slope);
            if accepted {
                break (step, rho_new, f_new, cache_new);
            }
            if backtracks == cfg.max_backtracks {
                log::warn!(
                    "line search failed at iteration {} after {} halvings (alpha {:.3e})",
                    k + 1,
                    backtracks,
                    alpha
                );
                return finish(records, rho, psi, Termination::LineSearchFailed);
            }
            alpha *= 0.5;
            backtracks += 1;
        };

        let mut g_new = obj.gradient(&rho_new, &cache_new)?;
        zero_passive(&mut g_new, passive);
        let (kkt, _) = kkt_estimate(
            &step.psi_unclamped,
            &psi.values,
            alpha,
            step.mu,
            &rho_new,
            cfg.kkt_variant,
            passive,
        )?;
        let s = stationarity(&rho_new, &g_new, adm)?;
        alpha_gbb = gbb_stepsize(&step.psi.values, &psi.values, &rho_new, &rho, &g_new, &g);
        alpha_prev = alpha;
        records.push(IterationRecord {
            iter: k + 1,
            objective: f_new,
            alpha: Some(alpha),
            mu: Some(step.mu),
            kkt: Some(kkt),
            stationarity: Some(s),
            backtracks,
            evaluations: evals(),
            volume: rho_new.volume(),
        });
        log::debug!(
            "iter {:4}  F {:.10e}  alpha {:.3e}  kkt {:.3e}  S {:.3e}  bt {}",
            k + 1,
            f_new,
            alpha,
            kkt,
            s,
            backtracks
        );
        psi = step.psi;
        rho = rho_new;
        f = f_new;
        g = g_new;
        if stopper.done(Some(kkt), s) {
            return finish(records, rho, psi, Termination::Converged);
        }
    }
    finish(records, rho, psi, Termination::MaxIterations)
}
