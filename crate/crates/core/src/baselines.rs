//! Reference optimizers working directly on `ρ`: projected gradient descent
//! and the optimality criteria update, plus the projected-gradient residual
//! used to compare all methods on equal terms.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fields::{pairwise_map_sum, AdmissibleParams, DensityField};
use crate::physics::Objective;
use crate::simpl::{seed_stepsize, IterationRecord, OptTrace, Termination};

/// Projects `q` onto `{0 ≤ ρ ≤ 1, 1ᵀMρ ≤ target}` with entries flagged in
/// `fixed` held at 1. Returns the projection and the shift `μ`.
fn project_masked(q: &[f64], target: f64, vols: &[f64], fixed: Option<&[bool]>) -> (Vec<f64>, f64) {
    let is_fixed = |i: usize| fixed.is_some_and(|m| m[i]);
    let shifted = |mu: f64| -> Vec<f64> {
        (0..q.len())
            .map(|i| if is_fixed(i) { 1.0 } else { (q[i] - mu).clamp(0.0, 1.0) })
            .collect()
    };
    let volume = |mu: f64| pairwise_map_sum(q.len(), |i| {
        let v = if is_fixed(i) { 1.0 } else { (q[i] - mu).clamp(0.0, 1.0) };
        vols[i] * v
    });
    if volume(0.0) <= target {
        return (shifted(0.0), 0.0);
    }
    let mut lo = 0.0;
    let mut hi = (0..q.len())
        .filter(|&i| !is_fixed(i))
        .map(|i| q[i])
        .fold(0.0, f64::max);
    for _ in 0..200 {
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
    // the volume is affine in μ on [lo, hi] once the clip pattern is frozen;
    // solve that piece exactly
    let mid = 0.5 * (lo + hi);
    let (mut free_mass, mut free_moment, mut rest) = (0.0, 0.0, 0.0);
    for i in 0..q.len() {
        let x = q[i] - mid;
        if is_fixed(i) || x >= 1.0 {
            rest += vols[i];
        } else if x > 0.0 {
            free_mass += vols[i];
            free_moment += vols[i] * q[i];
        }
    }
    let mut mu = hi;
    if free_mass > 0.0 {
        let exact = (free_moment + rest - target) / free_mass;
        if exact >= lo && exact <= hi && volume(exact) <= target {
            mu = exact;
        }
    }
    (shifted(mu), mu)
}

/// `L²(Ω)` projection of `q` onto the admissible set, `clip(q - μ, 0, 1)`
/// with `μ ≥ 0`. Returns the projection and `μ`.
pub fn l2_project(q: &[f64], adm: &AdmissibleParams, cell_volumes: &[f64]) -> Result<(DensityField, f64)> {
    check_len(cell_volumes.len(), q.len())?;
    let (values, mu) = project_masked(q, adm.volume_bound(), cell_volumes, None);
    Ok((DensityField::new(values, cell_volumes.to_vec())?, mu))
}

/// `S = ‖ρ - P(ρ - g)‖_M`.
pub fn stationarity(rho: &DensityField, g: &[f64], adm: &AdmissibleParams) -> Result<f64> {
    check_len(rho.len(), g.len())?;
    let q: Vec<f64> = rho.values.iter().zip(g).map(|(r, g)| r - g).collect();
    let (p, _) = project_masked(&q, adm.volume_bound(), &rho.cell_volumes, None);
    let vols = &rho.cell_volumes;
    Ok(pairwise_map_sum(q.len(), |i| {
        let s = rho.values[i] - p[i];
        vols[i] * s * s
    })
    .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub c1: f64,
    /// Tolerance on `S`.
    pub tol: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            tol: 1e-5,
            max_iters: 1000,
            max_backtracks: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcConfig {
    /// Move limit `m`.
    pub move_limit: f64,
    /// Damping exponent.
    pub eta: f64,
    /// Tolerance on `S`.
    pub tol: f64,
    pub max_iters: usize,
    /// Volume residual tolerance relative to `|Ω|`.
    pub bisection_tol: f64,
    /// Positive gradient entries up to this fraction of `max|g|` are treated
    /// as zero sensitivity; larger ones abort the run.
    pub positive_gradient_tol: f64,
}

impl Default for OcConfig {
    fn default() -> Self {
        Self {
            move_limit: 0.2,
            eta: 0.5,
            tol: 1e-5,
            max_iters: 300,
            bisection_tol: 1e-12,
            positive_gradient_tol: 0.05,
        }
    }
}

fn check_no_passive<O: Objective>(obj: &O) -> Result<()> {
    if obj.passive().is_some() {
        return Err(Error::InvalidParameter(
            "baseline optimizers do not support passive cells".into(),
        ));
    }
    Ok(())
}

fn record(iter: usize, objective: f64, rho: &DensityField, s: f64, evaluations: usize) -> IterationRecord {
    IterationRecord {
        iter,
        objective,
        alpha: None,
        mu: None,
        kkt: None,
        stationarity: Some(s),
        backtracks: 0,
        evaluations,
        volume: rho.volume(),
    }
}

/// Projected gradient descent `ρ ← P(ρ - α g)` with BB step seeding and
/// Armijo backtracking on the projected point.
pub fn pgd_solve<O: Objective>(
    obj: &O,
    adm: &AdmissibleParams,
    cfg: &PgdConfig,
    rho0: Option<DensityField>,
) -> Result<OptTrace> {
    check_no_passive(obj)?;
    if !(cfg.c1 > 0.0 && cfg.c1 < 1.0 && cfg.tol > 0.0) {
        return Err(Error::InvalidParameter("PGD needs 0 < c1 < 1 and tol > 0".into()));
    }
    let vols = obj.cell_volumes().to_vec();
    let start_evals = obj.evaluations();
    let evals = || obj.evaluations() - start_evals;
    let mut rho = match rho0 {
        Some(r) => r,
        None => DensityField::uniform(adm.theta, vols.clone())?,
    };
    let (mut f, cache) = obj.evaluate(&rho)?;
    let mut g = obj.gradient(&rho, &cache)?;
    let s0 = stationarity(&rho, &g, adm)?;
    let mut records = vec![record(0, f, &rho, s0, evals())];
    let finish = |records, rho, termination| {
        Ok(OptTrace {
            records,
            rho,
            psi: None,
            termination,
        })
    };
    if s0 <= cfg.tol {
        return finish(records, rho, Termination::Converged);
    }
    let n = vols.len();
    let mut alpha_prev = f64::NAN;
    let mut alpha_bb = None;
    for k in 0..cfg.max_iters {
        let Some(mut alpha) = seed_stepsize(k, alpha_bb, alpha_prev, &g) else {
            return finish(records, rho, Termination::StationaryStart);
        };
        let mut backtracks = 0;
        let (rho_new, mu, f_new, cache_new) = loop {
            let q: Vec<f64> = rho.values.iter().zip(&g).map(|(r, g)| r - alpha * g).collect();
            let (trial, mu) = l2_project(&q, adm, &vols)?;
            let (f_new, cache_new) = obj.evaluate(&trial)?;
            let slope = pairwise_map_sum(n, |i| g[i] * vols[i] * (trial.values[i] - rho.values[i]));
            if f_new <= f + cfg.c1 * slope {
                break (trial, mu, f_new, cache_new);
            }
            if backtracks == cfg.max_backtracks {
                log::warn!("PGD line search failed at iteration {}", k + 1);
                return finish(records, rho, Termination::LineSearchFailed);
            }
            alpha *= 0.5;
            backtracks += 1;
        };
        let g_new = obj.gradient(&rho_new, &cache_new)?;
        // long BB step: Δρᵀ M Δρ / |Δρᵀ M Δg|
        let num = pairwise_map_sum(n, |i| {
            let d = rho_new.values[i] - rho.values[i];
            vols[i] * d * d
        });
        let den = pairwise_map_sum(n, |i| {
            (rho_new.values[i] - rho.values[i]) * vols[i] * (g_new[i] - g[i])
        })
        .abs();
        alpha_bb = (den > 0.0 && num > 0.0).then(|| num / den);
        alpha_prev = alpha;
        let s = stationarity(&rho_new, &g_new, adm)?;
        records.push(IterationRecord {
            alpha: Some(alpha),
            mu: Some(mu),
            backtracks,
            ..record(k + 1, f_new, &rho_new, s, evals())
        });
        rho = rho_new;
        f = f_new;
        g = g_new;
        if s <= cfg.tol {
            return finish(records, rho, Termination::Converged);
        }
    }
    finish(records, rho, Termination::MaxIterations)
}

/// One optimality-criteria update with the Lagrange multiplier found by
/// bisection. Returns the new density and the multiplier.
pub fn oc_update(
    rho: &DensityField,
    g: &[f64],
    adm: &AdmissibleParams,
    cfg: &OcConfig,
) -> Result<(DensityField, f64)> {
    check_len(rho.len(), g.len())?;
    let gmax = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let positive: Vec<f64> = g.iter().copied().filter(|&v| v > 0.0).collect();
    let worst = positive.iter().copied().fold(0.0, f64::max);
    if worst > cfg.positive_gradient_tol * gmax {
        return Err(Error::OcInapplicable {
            count: positive.len(),
            max: worst,
        });
    }
    let m = cfg.move_limit;
    let vols = &rho.cell_volumes;
    let sens: Vec<f64> = g.iter().map(|&v| (-v).max(0.0)).collect();
    let update = |lambda: f64, i: usize| {
        let r = rho.values[i];
        let candidate = r * (sens[i] / lambda).powf(cfg.eta);
        candidate.clamp((r - m).max(0.0), (r + m).min(1.0))
    };
    let volume = |lambda: f64| pairwise_map_sum(rho.len(), |i| vols[i] * update(lambda, i));
    let target = adm.volume_bound();
    let tol = cfg.bisection_tol * adm.domain_volume;

    let at_lower_limits: Vec<f64> = rho.values.iter().map(|r| (r - m).max(0.0)).collect();
    if pairwise_map_sum(rho.len(), |i| vols[i] * at_lower_limits[i]) >= target {
        // even the largest admissible decrease keeps the volume above the bound
        return Ok((DensityField::new(at_lower_limits, vols.clone())?, f64::INFINITY));
    }

    // volume decreases in λ; bracket on a log scale
    let scale = if gmax > 0.0 { gmax } else { 1.0 };
    let (mut lo, mut hi) = (scale * 1e-300_f64.max(f64::MIN_POSITIVE), scale);
    while volume(hi) > target {
        hi *= 1e3;
        if !hi.is_finite() {
            return Err(Error::Bracket {
                lo,
                hi,
                residual: volume(f64::MAX) - target,
            });
        }
    }
    if volume(lo) < target {
        // every cell sits at its upper move limit and the bound cannot be reached
        let values = (0..rho.len()).map(|i| update(lo, i)).collect();
        return Ok((DensityField::new(values, vols.clone())?, lo));
    }
    for _ in 0..2000 {
        if (volume(hi) - target).abs() <= tol {
            break;
        }
        let mid = (lo * hi).sqrt();
        let mid = if mid > lo && mid < hi { mid } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if volume(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let values = (0..rho.len()).map(|i| update(hi, i)).collect();
    Ok((DensityField::new(values, vols.clone())?, hi))
}

/// Optimality criteria iteration; stops when `S ≤ tol` or at `max_iters`.
pub fn oc_solve<O: Objective>(
    obj: &O,
    adm: &AdmissibleParams,
    cfg: &OcConfig,
    rho0: Option<DensityField>,
) -> Result<OptTrace> {
    check_no_passive(obj)?;
    if !(cfg.move_limit > 0.0 && cfg.move_limit <= 1.0 && cfg.eta > 0.0 && cfg.tol > 0.0) {
        return Err(Error::InvalidParameter(
            "OC needs a move limit in (0, 1], a positive exponent and tol > 0".into(),
        ));
    }
    let vols = obj.cell_volumes().to_vec();
    let start_evals = obj.evaluations();
    let evals = || obj.evaluations() - start_evals;
    let mut rho = match rho0 {
        Some(r) => r,
        None => DensityField::uniform(adm.theta, vols.clone())?,
    };
    let (f, cache) = obj.evaluate(&rho)?;
    let mut g = obj.gradient(&rho, &cache)?;
    let s0 = stationarity(&rho, &g, adm)?;
    let mut records = vec![record(0, f, &rho, s0, evals())];
    if s0 <= cfg.tol {
        return Ok(OptTrace {
            records,
            rho,
            psi: None,
            termination: Termination::Converged,
        });
    }
    for k in 0..cfg.max_iters {
        let (rho_new, lambda) = oc_update(&rho, &g, adm, cfg)?;
        let (f_new, cache_new) = obj.evaluate(&rho_new)?;
        g = obj.gradient(&rho_new, &cache_new)?;
        let s = stationarity(&rho_new, &g, adm)?;
        records.push(IterationRecord {
            mu: Some(lambda),
            ..record(k + 1, f_new, &rho_new, s, evals())
        });
        rho = rho_new;
        if s <= cfg.tol {
            return Ok(OptTrace {
                records,
                rho,
                psi: None,
                termination: Termination::Converged,
            });
        }
    }
    Ok(OptTrace {
        records,
        rho,
        psi: None,
        termination: Termination::MaxIterations,
    })
}
