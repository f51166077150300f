//! Design fields and the Fermi–Dirac geometry shared by every optimizer.
//!
//! Densities live in `(0, 1)` per design cell; the latent field holds their
//! logits. The diagonal mass matrix of the piecewise-constant density space is
//! stored as the vector of cell volumes and used as the weight of every
//! discrete `L²` pairing.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Default bound on latent magnitudes.
///
/// `σ(±30)` is still strictly inside `(0, 1)` in double precision, so every
/// clamped latent field maps to a strictly interior density.
pub const DEFAULT_CLAMP_BOUND: f64 = 30.0;

/// Logistic sigmoid `1 / (1 + exp(-x))`, evaluated on the branch that never
/// overflows.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln σ(x)` without forming `σ(x)`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// `ln(1 + exp(x))`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`sigmoid`]: `ln(ρ / (1 - ρ))` for `ρ` strictly inside `(0, 1)`.
pub fn logit(rho: f64) -> Result<f64> {
    if rho > 0.0 && rho < 1.0 {
        Ok(rho.ln() - (-rho).ln_1p())
    } else {
        Err(Error::Domain {
            value: rho,
            context: "logit",
        })
    }
}

pub fn sigmoid_vec(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid(v)).collect()
}

/// `x ln x` with the convention `0 ln 0 = 0`.
#[inline]
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Pairwise summation, so that reductions are reproducible and accurate
/// independent of how the terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if values.len() <= BLOCK {
        values.iter().sum()
    } else {
        let mid = values.len() / 2;
        pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
    }
}

/// Sum of `f(i)` over `0..n` using pairwise reduction over fixed blocks.
pub(crate) fn pairwise_map_sum(n: usize, f: impl Fn(usize) -> f64) -> f64 {
    const BLOCK: usize = 64;
    fn rec(lo: usize, hi: usize, f: &dyn Fn(usize) -> f64) -> f64 {
        if hi - lo <= BLOCK {
            (lo..hi).map(f).sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            rec(lo, mid, f) + rec(mid, hi, f)
        }
    }
    rec(0, n, &f)
}

/// Discrete `L²` pairing `aᵀ M b` with diagonal `M`.
pub fn weighted_inner(a: &[f64], b: &[f64], weights: &[f64]) -> Result<f64> {
    check_len(weights.len(), a.len())?;
    check_len(weights.len(), b.len())?;
    Ok(pairwise_map_sum(weights.len(), |i| weights[i] * a[i] * b[i]))
}

/// Piecewise-constant density coefficients together with the cell volumes
/// (the diagonal of the density mass matrix).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    pub values: Vec<f64>,
    pub cell_volumes: Vec<f64>,
}

impl DensityField {
    pub fn new(values: Vec<f64>, cell_volumes: Vec<f64>) -> Result<Self> {
        check_len(cell_volumes.len(), values.len())?;
        if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidParameter(format!(
                "density value {v} outside [0, 1]"
            )));
        }
        if let Some(&w) = cell_volumes.iter().find(|w| !(**w > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "cell volume {w} is not positive"
            )));
        }
        Ok(Self {
            values,
            cell_volumes,
        })
    }

    pub fn uniform(value: f64, cell_volumes: Vec<f64>) -> Result<Self> {
        Self::new(vec![value; cell_volumes.len()], cell_volumes)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `1ᵀ M ρ`.
    pub fn volume(&self) -> f64 {
        pairwise_map_sum(self.len(), |i| self.cell_volumes[i] * self.values[i])
    }

    /// `|Ω| = tr M`.
    pub fn domain_volume(&self) -> f64 {
        pairwise_sum(&self.cell_volumes)
    }

    pub fn to_latent(&self, clamp_bound: f64) -> Result<LatentField> {
        let values = self
            .values
            .iter()
            .map(|&r| logit(r).map(|x| x.clamp(-clamp_bound, clamp_bound)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LatentField {
            values,
            clamp_bound,
        })
    }
}

/// Latent (logit-scale) coefficients with `ρ = σ(ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentField {
    pub values: Vec<f64>,
    pub clamp_bound: f64,
}

impl LatentField {
    pub fn new(values: Vec<f64>, clamp_bound: f64) -> Result<Self> {
        if !(clamp_bound > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "clamp bound must be positive, got {clamp_bound}"
            )));
        }
        Ok(Self {
            values,
            clamp_bound,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Projects every component onto `[-M, M]`.
    pub fn clamp(&mut self) {
        let m = self.clamp_bound;
        for v in &mut self.values {
            *v = v.clamp(-m, m);
        }
    }

    pub fn density(&self, cell_volumes: &[f64]) -> Result<DensityField> {
        check_len(cell_volumes.len(), self.len())?;
        Ok(DensityField {
            values: sigmoid_vec(&self.values),
            cell_volumes: cell_volumes.to_vec(),
        })
    }
}

/// Volume fraction and domain measure defining the admissible set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibleParams {
    pub theta: f64,
    pub domain_volume: f64,
}

impl AdmissibleParams {
    pub fn new(theta: f64, domain_volume: f64) -> Result<Self> {
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "volume fraction must lie in (0, 1), got {theta}"
            )));
        }
        if !(domain_volume > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "domain volume must be positive, got {domain_volume}"
            )));
        }
        Ok(Self {
            theta,
            domain_volume,
        })
    }

    /// `θ |Ω|`.
    pub fn volume_bound(&self) -> f64 {
        self.theta * self.domain_volume
    }
}

/// Negative Fermi–Dirac entropy `Σ Mᵢ [ρᵢ ln ρᵢ + (1 - ρᵢ) ln(1 - ρᵢ)]`.
pub fn fermi_dirac_entropy(rho: &DensityField) -> f64 {
    pairwise_map_sum(rho.len(), |i| {
        let r = rho.values[i];
        rho.cell_volumes[i] * (xlogx(r) + xlogx(1.0 - r))
    })
}

/// Bregman divergence of the Fermi–Dirac entropy, i.e. the volume-weighted
/// sum of binary Kullback–Leibler terms.
pub fn bregman_divergence(rho: &DensityField, q: &DensityField) -> Result<f64> {
    check_len(rho.len(), q.len())?;
    if let Some(&v) = q.values.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::Domain {
            value: v,
            context: "bregman_divergence reference point",
        });
    }
    Ok(pairwise_map_sum(rho.len(), |i| {
        let (r, s) = (rho.values[i], q.values[i]);
        rho.cell_volumes[i] * binary_kl(r, 1.0 - r, s, 1.0 - s, r - s)
    }))
}

/// `r ln(r/s) + r̄ ln(r̄/s̄)` given both complements and the difference
/// `r - s`, written with `ln_1p` so that nearby arguments do not cancel.
#[inline]
fn binary_kl(r: f64, r_bar: f64, s: f64, s_bar: f64, diff: f64) -> f64 {
    let a = if r == 0.0 { 0.0 } else { r * (diff / s).ln_1p() };
    let b = if r_bar == 0.0 {
        0.0
    } else {
        r_bar * (-diff / s_bar).ln_1p()
    };
    a + b
}

/// `σ(a) - σ(b)` computed on the side of `1/2` where both values keep full
/// relative precision.
#[inline]
pub fn sigmoid_difference(a: f64, b: f64) -> f64 {
    if a.min(b) > 0.0 {
        sigmoid(-b) - sigmoid(-a)
    } else {
        sigmoid(a) - sigmoid(b)
    }
}

/// Componentwise `σ(ψ_new) - σ(ψ_old)`.
pub fn density_increment(psi_new: &[f64], psi_old: &[f64]) -> Vec<f64> {
    psi_new
        .iter()
        .zip(psi_old)
        .map(|(&a, &b)| sigmoid_difference(a, b))
        .collect()
}

/// Fermi–Dirac Bregman divergence `D(σ(ψ_new), σ(ψ_old))` evaluated from the
/// latent values, which stays finite even when densities round to 0 or 1.
pub fn bregman_divergence_latent(
    psi_new: &[f64],
    psi_old: &[f64],
    cell_volumes: &[f64],
) -> Result<f64> {
    check_len(cell_volumes.len(), psi_new.len())?;
    check_len(cell_volumes.len(), psi_old.len())?;
    Ok(pairwise_map_sum(cell_volumes.len(), |i| {
        let (a, b) = (psi_new[i], psi_old[i]);
        cell_volumes[i]
            * binary_kl(
                sigmoid(a),
                sigmoid(-a),
                sigmoid(b),
                sigmoid(-b),
                sigmoid_difference(a, b),
            )
    }))
}
