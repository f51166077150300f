//! Compressed-row sparse matrices and preconditioned conjugate gradients for
//! the symmetric positive definite systems of the state, adjoint and filter
//! equations. Two preconditioners are provided: the diagonal (Jacobi) one and
//! a Galerkin multigrid V-cycle over user-supplied prolongations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Rows below this count are multiplied sequentially.
const PARALLEL_ROWS: usize = 16_384;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are
    /// summed; columns within a row are sorted, so the result only depends on
    /// the multiset of triplets and their order of accumulation.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(r, c, v) in triplets {
            let k = next[r];
            cols[k] = c;
            vals[k] = v;
            next[r] += 1;
        }

        let mut row_ptr = Vec::with_capacity(nrows + 1);
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_ptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..nrows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            // stable: duplicates keep their insertion order
            order.sort_by_key(|&k| cols[k]);
            let mut last: Option<usize> = None;
            for &k in &order {
                if last == Some(cols[k]) {
                    *values.last_mut().unwrap() += vals[k];
                } else {
                    col_idx.push(cols[k]);
                    values.push(vals[k]);
                    last = Some(cols[k]);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_ptr(&self) -> &[usize] {
        &self.row_ptr
    }

    pub fn col_idx(&self) -> &[usize] {
        &self.col_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Position of `(row, col)` in the value array, if stored.
    pub fn position(&self, row: usize, col: usize) -> Option<usize> {
        let (lo, hi) = (self.row_ptr[row], self.row_ptr[row + 1]);
        self.col_idx[lo..hi]
            .binary_search(&col)
            .ok()
            .map(|k| lo + k)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.position(row, col).map_or(0.0, |k| self.values[k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.values {
            *v *= s;
        }
    }

    /// `self + s · other` for matrices sharing the same dimensions.
    pub fn add_scaled(&self, s: f64, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut triplets = Vec::with_capacity(self.nnz() + other.nnz());
        for (m, f) in [(self, 1.0), (other, s)] {
            for r in 0..m.nrows {
                for k in m.row_ptr[r]..m.row_ptr[r + 1] {
                    triplets.push((r, m.col_idx[k], f * m.values[k]));
                }
            }
        }
        CsrMatrix::from_triplets(self.nrows, self.ncols, &triplets)
    }

    #[inline]
    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let (lo, hi) = (self.row_ptr[r], self.row_ptr[r + 1]);
        self.col_idx[lo..hi]
            .iter()
            .zip(&self.values[lo..hi])
            .map(|(&c, &v)| v * x[c])
            .sum()
    }

    /// `y = A x`. Rows are independent, so the result does not depend on the
    /// number of threads.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        if self.nrows >= PARALLEL_ROWS {
            y.par_iter_mut()
                .enumerate()
                .for_each(|(r, yr)| *yr = self.row_dot(r, x));
        } else {
            for (r, yr) in y.iter_mut().enumerate() {
                *yr = self.row_dot(r, x);
            }
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `y = Aᵀ x`, accumulated row by row in a fixed order.
    pub fn mul_transpose_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            let xr = x[r];
            if xr == 0.0 {
                continue;
            }
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * xr;
            }
        }
        y
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.nrows)
            .map(|r| {
                self.values[self.row_ptr[r]..self.row_ptr[r + 1]]
                    .iter()
                    .map(|v| v.abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Probes `xᵀAy - yᵀAx` with two fixed pseudo-random vectors.
    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                col_idx[next[c]] = r;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse product `self · other`.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.nrows, "matmul dimension mismatch");
        let mut acc = vec![0.0; other.ncols];
        let mut seen = vec![false; other.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut row_ptr = Vec::with_capacity(self.nrows + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for r in 0..self.nrows {
            cols.clear();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let (m, a) = (self.col_idx[k], self.values[k]);
                for q in other.row_ptr[m]..other.row_ptr[m + 1] {
                    let c = other.col_idx[q];
                    if !seen[c] {
                        seen[c] = true;
                        cols.push(c);
                    }
                    acc[c] += a * other.values[q];
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                col_idx.push(c);
                values.push(acc[c]);
                acc[c] = 0.0;
                seen[c] = false;
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix {
            nrows: self.nrows,
            ncols: other.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    fn diagonal_positions(&self) -> Vec<Option<usize>> {
        (0..self.nrows).map(|i| self.position(i, i)).collect()
    }

    /// One Gauss–Seidel sweep on `A x = b`, forward or backward in row order.
    fn gauss_seidel(&self, diag: &[Option<usize>], b: &[f64], x: &mut [f64], forward: bool) {
        let mut relax = |r: usize| {
            let Some(d) = diag[r] else { return };
            let mut sum = b[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if k != d {
                    sum -= self.values[k] * x[self.col_idx[k]];
                }
            }
            x[r] = sum / self.values[d];
        };
        if forward {
            (0..self.nrows).for_each(&mut relax);
        } else {
            (0..self.nrows).rev().for_each(&mut relax);
        }
    }

    /// `max |a_ij - a_ji|` over stored entries; a missing mirror entry counts
    /// as zero. Non-square matrices report infinity.
    pub fn symmetry_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    crate::fields::pairwise_map_sum(a.len(), |i| a[i] * b[i])
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Solves `A x = b` with Jacobi-preconditioned conjugate gradients.
///
/// Convergence means `‖b - A x‖₂ ≤ tol ‖b‖₂`. `x0` warm-starts the iteration.
/// Failure to converge within `max_it` iterations, or a non-positive
/// curvature `pᵀAp`, is returned as [`Error::SolverDiverged`].
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_it: usize,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport)> {
    cg_solve_logged(a, b, tol, max_it, x0, None)
}

/// As [`cg_solve`]; when `energy_log` is given, the quadratic energy
/// `½xᵀAx - bᵀx` of every iterate is appended to it. That energy is the
/// `A`-norm error up to a constant and decreases monotonically.
pub fn cg_solve_logged(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_it: usize,
    x0: Option<&[f64]>,
    energy_log: Option<&mut Vec<f64>>,
) -> Result<(Vec<f64>, SolveReport)> {
    pcg_solve(a, b, tol, max_it, x0, &Jacobi::new(a), energy_log)
}

/// Preconditioned conjugate gradients with an arbitrary symmetric positive
/// definite preconditioner. Same contract as [`cg_solve`].
pub fn pcg_solve(
    a: &CsrMatrix,
    b: &[f64],
    tol: f64,
    max_it: usize,
    x0: Option<&[f64]>,
    precond: &dyn Preconditioner,
    mut energy_log: Option<&mut Vec<f64>>,
) -> Result<(Vec<f64>, SolveReport)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::InvalidParameter(format!(
            "cg_solve needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    check_len(n, b.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "solver tolerance must be positive, got {tol}"
        )));
    }
    debug_assert!(
        a.symmetry_defect() <= 1e-10 * a.norm_inf().max(1.0) * n as f64,
        "cg_solve called with a nonsymmetric matrix"
    );

    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                converged: true,
            },
        ));
    }

    let mut x = match x0 {
        Some(x0) => {
            check_len(n, x0.len())?;
            x0.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut ap = vec![0.0; n];
    let mut r: Vec<f64> = if x0.is_some() {
        a.mul_vec_into(&x, &mut ap);
        b.iter().zip(&ap).map(|(bi, ai)| bi - ai).collect()
    } else {
        b.to_vec()
    };
    let log_energy = |x: &[f64], r: &[f64], log: &mut Vec<f64>| {
        // ½xᵀAx - bᵀx = -½ xᵀ(b + r)
        log.push(-0.5 * crate::fields::pairwise_map_sum(n, |i| x[i] * (b[i] + r[i])));
    };
    if let Some(log) = energy_log.as_deref_mut() {
        log_energy(&x, &r, log);
    }

    let mut res = norm2(&r);
    let mut report = SolveReport {
        iterations: 0,
        relative_residual: res / b_norm,
        converged: res <= tol * b_norm,
    };
    if report.converged {
        return Ok((x, report));
    }

    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for it in 1..=max_it {
        a.mul_vec_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            report.iterations = it;
            return Err(Error::SolverDiverged(report));
        }
        let step = rz / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        if let Some(log) = energy_log.as_deref_mut() {
            log_energy(&x, &r, log);
        }
        res = norm2(&r);
        report.iterations = it;
        report.relative_residual = res / b_norm;
        if res <= tol * b_norm {
            report.converged = true;
            return Ok((x, report));
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged(report))
}

/// Symmetric positive definite approximation of `A⁻¹` used by [`pcg_solve`].
pub trait Preconditioner: Sync {
    /// `z ← B r`.
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// `B = diag(A)⁻¹`; zero or negative diagonal entries are replaced by one.
#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Self {
        Self {
            inv_diag: a
                .diagonal()
                .into_iter()
                .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
                .collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// Dense Cholesky factor for the coarsest multigrid level.
#[derive(Debug, Clone)]
struct DenseCholesky {
    n: usize,
    l: Vec<f64>,
}

impl DenseCholesky {
    fn factor(a: &CsrMatrix) -> Option<Self> {
        let n = a.nrows();
        let mut l = vec![0.0; n * n];
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                l[r * n + a.col_idx[k]] = a.values[k];
            }
        }
        for j in 0..n {
            let mut d = l[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > 0.0) {
                return None;
            }
            let d = d.sqrt();
            l[j * n + j] = d;
            for i in j + 1..n {
                let mut v = l[i * n + j];
                for k in 0..j {
                    v -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = v / d;
            }
        }
        Some(Self { n, l })
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let (n, l) = (self.n, &self.l);
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= l[i * n + k] * x[k];
            }
            x[i] = v / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut v = x[i];
            for k in i + 1..n {
                v -= l[k * n + i] * x[k];
            }
            x[i] = v / l[i * n + i];
        }
    }
}

/// Coarsest levels up to this many unknowns are solved exactly.
const DENSE_COARSE_LIMIT: usize = 2_000;

/// Grid transfers of a multigrid hierarchy, independent of the operator.
#[derive(Debug, Clone)]
pub struct MultigridHierarchy {
    /// `prolongations[l]` maps level `l + 1` to level `l` (level 0 is finest).
    prolongations: Vec<CsrMatrix>,
    restrictions: Vec<CsrMatrix>,
    /// Gauss–Seidel sweeps before and after each coarse correction.
    pub sweeps: usize,
}

impl MultigridHierarchy {
    pub fn new(prolongations: Vec<CsrMatrix>) -> Result<Self> {
        for w in prolongations.windows(2) {
            check_len(w[0].ncols(), w[1].nrows())?;
        }
        let restrictions = prolongations.iter().map(CsrMatrix::transpose).collect();
        Ok(Self {
            prolongations,
            restrictions,
            sweeps: 1,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.prolongations.len() + 1
    }

    /// Galerkin coarse operators `Pᵀ A P` for `a` and a V-cycle over them.
    pub fn preconditioner<'a>(&'a self, a: &'a CsrMatrix) -> Result<Multigrid<'a>> {
        if let Some(p) = self.prolongations.first() {
            check_len(a.nrows(), p.nrows())?;
        }
        let mut coarse: Vec<CsrMatrix> = Vec::with_capacity(self.prolongations.len());
        for (p, r) in self.prolongations.iter().zip(&self.restrictions) {
            let fine = coarse.last().unwrap_or(a);
            let mut ac = r.matmul(&fine.matmul(p));
            // unknowns the prolongation never reaches get an identity row
            let diag = ac.diagonal_positions();
            let mut fix = Vec::new();
            for (i, d) in diag.iter().enumerate() {
                if d.map_or(true, |k| ac.values[k] == 0.0) {
                    fix.push((i, i, 1.0));
                }
            }
            if !fix.is_empty() {
                ac = ac.add_scaled(1.0, &CsrMatrix::from_triplets(ac.nrows, ac.ncols, &fix));
            }
            coarse.push(ac);
        }
        let last = coarse.last().unwrap_or(a);
        let exact = if last.nrows() <= DENSE_COARSE_LIMIT {
            DenseCholesky::factor(last)
        } else {
            None
        };
        let mut diags = vec![a.diagonal_positions()];
        diags.extend(coarse.iter().map(CsrMatrix::diagonal_positions));
        Ok(Multigrid {
            hierarchy: self,
            fine: a,
            coarse,
            diags,
            exact,
        })
    }
}

/// Symmetric V-cycle: forward Gauss–Seidel before and backward Gauss–Seidel
/// after each coarse correction, exact or smoothed solve on the coarsest level.
#[derive(Debug)]
pub struct Multigrid<'a> {
    hierarchy: &'a MultigridHierarchy,
    fine: &'a CsrMatrix,
    coarse: Vec<CsrMatrix>,
    diags: Vec<Vec<Option<usize>>>,
    exact: Option<DenseCholesky>,
}

impl Multigrid<'_> {
    fn level(&self, l: usize) -> &CsrMatrix {
        if l == 0 {
            self.fine
        } else {
            &self.coarse[l - 1]
        }
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        let a = self.level(l);
        let diag = &self.diags[l];
        x.iter_mut().for_each(|v| *v = 0.0);
        if l == self.coarse.len() {
            match &self.exact {
                Some(chol) => chol.solve(b, x),
                None => {
                    for _ in 0..4 * self.hierarchy.sweeps {
                        a.gauss_seidel(diag, b, x, true);
                        a.gauss_seidel(diag, b, x, false);
                    }
                }
            }
            return;
        }
        let sweeps = self.hierarchy.sweeps;
        for _ in 0..sweeps {
            a.gauss_seidel(diag, b, x, true);
        }
        let mut r = vec![0.0; b.len()];
        a.mul_vec_into(x, &mut r);
        r.iter_mut().zip(b).for_each(|(ri, bi)| *ri = bi - *ri);
        let bc = self.hierarchy.restrictions[l].mul_vec(&r);
        let mut xc = vec![0.0; bc.len()];
        self.cycle(l + 1, &bc, &mut xc);
        let p = &self.hierarchy.prolongations[l];
        p.mul_vec_into(&xc, &mut r);
        x.iter_mut().zip(&r).for_each(|(xi, ci)| *xi += ci);
        for _ in 0..sweeps {
            a.gauss_seidel(diag, b, x, false);
        }
    }
}

impl Preconditioner for Multigrid<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, seed: u64) -> (CsrMatrix, nalgebra::DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = nalgebra::DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let dense = &b * b.transpose() + nalgebra::DMatrix::identity(n, n) * (n as f64 * 0.1);
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                triplets.push((i, j, dense[(i, j)]));
            }
        }
        (CsrMatrix::from_triplets(n, n, &triplets), dense)
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(
            2,
            3,
            &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 3.0), (1, 1, -1.0)],
        );
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(0, 2), 4.0);
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 0), 0.0);
        assert_eq!(m.mul_vec(&[1.0, 1.0, 1.0]), vec![6.0, -1.0]);
        assert_eq!(m.mul_transpose_vec(&[1.0, 2.0]), vec![2.0, -2.0, 4.0]);
    }

    #[test]
    fn identity_solves_in_one_iteration() {
        let a = CsrMatrix::identity(7);
        let b: Vec<f64> = (0..7).map(|i| i as f64 - 2.5).collect();
        let (x, rep) = cg_solve(&a, &b, 1e-12, 10, None).unwrap();
        assert_eq!(x, b);
        assert_eq!(rep.iterations, 1);
        assert!(rep.converged);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let (a, _) = random_spd(5, 1);
        let (x, rep) = cg_solve(&a, &[0.0; 5], 1e-8, 10, None).unwrap();
        assert_eq!(x, vec![0.0; 5]);
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn matches_dense_factorization() {
        let (a, dense) = random_spd(50, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let oracle = dense
            .clone()
            .cholesky()
            .unwrap()
            .solve(&nalgebra::DVector::from_column_slice(&b));
        let (x, rep) = cg_solve(&a, &b, 1e-12, 500, None).unwrap();
        assert!(rep.converged && rep.relative_residual <= 1e-12);
        let err = (nalgebra::DVector::from_column_slice(&x) - &oracle).norm() / oracle.norm();
        assert!(err < 1e-8, "relative error {err}");

        // warm start from the solution converges immediately
        let (_, rep) = cg_solve(&a, &b, 1e-8, 500, Some(&x)).unwrap();
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn energy_decreases_monotonically() {
        let (a, _) = random_spd(40, 3);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let mut log = Vec::new();
        cg_solve_logged(&a, &b, 1e-12, 500, None, Some(&mut log)).unwrap();
        assert!(log.len() > 2);
        for w in log.windows(2) {
            assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0), "{w:?}");
        }
    }

    #[test]
    fn nonconvergence_is_an_error() {
        let (a, _) = random_spd(30, 5);
        let b = vec![1.0; 30];
        match cg_solve(&a, &b, 1e-14, 2, None) {
            Err(Error::SolverDiverged(rep)) => {
                assert_eq!(rep.iterations, 2);
                assert!(!rep.converged);
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, -1.0)]);
        assert!(matches!(
            cg_solve(&a, &[1.0, 1.0], 1e-10, 10, None),
            Err(Error::SolverDiverged(_))
        ));
    }

    #[test]
    fn add_scaled_combines_patterns() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]);
        let b = CsrMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0), (1, 1, 1.0)]);
        let c = a.add_scaled(2.0, &b);
        assert_relative_eq!(c.get(1, 1), 4.0);
        assert_relative_eq!(c.get(0, 1), 2.0);
        assert_eq!(c.symmetry_defect(), 0.0);
    }
}
