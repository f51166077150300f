//! Reduced objective `F(ρ)` and its `L²` gradient.
//!
//! One evaluation runs the filter solve, the SIMP stiffness build and the
//! state solve. The gradient reuses those results: it solves the adjoint
//! elasticity problem (skipped when the objective is self-adjoint), forms the
//! nodal dual load, solves the filter system once more, maps the result back
//! to cells with `Nᵀ` and divides by the cell volumes.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::fields::{pairwise_map_sum, DensityField};
use crate::grid::{vector_prolongations, BoundarySegment, CartesianMesh, ElasticModel, FemSpaces, FilterOperators};
use crate::linsolve::{pcg_solve, CsrMatrix, Jacobi, MultigridHierarchy, Preconditioner};

/// Preconditioner for the elasticity solves. Filter solves always use Jacobi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PreconditionerKind {
    Jacobi,
    Multigrid,
}

/// Coarsest multigrid level kept above this many unknowns.
const MIN_COARSE_DOFS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative residual for state and adjoint solves.
    pub state_tol: f64,
    /// Relative residual for filter solves.
    pub filter_tol: f64,
    pub max_iters: usize,
    /// Start each solve from the previous solution of the same system.
    pub warm_start: bool,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            state_tol: 1e-8,
            filter_tol: 1e-10,
            max_iters: 200_000,
            warm_start: true,
            preconditioner: PreconditionerKind::Multigrid,
        }
    }
}

/// One side of a compliant mechanism: a boundary segment with an axis-aligned
/// unit direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Port {
    pub segment: BoundarySegment,
    pub direction: (f64, f64),
}

impl Port {
    /// `∫_port φ ds · direction` as a displacement-space vector.
    pub fn load_vector(&self, mesh: &CartesianMesh) -> Vec<f64> {
        let mut v = vec![0.0; mesh.num_dofs()];
        for (n, w) in self.segment.node_weights(mesh) {
            v[2 * n] += w * self.direction.0;
            v[2 * n + 1] += w * self.direction.1;
        }
        v
    }

    fn component(&self) -> Result<usize> {
        match self.direction {
            (x, y) if y == 0.0 && x.abs() == 1.0 => Ok(0),
            (x, y) if x == 0.0 && y.abs() == 1.0 => Ok(1),
            d => Err(Error::InvalidParameter(format!(
                "port direction must be an axis unit vector, got {d:?}"
            ))),
        }
    }
}

/// Spring-and-load model of a compliant mechanism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MechanismSpec {
    pub k_in: f64,
    pub k_out: f64,
    /// Port length `L`.
    pub port_length: f64,
    pub input: Port,
    pub output: Port,
}

/// Load, springs and output vector derived from a [`MechanismSpec`].
#[derive(Debug, Clone)]
pub struct MechanismParts {
    /// `(k_in / L) d_in`.
    pub load: Vec<f64>,
    /// `(k / L) ∫ φ ds` on the port DOFs along each port direction.
    pub springs: Vec<(usize, f64)>,
    pub r_out: Vec<f64>,
    /// `k_out / L`.
    pub output_scale: f64,
}

impl MechanismSpec {
    pub fn build(&self, mesh: &CartesianMesh, spaces: &FemSpaces) -> Result<MechanismParts> {
        if !(self.k_in > 0.0 && self.k_out > 0.0 && self.port_length > 0.0) {
            return Err(Error::InvalidParameter(
                "spring constants and port length must be positive".into(),
            ));
        }
        let mut springs = Vec::new();
        for (port, k) in [(&self.input, self.k_in), (&self.output, self.k_out)] {
            let comp = port.component()?;
            let weights = port.segment.node_weights(mesh);
            if weights.is_empty() {
                return Err(Error::EmptyLoadRegion(format!("port {:?}", port.segment)));
            }
            for (n, w) in weights {
                springs.push((2 * n + comp, k / self.port_length * w));
            }
        }
        let mut load = self.input.load_vector(mesh);
        load.iter_mut().for_each(|v| *v *= self.k_in / self.port_length);
        spaces.apply_homogeneous(&mut load);
        let mut r_out = self.output.load_vector(mesh);
        spaces.apply_homogeneous(&mut r_out);
        Ok(MechanismParts {
            load,
            springs,
            r_out,
            output_scale: self.k_out / self.port_length,
        })
    }
}

#[derive(Debug, Clone)]
pub enum ObjectiveKind {
    /// `fᵀu`.
    Compliance,
    /// `(f + g(ρ̃))ᵀu` with the self-weight operator `g(ρ̃) = G ρ̃`.
    SelfWeight { gravity: f64, operator: CsrMatrix },
    /// `-(k_out / L) r_outᵀ u`.
    Mechanism { r_out: Vec<f64>, output_scale: f64 },
}

/// Filtered density, displacement and stiffness produced by one evaluation.
#[derive(Debug, Clone)]
pub struct EvalCache {
    fingerprint: u64,
    /// Nodal filtered density.
    pub rho_tilde: Vec<f64>,
    /// Centroid values of the filtered density.
    pub rho_tilde_cells: Vec<f64>,
    pub young: Vec<f64>,
    pub u: Vec<f64>,
    pub objective: f64,
}

impl EvalCache {
    pub fn matches(&self, rho: &DensityField) -> bool {
        self.fingerprint == fingerprint(&rho.values)
    }
}

fn fingerprint(values: &[f64]) -> u64 {
    let mut h = DefaultHasher::new();
    values.len().hash(&mut h);
    for v in values {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

#[derive(Debug, Default)]
struct WarmStart {
    filter: Option<Vec<f64>>,
    state: Option<Vec<f64>>,
    adjoint: Option<Vec<f64>>,
    dual: Option<Vec<f64>>,
}

/// `F(ρ) = F̂(ρ̃(ρ), u(ρ̃(ρ)))` for one elastic model and filter.
#[derive(Debug)]
pub struct ReducedObjective {
    pub model: ElasticModel,
    pub filters: FilterOperators,
    pub kind: ObjectiveKind,
    pub solver: SolverSettings,
    hierarchy: MultigridHierarchy,
    evaluations: AtomicUsize,
    warm: Mutex<WarmStart>,
}

impl ReducedObjective {
    pub fn new(model: ElasticModel, filters: FilterOperators, kind: ObjectiveKind) -> Result<Self> {
        check_len(model.mesh.num_cells(), filters.m.len())?;
        match &kind {
            ObjectiveKind::Mechanism { r_out, .. } => check_len(model.mesh.num_dofs(), r_out.len())?,
            ObjectiveKind::SelfWeight { operator, .. } => {
                check_len(model.mesh.num_dofs(), operator.nrows())?;
                check_len(model.mesh.num_nodes(), operator.ncols())?;
            }
            ObjectiveKind::Compliance => {}
        }
        let hierarchy = MultigridHierarchy::new(vector_prolongations(
            &model.mesh,
            &model.spaces.dirichlet_mask,
            MIN_COARSE_DOFS,
        ))?;
        Ok(Self {
            model,
            filters,
            kind,
            solver: SolverSettings::default(),
            hierarchy,
            evaluations: AtomicUsize::new(0),
            warm: Mutex::new(WarmStart::default()),
        })
    }

    pub fn compliance(model: ElasticModel, filters: FilterOperators) -> Result<Self> {
        Self::new(model, filters, ObjectiveKind::Compliance)
    }

    pub fn self_weight(model: ElasticModel, filters: FilterOperators, gravity: f64) -> Result<Self> {
        let operator = crate::grid::self_weight_operator(&model.mesh, gravity, &model.spaces);
        Self::new(model, filters, ObjectiveKind::SelfWeight { gravity, operator })
    }

    /// Installs the port springs and input load on `model` and builds the
    /// output-displacement objective.
    pub fn mechanism(model: ElasticModel, filters: FilterOperators, spec: &MechanismSpec) -> Result<Self> {
        let parts = spec.build(&model.mesh, &model.spaces)?;
        let mut model = model.with_springs(parts.springs);
        model.load = parts.load;
        Self::new(
            model,
            filters,
            ObjectiveKind::Mechanism {
                r_out: parts.r_out,
                output_scale: parts.output_scale,
            },
        )
    }

    pub fn with_solver(mut self, solver: SolverSettings) -> Self {
        self.solver = solver;
        self
    }

    pub fn cell_volumes(&self) -> &[f64] {
        &self.filters.m
    }

    /// Number of objective evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }

    pub fn reset_evaluations(&self) {
        self.evaluations.store(0, Ordering::SeqCst);
    }

    /// Drops all stored warm-start vectors.
    pub fn clear_warm_start(&self) {
        *self.warm.lock().unwrap() = WarmStart::default();
    }

    fn solve(
        &self,
        a: &CsrMatrix,
        b: &[f64],
        tol: f64,
        precond: &dyn Preconditioner,
        slot: impl Fn(&mut WarmStart) -> &mut Option<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let x0 = if self.solver.warm_start {
            slot(&mut self.warm.lock().unwrap()).clone()
        } else {
            None
        };
        let (x, report) = pcg_solve(a, b, tol, self.solver.max_iters, x0.as_deref(), precond, None)?;
        log::trace!("cg: {} iterations, residual {:.2e}", report.iterations, report.relative_residual);
        if self.solver.warm_start {
            *slot(&mut self.warm.lock().unwrap()) = Some(x.clone());
        }
        Ok(x)
    }

    fn solve_elasticity(
        &self,
        k: &CsrMatrix,
        b: &[f64],
        slot: impl Fn(&mut WarmStart) -> &mut Option<Vec<f64>>,
    ) -> Result<Vec<f64>> {
        let tol = self.solver.state_tol;
        match self.solver.preconditioner {
            PreconditionerKind::Jacobi => self.solve(k, b, tol, &Jacobi::new(k), slot),
            PreconditionerKind::Multigrid => {
                let mg = self.hierarchy.preconditioner(k)?;
                self.solve(k, b, tol, &mg, slot)
            }
        }
    }

    /// Solves `(ε²A + M̃) ρ̃ = N ρ`.
    pub fn apply_filter(&self, rho: &DensityField) -> Result<Vec<f64>> {
        check_len(self.filters.n.ncols(), rho.len())?;
        let rhs = self.filters.n.mul_vec(&rho.values);
        let precond = Jacobi::new(&self.filters.system);
        self.solve(&self.filters.system, &rhs, self.solver.filter_tol, &precond, |w| &mut w.filter)
    }

    /// `Eₑ = E_min + max(ρ̃ₑ, 0)ᵖ (E_max - E_min)`.
    ///
    /// Only the lower side is clamped. The filter can overshoot 1 slightly on
    /// coarse meshes; an upper clamp would put a kink into `F` there.
    pub fn simp_stiffness(&self, rho_tilde_cells: &[f64]) -> Vec<f64> {
        let m = &self.model.material;
        rho_tilde_cells
            .iter()
            .map(|&r| m.e_min + r.max(0.0).powf(m.penal) * (m.e_max - m.e_min))
            .collect()
    }

    /// `dEₑ/dρ̃ₑ`, zero for `ρ̃ₑ ≤ 0`.
    pub fn simp_derivative(&self, rho_tilde_cells: &[f64]) -> Vec<f64> {
        let m = &self.model.material;
        rho_tilde_cells
            .iter()
            .map(|&r| {
                if r > 0.0 {
                    m.penal * r.powf(m.penal - 1.0) * (m.e_max - m.e_min)
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn state_rhs(&self, rho_tilde: &[f64]) -> Vec<f64> {
        match &self.kind {
            ObjectiveKind::SelfWeight { operator, .. } => {
                let g = operator.mul_vec(rho_tilde);
                self.model.load.iter().zip(&g).map(|(f, g)| f + g).collect()
            }
            _ => self.model.load.clone(),
        }
    }

    /// Objective value and the intermediate fields needed by [`Self::gradient`].
    pub fn evaluate(&self, rho: &DensityField) -> Result<(f64, EvalCache)> {
        let rho_tilde = self.apply_filter(rho)?;
        let rho_tilde_cells = self.model.mesh.cell_averages(&rho_tilde);
        let young = self.simp_stiffness(&rho_tilde_cells);
        let k = self.model.assemble_stiffness(&young);
        let rhs = self.state_rhs(&rho_tilde);
        let u = self.solve_elasticity(&k, &rhs, |w| &mut w.state)?;
        let n = u.len();
        let objective = match &self.kind {
            ObjectiveKind::Compliance | ObjectiveKind::SelfWeight { .. } => {
                pairwise_map_sum(n, |i| rhs[i] * u[i])
            }
            ObjectiveKind::Mechanism { r_out, output_scale } => {
                -output_scale * pairwise_map_sum(n, |i| r_out[i] * u[i])
            }
        };
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        Ok((
            objective,
            EvalCache {
                fingerprint: fingerprint(&rho.values),
                rho_tilde,
                rho_tilde_cells,
                young,
                u,
                objective,
            },
        ))
    }

    /// `L²` gradient `g = M⁻¹ Nᵀ (ε²A + M̃)⁻¹ b̃` at the density `cache` was
    /// produced from.
    pub fn gradient(&self, rho: &DensityField, cache: &EvalCache) -> Result<Vec<f64>> {
        if !cache.matches(rho) {
            return Err(Error::StaleCache);
        }
        let derivative = self.simp_derivative(&cache.rho_tilde_cells);
        let (lambda, extra) = match &self.kind {
            ObjectiveKind::Compliance => (None, None),
            ObjectiveKind::SelfWeight { operator, .. } => {
                let mut gtu = operator.mul_transpose_vec(&cache.u);
                gtu.iter_mut().for_each(|v| *v *= 2.0);
                (None, Some(gtu))
            }
            ObjectiveKind::Mechanism { r_out, output_scale } => {
                let k = self.model.assemble_stiffness(&cache.young);
                let rhs: Vec<f64> = r_out.iter().map(|r| -output_scale * r).collect();
                let lambda = self.solve_elasticity(&k, &rhs, |w| &mut w.adjoint)?;
                (Some(lambda), None)
            }
        };
        let lambda = lambda.as_deref().unwrap_or(&cache.u);
        let energies = self.model.element_energies(lambda, &cache.u);
        let cell_terms: Vec<f64> = energies
            .iter()
            .zip(&derivative)
            .map(|(w, d)| -d * w)
            .collect();
        let mut dual_load = self.model.mesh.scatter_cell_averages(&cell_terms);
        if let Some(extra) = extra {
            dual_load.iter_mut().zip(&extra).for_each(|(b, e)| *b += e);
        }
        let precond = Jacobi::new(&self.filters.system);
        let dual = self.solve(&self.filters.system, &dual_load, self.solver.filter_tol, &precond, |w| &mut w.dual)?;
        let df = self.filters.n.mul_transpose_vec(&dual);
        Ok(df.iter().zip(&self.filters.m).map(|(d, m)| d / m).collect())
    }
}

/// Interface the optimizers drive: a smooth objective over cell densities
/// with an `L²` gradient.
pub trait Objective {
    type Cache;

    /// Diagonal of the density mass matrix.
    fn cell_volumes(&self) -> &[f64];

    /// Cells the optimizer must keep solid.
    fn passive(&self) -> Option<&[bool]> {
        None
    }

    fn evaluate(&self, rho: &DensityField) -> Result<(f64, Self::Cache)>;

    fn gradient(&self, rho: &DensityField, cache: &Self::Cache) -> Result<Vec<f64>>;

    /// Cumulative number of [`Objective::evaluate`] calls.
    fn evaluations(&self) -> usize;
}

impl Objective for ReducedObjective {
    type Cache = EvalCache;

    fn cell_volumes(&self) -> &[f64] {
        &self.filters.m
    }

    fn passive(&self) -> Option<&[bool]> {
        self.model.has_passive().then_some(&self.model.passive[..])
    }

    fn evaluate(&self, rho: &DensityField) -> Result<(f64, EvalCache)> {
        ReducedObjective::evaluate(self, rho)
    }

    fn gradient(&self, rho: &DensityField, cache: &EvalCache) -> Result<Vec<f64>> {
        ReducedObjective::gradient(self, rho, cache)
    }

    fn evaluations(&self) -> usize {
        ReducedObjective::evaluations(self)
    }
}

/// `F(ρ) = ½ (ρ - a)ᵀ M (ρ - a)`, whose gradient is `ρ - a`.
#[derive(Debug)]
pub struct QuadraticObjective {
    pub target: Vec<f64>,
    pub cell_volumes: Vec<f64>,
    evaluations: AtomicUsize,
}

impl QuadraticObjective {
    pub fn new(target: Vec<f64>, cell_volumes: Vec<f64>) -> Result<Self> {
        check_len(cell_volumes.len(), target.len())?;
        Ok(Self {
            target,
            cell_volumes,
            evaluations: AtomicUsize::new(0),
        })
    }
}

impl Objective for QuadraticObjective {
    type Cache = ();

    fn cell_volumes(&self) -> &[f64] {
        &self.cell_volumes
    }

    fn evaluate(&self, rho: &DensityField) -> Result<(f64, ())> {
        check_len(self.target.len(), rho.len())?;
        self.evaluations.fetch_add(1, Ordering::SeqCst);
        let f = 0.5
            * pairwise_map_sum(rho.len(), |i| {
                let d = rho.values[i] - self.target[i];
                self.cell_volumes[i] * d * d
            });
        Ok((f, ()))
    }

    fn gradient(&self, rho: &DensityField, _: &()) -> Result<Vec<f64>> {
        check_len(self.target.len(), rho.len())?;
        Ok(rho.values.iter().zip(&self.target).map(|(r, a)| r - a).collect())
    }

    fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }
}
