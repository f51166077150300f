//! Structured 2D Cartesian meshes, the lowest-order finite element spaces
//! built on them (piecewise-constant densities, bilinear filtered densities
//! and bilinear displacements), and assembly of every matrix and load vector
//! the physics needs.
//!
//! Numbering: node `(i, j)` with `0 ≤ i ≤ nx`, `0 ≤ j ≤ ny` has index
//! `j (nx + 1) + i`; cell `(i, j)` has index `j nx + i`; displacement DOFs of
//! node `n` are `2n` (x) and `2n + 1` (y). Cell nodes are listed
//! counterclockwise starting at the lower-left corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linsolve::CsrMatrix;

pub type ElementMatrix = [[f64; 8]; 8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartesianMesh {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl CartesianMesh {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter(format!(
                "mesh needs at least one cell per axis, got {nx}x{ny}"
            )));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "domain extents must be positive, got {lx}x{ly}"
            )));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    pub fn node(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_ij(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    pub fn node_coords(&self, n: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(n);
        (i as f64 * self.hx(), j as f64 * self.hy())
    }

    pub fn cell(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_ij(&self, e: usize) -> (usize, usize) {
        (e % self.nx, e / self.nx)
    }

    pub fn cell_nodes(&self, e: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(e);
        [
            self.node(i, j),
            self.node(i + 1, j),
            self.node(i + 1, j + 1),
            self.node(i, j + 1),
        ]
    }

    pub fn cell_dofs(&self, e: usize) -> [usize; 8] {
        let n = self.cell_nodes(e);
        [
            2 * n[0],
            2 * n[0] + 1,
            2 * n[1],
            2 * n[1] + 1,
            2 * n[2],
            2 * n[2] + 1,
            2 * n[3],
            2 * n[3] + 1,
        ]
    }

    pub fn cell_center(&self, e: usize) -> (f64, f64) {
        let (i, j) = self.cell_ij(e);
        ((i as f64 + 0.5) * self.hx(), (j as f64 + 0.5) * self.hy())
    }

    pub fn cell_volume(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Diagonal of the density mass matrix.
    pub fn cell_volumes(&self) -> Vec<f64> {
        vec![self.cell_volume(); self.num_cells()]
    }

    pub fn domain_volume(&self) -> f64 {
        self.lx * self.ly
    }

    /// Nodes satisfying a coordinate predicate.
    pub fn nodes_where(&self, pred: impl Fn(f64, f64) -> bool) -> Vec<usize> {
        (0..self.num_nodes())
            .filter(|&n| {
                let (x, y) = self.node_coords(n);
                pred(x, y)
            })
            .collect()
    }

    /// Cells whose center satisfies a coordinate predicate.
    pub fn cells_where(&self, pred: impl Fn(f64, f64) -> bool) -> Vec<usize> {
        (0..self.num_cells())
            .filter(|&e| {
                let (x, y) = self.cell_center(e);
                pred(x, y)
            })
            .collect()
    }

    /// Average of the four nodal values of every cell, i.e. the centroid value
    /// of a bilinear field.
    pub fn cell_averages(&self, nodal: &[f64]) -> Vec<f64> {
        (0..self.num_cells())
            .map(|e| 0.25 * self.cell_nodes(e).iter().map(|&n| nodal[n]).sum::<f64>())
            .collect()
    }

    /// Transpose of [`CartesianMesh::cell_averages`].
    pub fn scatter_cell_averages(&self, cell: &[f64]) -> Vec<f64> {
        let mut nodal = vec![0.0; self.num_nodes()];
        for (e, &v) in cell.iter().enumerate() {
            for n in self.cell_nodes(e) {
                nodal[n] += 0.25 * v;
            }
        }
        nodal
    }
}

/// Which displacement components a support restrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Restraint {
    X,
    Y,
    Xy,
}

/// Degree-of-freedom bookkeeping for the three discrete spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct FemSpaces {
    pub density_space: usize,
    pub filtered_space: usize,
    pub displacement_space: usize,
    pub dirichlet_mask: Vec<bool>,
}

impl FemSpaces {
    pub fn new(mesh: &CartesianMesh) -> Self {
        Self {
            density_space: mesh.num_cells(),
            filtered_space: mesh.num_nodes(),
            displacement_space: mesh.num_dofs(),
            dirichlet_mask: vec![false; mesh.num_dofs()],
        }
    }

    pub fn restrain(&mut self, nodes: &[usize], restraint: Restraint) {
        for &n in nodes {
            match restraint {
                Restraint::X => self.dirichlet_mask[2 * n] = true,
                Restraint::Y => self.dirichlet_mask[2 * n + 1] = true,
                Restraint::Xy => {
                    self.dirichlet_mask[2 * n] = true;
                    self.dirichlet_mask[2 * n + 1] = true;
                }
            }
        }
    }

    pub fn num_free(&self) -> usize {
        self.dirichlet_mask.iter().filter(|&&b| !b).count()
    }

    /// Zeroes the prescribed entries of a displacement-space vector.
    pub fn apply_homogeneous(&self, v: &mut [f64]) {
        for (vi, &fixed) in v.iter_mut().zip(&self.dirichlet_mask) {
            if fixed {
                *vi = 0.0;
            }
        }
    }
}

/// SIMP material law parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub e_min: f64,
    pub e_max: f64,
    pub nu: f64,
    pub penal: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self {
            e_min: 1e-6,
            e_max: 1.0,
            nu: 0.3,
            penal: 3.0,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.e_min > 0.0 && self.e_max > self.e_min) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < E_min < E_max, got {} and {}",
                self.e_min, self.e_max
            )));
        }
        if !(self.penal >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "penalization exponent must be at least 1, got {}",
                self.penal
            )));
        }
        if !(0.0..0.5).contains(&self.nu) {
            return Err(Error::InvalidParameter(format!(
                "Poisson ratio must lie in [0, 0.5), got {}",
                self.nu
            )));
        }
        Ok(())
    }
}

const GAUSS_2: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
const REF_NODES: [(f64, f64); 4] = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)];

/// Plane-stress stiffness of a bilinear `hx × hy` element for unit Young's
/// modulus, integrated with the 2×2 Gauss rule (exact for rectangles).
pub fn assemble_unit_stiffness(nu: f64, hx: f64, hy: f64) -> Result<ElementMatrix> {
    if !(0.0..0.5).contains(&nu) {
        return Err(Error::InvalidParameter(format!(
            "Poisson ratio must lie in [0, 0.5), got {nu}"
        )));
    }
    if !(hx > 0.0 && hy > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "cell sizes must be positive, got {hx}x{hy}"
        )));
    }
    let c = 1.0 / (1.0 - nu * nu);
    let d = [
        [c, c * nu, 0.0],
        [c * nu, c, 0.0],
        [0.0, 0.0, c * (1.0 - nu) / 2.0],
    ];
    let det_j = hx * hy / 4.0;
    let mut ke = [[0.0; 8]; 8];
    for &xi in &GAUSS_2 {
        for &eta in &GAUSS_2 {
            // strain-displacement matrix, 3 x 8
            let mut b = [[0.0; 8]; 3];
            for (a, &(xa, ya)) in REF_NODES.iter().enumerate() {
                let dndx = 0.25 * xa * (1.0 + ya * eta) * 2.0 / hx;
                let dndy = 0.25 * ya * (1.0 + xa * xi) * 2.0 / hy;
                b[0][2 * a] = dndx;
                b[1][2 * a + 1] = dndy;
                b[2][2 * a] = dndy;
                b[2][2 * a + 1] = dndx;
            }
            for p in 0..8 {
                for q in 0..8 {
                    let mut s = 0.0;
                    for r in 0..3 {
                        for t in 0..3 {
                            s += b[r][p] * d[r][t] * b[t][q];
                        }
                    }
                    ke[p][q] += s * det_j;
                }
            }
        }
    }
    // symmetrize rounding
    for p in 0..8 {
        for q in p + 1..8 {
            let v = 0.5 * (ke[p][q] + ke[q][p]);
            ke[p][q] = v;
            ke[q][p] = v;
        }
    }
    Ok(ke)
}

fn mass_1d(h: f64) -> [[f64; 2]; 2] {
    [[h / 3.0, h / 6.0], [h / 6.0, h / 3.0]]
}

fn stiffness_1d(h: f64) -> [[f64; 2]; 2] {
    [[1.0 / h, -1.0 / h], [-1.0 / h, 1.0 / h]]
}

/// Local (x, y) index of each counterclockwise cell node.
const LOCAL_IJ: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

/// Bilinear element diffusion and mass matrices as tensor products of the
/// 1D linear element matrices.
fn scalar_element_matrices(hx: f64, hy: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let (mx, my, sx, sy) = (mass_1d(hx), mass_1d(hy), stiffness_1d(hx), stiffness_1d(hy));
    let mut a = [[0.0; 4]; 4];
    let mut m = [[0.0; 4]; 4];
    for (p, &(ip, jp)) in LOCAL_IJ.iter().enumerate() {
        for (q, &(iq, jq)) in LOCAL_IJ.iter().enumerate() {
            a[p][q] = sx[ip][iq] * my[jp][jq] + mx[ip][iq] * sy[jp][jq];
            m[p][q] = mx[ip][iq] * my[jp][jq];
        }
    }
    (a, m)
}

/// Operators of the PDE filter `(ε²A + M̃) ρ̃ = N ρ`.
#[derive(Debug, Clone)]
pub struct FilterOperators {
    /// Nodal diffusion stiffness.
    pub a: CsrMatrix,
    /// Nodal mass matrix.
    pub mtilde: CsrMatrix,
    /// Nodes × cells mixed mass matrix, `N[i][j] = ∫ φ̃ᵢ χⱼ`.
    pub n: CsrMatrix,
    /// Cell volumes (diagonal density mass matrix).
    pub m: Vec<f64>,
    pub epsilon: f64,
    /// `ε²A + M̃`.
    pub system: CsrMatrix,
}

/// `ε = r_min / (2√3)`.
pub fn filter_epsilon(r_min: f64) -> f64 {
    r_min / (2.0 * 3.0_f64.sqrt())
}

pub fn assemble_filter_operators(mesh: &CartesianMesh, r_min: f64) -> Result<FilterOperators> {
    if !(r_min > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "filter radius must be positive, got {r_min}"
        )));
    }
    let (ae, me) = scalar_element_matrices(mesh.hx(), mesh.hy());
    let nn = mesh.num_nodes();
    let nc = mesh.num_cells();
    let mut ta = Vec::with_capacity(16 * nc);
    let mut tm = Vec::with_capacity(16 * nc);
    let mut tn = Vec::with_capacity(4 * nc);
    let quarter = mesh.cell_volume() / 4.0;
    for e in 0..nc {
        let nodes = mesh.cell_nodes(e);
        for p in 0..4 {
            for q in 0..4 {
                ta.push((nodes[p], nodes[q], ae[p][q]));
                tm.push((nodes[p], nodes[q], me[p][q]));
            }
            tn.push((nodes[p], e, quarter));
        }
    }
    let a = CsrMatrix::from_triplets(nn, nn, &ta);
    let mtilde = CsrMatrix::from_triplets(nn, nn, &tm);
    let n = CsrMatrix::from_triplets(nn, nc, &tn);
    let epsilon = filter_epsilon(r_min);
    let system = mtilde.add_scaled(epsilon * epsilon, &a);
    Ok(FilterOperators {
        a,
        mtilde,
        n,
        m: mesh.cell_volumes(),
        epsilon,
        system,
    })
}

/// Region and direction of an external load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadRegion {
    /// Body force density over the part of a disc inside the domain.
    Disc { center: (f64, f64), radius: f64 },
    /// Unit nodal forces at every node within `radius` of `center`.
    NodalDisc { center: (f64, f64), radius: f64 },
    /// Body force density over an axis-aligned rectangle.
    Rect {
        x0: f64,
        x1: f64,
        y0: f64,
        y1: f64,
    },
    /// Traction per unit length along a boundary segment.
    Segment(BoundarySegment),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub region: LoadRegion,
    /// Force density (or nodal force for [`LoadRegion::NodalDisc`]).
    pub force: (f64, f64),
}

/// A piece of one side of the rectangular domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundarySegment {
    pub side: Side,
    /// Start and end of the segment along the side's tangential coordinate.
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

impl BoundarySegment {
    pub fn length(&self) -> f64 {
        (self.to - self.from).abs()
    }

    /// `∫_segment φ̃ᵢ ds` for every node touched by the segment.
    pub fn node_weights(&self, mesh: &CartesianMesh) -> Vec<(usize, f64)> {
        let (lo, hi) = (self.from.min(self.to), self.from.max(self.to));
        let (n_edges, h) = match self.side {
            Side::Left | Side::Right => (mesh.ny, mesh.hy()),
            Side::Bottom | Side::Top => (mesh.nx, mesh.hx()),
        };
        let node_at = |k: usize| match self.side {
            Side::Left => mesh.node(0, k),
            Side::Right => mesh.node(mesh.nx, k),
            Side::Bottom => mesh.node(k, 0),
            Side::Top => mesh.node(k, mesh.ny),
        };
        let mut weights = vec![0.0; n_edges + 1];
        for k in 0..n_edges {
            let (t0, t1) = (k as f64 * h, (k + 1) as f64 * h);
            let (a, b) = (lo.max(t0), hi.min(t1));
            if b <= a {
                continue;
            }
            let (w0, w1) = linear_shape_integrals(t0, h, a, b);
            weights[k] += w0;
            weights[k + 1] += w1;
        }
        weights
            .into_iter()
            .enumerate()
            .filter(|(_, w)| *w != 0.0)
            .map(|(k, w)| (node_at(k), w))
            .collect()
    }
}

/// Integrals over `[a, b] ⊂ [t0, t0 + h]` of the two linear shape functions
/// attached to `t0` and `t0 + h`.
fn linear_shape_integrals(t0: f64, h: f64, a: f64, b: f64) -> (f64, f64) {
    let w1 = ((b - t0).powi(2) - (a - t0).powi(2)) / (2.0 * h);
    (b - a - w1, w1)
}

/// Sub-samples per axis used to integrate a disc indicator on cells cut by
/// the circle.
const DISC_SAMPLES: usize = 16;

/// Consistent nodal load vector `∫ f · φᵢ` for a set of loads. Entries at
/// restrained DOFs are zeroed.
pub fn assemble_loads(mesh: &CartesianMesh, loads: &[Load], spaces: &FemSpaces) -> Result<Vec<f64>> {
    let mut f = vec![0.0; mesh.num_dofs()];
    for load in loads {
        let weights = load_node_weights(mesh, &load.region);
        if weights.iter().all(|&(_, w)| w == 0.0) {
            return Err(Error::EmptyLoadRegion(format!("{:?}", load.region)));
        }
        for (n, w) in weights {
            f[2 * n] += w * load.force.0;
            f[2 * n + 1] += w * load.force.1;
        }
    }
    spaces.apply_homogeneous(&mut f);
    Ok(f)
}

fn load_node_weights(mesh: &CartesianMesh, region: &LoadRegion) -> Vec<(usize, f64)> {
    match *region {
        LoadRegion::NodalDisc { center, radius } => mesh
            .nodes_where(|x, y| (x - center.0).hypot(y - center.1) <= radius)
            .into_iter()
            .map(|n| (n, 1.0))
            .collect(),
        LoadRegion::Segment(seg) => seg.node_weights(mesh),
        LoadRegion::Rect { x0, x1, y0, y1 } => {
            let mut w = vec![0.0; mesh.num_nodes()];
            let (hx, hy) = (mesh.hx(), mesh.hy());
            for e in 0..mesh.num_cells() {
                let (i, j) = mesh.cell_ij(e);
                let (cx0, cy0) = (i as f64 * hx, j as f64 * hy);
                let (ax, bx) = (x0.max(cx0), x1.min(cx0 + hx));
                let (ay, by) = (y0.max(cy0), y1.min(cy0 + hy));
                if bx <= ax || by <= ay {
                    continue;
                }
                let wx = linear_shape_integrals(cx0, hx, ax, bx);
                let wy = linear_shape_integrals(cy0, hy, ay, by);
                let wx = [wx.0, wx.1];
                let wy = [wy.0, wy.1];
                for (p, &n) in mesh.cell_nodes(e).iter().enumerate() {
                    let (li, lj) = LOCAL_IJ[p];
                    w[n] += wx[li] * wy[lj];
                }
            }
            nonzero_weights(w)
        }
        LoadRegion::Disc { center, radius } => {
            let mut w = vec![0.0; mesh.num_nodes()];
            let (hx, hy) = (mesh.hx(), mesh.hy());
            let inside = |x: f64, y: f64| (x - center.0).hypot(y - center.1) <= radius;
            for e in 0..mesh.num_cells() {
                let (i, j) = mesh.cell_ij(e);
                let (cx0, cy0) = (i as f64 * hx, j as f64 * hy);
                // closest and farthest points of the cell from the center
                let dx = (center.0 - center.0.clamp(cx0, cx0 + hx)).abs();
                let dy = (center.1 - center.1.clamp(cy0, cy0 + hy)).abs();
                if dx.hypot(dy) > radius {
                    continue;
                }
                let fx = (center.0 - cx0).abs().max((center.0 - cx0 - hx).abs());
                let fy = (center.1 - cy0).abs().max((center.1 - cy0 - hy).abs());
                let nodes = mesh.cell_nodes(e);
                if fx.hypot(fy) <= radius {
                    for n in nodes {
                        w[n] += hx * hy / 4.0;
                    }
                    continue;
                }
                let da = hx * hy / (DISC_SAMPLES * DISC_SAMPLES) as f64;
                for si in 0..DISC_SAMPLES {
                    let s = (si as f64 + 0.5) / DISC_SAMPLES as f64;
                    for ti in 0..DISC_SAMPLES {
                        let t = (ti as f64 + 0.5) / DISC_SAMPLES as f64;
                        if !inside(cx0 + s * hx, cy0 + t * hy) {
                            continue;
                        }
                        let sx = [1.0 - s, s];
                        let ty = [1.0 - t, t];
                        for (p, &n) in nodes.iter().enumerate() {
                            let (li, lj) = LOCAL_IJ[p];
                            w[n] += da * sx[li] * ty[lj];
                        }
                    }
                }
            }
            nonzero_weights(w)
        }
    }
}

fn nonzero_weights(w: Vec<f64>) -> Vec<(usize, f64)> {
    w.into_iter()
        .enumerate()
        .filter(|(_, v)| *v != 0.0)
        .collect()
}

/// Linear operator taking nodal filtered densities to the self-weight load:
/// every cell carries a downward body force `magnitude · ρ̃ₑ` (centroid value)
/// times its area, split equally among its four nodes.
pub fn self_weight_operator(mesh: &CartesianMesh, magnitude: f64, spaces: &FemSpaces) -> CsrMatrix {
    let w = -magnitude * mesh.cell_volume() / 16.0;
    let mut triplets = Vec::with_capacity(16 * mesh.num_cells());
    for e in 0..mesh.num_cells() {
        let nodes = mesh.cell_nodes(e);
        for &m in &nodes {
            let dof = 2 * m + 1;
            if spaces.dirichlet_mask[dof] {
                continue;
            }
            for &n in &nodes {
                triplets.push((dof, n, w));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.num_dofs(), mesh.num_nodes(), &triplets)
}

pub fn assemble_self_weight(
    mesh: &CartesianMesh,
    spaces: &FemSpaces,
    rho_tilde: &[f64],
    magnitude: f64,
) -> Vec<f64> {
    self_weight_operator(mesh, magnitude, spaces).mul_vec(rho_tilde)
}

/// Sparsity pattern of the global stiffness matrix together with the value
/// slot of every element-matrix entry.
#[derive(Debug, Clone)]
struct StiffnessPattern {
    template: CsrMatrix,
    /// 64 slots per element; `u32::MAX` marks entries removed by Dirichlet
    /// elimination.
    slots: Vec<u32>,
    diagonal: Vec<u32>,
}

impl StiffnessPattern {
    fn new(mesh: &CartesianMesh, dirichlet: &[bool]) -> Self {
        let ndof = mesh.num_dofs();
        let mut triplets = Vec::with_capacity(64 * mesh.num_cells() + ndof);
        for d in 0..ndof {
            triplets.push((d, d, 0.0));
        }
        for e in 0..mesh.num_cells() {
            let dofs = mesh.cell_dofs(e);
            for &r in &dofs {
                for &c in &dofs {
                    if !dirichlet[r] && !dirichlet[c] {
                        triplets.push((r, c, 0.0));
                    }
                }
            }
        }
        let template = CsrMatrix::from_triplets(ndof, ndof, &triplets);
        assert!(template.nnz() < u32::MAX as usize, "stiffness pattern too large");
        let mut slots = Vec::with_capacity(64 * mesh.num_cells());
        for e in 0..mesh.num_cells() {
            let dofs = mesh.cell_dofs(e);
            for &r in &dofs {
                for &c in &dofs {
                    slots.push(if dirichlet[r] || dirichlet[c] {
                        u32::MAX
                    } else {
                        template.position(r, c).unwrap() as u32
                    });
                }
            }
        }
        let diagonal = (0..ndof)
            .map(|d| template.position(d, d).unwrap() as u32)
            .collect();
        Self {
            template,
            slots,
            diagonal,
        }
    }
}

/// Bilinear prolongations for the vector displacement space, from the mesh
/// down through successive 2:1 coarsenings. Coarsening stops when a cell
/// count becomes odd or the next level would have fewer than `min_coarse_dofs`
/// unknowns. Rows of restrained fine DOFs are empty so coarse corrections
/// never move them.
pub fn vector_prolongations(
    mesh: &CartesianMesh,
    dirichlet_mask: &[bool],
    min_coarse_dofs: usize,
) -> Vec<CsrMatrix> {
    let mut out = Vec::new();
    let (mut nx, mut ny) = (mesh.nx, mesh.ny);
    while nx % 2 == 0 && ny % 2 == 0 && 2 * (nx / 2 + 1) * (ny / 2 + 1) >= min_coarse_dofs {
        let (cx, cy) = (nx / 2, ny / 2);
        let mut triplets = Vec::with_capacity(2 * (nx + 1) * (ny + 1) * 4);
        let coarse_node = |i: usize, j: usize| j * (cx + 1) + i;
        for j in 0..=ny {
            let rows: &[(usize, f64)] = if j % 2 == 0 { &[(j / 2, 1.0)] } else { &[(j / 2, 0.5), (j / 2 + 1, 0.5)] };
            for i in 0..=nx {
                let cols: &[(usize, f64)] = if i % 2 == 0 { &[(i / 2, 1.0)] } else { &[(i / 2, 0.5), (i / 2 + 1, 0.5)] };
                let fine = j * (nx + 1) + i;
                for &(cj, wy) in rows {
                    for &(ci, wx) in cols {
                        let c = coarse_node(ci, cj);
                        for comp in 0..2 {
                            let row = 2 * fine + comp;
                            if out.is_empty() && dirichlet_mask[row] {
                                continue;
                            }
                            triplets.push((row, 2 * c + comp, wx * wy));
                        }
                    }
                }
            }
        }
        out.push(CsrMatrix::from_triplets(
            2 * (nx + 1) * (ny + 1),
            2 * (cx + 1) * (cy + 1),
            &triplets,
        ));
        nx = cx;
        ny = cy;
    }
    out
}

/// Mesh, supports, loads and material of a linear elastic SIMP model.
#[derive(Debug, Clone)]
pub struct ElasticModel {
    pub mesh: CartesianMesh,
    pub spaces: FemSpaces,
    pub material: Material,
    pub unit_stiffness: ElementMatrix,
    /// External load (restrained entries zero).
    pub load: Vec<f64>,
    /// Extra diagonal stiffness at single DOFs, e.g. mechanism port springs.
    pub springs: Vec<(usize, f64)>,
    /// Cells held solid by the optimizer.
    pub passive: Vec<bool>,
    pattern: StiffnessPattern,
}

impl ElasticModel {
    pub fn new(mesh: CartesianMesh, spaces: FemSpaces, material: Material, load: Vec<f64>) -> Result<Self> {
        material.validate()?;
        crate::error::check_len(mesh.num_dofs(), load.len())?;
        crate::error::check_len(mesh.num_dofs(), spaces.dirichlet_mask.len())?;
        let unit_stiffness = assemble_unit_stiffness(material.nu, mesh.hx(), mesh.hy())?;
        let pattern = StiffnessPattern::new(&mesh, &spaces.dirichlet_mask);
        let mut load = load;
        spaces.apply_homogeneous(&mut load);
        Ok(Self {
            passive: vec![false; mesh.num_cells()],
            mesh,
            spaces,
            material,
            unit_stiffness,
            load,
            springs: Vec::new(),
            pattern,
        })
    }

    pub fn with_springs(mut self, springs: Vec<(usize, f64)>) -> Self {
        self.springs = springs;
        self
    }

    pub fn with_passive(mut self, cells: &[usize]) -> Self {
        for &e in cells {
            self.passive[e] = true;
        }
        self
    }

    pub fn has_passive(&self) -> bool {
        self.passive.iter().any(|&p| p)
    }

    /// Empty matrix with the stiffness sparsity pattern.
    pub fn stiffness_template(&self) -> CsrMatrix {
        self.pattern.template.clone()
    }

    /// Global stiffness `Σₑ Eₑ K₀` with Dirichlet rows and columns replaced by
    /// the identity and springs added on the diagonal.
    pub fn assemble_stiffness(&self, young: &[f64]) -> CsrMatrix {
        let mut k = self.stiffness_template();
        self.assemble_stiffness_into(young, &mut k);
        k
    }

    pub fn assemble_stiffness_into(&self, young: &[f64], k: &mut CsrMatrix) {
        assert_eq!(young.len(), self.mesh.num_cells());
        let values = k.values_mut();
        values.iter_mut().for_each(|v| *v = 0.0);
        let ke = &self.unit_stiffness;
        for (e, &ee) in young.iter().enumerate() {
            let slots = &self.pattern.slots[64 * e..64 * (e + 1)];
            for p in 0..8 {
                for q in 0..8 {
                    let s = slots[8 * p + q];
                    if s != u32::MAX {
                        values[s as usize] += ee * ke[p][q];
                    }
                }
            }
        }
        for (d, &fixed) in self.spaces.dirichlet_mask.iter().enumerate() {
            if fixed {
                values[self.pattern.diagonal[d] as usize] = 1.0;
            }
        }
        for &(d, stiffness) in &self.springs {
            if !self.spaces.dirichlet_mask[d] {
                values[self.pattern.diagonal[d] as usize] += stiffness;
            }
        }
    }

    /// `uₑᵀ K₀ vₑ` for every cell.
    pub fn element_energies(&self, u: &[f64], v: &[f64]) -> Vec<f64> {
        let ke = &self.unit_stiffness;
        (0..self.mesh.num_cells())
            .map(|e| {
                let dofs = self.mesh.cell_dofs(e);
                let mut s = 0.0;
                for p in 0..8 {
                    let mut kv = 0.0;
                    for q in 0..8 {
                        kv += ke[p][q] * v[dofs[q]];
                    }
                    s += u[dofs[p]] * kv;
                }
                s
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn rigid_modes(mesh: &CartesianMesh) -> [Vec<f64>; 3] {
        let nd = mesh.num_dofs();
        let mut tx = vec![0.0; nd];
        let mut ty = vec![0.0; nd];
        let mut rot = vec![0.0; nd];
        for n in 0..mesh.num_nodes() {
            let (x, y) = mesh.node_coords(n);
            tx[2 * n] = 1.0;
            ty[2 * n + 1] = 1.0;
            rot[2 * n] = -y;
            rot[2 * n + 1] = x;
        }
        [tx, ty, rot]
    }

    #[test]
    fn unit_stiffness_reference_entry_and_symmetry() {
        let ke = assemble_unit_stiffness(0.3, 0.5, 0.5).unwrap();
        assert_relative_eq!(ke[0][0], (0.5 - 0.3 / 6.0) / (1.0 - 0.09), epsilon = 1e-14);
        assert_relative_eq!(ke[0][0], 0.494_505_494_505, epsilon = 1e-11);
        for p in 0..8 {
            for q in 0..8 {
                assert_eq!(ke[p][q], ke[q][p]);
            }
        }
        assert!(assemble_unit_stiffness(0.5, 1.0, 1.0).is_err());
        assert!(assemble_unit_stiffness(0.3, 0.0, 1.0).is_err());
    }

    #[test]
    fn unit_stiffness_matches_fine_quadrature() {
        // independent midpoint-rule integration of Bᵀ D B on a rectangle
        let (nu, hx, hy) = (0.25, 0.7, 0.3);
        let ke = assemble_unit_stiffness(nu, hx, hy).unwrap();
        let c = 1.0 / (1.0 - nu * nu);
        let nq = 200;
        let mut oracle = [[0.0; 8]; 8];
        let corners = [(0.0, 0.0), (hx, 0.0), (hx, hy), (0.0, hy)];
        for a in 0..nq {
            for b in 0..nq {
                let x = (a as f64 + 0.5) * hx / nq as f64;
                let y = (b as f64 + 0.5) * hy / nq as f64;
                let mut grads = [(0.0, 0.0); 4];
                for (k, &(cx, cy)) in corners.iter().enumerate() {
                    let sx = if cx == 0.0 { -1.0 } else { 1.0 };
                    let sy = if cy == 0.0 { -1.0 } else { 1.0 };
                    let fx = if cx == 0.0 { (hx - x) / hx } else { x / hx };
                    let fy = if cy == 0.0 { (hy - y) / hy } else { y / hy };
                    grads[k] = (sx / hx * fy, sy / hy * fx);
                }
                let strain = |p: usize| -> [f64; 3] {
                    let (gx, gy) = grads[p / 2];
                    if p % 2 == 0 {
                        [gx, 0.0, gy]
                    } else {
                        [0.0, gy, gx]
                    }
                };
                for p in 0..8 {
                    let ep = strain(p);
                    for q in 0..8 {
                        let eq = strain(q);
                        let stress = [
                            c * (eq[0] + nu * eq[1]),
                            c * (nu * eq[0] + eq[1]),
                            c * (1.0 - nu) / 2.0 * eq[2],
                        ];
                        oracle[p][q] += (ep[0] * stress[0] + ep[1] * stress[1] + ep[2] * stress[2])
                            * hx
                            * hy
                            / (nq * nq) as f64;
                    }
                }
            }
        }
        for p in 0..8 {
            for q in 0..8 {
                assert!((ke[p][q] - oracle[p][q]).abs() < 1e-5, "{p},{q}");
            }
        }
    }

    #[test]
    fn unit_stiffness_has_three_rigid_modes() {
        let mesh = CartesianMesh::new(1, 1, 0.7, 0.4).unwrap();
        let ke = assemble_unit_stiffness(0.3, 0.7, 0.4).unwrap();
        let dofs = mesh.cell_dofs(0);
        for mode in rigid_modes(&mesh) {
            let local: Vec<f64> = dofs.iter().map(|&d| mode[d]).collect();
            for row in &ke {
                let s: f64 = row.iter().zip(&local).map(|(a, b)| a * b).sum();
                assert!(s.abs() < 1e-12, "{s}");
            }
        }
        // exactly three zero eigenvalues
        let dense = nalgebra::DMatrix::from_fn(8, 8, |i, j| ke[i][j]);
        let eig = dense.symmetric_eigen().eigenvalues;
        let zeros = eig.iter().filter(|v| v.abs() < 1e-10).count();
        assert_eq!(zeros, 3);
        assert!(eig.iter().all(|&v| v > -1e-12));
    }

    #[test]
    fn global_stiffness_null_space_and_symmetry() {
        let mesh = CartesianMesh::new(5, 3, 2.0, 1.0).unwrap();
        let spaces = FemSpaces::new(&mesh);
        let model = ElasticModel::new(mesh, spaces, Material::default(), vec![0.0; mesh.num_dofs()]).unwrap();
        let k = model.assemble_stiffness(&vec![1.0; mesh.num_cells()]);
        let scale = k.norm_inf();
        for mode in rigid_modes(&mesh) {
            let r = k.mul_vec(&mode);
            assert!(r.iter().all(|v| v.abs() <= 1e-10 * scale));
        }
        for r in 0..k.nrows() {
            for c in 0..k.ncols() {
                assert_eq!(k.get(r, c), k.get(c, r));
            }
        }
    }

    #[test]
    fn single_clamped_cell_is_spd() {
        let mesh = CartesianMesh::new(1, 1, 1.0, 1.0).unwrap();
        let mut spaces = FemSpaces::new(&mesh);
        spaces.restrain(&mesh.nodes_where(|x, _| x == 0.0), Restraint::Xy);
        assert_eq!(spaces.num_free(), 4);
        let model = ElasticModel::new(mesh, spaces.clone(), Material::default(), vec![0.0; 8]).unwrap();
        let k = model.assemble_stiffness(&[1.0]);
        let free: Vec<usize> = (0..8).filter(|&d| !spaces.dirichlet_mask[d]).collect();
        let dense = nalgebra::DMatrix::from_fn(4, 4, |i, j| k.get(free[i], free[j]));
        let eig = dense.symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&v| v > 1e-3), "{eig:?}");
        // eliminated rows carry the identity
        for d in (0..8).filter(|&d| spaces.dirichlet_mask[d]) {
            assert_eq!(k.get(d, d), 1.0);
            for c in (0..8).filter(|&c| c != d) {
                assert_eq!(k.get(d, c), 0.0);
                assert_eq!(k.get(c, d), 0.0);
            }
        }
    }

    #[test]
    fn stiffness_is_linear_in_modulus_and_springs_add_to_diagonal() {
        let mesh = CartesianMesh::new(3, 2, 3.0, 2.0).unwrap();
        let mut spaces = FemSpaces::new(&mesh);
        spaces.restrain(&mesh.nodes_where(|x, _| x == 0.0), Restraint::Xy);
        let model = ElasticModel::new(mesh, spaces.clone(), Material::default(), vec![0.0; mesh.num_dofs()]).unwrap();
        let e: Vec<f64> = (0..6).map(|i| 0.1 + i as f64 * 0.2).collect();
        let e2: Vec<f64> = e.iter().map(|v| 2.0 * v).collect();
        let k1 = model.assemble_stiffness(&e);
        let k2 = model.assemble_stiffness(&e2);
        for r in (0..mesh.num_dofs()).filter(|&d| !spaces.dirichlet_mask[d]) {
            for c in (0..mesh.num_dofs()).filter(|&d| !spaces.dirichlet_mask[d]) {
                assert_relative_eq!(k2.get(r, c), 2.0 * k1.get(r, c), epsilon = 1e-14);
            }
        }
        let d = 2 * mesh.node(3, 1);
        let sprung = model.clone().with_springs(vec![(d, 0.75)]);
        let k3 = sprung.assemble_stiffness(&e);
        assert_relative_eq!(k3.get(d, d), k1.get(d, d) + 0.75, epsilon = 1e-15);
        assert_eq!(k3.get(d + 1, d + 1), k1.get(d + 1, d + 1));
    }

    #[test]
    fn filter_operators_basic_properties() {
        let mesh = CartesianMesh::new(6, 4, 3.0, 1.0).unwrap();
        let ops = assemble_filter_operators(&mesh, 0.02).unwrap();
        assert_relative_eq!(ops.epsilon, 5.773_502_691_896_258e-3, epsilon = 1e-15);
        let ones = vec![1.0; mesh.num_nodes()];
        assert!(ops.a.mul_vec(&ones).iter().all(|v| v.abs() < 1e-12));
        assert_relative_eq!(ops.m.iter().sum::<f64>(), 3.0, epsilon = 1e-12);
        // N 1 equals the lumped nodal mass M̃ 1
        let n1 = ops.n.mul_vec(&vec![1.0; mesh.num_cells()]);
        let m1 = ops.mtilde.mul_vec(&ones);
        for (a, b) in n1.iter().zip(&m1) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
        assert_eq!(ops.mtilde.symmetry_defect(), 0.0);
        let dense = nalgebra::DMatrix::from_fn(mesh.num_nodes(), mesh.num_nodes(), |i, j| ops.mtilde.get(i, j));
        assert!(dense.cholesky().is_some());
        assert!(assemble_filter_operators(&mesh, 0.0).is_err());
    }

    #[test]
    fn cell_volumes_sum_to_domain_under_refinement() {
        for (nx, ny) in [(7, 3), (14, 6)] {
            let mesh = CartesianMesh::new(nx, ny, 3.0, 1.0).unwrap();
            let total: f64 = crate::fields::pairwise_sum(&mesh.cell_volumes());
            assert!((total - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nodal_disc_load_on_mbb_mesh() {
        let mesh = CartesianMesh::new(192, 64, 3.0, 1.0).unwrap();
        let spaces = FemSpaces::new(&mesh);
        let load = Load {
            region: LoadRegion::NodalDisc {
                center: (0.0, 1.0),
                radius: 0.05,
            },
            force: (0.0, -1.0),
        };
        let f = assemble_loads(&mesh, &[load], &spaces).unwrap();
        let expected = mesh.nodes_where(|x, y| x.hypot(y - 1.0) <= 0.05);
        assert!(!expected.is_empty());
        for n in 0..mesh.num_nodes() {
            let fy = if expected.contains(&n) { -1.0 } else { 0.0 };
            assert_eq!(f[2 * n], 0.0);
            assert_eq!(f[2 * n + 1], fy);
        }
    }

    #[test]
    fn distributed_loads_are_consistent() {
        let mesh = CartesianMesh::new(30, 10, 3.0, 1.0).unwrap();
        let spaces = FemSpaces::new(&mesh);
        let band = Load {
            region: LoadRegion::Rect {
                x0: 0.0,
                x1: 3.0,
                y0: 1.0 - 0.0625,
                y1: 1.0,
            },
            force: (0.0, -40.0),
        };
        let f = assemble_loads(&mesh, &[band], &spaces).unwrap();
        let total: f64 = f.iter().skip(1).step_by(2).sum();
        assert!((total - (-40.0 * 3.0 * 0.0625)).abs() < 1e-12);

        let disc = Load {
            region: LoadRegion::Disc {
                center: (0.0, 1.0),
                radius: 0.05,
            },
            force: (0.0, -1.0),
        };
        let fine = CartesianMesh::new(768, 256, 3.0, 1.0).unwrap();
        let f = assemble_loads(&fine, &[disc], &FemSpaces::new(&fine)).unwrap();
        let total: f64 = f.iter().skip(1).step_by(2).sum();
        let quarter_disc = std::f64::consts::PI * 0.05 * 0.05 / 4.0;
        assert!((total + quarter_disc).abs() < 1e-3 * quarter_disc, "{total}");

        let seg = BoundarySegment {
            side: Side::Left,
            from: 0.45,
            to: 0.55,
        };
        let total: f64 = seg.node_weights(&mesh).iter().map(|(_, w)| w).sum();
        assert_relative_eq!(total, 0.1, epsilon = 1e-14);
    }

    #[test]
    fn empty_and_zero_loads() {
        let mesh = CartesianMesh::new(4, 4, 1.0, 1.0).unwrap();
        let spaces = FemSpaces::new(&mesh);
        assert_eq!(assemble_loads(&mesh, &[], &spaces).unwrap(), vec![0.0; mesh.num_dofs()]);
        let outside = Load {
            region: LoadRegion::Disc {
                center: (5.0, 5.0),
                radius: 0.1,
            },
            force: (0.0, -1.0),
        };
        assert!(matches!(
            assemble_loads(&mesh, &[outside], &spaces),
            Err(Error::EmptyLoadRegion(_))
        ));
    }

    #[test]
    fn self_weight_totals_and_hand_assembly() {
        let mesh = CartesianMesh::new(8, 8, 1.0, 1.0).unwrap();
        let spaces = FemSpaces::new(&mesh);
        let zero = assemble_self_weight(&mesh, &spaces, &vec![0.0; mesh.num_nodes()], 9.81);
        assert!(zero.iter().all(|&v| v == 0.0));
        let g = assemble_self_weight(&mesh, &spaces, &vec![1.0; mesh.num_nodes()], 9.81);
        let total: f64 = g.iter().skip(1).step_by(2).sum();
        assert!((total + 9.81).abs() < 1e-12);
        assert!(g.iter().step_by(2).all(|&v| v == 0.0));
        // interior node touched by four cells of area a with ρ̃ ≡ c
        let c = 0.37;
        let a = mesh.cell_volume();
        let g = assemble_self_weight(&mesh, &spaces, &vec![c; mesh.num_nodes()], 9.81);
        let n = mesh.node(4, 4);
        assert_relative_eq!(g[2 * n + 1], -9.81 * c * a, epsilon = 1e-14);
    }
}
