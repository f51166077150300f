//! Benchmark problem definitions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{AdmissibleParams, DensityField};
use crate::grid::{
    assemble_filter_operators, assemble_loads, BoundarySegment, CartesianMesh, ElasticModel,
    FemSpaces, Load, LoadRegion, Material, Restraint, Side,
};
use crate::physics::{MechanismSpec, Port, ReducedObjective};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// Half MBB beam on (0,3)x(0,1) under a disc load at the top-left corner.
    Mbb,
    /// Half bridge on (0,2)x(0,1) with self-weight and a loaded solid deck.
    Bridge,
    /// Lower half of a force inverter on (0,1)x(0,1/2).
    Inverter,
    /// User-defined geometry from the configuration file.
    Custom,
}

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    fn contains(&self, x: f64, y: f64, slack: f64) -> bool {
        x >= self.x0 - slack && x <= self.x1 + slack && y >= self.y0 - slack && y <= self.y1 + slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    /// Nodes inside this rectangle (with a small tolerance) are restrained.
    pub region: Rect,
    pub restraint: Restraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    Compliance,
    SelfWeight { gravity: f64 },
    Mechanism(MechanismSpec),
}

/// Geometry, supports and loads for the `custom` problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CustomProblem {
    pub lx: f64,
    pub ly: f64,
    pub supports: Vec<Support>,
    #[serde(default)]
    pub loads: Vec<Load>,
    /// Cells whose centers fall in any of these rectangles are held solid.
    #[serde(default)]
    pub passive: Vec<Rect>,
    pub objective: ObjectiveSpec,
}

/// Starting design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDesign {
    /// `ρ ≡ θ`, or a uniform background when passive cells are present.
    Uniform,
    /// Raised density along a polyline, uniform elsewhere.
    Strip {
        points: Vec<(f64, f64)>,
        #[serde(default = "default_strip_density")]
        density: f64,
        /// Strip width in cells.
        #[serde(default = "default_strip_width")]
        width_cells: f64,
    },
}

fn default_strip_density() -> f64 {
    0.9
}

fn default_strip_width() -> f64 {
    2.0
}

/// Resolution and parameters shared by all presets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Discretization {
    pub nx: usize,
    pub ny: usize,
    pub theta: f64,
    pub r_min: f64,
}

/// A fully assembled problem ready for an optimizer.
#[derive(Debug)]
pub struct Problem {
    pub objective: ReducedObjective,
    pub admissible: AdmissibleParams,
    /// Mirror the lower half upward when writing images.
    pub mirror_y: bool,
}

impl Problem {
    pub fn mesh(&self) -> &CartesianMesh {
        &self.objective.model.mesh
    }
}

pub const MBB_LOAD_RADIUS: f64 = 0.05;
pub const BRIDGE_DECK_DEPTH: f64 = 1.0 / 32.0;
pub const BRIDGE_DECK_LOAD: f64 = 40.0;
pub const GRAVITY: f64 = 9.81;
pub const INVERTER_PORT_LENGTH: f64 = 1.0 / 64.0;
pub const INVERTER_K_IN: f64 = 1.0;
pub const INVERTER_K_OUT: f64 = 5e-4;

impl ProblemKind {
    /// Default `(nx, ny, θ, r_min)` at the reference resolution.
    pub fn defaults(self) -> Discretization {
        match self {
            Self::Mbb => Discretization {
                nx: 768,
                ny: 256,
                theta: 0.3,
                r_min: 0.02,
            },
            Self::Bridge => Discretization {
                nx: 1024,
                ny: 512,
                theta: 0.7,
                r_min: 0.02,
            },
            Self::Inverter => Discretization {
                nx: 512,
                ny: 256,
                theta: 0.3,
                r_min: 0.02,
            },
            Self::Custom => Discretization {
                nx: 96,
                ny: 32,
                theta: 0.3,
                r_min: 0.02,
            },
        }
    }
}

fn support_nodes(mesh: &CartesianMesh, rect: &Rect) -> Vec<usize> {
    let slack = 1e-9 * (mesh.lx + mesh.ly);
    mesh.nodes_where(|x, y| rect.contains(x, y, slack))
}

fn finish(
    mesh: CartesianMesh,
    spaces: FemSpaces,
    loads: &[Load],
    passive: &[usize],
    objective: &ObjectiveSpec,
    disc: &Discretization,
    mirror_y: bool,
) -> Result<Problem> {
    let admissible = AdmissibleParams::new(disc.theta, mesh.domain_volume())?;
    let filters = assemble_filter_operators(&mesh, disc.r_min)?;
    let load = if loads.is_empty() {
        vec![0.0; mesh.num_dofs()]
    } else {
        assemble_loads(&mesh, loads, &spaces)?
    };
    let model = ElasticModel::new(mesh, spaces, Material::default(), load)?.with_passive(passive);
    let objective = match objective {
        ObjectiveSpec::Compliance => ReducedObjective::compliance(model, filters)?,
        ObjectiveSpec::SelfWeight { gravity } => ReducedObjective::self_weight(model, filters, *gravity)?,
        ObjectiveSpec::Mechanism(spec) => ReducedObjective::mechanism(model, filters, spec)?,
    };
    Ok(Problem {
        objective,
        admissible,
        mirror_y,
    })
}

pub fn mbb(disc: &Discretization) -> Result<Problem> {
    let mesh = CartesianMesh::new(disc.nx, disc.ny, 3.0, 1.0)?;
    let mut spaces = FemSpaces::new(&mesh);
    spaces.restrain(&mesh.nodes_where(|x, _| x == 0.0), Restraint::X);
    spaces.restrain(&[mesh.node(mesh.nx, 0)], Restraint::Y);
    let load = Load {
        region: LoadRegion::Disc {
            center: (0.0, 1.0),
            radius: MBB_LOAD_RADIUS,
        },
        force: (0.0, -1.0),
    };
    finish(mesh, spaces, &[load], &[], &ObjectiveSpec::Compliance, disc, false)
}

pub fn bridge(disc: &Discretization) -> Result<Problem> {
    let mesh = CartesianMesh::new(disc.nx, disc.ny, 2.0, 1.0)?;
    let mut spaces = FemSpaces::new(&mesh);
    spaces.restrain(&mesh.nodes_where(|x, _| x == 0.0), Restraint::X);
    spaces.restrain(&[mesh.node(mesh.nx, 0)], Restraint::Xy);
    let deck = 1.0 - BRIDGE_DECK_DEPTH;
    let passive = mesh.cells_where(|_, y| y >= deck);
    if passive.is_empty() {
        return Err(Error::InvalidParameter(
            "bridge mesh too coarse to resolve the solid deck".into(),
        ));
    }
    let load = Load {
        region: LoadRegion::Rect {
            x0: 0.0,
            x1: 2.0,
            y0: deck,
            y1: 1.0,
        },
        force: (0.0, -BRIDGE_DECK_LOAD),
    };
    finish(
        mesh,
        spaces,
        &[load],
        &passive,
        &ObjectiveSpec::SelfWeight { gravity: GRAVITY },
        disc,
        false,
    )
}

/// Port and spring data of the inverter on its lower half.
pub fn inverter_mechanism() -> MechanismSpec {
    let half = 0.5 * INVERTER_PORT_LENGTH;
    let port = |side, direction| Port {
        segment: BoundarySegment {
            side,
            from: 0.5 - half,
            to: 0.5,
        },
        direction,
    };
    MechanismSpec {
        k_in: INVERTER_K_IN,
        k_out: INVERTER_K_OUT,
        port_length: INVERTER_PORT_LENGTH,
        input: port(Side::Left, (1.0, 0.0)),
        output: port(Side::Right, (-1.0, 0.0)),
    }
}

pub fn inverter(disc: &Discretization) -> Result<Problem> {
    let mesh = CartesianMesh::new(disc.nx, disc.ny, 1.0, 0.5)?;
    let mut spaces = FemSpaces::new(&mesh);
    spaces.restrain(&[mesh.node(0, 0)], Restraint::Xy);
    spaces.restrain(&mesh.nodes_where(|_, y| y == 0.5), Restraint::Y);
    finish(
        mesh,
        spaces,
        &[],
        &[],
        &ObjectiveSpec::Mechanism(inverter_mechanism()),
        disc,
        true,
    )
}

pub fn custom(spec: &CustomProblem, disc: &Discretization) -> Result<Problem> {
    let mesh = CartesianMesh::new(disc.nx, disc.ny, spec.lx, spec.ly)?;
    let mut spaces = FemSpaces::new(&mesh);
    for s in &spec.supports {
        let nodes = support_nodes(&mesh, &s.region);
        if nodes.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "support region {:?} contains no nodes",
                s.region
            )));
        }
        spaces.restrain(&nodes, s.restraint);
    }
    let passive: Vec<usize> = mesh.cells_where(|x, y| spec.passive.iter().any(|r| r.contains(x, y, 0.0)));
    finish(mesh, spaces, &spec.loads, &passive, &spec.objective, disc, false)
}

pub fn build(kind: ProblemKind, disc: &Discretization, custom_spec: Option<&CustomProblem>) -> Result<Problem> {
    match kind {
        ProblemKind::Mbb => mbb(disc),
        ProblemKind::Bridge => bridge(disc),
        ProblemKind::Inverter => inverter(disc),
        ProblemKind::Custom => match custom_spec {
            Some(spec) => custom(spec, disc),
            None => Err(Error::InvalidParameter(
                "problem `custom` needs a `custom` section in the configuration file".into(),
            )),
        },
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Builds a non-uniform starting design: cells within half the strip width of
/// the polyline get the strip density, the rest share a background value
/// chosen so the volume equals `θ|Ω|`, and all values are clipped to
/// `[0.01, 0.99]`.
pub fn strip_design(
    mesh: &CartesianMesh,
    adm: &AdmissibleParams,
    points: &[(f64, f64)],
    density: f64,
    width_cells: f64,
) -> Result<DensityField> {
    if points.len() < 2 {
        return Err(Error::InvalidParameter("a strip needs at least two points".into()));
    }
    let half_width = 0.5 * width_cells * mesh.hx().max(mesh.hy());
    let in_strip: Vec<bool> = (0..mesh.num_cells())
        .map(|e| {
            let c = mesh.cell_center(e);
            points.windows(2).any(|w| segment_distance(c, w[0], w[1]) <= half_width)
        })
        .collect();
    let cell = mesh.cell_volume();
    let strip_cells = in_strip.iter().filter(|&&s| s).count() as f64;
    let rest = mesh.num_cells() as f64 - strip_cells;
    let background = if rest > 0.0 {
        (adm.volume_bound() - strip_cells * cell * density) / (rest * cell)
    } else {
        density
    };
    let values = in_strip
        .iter()
        .map(|&s| if s { density } else { background }.clamp(0.01, 0.99))
        .collect();
    DensityField::new(values, mesh.cell_volumes())
}

/// Strip polylines for the inverter's non-uniform starts, on the lower half.
pub fn inverter_strips() -> [(&'static str, Vec<(f64, f64)>); 2] {
    [
        ("center", vec![(0.0, 0.5), (0.5, 0.5), (1.0, 0.5)]),
        ("bottom", vec![(0.0, 0.5), (0.5, 0.0), (1.0, 0.5)]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc(nx: usize, ny: usize, theta: f64) -> Discretization {
        Discretization {
            nx,
            ny,
            theta,
            r_min: 0.02,
        }
    }

    #[test]
    fn mbb_load_total_and_supports() {
        let p = mbb(&disc(96, 32, 0.3)).unwrap();
        let m = &p.objective.model;
        let fy: f64 = m.load.iter().skip(1).step_by(2).sum();
        let quarter_disc = std::f64::consts::PI * MBB_LOAD_RADIUS.powi(2) / 4.0;
        assert!((fy + quarter_disc).abs() < 0.02 * quarter_disc);
        assert_eq!(m.spaces.num_free(), m.mesh.num_dofs() - 33 - 1);
        assert!((p.admissible.volume_bound() - 0.9).abs() < 1e-14);
    }

    #[test]
    fn bridge_has_passive_deck() {
        let p = bridge(&disc(64, 32, 0.7)).unwrap();
        let passive = p.objective.model.passive.iter().filter(|&&b| b).count();
        assert_eq!(passive, 64);
        assert!(matches!(p.objective.kind, crate::physics::ObjectiveKind::SelfWeight { .. }));
    }

    #[test]
    fn inverter_ports_and_springs() {
        let p = inverter(&disc(64, 32, 0.3)).unwrap();
        let m = &p.objective.model;
        let total_input: f64 = m.load.iter().step_by(2).sum();
        // (k_in / L) times half the port length
        assert!((total_input - 0.5).abs() < 1e-12);
        let spring_total: f64 = m.springs.iter().map(|s| s.1).sum();
        assert!((spring_total - 0.5 * (INVERTER_K_IN + INVERTER_K_OUT)).abs() < 1e-12);
    }

    #[test]
    fn strip_design_meets_volume() {
        let mesh = CartesianMesh::new(64, 32, 1.0, 0.5).unwrap();
        let adm = AdmissibleParams::new(0.3, mesh.domain_volume()).unwrap();
        let rho = strip_design(&mesh, &adm, &[(0.0, 0.5), (0.5, 0.0), (1.0, 0.5)], 0.9, 2.0).unwrap();
        assert!((rho.volume() - adm.volume_bound()).abs() < 1e-12);
        assert!(rho.values.iter().any(|&v| v == 0.9));
    }

    #[test]
    fn custom_requires_spec() {
        assert!(build(ProblemKind::Custom, &disc(4, 4, 0.3), None).is_err());
    }
}
