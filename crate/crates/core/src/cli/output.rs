//! Result writers: convergence CSV, PGM images and legacy VTK fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{check_len, Result};
use crate::grid::CartesianMesh;
use crate::simpl::OptTrace;

pub const CSV_HEADER: &str = "iter,F,alpha,mu,kkt,stationarity,backtracks,evals";

fn real(v: f64) -> String {
    format!("{v:.16e}")
}

fn optional(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), real)
}

/// One row per trace record; reals carry 17 significant digits and missing
/// values are written as `nan`.
pub fn write_convergence_csv(trace: &OptTrace, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            real(r.objective),
            optional(r.alpha),
            optional(r.mu),
            optional(r.kkt),
            optional(r.stationarity),
            r.backtracks,
            r.evaluations
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFlavor {
    Design,
    Filtered,
}

impl PgmFlavor {
    fn label(self) -> &'static str {
        match self {
            Self::Design => "design density",
            Self::Filtered => "filtered density",
        }
    }
}

fn pixel(v: f64) -> u8 {
    (255.0 - (255.0 * v.clamp(0.0, 1.0)).round()) as u8
}

/// Grayscale P2 image of a cell field with solid rendered black and the top
/// of the domain in the first row. With `mirror_y` the field is reflected
/// about its top edge, doubling the height.
pub fn write_pgm(
    mesh: &CartesianMesh,
    values: &[f64],
    flavor: PgmFlavor,
    mirror_y: bool,
    path: &Path,
) -> Result<()> {
    check_len(mesh.num_cells(), values.len())?;
    let (nx, ny) = (mesh.nx, mesh.ny);
    let rows: Vec<usize> = if mirror_y {
        (0..ny).chain((0..ny).rev()).collect()
    } else {
        (0..ny).rev().collect()
    };
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P2")?;
    writeln!(w, "# {}", flavor.label())?;
    writeln!(w, "{nx} {}", rows.len())?;
    writeln!(w, "255")?;
    for j in rows {
        let line: Vec<String> = (0..nx).map(|i| pixel(values[mesh.cell(i, j)]).to_string()).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// A named field for [`write_vtk`]; vectors are stored interleaved with two
/// components per entry.
pub enum VtkField<'a> {
    Scalar(&'a str, &'a [f64]),
    Vector2(&'a str, &'a [f64]),
}

impl VtkField<'_> {
    fn entries(&self) -> usize {
        match self {
            Self::Scalar(_, v) => v.len(),
            Self::Vector2(_, v) => v.len() / 2,
        }
    }

    fn write(&self, w: &mut impl Write) -> Result<()> {
        match self {
            Self::Scalar(name, v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for x in v.iter() {
                    writeln!(w, "{}", real(*x))?;
                }
            }
            Self::Vector2(name, v) => {
                writeln!(w, "VECTORS {name} double")?;
                for c in v.chunks_exact(2) {
                    writeln!(w, "{} {} {}", real(c[0]), real(c[1]), real(0.0))?;
                }
            }
        }
        Ok(())
    }
}

/// Legacy ASCII VTK file on `STRUCTURED_POINTS` with cell and point data.
pub fn write_vtk(
    mesh: &CartesianMesh,
    cell_fields: &[VtkField],
    point_fields: &[VtkField],
    title: &str,
    path: &Path,
) -> Result<()> {
    for f in cell_fields {
        check_len(mesh.num_cells(), f.entries())?;
    }
    for f in point_fields {
        check_len(mesh.num_nodes(), f.entries())?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.lines().next().unwrap_or(""))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {} {} 1", mesh.nx + 1, mesh.ny + 1)?;
    writeln!(w, "ORIGIN 0 0 0")?;
    writeln!(w, "SPACING {} {} 1", real(mesh.hx()), real(mesh.hy()))?;
    if !cell_fields.is_empty() {
        writeln!(w, "CELL_DATA {}", mesh.num_cells())?;
        for f in cell_fields {
            f.write(&mut w)?;
        }
    }
    if !point_fields.is_empty() {
        writeln!(w, "POINT_DATA {}", mesh.num_nodes())?;
        for f in point_fields {
            f.write(&mut w)?;
        }
    }
    w.flush()?;
    Ok(())
}
