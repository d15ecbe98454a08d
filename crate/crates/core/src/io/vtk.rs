//! Legacy ASCII VTK writers.

use std::io::Write;

use crate::error::Result;
use crate::geometry::{CellKind, VoxelGrid};
use crate::tracer::{PlaneSnapshot, Species};

/// Point data attached to a structured-points dataset, indexed like the grid.
pub enum PointData<'a> {
    Scalars(&'a str, &'a [f64]),
    IntScalars(&'a str, Vec<i32>),
    Vectors(&'a str, &'a [[f64; 3]]),
}

/// Nine significant digits.
fn num(v: f64) -> String {
    format!("{v:.8e}")
}

fn header<W: Write + ?Sized>(w: &mut W, title: &str, dataset: &str) -> Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET {dataset}")?;
    Ok(())
}

/// Grid cell centres as points, x fastest, then y, then z.
pub fn write_structured_points<W: Write + ?Sized>(w: &mut W, title: &str, grid: &VoxelGrid, data: &[PointData]) -> Result<()> {
    let [nx, ny, nz] = grid.dims;
    header(w, title, "STRUCTURED_POINTS")?;
    writeln!(w, "DIMENSIONS {nx} {ny} {nz}")?;
    let o = grid.center(0, 0, 0);
    writeln!(w, "ORIGIN {} {} {}", num(o[0]), num(o[1]), num(o[2]))?;
    writeln!(w, "SPACING {} {} {}", num(grid.h), num(grid.h), num(grid.h))?;
    writeln!(w, "POINT_DATA {}", grid.len())?;
    let order = || (0..nz).flat_map(move |k| (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j, k))));
    for d in data {
        match d {
            PointData::Scalars(name, v) => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for (i, j, k) in order() {
                    writeln!(w, "{}", num(v[grid.index(i, j, k)]))?;
                }
            }
            PointData::IntScalars(name, v) => {
                writeln!(w, "SCALARS {name} int 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for (i, j, k) in order() {
                    writeln!(w, "{}", v[grid.index(i, j, k)])?;
                }
            }
            PointData::Vectors(name, v) => {
                writeln!(w, "VECTORS {name} double")?;
                for (i, j, k) in order() {
                    let u = v[grid.index(i, j, k)];
                    writeln!(w, "{} {} {}", num(u[0]), num(u[1]), num(u[2]))?;
                }
            }
        }
    }
    Ok(())
}

pub fn cell_kind_code(kind: CellKind) -> i32 {
    match kind {
        CellKind::Solid => 0,
        CellKind::Fluid => 1,
        CellKind::InletA => 2,
        CellKind::InletB => 3,
        CellKind::Outlet => 4,
    }
}

/// `cell_kind`: 0 solid, 1 fluid, 2 inlet A, 3 inlet B, 4 outlet.
pub fn write_grid<W: Write + ?Sized>(w: &mut W, grid: &VoxelGrid) -> Result<()> {
    let kinds = grid.cells.iter().map(|&c| cell_kind_code(c)).collect();
    write_structured_points(w, "micromixer grid (um)", grid, &[PointData::IntScalars("cell_kind", kinds)])
}

/// Particles crossing a plane as vertices at `(x, y_plane, z)`;
/// `species` is 0 for A, 1 for B.
pub fn write_particles<W: Write + ?Sized>(w: &mut W, snapshot: &PlaneSnapshot) -> Result<()> {
    let n = snapshot.crossings.len();
    header(w, &format!("particles crossing y = {} um", snapshot.y), "POLYDATA")?;
    writeln!(w, "POINTS {n} double")?;
    for c in &snapshot.crossings {
        writeln!(w, "{} {} {}", num(c.x), num(snapshot.y), num(c.z))?;
    }
    writeln!(w, "VERTICES {n} {}", 2 * n)?;
    for i in 0..n {
        writeln!(w, "1 {i}")?;
    }
    writeln!(w, "POINT_DATA {n}")?;
    writeln!(w, "SCALARS species int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for c in &snapshot.crossings {
        writeln!(w, "{}", if c.species == Species::A { 0 } else { 1 })?;
    }
    Ok(())
}
