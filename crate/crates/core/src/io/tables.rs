//! CSV tables: comma separated, header row, `\n` line ends.

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::topology::{eigenvalues, SliceAnalysis};
use crate::tracer::PlaneSnapshot;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Parse(format!("csv: {other:?}")),
    }
}

/// Header first, then one serialized row per item; an empty table is just
/// the header.
pub fn write_rows<W: Write, T: Serialize>(w: W, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for row in rows {
        out.serialize(row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_history<W: Write>(w: W, history: &[(usize, f64)]) -> Result<()> {
    write_rows(w, &["iteration", "residual"], history)
}

/// `x_um,z_um,species,period`, in particle order.
pub fn write_snapshot<W: Write>(w: W, snapshot: &PlaneSnapshot, period: usize) -> Result<()> {
    write_rows(
        w,
        &["x_um", "z_um", "species", "period"],
        snapshot.crossings.iter().map(|c| (c.x, c.z, c.species.label(), period)),
    )
}

pub fn write_fret<W: Write>(w: W, profile: &[(usize, f64, f64)]) -> Result<()> {
    write_rows(w, &["period", "y_um", "fret_factor"], profile)
}

#[derive(Serialize)]
struct PointRow {
    slice: usize,
    y_um: f64,
    slant_deg: f64,
    pivot_x_um: f64,
    x_um: f64,
    z_um: f64,
    kind: &'static str,
    sense: &'static str,
    eig1_re: f64,
    eig1_im: f64,
    eig2_re: f64,
    eig2_im: f64,
    vortex_size_um2: Option<f64>,
}

/// One row per critical point; eigenvalues in 1/s, vortex size empty for
/// non-vortex points.
pub fn write_topology<W: Write>(w: W, analyses: &[SliceAnalysis]) -> Result<()> {
    let rows = analyses.iter().enumerate().flat_map(|(n, a)| {
        a.points.iter().map(move |p| {
            let [(r1, i1), (r2, i2)] = eigenvalues(&p.jacobian);
            PointRow {
                slice: n,
                y_um: a.plane.y,
                slant_deg: a.plane.slant_deg,
                pivot_x_um: a.plane.pivot_x,
                x_um: p.x,
                z_um: p.z,
                kind: p.kind.name(),
                sense: p.sense.map_or("", |s| s.name()),
                eig1_re: r1,
                eig1_im: i1,
                eig2_re: r2,
                eig2_im: i2,
                vortex_size_um2: a
                    .vortices
                    .iter()
                    .find(|v| v.center.x == p.x && v.center.z == p.z)
                    .map(|v| v.size),
            }
        })
    });
    write_rows(
        w,
        &[
            "slice",
            "y_um",
            "slant_deg",
            "pivot_x_um",
            "x_um",
            "z_um",
            "kind",
            "sense",
            "eig1_re",
            "eig1_im",
            "eig2_re",
            "eig2_im",
            "vortex_size_um2",
        ],
        rows,
    )
}
