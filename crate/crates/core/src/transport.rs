//! Steady advection-diffusion-reaction of two reactants and their product
//! (`A + B -> P`, second order, irreversible).

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FaceFluxes, VelocityField};
use crate::geometry::{CellKind, VoxelGrid};

/// Cell Peclet number above which false diffusion is flagged.
pub const PECLET_WARNING: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InletMode {
    /// A enters through the `InletA` half, B through the `InletB` half.
    #[default]
    Split,
    /// Both reactants enter everywhere on the inlet face.
    Premixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransportParams {
    /// m^2/s, shared by all species.
    pub diffusivity: f64,
    /// m^3 / (mol s)
    pub rate_constant: f64,
    /// mol/m^3
    pub c_a0: f64,
    /// mol/m^3
    pub c_b0: f64,
    /// Fraction of the stoichiometric product marking reacted area.
    pub threshold: f64,
    /// Largest concentration change per sweep, relative to `max(c_a0, c_b0)`.
    pub tol: f64,
    pub max_sweeps: usize,
    pub inlet: InletMode,
}

impl Default for TransportParams {
    fn default() -> Self {
        Self {
            diffusivity: 6e-9,
            rate_constant: 1e5,
            c_a0: 1.0,
            c_b0: 1.0,
            threshold: 0.1,
            tol: 1e-7,
            max_sweeps: 5000,
            inlet: InletMode::Split,
        }
    }
}

impl TransportParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.diffusivity > 0.0 && self.diffusivity.is_finite()) {
            return Err(Error::config("diffusivity", "must be > 0"));
        }
        if !(self.rate_constant >= 0.0 && self.rate_constant.is_finite()) {
            return Err(Error::config("rate_constant", "must be >= 0"));
        }
        if !(self.c_a0 > 0.0 && self.c_b0 > 0.0) {
            return Err(Error::config("c_a0", "inlet concentrations must be > 0"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("fret_threshold", "must lie in (0, 1)"));
        }
        if !(self.tol > 0.0) {
            return Err(Error::config("transport_tol", "must be > 0"));
        }
        Ok(())
    }

    /// `(cA, cB)` entering through the inlet face of a cell of this kind.
    pub fn inlet_state(&self, kind: CellKind) -> (f64, f64) {
        match (self.inlet, kind) {
            (InletMode::Premixed, CellKind::InletA | CellKind::InletB) => (self.c_a0, self.c_b0),
            (InletMode::Split, CellKind::InletA) => (self.c_a0, 0.0),
            (InletMode::Split, CellKind::InletB) => (0.0, self.c_b0),
            _ => (0.0, 0.0),
        }
    }

    /// Product concentration if the two half streams reacted completely.
    pub fn stoichiometric_product(&self) -> f64 {
        match self.inlet {
            InletMode::Split => 0.5 * self.c_a0.min(self.c_b0),
            InletMode::Premixed => self.c_a0.min(self.c_b0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesFields {
    pub grid: Arc<VoxelGrid>,
    /// mol/m^3 per cell, zero in solid.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub p: Vec<f64>,
    pub params: TransportParams,
    pub sweeps: usize,
    pub last_change: f64,
    /// Largest `|u| h / D` over fluid cells.
    pub max_cell_peclet: f64,
    pub warnings: Vec<String>,
}

const NONE: u32 = u32::MAX;

/// Discrete operator of one fluid cell:
/// `diag * c = sum(coef * c_nb) + inflow * c_in - V k cA cB`.
#[derive(Clone, Copy)]
struct Row {
    nb: [u32; 6],
    coef: [f64; 6],
    diag: f64,
    /// Volumetric inflow through the inlet face, m^3/s.
    inflow: f64,
}

fn build_rows(grid: &VoxelGrid, faces: &FaceFluxes, diffusivity: f64) -> Vec<Option<Row>> {
    let [nx, ny, nz] = grid.dims;
    let dims = grid.dims;
    let h = grid.h * 1e-6;
    let conductance = diffusivity * h;
    (0..grid.len())
        .into_par_iter()
        .map(|c| {
            if !grid.is_fluid(c) {
                return None;
            }
            let (i, j, k) = grid.coords(c);
            let mut row = Row {
                nb: [NONE; 6],
                coef: [0.0; 6],
                diag: 0.0,
                inflow: 0.0,
            };
            // (outward flux, neighbour) for -x, +x, -z, +z, -y, +y.
            let sides: [(f64, Option<(usize, usize, usize)>); 6] = [
                (-faces.x[FaceFluxes::xi(dims, i, j, k)], (i > 0).then(|| (i - 1, j, k))),
                (faces.x[FaceFluxes::xi(dims, i + 1, j, k)], (i + 1 < nx).then(|| (i + 1, j, k))),
                (-faces.z[FaceFluxes::zi(dims, i, j, k)], (k > 0).then(|| (i, j, k - 1))),
                (faces.z[FaceFluxes::zi(dims, i, j, k + 1)], (k + 1 < nz).then(|| (i, j, k + 1))),
                (-faces.y[FaceFluxes::yi(dims, i, j, k)], (j > 0).then(|| (i, j - 1, k))),
                (faces.y[FaceFluxes::yi(dims, i, j + 1, k)], (j + 1 < ny).then(|| (i, j + 1, k))),
            ];
            for (s, &(out, nb)) in sides.iter().enumerate() {
                match nb.map(|(a, b, c)| grid.index(a, b, c)) {
                    Some(n) if grid.is_fluid(n) => {
                        row.nb[s] = n as u32;
                        row.coef[s] = (-out).max(0.0) + conductance;
                        row.diag += out.max(0.0) + conductance;
                    }
                    Some(_) => {}
                    None if s == 4 => {
                        // Inlet face: advective inflow of the inlet state.
                        row.inflow += (-out).max(0.0);
                        row.diag += out.max(0.0);
                    }
                    None if s == 5 => {
                        // Outlet face: zero gradient, so any backflow
                        // carries the cell's own value.
                        row.diag += out;
                    }
                    None => {}
                }
            }
            Some(row)
        })
        .collect()
}

#[derive(Clone, Copy)]
struct Shared(*mut f64);
// SAFETY: concurrent updates touch disjoint cells (one colour of one plane).
unsafe impl Send for Shared {}
unsafe impl Sync for Shared {}

impl Shared {
    #[inline]
    fn at(self, i: usize) -> *mut f64 {
        // SAFETY: callers index within the allocation.
        unsafe { self.0.add(i) }
    }
}

/// Reaction rate `V k cA cB` (mol/s) solving the cell balance exactly given
/// the neighbour sources `sa`, `sb` and diagonal `diag`.
#[inline]
fn local_reaction(sa: f64, sb: f64, diag: f64, vk: f64) -> f64 {
    if vk == 0.0 || sa <= 0.0 || sb <= 0.0 {
        return 0.0;
    }
    let kappa = vk / (diag * diag);
    let m = kappa * (sa + sb) + 1.0;
    let disc = (m * m - 4.0 * kappa * kappa * sa * sb).max(0.0);
    2.0 * kappa * sa * sb / (m + disc.sqrt())
}

/// Steady species concentrations for the solved flow.
pub fn solve_transport(field: &VelocityField, params: &TransportParams) -> Result<SpeciesFields> {
    params.validate()?;
    let grid = field.grid.clone();
    let faces = field.face_fluxes();
    let rows = build_rows(&grid, &faces, params.diffusivity);
    let h = grid.h * 1e-6;
    let volume = h * h * h;
    let vk = volume * params.rate_constant;
    let ca_in = |kind: CellKind| params.inlet_state(kind);

    let peclet = field
        .u
        .iter()
        .zip(&grid.cells)
        .filter(|(_, c)| c.is_fluid())
        .map(|(u, _)| (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt() * h / params.diffusivity)
        .fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if peclet > PECLET_WARNING {
        let w = format!(
            "cell Peclet number {peclet:.1} exceeds {PECLET_WARNING}: upwind false diffusion may dominate physical diffusion"
        );
        log::warn!("transport: {w}");
        warnings.push(w);
    }

    let n = grid.len();
    let plane = grid.plane_len();
    let ny = grid.dims[1];
    // Cells of each plane split by in-plane parity; same-colour cells of a
    // plane are never neighbours.
    let colours: Vec<[Vec<u32>; 2]> = (0..ny)
        .map(|j| {
            let mut c: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
            for idx in j * plane..(j + 1) * plane {
                if rows[idx].is_some() {
                    let (i, _, k) = grid.coords(idx);
                    c[(i + k) % 2].push(idx as u32);
                }
            }
            c
        })
        .collect();

    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    let mut p = vec![0.0; n];
    let scale = params.c_a0.max(params.c_b0);
    let mut last_change = f64::INFINITY;
    let mut sweeps = 0;
    let update = |a: Shared, b: Shared, p: Shared, cells: &[u32]| -> f64 {
        cells
            .par_iter()
            .with_min_len(64)
            .map(|&c| {
                let c = c as usize;
                let row = rows[c].as_ref().expect("colour lists hold fluid cells");
                // SAFETY: see `Shared`; neighbours are read while other
                // cells of this colour are written, never the same cell.
                unsafe {
                    let (ia, ib) = ca_in(grid.cells[c]);
                    let mut sa = row.inflow * ia;
                    let mut sb = row.inflow * ib;
                    let mut sp = 0.0;
                    for s in 0..6 {
                        let nb = row.nb[s];
                        if nb != NONE {
                            let w = row.coef[s];
                            sa += w * *a.at(nb as usize);
                            sb += w * *b.at(nb as usize);
                            sp += w * *p.at(nb as usize);
                        }
                    }
                    let r = local_reaction(sa, sb, row.diag, vk);
                    let na = ((sa - r) / row.diag).max(0.0);
                    let nbv = ((sb - r) / row.diag).max(0.0);
                    let np = (sp + r) / row.diag;
                    let d = (na - *a.at(c)).abs().max((nbv - *b.at(c)).abs()).max((np - *p.at(c)).abs());
                    *a.at(c) = na;
                    *b.at(c) = nbv;
                    *p.at(c) = np;
                    d
                }
            })
            .reduce(|| 0.0, f64::max)
    };
    while sweeps < params.max_sweeps {
        let (pa, pb, pp) = (Shared(a.as_mut_ptr()), Shared(b.as_mut_ptr()), Shared(p.as_mut_ptr()));
        let mut change = 0.0f64;
        for j in (0..ny).chain((0..ny).rev()) {
            for colour in &colours[j] {
                change = change.max(update(pa, pb, pp, colour));
            }
        }
        sweeps += 1;
        last_change = change / scale;
        if sweeps % 50 == 0 {
            log::info!("transport: sweep {sweeps}, change {last_change:.3e}");
        }
        if last_change < params.tol {
            break;
        }
    }
    if last_change >= params.tol {
        return Err(Error::TransportNotConverged {
            iterations: sweeps,
            last_change,
        });
    }
    Ok(SpeciesFields {
        grid,
        a,
        b,
        p,
        params: params.clone(),
        sweeps,
        last_change,
        max_cell_peclet: peclet,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    A,
    B,
    P,
}

impl SpeciesFields {
    pub fn species(&self, s: Species) -> &[f64] {
        match s {
            Species::A => &self.a,
            Species::B => &self.b,
            Species::P => &self.p,
        }
    }

    /// Total (advective + diffusive) flux of a species through the y-face
    /// plane `j_face`, consistent with the discretization, mol/s.
    pub fn plane_flux(&self, faces: &FaceFluxes, s: Species, j_face: usize) -> f64 {
        let g = &self.grid;
        let c = self.species(s);
        let [nx, ny, nz] = g.dims;
        let h = g.h * 1e-6;
        let mut total = 0.0;
        for k in 0..nz {
            for i in 0..nx {
                let f = faces.y[FaceFluxes::yi(g.dims, i, j_face, k)];
                if j_face == 0 || j_face == ny {
                    let cell = g.index(i, j_face.min(ny - 1), k);
                    if !g.is_fluid(cell) {
                        continue;
                    }
                    let (ia, ib) = self.params.inlet_state(g.cells[cell]);
                    let inlet = match s {
                        Species::A => ia,
                        Species::B => ib,
                        Species::P => 0.0,
                    };
                    total += if j_face == 0 {
                        f.max(0.0) * inlet + f.min(0.0) * c[cell]
                    } else {
                        f * c[cell]
                    };
                    continue;
                }
                let lo = g.index(i, j_face - 1, k);
                let hi = g.index(i, j_face, k);
                if g.is_fluid(lo) && g.is_fluid(hi) {
                    let upwind = if f > 0.0 { c[lo] } else { c[hi] };
                    total += f * upwind - self.params.diffusivity * h * (c[hi] - c[lo]);
                }
            }
        }
        total
    }
}

/// Fraction of fluid cells on the plane containing `y` whose product
/// concentration reaches `threshold` of the stoichiometric product.
pub fn fret_factor(fields: &SpeciesFields, y: f64, threshold: f64) -> Result<f64> {
    let g = &fields.grid;
    let j = g.plane_index(y).ok_or(Error::PlaneOutsideDomain(y))?;
    let cut = threshold * fields.params.stoichiometric_product();
    let plane = g.plane_len();
    let (mut fluid, mut reacted) = (0usize, 0usize);
    for c in j * plane..(j + 1) * plane {
        if g.is_fluid(c) {
            fluid += 1;
            if fields.p[c] >= cut {
                reacted += 1;
            }
        }
    }
    if fluid == 0 {
        return Err(Error::PlaneInSolid(y));
    }
    Ok(reacted as f64 / fluid as f64)
}

/// `(period, y, fret_factor)` for each plane in order; periods count from 1.
pub fn fret_profile(fields: &SpeciesFields, planes: &[f64], threshold: f64) -> Result<Vec<(usize, f64, f64)>> {
    planes
        .iter()
        .enumerate()
        .map(|(n, &y)| Ok((n + 1, y, fret_factor(fields, y, threshold)?)))
        .collect()
}
