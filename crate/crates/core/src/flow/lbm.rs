//! Incompressible D3Q19 BGK solver with halfway bounce-back walls.
//!
//! Populations are stored as deviations `g = f - w * rho0` with `rho0 = 1`
//! (structure of arrays, `g[q * n + cell]`). The equilibrium is the
//! incompressible form `w (drho + 3 e.u + 9/2 (e.u)^2 - 3/2 u.u)`, whose
//! steady state satisfies the incompressible equations without the
//! density-variation error of the standard model; in Stokes mode the
//! quadratic terms are dropped and the whole update is linear in `g`.
//!
//! Boundaries: halfway bounce-back at solid links, moving-wall bounce-back
//! carrying a uniform plug velocity on the inlet face, and a fixed-pressure
//! outlet whose ghost layer copies the outlet cell's non-equilibrium state
//! (zero velocity gradient).

use std::sync::Arc;

use rayon::prelude::*;

use super::lattice::{CS2, EX, EY, EZ, OPP, Q, W};
use super::{DuctProfile, FaceFluxes, FlowConditions, LatticeUnits, SolverSettings, VelocityField};
use crate::error::{Error, Result};
use crate::geometry::VoxelGrid;

const INLET_SHIFT: u32 = 19;
const OUTLET_SHIFT: u32 = 38;
const TAU_MIN: f64 = 0.55;
/// Fraction of the speed bound allowed for the inlet duct profile peak.
const SPEED_MARGIN: f64 = 0.4;

/// Directions with `e_y = +1`.
const UP: [usize; 5] = [3, 7, 10, 15, 17];
/// One direction from each opposite pair.
const HALF: [usize; 9] = [1, 3, 5, 7, 9, 11, 13, 15, 17];

#[derive(Clone, Copy)]
struct SharedMut(*mut f64);
// SAFETY: every parallel task writes a disjoint range of cells.
unsafe impl Send for SharedMut {}
unsafe impl Sync for SharedMut {}

struct Lattice {
    dims: [usize; 3],
    n: usize,
    plane: usize,
    fluid: Vec<bool>,
    /// Bits 0..19 wall links, 19..38 inlet links, 38..57 outlet links.
    masks: Vec<u64>,
    offsets: [isize; Q],
    /// Mass injected per unit plug velocity through each inlet link.
    inlet_weight: [f64; Q],
}

impl Lattice {
    fn new(grid: &VoxelGrid) -> Self {
        let [nx, ny, nz] = grid.dims;
        let plane = nx * nz;
        let n = grid.len();
        let fluid: Vec<bool> = grid.cells.iter().map(|c| c.is_fluid()).collect();
        let mut offsets = [0isize; Q];
        let mut inlet_weight = [0.0; Q];
        for q in 0..Q {
            offsets[q] = EX[q] as isize + nx as isize * (EZ[q] as isize + nz as isize * EY[q] as isize);
            inlet_weight[q] = 6.0 * W[q] * EY[q] as f64;
        }
        let is_fluid = |i: i64, j: i64, k: i64| -> bool {
            i >= 0
                && k >= 0
                && j >= 0
                && (i as usize) < nx
                && (j as usize) < ny
                && (k as usize) < nz
                && fluid[grid.index(i as usize, j as usize, k as usize)]
        };
        let masks: Vec<u64> = (0..n)
            .into_par_iter()
            .map(|c| {
                if !fluid[c] {
                    return 0;
                }
                let (i, j, k) = grid.coords(c);
                let (i, j, k) = (i as i64, j as i64, k as i64);
                let mut m = 0u64;
                for q in 1..Q {
                    let (ex, ey, ez) = (EX[q] as i64, EY[q] as i64, EZ[q] as i64);
                    let (si, sj, sk) = (i - ex, j - ey, k - ez);
                    if sj < 0 {
                        if is_fluid(si, 0, sk) {
                            m |= 1 << (q as u32 + INLET_SHIFT);
                        } else {
                            m |= 1 << q;
                        }
                        continue;
                    }
                    if sj >= ny as i64 {
                        if is_fluid(si, ny as i64 - 1, sk) {
                            m |= 1 << (q as u32 + OUTLET_SHIFT);
                        } else {
                            m |= 1 << q;
                        }
                        continue;
                    }
                    if !is_fluid(si, sj, sk) {
                        m |= 1 << q;
                        continue;
                    }
                    let comps = (ex != 0) as u8 + (ey != 0) as u8 + (ez != 0) as u8;
                    if comps == 2 {
                        // A diagonal link whose two face-adjacent
                        // intermediates are both solid is sealed.
                        let mut open = false;
                        if ex != 0 {
                            open |= is_fluid(i - ex, j, k);
                        }
                        if ey != 0 {
                            open |= is_fluid(i, j - ey, k);
                        }
                        if ez != 0 {
                            open |= is_fluid(i, j, k - ez);
                        }
                        if !open {
                            m |= 1 << q;
                        }
                    }
                }
                m
            })
            .collect();
        Self {
            dims: grid.dims,
            n,
            plane,
            fluid,
            masks,
            offsets,
            inlet_weight,
        }
    }

    /// Total mass injected per step by a unit plug velocity.
    fn inlet_capacity(&self) -> f64 {
        let mut s = 0.0;
        for c in 0..self.plane {
            let m = self.masks[c];
            for q in 0..Q {
                if m & (1 << (q as u32 + INLET_SHIFT)) != 0 {
                    s += self.inlet_weight[q];
                }
            }
        }
        s
    }

    #[inline]
    fn outlet_lateral(&self, c: usize, q: usize) -> usize {
        (c as isize - EX[q] as isize - self.dims[0] as isize * EZ[q] as isize) as usize
    }

    /// Ghost-layer populations beyond the outlet, `[q * plane + lateral]`.
    fn outlet_ghosts(&self, src: &[f64]) -> Vec<f64> {
        let base = (self.dims[1] - 1) * self.plane;
        let mut ghost = vec![0.0; Q * self.plane];
        for l in 0..self.plane {
            let c = base + l;
            if !self.fluid[c] {
                continue;
            }
            let rho = self.moments(src, c).0;
            for q in 0..Q {
                ghost[q * self.plane + l] = src[q * self.n + c] - W[q] * rho;
            }
        }
        ghost
    }

    /// Post-streaming populations of cell `c`.
    #[inline(always)]
    fn gather(&self, src: &[f64], c: usize, u_in: f64, ghosts: &[f64], g: &mut [f64; Q]) {
        let n = self.n;
        let m = self.masks[c];
        if m == 0 {
            for q in 0..Q {
                g[q] = src[q * n + (c as isize - self.offsets[q]) as usize];
            }
            return;
        }
        let outlet_base = (self.dims[1] - 1) * self.plane;
        for q in 0..Q {
            let bit = 1u64 << q;
            g[q] = if m & bit != 0 {
                src[OPP[q] * n + c]
            } else if m & (bit << INLET_SHIFT) != 0 {
                src[OPP[q] * n + c] + self.inlet_weight[q] * u_in
            } else if m & (bit << OUTLET_SHIFT) != 0 {
                let lat = self.outlet_lateral(c, q);
                ghosts[q * self.plane + lat - outlet_base]
            } else {
                src[q * n + (c as isize - self.offsets[q]) as usize]
            };
        }
    }

    fn step(&self, src: &[f64], dst: &mut [f64], u_in: f64, omega: f64, stokes: bool) {
        let ghosts = self.outlet_ghosts(src);
        let n = self.n;
        let plane = self.plane;
        let out = SharedMut(dst.as_mut_ptr());
        (0..self.dims[1]).into_par_iter().for_each(|j| {
            let out = out;
            let mut g = [0.0; Q];
            for c in j * plane..(j + 1) * plane {
                if !self.fluid[c] {
                    continue;
                }
                self.gather(src, c, u_in, &ghosts, &mut g);
                collide(&mut g, omega, stokes);
                for q in 0..Q {
                    // SAFETY: `c` lies in plane `j`, owned by this task.
                    unsafe { *out.0.add(q * n + c) = g[q] };
                }
            }
        });
    }

    #[inline]
    fn moments(&self, src: &[f64], c: usize) -> (f64, [f64; 3]) {
        let mut rho = 0.0;
        let mut j = [0.0; 3];
        for q in 0..Q {
            let v = src[q * self.n + c];
            rho += v;
            j[0] += EX[q] as f64 * v;
            j[1] += EY[q] as f64 * v;
            j[2] += EZ[q] as f64 * v;
        }
        (rho, j)
    }

    fn velocities(&self, src: &[f64]) -> Vec<[f64; 3]> {
        (0..self.n)
            .into_par_iter()
            .map(|c| if self.fluid[c] { self.moments(src, c).1 } else { [0.0; 3] })
            .collect()
    }

    /// Net lattice flux through the y-faces between consecutive planes;
    /// entry `j` is the face between planes `j` and `j + 1`.
    fn interior_plane_fluxes(&self, src: &[f64]) -> Vec<f64> {
        let n = self.n;
        (1..self.dims[1])
            .into_par_iter()
            .map(|jj| {
                let mut s = 0.0;
                for r in jj * self.plane..(jj + 1) * self.plane {
                    if !self.fluid[r] {
                        continue;
                    }
                    let m = self.masks[r];
                    for &q in &UP {
                        if m & (1 << q) == 0 {
                            let from = (r as isize - self.offsets[q]) as usize;
                            s += src[q * n + from] - src[OPP[q] * n + r];
                        }
                    }
                }
                s
            })
            .collect()
    }

    fn plane_mean_pressure(&self, src: &[f64]) -> Vec<f64> {
        (0..self.dims[1])
            .into_par_iter()
            .map(|j| {
                let mut s = 0.0;
                let mut cnt = 0usize;
                for c in j * self.plane..(j + 1) * self.plane {
                    if self.fluid[c] {
                        s += self.moments(src, c).0;
                        cnt += 1;
                    }
                }
                if cnt > 0 {
                    CS2 * s / cnt as f64
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Shifts plane-averaged pressure so that, under a uniform axial
    /// resistance estimated from the current state, every plane carries the
    /// target flux. Returns the largest relative flux defect.
    fn correct_pressure(&self, src: &mut [f64], target: f64) -> f64 {
        let ny = self.dims[1];
        let flux = self.interior_plane_fluxes(src);
        let p = self.plane_mean_pressure(src);
        let defect = flux
            .iter()
            .map(|f| ((f - target) / target).abs())
            .fold(0.0, f64::max);
        let total: f64 = flux.iter().sum();
        let resistance = (p[0] - p[ny - 1]) / total;
        if !(resistance.is_finite() && resistance > 0.0) {
            return defect;
        }
        let mut shift = vec![0.0; ny];
        for j in (0..ny - 1).rev() {
            shift[j] = shift[j + 1] + resistance * (target - flux[j]);
        }
        let n = self.n;
        let plane = self.plane;
        let out = SharedMut(src.as_mut_ptr());
        (0..ny).into_par_iter().for_each(|j| {
            let out = out;
            let drho = shift[j] / CS2;
            for c in j * plane..(j + 1) * plane {
                if !self.fluid[c] {
                    continue;
                }
                for q in 0..Q {
                    // SAFETY: plane `j` is owned by this task.
                    unsafe { *out.0.add(q * n + c) += W[q] * drho };
                }
            }
        });
        defect
    }

    /// Decomposes every open link's net flux onto cell faces. Diagonal links
    /// are routed through their fluid face-adjacent intermediates.
    fn face_fluxes(&self, grid: &VoxelGrid, src: &[f64], u_in: f64, scale: f64) -> FaceFluxes {
        let dims = self.dims;
        let [nx, ny, nz] = dims;
        let n = self.n;
        let mut faces = FaceFluxes::zeros(dims);
        let ghosts = self.outlet_ghosts(src);
        let outlet_base = (ny - 1) * self.plane;
        let fluid_at = |i: i64, j: i64, k: i64| -> bool {
            i >= 0
                && j >= 0
                && k >= 0
                && (i as usize) < nx
                && (j as usize) < ny
                && (k as usize) < nz
                && self.fluid[grid.index(i as usize, j as usize, k as usize)]
        };
        for r in 0..n {
            if !self.fluid[r] {
                continue;
            }
            let m = self.masks[r];
            let (i, j, k) = grid.coords(r);
            for q in 1..Q {
                let bit = 1u64 << q;
                if m & bit != 0 {
                    continue;
                }
                if m & (bit << INLET_SHIFT) != 0 {
                    faces.y[FaceFluxes::yi(dims, i, 0, k)] += self.inlet_weight[q] * u_in * scale;
                    continue;
                }
                if m & (bit << OUTLET_SHIFT) != 0 {
                    let lat = self.outlet_lateral(r, q);
                    let ghost = ghosts[q * self.plane + lat - outlet_base];
                    faces.y[FaceFluxes::yi(dims, i, ny, k)] += (src[OPP[q] * n + r] - ghost) * scale;
                    continue;
                }
                if !HALF.contains(&q) {
                    continue;
                }
                let from = (r as isize - self.offsets[q]) as usize;
                let f = (src[q * n + from] - src[OPP[q] * n + r]) * scale;
                let e = [EX[q] as i64, EY[q] as i64, EZ[q] as i64];
                let s = [i as i64 - e[0], j as i64 - e[1], k as i64 - e[2]];
                let axes: Vec<usize> = (0..3).filter(|&a| e[a] != 0).collect();
                if axes.len() == 1 {
                    add_face(&mut faces, dims, axes[0], s, e[axes[0]], f);
                    continue;
                }
                let (a, b) = (axes[0], axes[1]);
                let mut via_a = s;
                via_a[a] += e[a];
                let mut via_b = s;
                via_b[b] += e[b];
                let open_a = fluid_at(via_a[0], via_a[1], via_a[2]);
                let open_b = fluid_at(via_b[0], via_b[1], via_b[2]);
                let (fa, fb) = match (open_a, open_b) {
                    (true, true) => (0.5 * f, 0.5 * f),
                    (true, false) => (f, 0.0),
                    _ => (0.0, f),
                };
                if fa != 0.0 {
                    add_face(&mut faces, dims, a, s, e[a], fa);
                    add_face(&mut faces, dims, b, via_a, e[b], fa);
                }
                if fb != 0.0 {
                    add_face(&mut faces, dims, b, s, e[b], fb);
                    add_face(&mut faces, dims, a, via_b, e[a], fb);
                }
            }
        }
        faces
    }
}

/// Adds `amount` moving from cell `from` one step along `axis` in direction
/// `sign`, as a flux in the positive axis direction.
fn add_face(faces: &mut FaceFluxes, dims: [usize; 3], axis: usize, from: [i64; 3], sign: i64, amount: f64) {
    let mut c = from;
    if sign > 0 {
        c[axis] += 1;
    }
    let (i, j, k) = (c[0] as usize, c[1] as usize, c[2] as usize);
    let v = sign as f64 * amount;
    match axis {
        0 => faces.x[FaceFluxes::xi(dims, i, j, k)] += v,
        1 => faces.y[FaceFluxes::yi(dims, i, j, k)] += v,
        _ => faces.z[FaceFluxes::zi(dims, i, j, k)] += v,
    }
}

#[inline(always)]
fn collide(g: &mut [f64; Q], omega: f64, stokes: bool) {
    let mut rho = 0.0;
    let (mut ux, mut uy, mut uz) = (0.0, 0.0, 0.0);
    for q in 0..Q {
        rho += g[q];
        ux += EX[q] as f64 * g[q];
        uy += EY[q] as f64 * g[q];
        uz += EZ[q] as f64 * g[q];
    }
    let (quad, usq) = if stokes { (0.0, 0.0) } else { (4.5, 1.5 * (ux * ux + uy * uy + uz * uz)) };
    for q in 0..Q {
        let eu = EX[q] as f64 * ux + EY[q] as f64 * uy + EZ[q] as f64 * uz;
        let eq = W[q] * (rho + 3.0 * eu + quad * eu * eu - usq);
        g[q] += omega * (eq - g[q]);
    }
}

#[inline]
fn equilibrium(rho: f64, u: [f64; 3], stokes: bool, q: usize) -> f64 {
    let eu = EX[q] as f64 * u[0] + EY[q] as f64 * u[1] + EZ[q] as f64 * u[2];
    if stokes {
        W[q] * (rho + 3.0 * eu)
    } else {
        let usq = 1.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
        W[q] * (rho + 3.0 * eu + 4.5 * eu * eu - usq)
    }
}

/// Fully developed duct flow over the inlet rectangle with the matching
/// linear pressure drop, as the initial state.
fn warm_start(grid: &VoxelGrid, lat: &Lattice, q_lat: f64, nu: f64, stokes: bool) -> (Vec<f64>, f64) {
    let [nx, ny, nz] = grid.dims;
    let n = lat.n;
    let mut g = vec![0.0; Q * n];
    let (mut i0, mut i1, mut k0, mut k1) = (usize::MAX, 0, usize::MAX, 0);
    for k in 0..nz {
        for i in 0..nx {
            if lat.fluid[grid.index(i, 0, k)] {
                i0 = i0.min(i);
                i1 = i1.max(i);
                k0 = k0.min(k);
                k1 = k1.max(k);
            }
        }
    }
    if i0 == usize::MAX || q_lat == 0.0 {
        return (g, 0.0);
    }
    let (w, h) = ((i1 - i0 + 1) as f64, (k1 - k0 + 1) as f64);
    let duct = DuctProfile::new(w, h, 1.0, 100);
    let mut sum = 0.0;
    let mut profile = vec![0.0; nx * nz];
    for k in k0..=k1 {
        for i in i0..=i1 {
            if lat.fluid[grid.index(i, 0, k)] {
                let v = duct.unit_velocity(i as f64 - i0 as f64 + 0.5, k as f64 - k0 as f64 + 0.5);
                profile[k * nx + i] = v;
                sum += v;
            }
        }
    }
    if sum <= 0.0 {
        return (g, 0.0);
    }
    // u = (G / nu) * S with sum(u) = q_lat over the section.
    let gradient = nu * q_lat / sum;
    for j in 0..ny {
        let drho = (gradient * (ny - j) as f64) / CS2;
        for k in 0..nz {
            for i in 0..nx {
                let c = grid.index(i, j, k);
                if !lat.fluid[c] {
                    continue;
                }
                let v = if (i0..=i1).contains(&i) && (k0..=k1).contains(&k) {
                    q_lat * profile[k * nx + i] / sum
                } else {
                    0.0
                };
                for q in 0..Q {
                    g[q * n + c] = equilibrium(drho, [0.0, v, 0.0], stokes, q);
                }
            }
        }
    }
    (g, (q_lat * profile.iter().cloned().fold(0.0, f64::max) / sum).abs())
}

/// Solves for the steady flow carrying `2 * flow_rate_per_inlet` from the
/// inlet face to the outlet face.
pub fn solve_steady(grid: Arc<VoxelGrid>, cond: &FlowConditions, settings: &SolverSettings) -> Result<VelocityField> {
    cond.validate()?;
    settings.validate()?;
    if grid.dims[1] < 2 {
        return Err(Error::GridMismatch("grid needs at least two planes".into()));
    }
    let lat = Lattice::new(&grid);
    let n = lat.n;
    let capacity = lat.inlet_capacity();
    if capacity <= 0.0 {
        return Err(Error::GridMismatch("inlet face has no fluid cells".into()));
    }
    // Lattice speeds scale with (tau - 1/2) at fixed spacing. Lower tau until
    // the fully developed inlet profile peaks at SPEED_MARGIN of the bound,
    // leaving room for the acceleration through constrictions.
    let mut tau = settings.tau;
    let (mut units, mut q_lat, mut src, mut estimate);
    loop {
        units = LatticeUnits::new(grid.h, tau, cond);
        q_lat = cond.total_flow_rate() * units.dt / units.dx.powi(3);
        let (g, u_peak) = warm_start(&grid, &lat, q_lat, units.nu, cond.stokes_mode);
        src = g;
        estimate = u_peak.max((q_lat / capacity).abs());
        let target = SPEED_MARGIN * settings.max_lattice_speed;
        if estimate <= target * (1.0 + 1e-9) || tau != settings.tau {
            break;
        }
        tau = 0.5 + (tau - 0.5) * target / estimate;
        if tau < TAU_MIN {
            return Err(Error::Unstable(format!(
                "inlet peak lattice speed {estimate:.4} at tau = {} needs tau = {tau:.3} below {TAU_MIN}",
                settings.tau
            )));
        }
        log::info!("flow: lowering tau from {} to {tau:.4} to respect the lattice speed bound", settings.tau);
    }
    let cell_volume = units.dx.powi(3);
    let u_in = q_lat / capacity;
    if estimate > settings.max_lattice_speed {
        return Err(Error::Unstable(format!(
            "estimated peak lattice speed {estimate:.4} exceeds {} (tau = {tau})",
            settings.max_lattice_speed
        )));
    }
    let mut dst = vec![0.0; Q * n];
    let omega = 1.0 / tau;

    // Momentum relaxation time of the mean flow, in steps.
    let dh = {
        let inlet = grid.cells[..lat.plane].iter().filter(|c| c.is_fluid()).count() as f64;
        2.0 * inlet.sqrt()
    };
    let relax = dh * dh / (32.0 * units.nu);
    let correction_interval = ((4.0 * relax).ceil() as usize).max(100);
    let correct = settings.pressure_correction && q_lat != 0.0 && grid.dims[1] > 2;

    let mut history = Vec::new();
    let mut previous = lat.velocities(&src);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        lat.step(&src, &mut dst, u_in, omega, cond.stokes_mode);
        iterations += 1;
        if iterations % settings.check_interval == 0 {
            // Averaging two consecutive states leaves any steady state
            // unchanged and cancels the staggered momentum mode, which
            // flips sign every step and is barely damped in the bulk.
            dst.par_iter_mut().zip(src.par_iter()).for_each(|(d, s)| *d = 0.5 * (*d + *s));
        }
        std::mem::swap(&mut src, &mut dst);
        if correct && iterations % correction_interval == 0 {
            let defect = lat.correct_pressure(&mut src, q_lat);
            log::debug!("flow: iteration {iterations}, plane flux defect {defect:.3e}");
        }
        if iterations % settings.check_interval == 0 {
            let current = lat.velocities(&src);
            let (mut diff, mut norm, mut peak) = (0.0, 0.0, 0.0f64);
            for (a, b) in current.iter().zip(&previous) {
                let s = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
                norm += s;
                peak = peak.max(s);
                diff += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2);
            }
            residual = if norm > 0.0 { (diff / norm).sqrt() } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
            history.push((iterations, residual));
            let peak = peak.sqrt();
            if !peak.is_finite() || !residual.is_finite() {
                return Err(Error::Unstable(format!("solution diverged at iteration {iterations}")));
            }
            if peak > settings.max_lattice_speed {
                return Err(Error::Unstable(format!(
                    "peak lattice speed {peak:.4} exceeds {} at iteration {iterations}",
                    settings.max_lattice_speed
                )));
            }
            if iterations % (10 * settings.check_interval) == 0 {
                log::info!("flow: iteration {iterations}, residual {residual:.3e}");
            }
            previous = current;
            if residual < settings.tol {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            iterations,
            last_residual: residual,
            history,
        });
    }

    let scale_u = units.velocity_scale;
    let u: Vec<[f64; 3]> = previous
        .iter()
        .map(|j| [j[0] * scale_u, j[1] * scale_u, j[2] * scale_u])
        .collect();
    let p: Vec<f64> = (0..n)
        .map(|c| {
            if lat.fluid[c] {
                CS2 * lat.moments(&src, c).0 * units.pressure_scale
            } else {
                0.0
            }
        })
        .collect();
    let flux_scale = cell_volume / units.dt;
    let face_flux = lat.face_fluxes(&grid, &src, u_in, flux_scale);
    Ok(VelocityField {
        grid,
        u,
        p,
        residual,
        history,
        iterations,
        units: Some(units),
        face_flux: Some(face_flux),
    })
}
