//! Steady laminar flow in the voxelized mixer.

mod duct;
pub mod lattice;
mod lbm;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use duct::{analytic_duct_velocity, DuctProfile, DEFAULT_TERMS};
pub use lbm::solve_steady;

use crate::error::{Error, Result};
use crate::geometry::{MixerConfig, VoxelGrid};

/// Cubic metres per second in one microlitre per minute.
pub const UL_PER_MIN: f64 = 1e-9 / 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConditions {
    /// m^3/s through each of the two inlets.
    pub flow_rate_per_inlet: f64,
    /// kg/m^3
    pub density: f64,
    /// Pa s
    pub dynamic_viscosity: f64,
    /// Drop the inertial terms (linear Stokes flow).
    pub stokes_mode: bool,
}

impl Default for FlowConditions {
    fn default() -> Self {
        Self {
            flow_rate_per_inlet: 5.0 * UL_PER_MIN,
            density: 1000.0,
            dynamic_viscosity: 1e-3,
            stokes_mode: false,
        }
    }
}

impl FlowConditions {
    pub fn from_ul_per_min(flow_rate_per_inlet: f64) -> Self {
        Self {
            flow_rate_per_inlet: flow_rate_per_inlet * UL_PER_MIN,
            ..Self::default()
        }
    }

    pub fn total_flow_rate(&self) -> f64 {
        2.0 * self.flow_rate_per_inlet
    }

    pub fn kinematic_viscosity(&self) -> f64 {
        self.dynamic_viscosity / self.density
    }

    pub fn validate(&self) -> Result<()> {
        if !self.flow_rate_per_inlet.is_finite() {
            return Err(Error::config("flow_rate_per_inlet_ul_per_min", "must be finite"));
        }
        if !(self.density > 0.0) {
            return Err(Error::config("density_kg_per_m3", "must be > 0"));
        }
        if !(self.dynamic_viscosity > 0.0) {
            return Err(Error::config("dynamic_viscosity_pa_s", "must be > 0"));
        }
        Ok(())
    }
}

/// Mean velocity (m/s) in the `W x H` channel cross-section.
pub fn mean_velocity(cond: &FlowConditions, config: &MixerConfig) -> f64 {
    let area = config.channel_width * config.channel_height * 1e-12;
    cond.total_flow_rate() / area
}

/// Reynolds number on the hydraulic diameter of the main channel.
pub fn reynolds(cond: &FlowConditions, config: &MixerConfig) -> f64 {
    let (w, h) = (config.channel_width * 1e-6, config.channel_height * 1e-6);
    let dh = 2.0 * w * h / (w + h);
    cond.density * mean_velocity(cond, config) * dh / cond.dynamic_viscosity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// BGK relaxation time.
    pub tau: f64,
    /// Relative L2 change of velocity over one check window.
    pub tol: f64,
    pub max_iterations: usize,
    /// Iterations per convergence check.
    pub check_interval: usize,
    /// Largest admissible lattice speed.
    pub max_lattice_speed: f64,
    /// Periodically rebalance plane-averaged pressure so the axial flux is
    /// uniform. Accelerates the slow long-channel pressure mode; the fixed
    /// point is unchanged.
    pub pressure_correction: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tau: 0.9,
            tol: 1e-7,
            max_iterations: 200_000,
            check_interval: 100,
            max_lattice_speed: 0.05,
            pressure_correction: true,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(0.55..=1.5).contains(&self.tau) {
            return Err(Error::config("lbm_tau", "relaxation time must lie in [0.55, 1.5]"));
        }
        if !(self.tol > 0.0 && self.tol <= 1e-3) {
            return Err(Error::config("flow_tol", "must lie in (0, 1e-3]"));
        }
        if self.check_interval == 0 {
            return Err(Error::config("flow_check_interval", "must be > 0"));
        }
        Ok(())
    }
}

/// Conversion between lattice and physical units used by a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeUnits {
    /// Grid spacing, m.
    pub dx: f64,
    /// Time step, s.
    pub dt: f64,
    pub tau: f64,
    /// Lattice kinematic viscosity, (tau - 1/2) / 3.
    pub nu: f64,
    /// m/s per lattice velocity unit.
    pub velocity_scale: f64,
    /// Pa per lattice pressure unit.
    pub pressure_scale: f64,
}

impl LatticeUnits {
    pub fn new(h_um: f64, tau: f64, cond: &FlowConditions) -> Self {
        let dx = h_um * 1e-6;
        let nu = (tau - 0.5) / 3.0;
        let dt = nu * dx * dx / cond.kinematic_viscosity();
        let velocity_scale = dx / dt;
        Self {
            dx,
            dt,
            tau,
            nu,
            velocity_scale,
            pressure_scale: cond.density * velocity_scale * velocity_scale,
        }
    }
}

/// Volumetric fluxes (m^3/s, positive along +axis) through every cell face,
/// derived from the lattice link fluxes. Discretely divergence-free at
/// convergence.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFluxes {
    /// `(nx + 1) * ny * nz`, index `(j * nz + k) * (nx + 1) + i`.
    pub x: Vec<f64>,
    /// `nx * (ny + 1) * nz`, index `(j * nz + k) * nx + i`.
    pub y: Vec<f64>,
    /// `nx * ny * (nz + 1)`, index `(j * (nz + 1) + k) * nx + i`.
    pub z: Vec<f64>,
}

impl FaceFluxes {
    pub fn zeros(dims: [usize; 3]) -> Self {
        let [nx, ny, nz] = dims;
        Self {
            x: vec![0.0; (nx + 1) * ny * nz],
            y: vec![0.0; nx * (ny + 1) * nz],
            z: vec![0.0; nx * ny * (nz + 1)],
        }
    }

    #[inline]
    pub fn xi(dims: [usize; 3], i: usize, j: usize, k: usize) -> usize {
        (j * dims[2] + k) * (dims[0] + 1) + i
    }

    #[inline]
    pub fn yi(dims: [usize; 3], i: usize, j: usize, k: usize) -> usize {
        (j * dims[2] + k) * dims[0] + i
    }

    #[inline]
    pub fn zi(dims: [usize; 3], i: usize, j: usize, k: usize) -> usize {
        (j * (dims[2] + 1) + k) * dims[0] + i
    }

    /// Face fluxes interpolated from cell-centre velocities, zero on faces
    /// touching solid cells. For fields that did not come from the solver.
    pub fn from_cell_velocities(grid: &VoxelGrid, u: &[[f64; 3]]) -> Self {
        let [nx, ny, nz] = grid.dims;
        let area = (grid.h * 1e-6).powi(2);
        let mut f = Self::zeros(grid.dims);
        for j in 0..ny {
            for k in 0..nz {
                for i in 0..nx {
                    let c = grid.index(i, j, k);
                    if !grid.is_fluid(c) {
                        continue;
                    }
                    if i + 1 < nx {
                        let n = grid.index(i + 1, j, k);
                        if grid.is_fluid(n) {
                            f.x[Self::xi(grid.dims, i + 1, j, k)] = 0.5 * (u[c][0] + u[n][0]) * area;
                        }
                    }
                    if j + 1 < ny {
                        let n = grid.index(i, j + 1, k);
                        if grid.is_fluid(n) {
                            f.y[Self::yi(grid.dims, i, j + 1, k)] = 0.5 * (u[c][1] + u[n][1]) * area;
                        }
                    }
                    if j == 0 {
                        f.y[Self::yi(grid.dims, i, 0, k)] = u[c][1] * area;
                    }
                    if j + 1 == ny {
                        f.y[Self::yi(grid.dims, i, ny, k)] = u[c][1] * area;
                    }
                    if k + 1 < nz {
                        let n = grid.index(i, j, k + 1);
                        if grid.is_fluid(n) {
                            f.z[Self::zi(grid.dims, i, j, k + 1)] = 0.5 * (u[c][2] + u[n][2]) * area;
                        }
                    }
                }
            }
        }
        f
    }

    /// Total flux through the y-face plane `j_face` (0 = inlet face).
    pub fn plane_flux(&self, dims: [usize; 3], j_face: usize) -> f64 {
        let n = dims[0] * dims[2];
        self.y[j_face * n..(j_face + 1) * n].iter().sum()
    }

    /// Net outflow of cell `(i, j, k)`.
    pub fn net_outflow(&self, dims: [usize; 3], i: usize, j: usize, k: usize) -> f64 {
        self.x[Self::xi(dims, i + 1, j, k)] - self.x[Self::xi(dims, i, j, k)]
            + self.y[Self::yi(dims, i, j + 1, k)]
            - self.y[Self::yi(dims, i, j, k)]
            + self.z[Self::zi(dims, i, j, k + 1)]
            - self.z[Self::zi(dims, i, j, k)]
    }
}

/// Steady velocity on the grid, physical units.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub grid: Arc<VoxelGrid>,
    /// m/s at cell centres, zero at solid cells.
    pub u: Vec<[f64; 3]>,
    /// Pa, relative to the outlet.
    pub p: Vec<f64>,
    /// Final relative change over one check window.
    pub residual: f64,
    /// `(iteration, residual)` at each check.
    pub history: Vec<(usize, f64)>,
    pub iterations: usize,
    pub units: Option<LatticeUnits>,
    pub face_flux: Option<FaceFluxes>,
}

impl VelocityField {
    /// Wraps an explicit cell-centred field (synthetic or imported).
    pub fn from_cell_velocities(grid: Arc<VoxelGrid>, mut u: Vec<[f64; 3]>) -> Self {
        assert_eq!(u.len(), grid.len());
        for (c, v) in u.iter_mut().enumerate() {
            if !grid.is_fluid(c) {
                *v = [0.0; 3];
            }
        }
        let n = grid.len();
        Self {
            grid,
            u,
            p: vec![0.0; n],
            residual: 0.0,
            history: Vec::new(),
            iterations: 0,
            units: None,
            face_flux: None,
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.u
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Face fluxes for transport: the solver's link fluxes when present.
    pub fn face_fluxes(&self) -> FaceFluxes {
        match &self.face_flux {
            Some(f) => f.clone(),
            None => FaceFluxes::from_cell_velocities(&self.grid, &self.u),
        }
    }

    /// Central-difference divergence (1/s) at every fluid cell whose six
    /// face neighbours are fluid; other cells get `None`.
    pub fn divergence(&self) -> Vec<Option<f64>> {
        let g = &self.grid;
        let [nx, ny, nz] = g.dims;
        let h = g.h * 1e-6;
        (0..g.len())
            .map(|c| {
                let (i, j, k) = g.coords(c);
                if !g.is_fluid(c) || i == 0 || j == 0 || k == 0 || i + 1 == nx || j + 1 == ny || k + 1 == nz {
                    return None;
                }
                let nb = [
                    g.index(i + 1, j, k),
                    g.index(i - 1, j, k),
                    g.index(i, j + 1, k),
                    g.index(i, j - 1, k),
                    g.index(i, j, k + 1),
                    g.index(i, j, k - 1),
                ];
                if nb.iter().any(|&n| !g.is_fluid(n)) {
                    return None;
                }
                let d = (self.u[nb[0]][0] - self.u[nb[1]][0])
                    + (self.u[nb[2]][1] - self.u[nb[3]][1])
                    + (self.u[nb[4]][2] - self.u[nb[5]][2]);
                Some(d / (2.0 * h))
            })
            .collect()
    }
}

/// Volumetric flux (m^3/s) through the plane at `y` (micrometres): sum of the
/// axial velocity times the cell face area over fluid cells cut by the plane.
pub fn flux_through_plane(field: &VelocityField, y: f64) -> Result<f64> {
    let g = &field.grid;
    let j = g.plane_index(y).ok_or(Error::PlaneOutsideDomain(y))?;
    let area = (g.h * 1e-6).powi(2);
    let start = j * g.plane_len();
    Ok((start..start + g.plane_len())
        .filter(|&c| g.is_fluid(c))
        .map(|c| field.u[c][1] * area)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Variant;

    #[test]
    fn unit_conversion() {
        let cond = FlowConditions::from_ul_per_min(5.0);
        assert!((cond.total_flow_rate() - 1.667e-10).abs() < 1e-13);
    }

    #[test]
    fn reynolds_for_water() {
        let cond = FlowConditions::from_ul_per_min(5.0);
        let cfg = MixerConfig::with_variant(Variant::Plain);
        let u = mean_velocity(&cond, &cfg);
        assert!((u - 0.0119).abs() < 1e-4, "{u}");
        let re = reynolds(&cond, &cfg);
        assert!((re - 1.23).abs() < 0.01, "{re}");
        let zero = FlowConditions::from_ul_per_min(0.0);
        assert_eq!(reynolds(&zero, &cfg), 0.0);
    }

    #[test]
    fn settings_bounds() {
        SolverSettings::default().validate().unwrap();
        let bad = SolverSettings {
            tau: 0.51,
            ..SolverSettings::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverSettings {
            tol: 1e-2,
            ..SolverSettings::default()
        };
        assert!(bad.validate().is_err());
    }
}
