//! Passive two-species particle tracing through a steady velocity field.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::geometry::VoxelGrid;

/// Steps a particle may creep (< `STALL_DISTANCE * h` each) before it is
/// declared stalled.
const STALL_STEPS: usize = 10_000;
const STALL_DISTANCE: f64 = 1e-6;
/// Inlet area per particle below which seeding is refused, um^2.
const MIN_AREA_PER_PARTICLE: f64 = 0.1;
const BISECTION_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Species {
    A,
    B,
}

impl Species {
    pub fn label(self) -> &'static str {
        match self {
            Species::A => "A",
            Species::B => "B",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Active,
    Exited,
    Stalled,
}

/// A particle passing a sampling plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    pub particle: usize,
    /// um
    pub x: f64,
    /// um
    pub z: f64,
    pub species: Species,
    /// Unwrapped angle about the channel axis accumulated since seeding, rad.
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaneSnapshot {
    /// um
    pub y: f64,
    /// Sorted by particle index, at most one per particle.
    pub crossings: Vec<Crossing>,
}

impl PlaneSnapshot {
    pub fn points(&self) -> impl Iterator<Item = (f64, f64, Species)> + '_ {
        self.crossings.iter().map(|c| (c.x, c.z, c.species))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    /// um
    pub positions: Vec<[f64; 3]>,
    pub species: Vec<Species>,
    pub status: Vec<Status>,
    /// Unwrapped angle about `axis`, rad.
    pub angle: Vec<f64>,
    /// Rotation axis `(x, z)` in um, parallel to y.
    pub axis: [f64; 2],
    pub snapshots: Vec<PlaneSnapshot>,
    /// Integration steps taken per particle.
    pub steps: Vec<usize>,
    /// Time step used, s.
    pub dt: Option<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn count(&self, status: Status) -> usize {
        self.status.iter().filter(|s| **s == status).count()
    }

    pub fn species_count(&self, species: Species) -> usize {
        self.species.iter().filter(|s| **s == species).count()
    }

    /// Mean change of the unwrapped axial angle between two snapshots over
    /// particles recorded in both, rad.
    pub fn mean_rotation(&self, from: usize, to: usize) -> Option<f64> {
        let (a, b) = (self.snapshots.get(from)?, self.snapshots.get(to)?);
        let mut sum = 0.0;
        let mut n = 0usize;
        let mut it = b.crossings.iter().peekable();
        for c in &a.crossings {
            while it.peek().is_some_and(|d| d.particle < c.particle) {
                it.next();
            }
            if let Some(d) = it.peek() {
                if d.particle == c.particle {
                    sum += d.angle - c.angle;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Fluid bounding rectangle `(x0, x1, z0, z1)` of the inlet face, um.
fn inlet_rectangle(grid: &VoxelGrid) -> Option<[f64; 4]> {
    let [nx, _, nz] = grid.dims;
    let mut r = [f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY];
    for k in 0..nz {
        for i in 0..nx {
            if grid.kind(i, 0, k).is_fluid() {
                let c = grid.center(i, 0, k);
                let hh = 0.5 * grid.h;
                r[0] = r[0].min(c[0] - hh);
                r[1] = r[1].max(c[0] + hh);
                r[2] = r[2].min(c[2] - hh);
                r[3] = r[3].max(c[2] + hh);
            }
        }
    }
    r[0].is_finite().then_some(r)
}

fn inlet_fluid_at(grid: &VoxelGrid, x: f64, z: f64) -> bool {
    let i = ((x - grid.origin[0]) / grid.h).floor();
    let k = ((z - grid.origin[2]) / grid.h).floor();
    i >= 0.0
        && k >= 0.0
        && (i as usize) < grid.dims[0]
        && (k as usize) < grid.dims[2]
        && grid.kind(i as usize, 0, k as usize).is_fluid()
}

/// Places `n_total` particles on a uniform lattice over the inlet face:
/// species A left of the centreline, B its mirror image.
pub fn seed_inlet(grid: &VoxelGrid, n_total: usize) -> Result<ParticleEnsemble> {
    if n_total == 0 || n_total % 2 == 1 {
        return Err(Error::Seeding(format!("particle count {n_total} must be even and positive")));
    }
    let rect = inlet_rectangle(grid).ok_or_else(|| Error::Seeding("inlet face has no fluid cells".into()))?;
    let fluid_cells = (0..grid.plane_len()).filter(|&c| grid.is_fluid(c)).count();
    let area = fluid_cells as f64 * grid.h * grid.h;
    if n_total as f64 * MIN_AREA_PER_PARTICLE > area {
        return Err(Error::Seeding(format!(
            "{n_total} particles exceed one per {MIN_AREA_PER_PARTICLE} um^2 of the {area} um^2 inlet"
        )));
    }
    let half = n_total / 2;
    let cx = grid.centerline_x;
    let y = grid.origin[1];
    let z_mid = 0.5 * (rect[2] + rect[3]);

    // Species-A lattice points whose mirror image is also inlet fluid.
    let lattice = |s: f64| -> Vec<[f64; 2]> {
        let nxs = ((cx - rect[0]) / s).floor() as usize;
        let nzs = ((rect[3] - rect[2]) / s).floor() as usize;
        let x0 = cx - nxs as f64 * s;
        let z0 = z_mid - 0.5 * nzs as f64 * s;
        let mut pts = Vec::with_capacity(nxs * nzs);
        for kz in 0..nzs {
            for ix in 0..nxs {
                let (x, z) = (x0 + (ix as f64 + 0.5) * s, z0 + (kz as f64 + 0.5) * s);
                if inlet_fluid_at(grid, x, z) && inlet_fluid_at(grid, 2.0 * cx - x, z) {
                    pts.push([x, z]);
                }
            }
        }
        pts
    };
    let mut s = (area / n_total as f64).sqrt();
    let mut pts = lattice(s);
    while pts.len() < half {
        s *= 0.99;
        pts = lattice(s);
    }
    // Trim evenly through the lattice order to the exact count.
    let m = pts.len();
    let kept: Vec<[f64; 2]> = (0..half).map(|i| pts[i * m / half]).collect();

    let mut positions = Vec::with_capacity(n_total);
    let mut species = Vec::with_capacity(n_total);
    for p in &kept {
        positions.push([p[0], y, p[1]]);
        species.push(Species::A);
    }
    for p in &kept {
        positions.push([2.0 * cx - p[0], y, p[1]]);
        species.push(Species::B);
    }
    let axis = [0.5 * (rect[0] + rect[1]), z_mid];
    let n = positions.len();
    Ok(ParticleEnsemble {
        angle: positions.iter().map(|p| (p[2] - axis[1]).atan2(p[0] - axis[0])).collect(),
        positions,
        species,
        status: vec![Status::Active; n],
        axis,
        snapshots: Vec::new(),
        steps: vec![0; n],
        dt: None,
    })
}

/// Trilinear interpolation of cell-centre velocities (m/s) at `p` (um).
/// Solid cells and cells beyond the lateral walls contribute zero; beyond
/// the inlet and outlet faces the end planes are extended.
pub fn interpolate_velocity(field: &VelocityField, p: [f64; 3]) -> Result<[f64; 3]> {
    let g = &field.grid;
    let hi = g.extent();
    for a in 0..3 {
        if !(p[a] >= g.origin[a] && p[a] <= hi[a]) {
            return Err(Error::OutsideDomain { x: p[0], y: p[1], z: p[2] });
        }
    }
    Ok(sample(field, p))
}

#[inline]
fn sample(field: &VelocityField, p: [f64; 3]) -> [f64; 3] {
    let g = &field.grid;
    let [nx, ny, nz] = g.dims;
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = (p[a] - g.origin[a]) / g.h - 0.5;
        let f = s.floor();
        base[a] = f as i64;
        frac[a] = s - f;
    }
    let mut out = [0.0; 3];
    for dj in 0..2 {
        let j = (base[1] + dj).clamp(0, ny as i64 - 1) as usize;
        let wy = if dj == 0 { 1.0 - frac[1] } else { frac[1] };
        if wy == 0.0 {
            continue;
        }
        for dk in 0..2 {
            let k = base[2] + dk;
            let wz = if dk == 0 { 1.0 - frac[2] } else { frac[2] };
            if k < 0 || k >= nz as i64 || wz == 0.0 {
                continue;
            }
            for di in 0..2 {
                let i = base[0] + di;
                let wx = if di == 0 { 1.0 - frac[0] } else { frac[0] };
                if i < 0 || i >= nx as i64 || wx == 0.0 {
                    continue;
                }
                let c = g.index(i as usize, j, k as usize);
                let w = wx * wy * wz;
                let u = field.u[c];
                out[0] += w * u[0];
                out[1] += w * u[1];
                out[2] += w * u[2];
            }
        }
    }
    out
}

/// Whether `p` lies in a fluid cell (beyond the end faces counts as fluid
/// so particles can leave).
fn in_fluid(grid: &VoxelGrid, p: [f64; 3]) -> bool {
    let hi = grid.extent();
    if p[0] < grid.origin[0] || p[0] >= hi[0] || p[2] < grid.origin[2] || p[2] >= hi[2] {
        return false;
    }
    let j = if p[1] < grid.origin[1] {
        0
    } else if p[1] >= hi[1] {
        grid.dims[1] - 1
    } else {
        ((p[1] - grid.origin[1]) / grid.h) as usize
    };
    let i = ((p[0] - grid.origin[0]) / grid.h) as usize;
    let k = ((p[2] - grid.origin[2]) / grid.h) as usize;
    grid.kind(i, j, k).is_fluid()
}

/// One classical Runge-Kutta step for `dp/dt = f(p)`.
#[inline]
pub fn rk4_step(p: [f64; 3], dt: f64, f: impl Fn([f64; 3]) -> [f64; 3]) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = f(p);
    let k2 = f(add(p, k1, 0.5 * dt));
    let k3 = f(add(p, k2, 0.5 * dt));
    let k4 = f(add(p, k3, dt));
    [
        p[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        p[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        p[2] + dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TracerSettings {
    /// Step length as a fraction of `h` at the peak speed.
    pub cfl: f64,
    /// Explicit time step in seconds; overrides `cfl`.
    pub dt: Option<f64>,
    /// Upper bound on steps per particle, as a multiple of the steps a
    /// particle at peak speed needs to traverse the grid.
    pub max_transits: f64,
}

impl Default for TracerSettings {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            dt: None,
            max_transits: 200.0,
        }
    }
}

struct Track {
    position: [f64; 3],
    status: Status,
    angle: f64,
    steps: usize,
    crossings: Vec<(usize, Crossing)>,
}

fn wrap_angle(mut d: f64) -> f64 {
    while d > PI {
        d -= 2.0 * PI;
    }
    while d < -PI {
        d += 2.0 * PI;
    }
    d
}

/// Step components kept when sliding along a wall, most permissive first.
const SLIDES: [[bool; 3]; 6] = [
    [false, true, true],
    [true, true, false],
    [true, false, true],
    [false, true, false],
    [true, false, false],
    [false, false, true],
];

fn slide(p: [f64; 3], q: [f64; 3], keep: &[bool; 3]) -> [f64; 3] {
    std::array::from_fn(|a| if keep[a] { q[a] } else { p[a] })
}

/// Advects every active particle with the default settings.
pub fn advect(field: &VelocityField, ensemble: ParticleEnsemble, planes: &[f64]) -> Result<ParticleEnsemble> {
    advect_with(field, ensemble, planes, &TracerSettings::default())
}

/// Advects every active particle until it exits or stalls, recording the
/// first crossing of each plane.
pub fn advect_with(
    field: &VelocityField,
    mut ensemble: ParticleEnsemble,
    planes: &[f64],
    settings: &TracerSettings,
) -> Result<ParticleEnsemble> {
    let grid = &*field.grid;
    if ensemble.is_empty() {
        return Err(Error::Seeding("empty ensemble".into()));
    }
    let hi = grid.extent();
    for p in &ensemble.positions {
        let inside = (0..3).all(|a| p[a] >= grid.origin[a] - 1e-9 && p[a] <= hi[a] + 1e-9);
        if !inside {
            return Err(Error::GridMismatch(format!(
                "particle at ({}, {}, {}) um lies outside the field's grid",
                p[0], p[1], p[2]
            )));
        }
    }
    let peak = field.max_speed() * 1e6;
    let dt = match settings.dt {
        Some(dt) => dt,
        None if peak > 0.0 => settings.cfl * grid.h / peak,
        None => return Err(Error::GridMismatch("velocity field is identically zero".into())),
    };
    let length = hi[1] - grid.origin[1];
    let max_steps = if peak > 0.0 {
        (settings.max_transits * length / (peak * dt)).ceil() as usize
    } else {
        0
    }
    .max(STALL_STEPS + 1);
    let stall_distance = STALL_DISTANCE * grid.h;
    let axis = ensemble.axis;
    let velocity = |p: [f64; 3]| {
        let u = sample(field, p);
        [u[0] * 1e6, u[1] * 1e6, u[2] * 1e6]
    };

    let tracks: Vec<Track> = (0..ensemble.len())
        .into_par_iter()
        .map(|n| {
            let mut t = Track {
                position: ensemble.positions[n],
                status: ensemble.status[n],
                angle: ensemble.angle[n],
                steps: 0,
                crossings: Vec::new(),
            };
            let mut recorded = vec![false; planes.len()];
            let mut creeping = 0usize;
            while t.status == Status::Active {
                let p = t.position;
                let mut q = rk4_step(p, dt, velocity);
                if !in_fluid(grid, q) {
                    // Interpolated velocity keeps a small wall-normal part at
                    // staircase walls; slide by dropping the offending step
                    // components before falling back to a pull-back.
                    if let Some(s) = SLIDES.iter().map(|m| slide(p, q, m)).find(|&s| in_fluid(grid, s)) {
                        q = s;
                    }
                }
                if !in_fluid(grid, q) {
                    // Pull back along the step to the last fluid point.
                    let (mut lo, mut hi_t) = (0.0, 1.0);
                    for _ in 0..BISECTION_STEPS {
                        let mid = 0.5 * (lo + hi_t);
                        let m = [p[0] + mid * (q[0] - p[0]), p[1] + mid * (q[1] - p[1]), p[2] + mid * (q[2] - p[2])];
                        if in_fluid(grid, m) {
                            lo = mid;
                        } else {
                            hi_t = mid;
                        }
                    }
                    q = [p[0] + lo * (q[0] - p[0]), p[1] + lo * (q[1] - p[1]), p[2] + lo * (q[2] - p[2])];
                }
                let new_angle =
                    t.angle + wrap_angle((q[2] - axis[1]).atan2(q[0] - axis[0]) - (p[2] - axis[1]).atan2(p[0] - axis[0]));
                for (m, &y) in planes.iter().enumerate() {
                    if recorded[m] || q[1] == p[1] || (p[1] - y) * (q[1] - y) > 0.0 || (p[1] == y && t.steps > 0) {
                        continue;
                    }
                    let s = (y - p[1]) / (q[1] - p[1]);
                    recorded[m] = true;
                    t.crossings.push((
                        m,
                        Crossing {
                            particle: n,
                            x: p[0] + s * (q[0] - p[0]),
                            z: p[2] + s * (q[2] - p[2]),
                            species: ensemble.species[n],
                            angle: t.angle + s * (new_angle - t.angle),
                        },
                    ));
                }
                let moved = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt();
                t.position = q;
                t.angle = new_angle;
                t.steps += 1;
                if q[1] >= hi[1] {
                    t.status = Status::Exited;
                } else if moved < stall_distance {
                    creeping += 1;
                    if creeping >= STALL_STEPS {
                        t.status = Status::Stalled;
                    }
                } else {
                    creeping = 0;
                }
                if t.status == Status::Active && (t.steps >= max_steps || q[1] < grid.origin[1] - grid.h) {
                    t.status = Status::Stalled;
                }
            }
            t
        })
        .collect();

    let mut snapshots: Vec<PlaneSnapshot> = planes
        .iter()
        .map(|&y| PlaneSnapshot {
            y,
            crossings: Vec::new(),
        })
        .collect();
    for (n, t) in tracks.into_iter().enumerate() {
        ensemble.positions[n] = t.position;
        ensemble.status[n] = t.status;
        ensemble.angle[n] = t.angle;
        ensemble.steps[n] += t.steps;
        for (m, c) in t.crossings {
            snapshots[m].crossings.push(c);
        }
    }
    ensemble.snapshots = snapshots;
    ensemble.dt = Some(dt);
    let stalled = ensemble.count(Status::Stalled);
    if stalled > 0 {
        log::warn!(
            "tracer: {stalled} of {} particles stalled ({:.3}%)",
            ensemble.len(),
            100.0 * stalled as f64 / ensemble.len() as f64
        );
    }
    Ok(ensemble)
}

/// Rectangular binning of a cross-section; points outside are clamped into
/// the edge bins.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinSpec {
    pub x_range: [f64; 2],
    pub z_range: [f64; 2],
    pub nx: usize,
    pub nz: usize,
}

impl BinSpec {
    fn bin(&self, x: f64, z: f64) -> usize {
        let idx = |v: f64, r: [f64; 2], n: usize| -> usize {
            let s = ((v - r[0]) / (r[1] - r[0]) * n as f64).floor();
            s.clamp(0.0, (n - 1) as f64) as usize
        };
        idx(z, self.z_range, self.nz) * self.nx + idx(x, self.x_range, self.nx)
    }
}

/// Minimum particles for a bin to count.
pub const MIN_BIN_COUNT: usize = 5;

/// `1 - sigma / 0.5`, with `sigma` the standard deviation of the species-A
/// fraction over bins holding at least `MIN_BIN_COUNT` particles.
pub fn mixing_index(points: impl IntoIterator<Item = (f64, f64, Species)>, bins: &BinSpec) -> Result<f64> {
    let mut total = vec![0usize; bins.nx * bins.nz];
    let mut a = vec![0usize; bins.nx * bins.nz];
    for (x, z, s) in points {
        let b = bins.bin(x, z);
        total[b] += 1;
        if s == Species::A {
            a[b] += 1;
        }
    }
    let fractions: Vec<f64> = total
        .iter()
        .zip(&a)
        .filter(|(t, _)| **t >= MIN_BIN_COUNT)
        .map(|(t, a)| *a as f64 / *t as f64)
        .collect();
    if fractions.is_empty() {
        return Err(Error::SparseBins(MIN_BIN_COUNT));
    }
    let n = fractions.len() as f64;
    let mean = fractions.iter().sum::<f64>() / n;
    let var = fractions.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    Ok((1.0 - var.sqrt() / 0.5).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use proptest::prelude::*;

    use super::*;
    use crate::geometry::CellKind;

    fn open_box(dims: [usize; 3], h: f64) -> Arc<VoxelGrid> {
        Arc::new(VoxelGrid::from_cells(
            h,
            dims,
            [0.0; 3],
            vec![CellKind::Fluid; dims[0] * dims[1] * dims[2]],
        ))
    }

    fn field_from(grid: Arc<VoxelGrid>, f: impl Fn([f64; 3]) -> [f64; 3]) -> VelocityField {
        let u = (0..grid.len())
            .map(|c| {
                let (i, j, k) = grid.coords(c);
                f(grid.center(i, j, k))
            })
            .collect();
        VelocityField::from_cell_velocities(grid, u)
    }

    #[test]
    fn seeding_splits_species_evenly() {
        let grid = open_box([20, 4, 7], 10.0);
        let e = seed_inlet(&grid, 14000).unwrap();
        assert_eq!(e.species_count(Species::A), 7000);
        assert_eq!(e.species_count(Species::B), 7000);
        for (p, s) in e.positions.iter().zip(&e.species) {
            assert_eq!(*s == Species::A, p[0] < grid.centerline_x);
            assert!(in_fluid(&grid, *p));
        }
    }

    #[test]
    fn two_particles_are_mirrored() {
        let grid = open_box([20, 4, 7], 10.0);
        let e = seed_inlet(&grid, 2).unwrap();
        let (a, b) = (e.positions[0], e.positions[1]);
        assert!((a[0] + b[0] - 2.0 * grid.centerline_x).abs() < 1e-12);
        assert_eq!(a[2], b[2]);
    }

    #[test]
    fn seeding_rejects_bad_counts() {
        let grid = open_box([2, 2, 2], 1.0);
        assert!(matches!(seed_inlet(&grid, 3), Err(Error::Seeding(_))));
        assert!(matches!(seed_inlet(&grid, 42), Err(Error::Seeding(_))));
        assert!(seed_inlet(&grid, 40).is_ok());
    }

    #[test]
    fn interpolation_hits_cell_values_and_linear_fields() {
        let grid = open_box([6, 6, 6], 2.0);
        let lin = |p: [f64; 3]| [1.0 + 0.5 * p[0] - p[2], -2.0 * p[1] + 0.25 * p[0], 3.0 * p[2]];
        let field = field_from(grid.clone(), lin);
        let c = grid.center(2, 3, 1);
        assert_eq!(interpolate_velocity(&field, c).unwrap(), lin(c));
        let p = [4.3, 6.9, 5.1];
        let got = interpolate_velocity(&field, p).unwrap();
        let want = lin(p);
        for a in 0..3 {
            assert!((got[a] - want[a]).abs() < 1e-12);
        }
        assert!(interpolate_velocity(&field, [-0.1, 1.0, 1.0]).is_err());
    }

    #[test]
    fn uniform_axial_flow_crosses_plane_in_place() {
        let grid = open_box([4, 100, 4], 10.0);
        let field = field_from(grid.clone(), |_| [0.0, 1e-3, 0.0]);
        let ens = ParticleEnsemble {
            positions: vec![[13.0, 0.0, 27.0]],
            species: vec![Species::A],
            status: vec![Status::Active],
            angle: vec![0.0],
            axis: [20.0, 20.0],
            snapshots: Vec::new(),
            steps: vec![0],
            dt: None,
        };
        let out = advect(&field, ens, &[800.0]).unwrap();
        let c = out.snapshots[0].crossings[0];
        assert!((c.x - 13.0).abs() < 1e-9 && (c.z - 27.0).abs() < 1e-9);
        assert_eq!(out.status[0], Status::Exited);
    }

    #[test]
    fn rk4_circle_drift_per_revolution() {
        // Solid-body rotation, exact on the trilinear interpolant.
        let grid = open_box([40, 4, 40], 5.0);
        let omega = 2.0 * PI;
        let field = field_from(grid.clone(), |p| [-omega * (p[2] - 100.0) * 1e-6, 0.0, omega * (p[0] - 100.0) * 1e-6]);
        let dt = 1.0 / 1000.0;
        let mut p = [160.0, 10.0, 100.0];
        for _ in 0..1000 {
            p = rk4_step(p, dt, |q| {
                let u = interpolate_velocity(&field, q).unwrap();
                [u[0] * 1e6, u[1] * 1e6, u[2] * 1e6]
            });
        }
        let r = ((p[0] - 100.0).powi(2) + (p[2] - 100.0).powi(2)).sqrt();
        assert!(((r - 60.0) / 60.0).abs() < 1e-6, "{r}");
    }

    #[test]
    fn mixing_index_examples() {
        let bins = BinSpec {
            x_range: [0.0, 4.0],
            z_range: [0.0, 1.0],
            nx: 4,
            nz: 1,
        };
        let make = |fracs: &[usize]| -> Vec<(f64, f64, Species)> {
            let mut v = Vec::new();
            for (b, &na) in fracs.iter().enumerate() {
                for n in 0..10 {
                    let s = if n < na { Species::A } else { Species::B };
                    v.push((b as f64 + 0.5, 0.5, s));
                }
            }
            v
        };
        assert_eq!(mixing_index(make(&[5, 5, 5, 5]), &bins).unwrap(), 1.0);
        let m = mixing_index(make(&[10, 5, 5, 0]), &bins).unwrap();
        assert!((m - (1.0 - 0.353553390593 / 0.5)).abs() < 1e-9, "{m}");
        let two = BinSpec { nx: 2, x_range: [0.0, 2.0], ..bins };
        assert_eq!(mixing_index(make(&[10, 0]), &two).unwrap(), 0.0);
        assert!(matches!(
            mixing_index(vec![(0.5, 0.5, Species::A)], &bins),
            Err(Error::SparseBins(5))
        ));
    }

    proptest! {
        #[test]
        fn mixing_index_is_bounded_and_species_symmetric(
            pts in prop::collection::vec((0.0f64..4.0, 0.0f64..1.0, any::<bool>()), 20..200)
        ) {
            let bins = BinSpec { x_range: [0.0, 4.0], z_range: [0.0, 1.0], nx: 4, nz: 2 };
            let sp = |b: bool| if b { Species::A } else { Species::B };
            let a = mixing_index(pts.iter().map(|&(x, z, s)| (x, z, sp(s))), &bins);
            let b = mixing_index(pts.iter().map(|&(x, z, s)| (x, z, sp(!s))), &bins);
            if let (Ok(a), Ok(b)) = (a, b) {
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn particles_are_conserved_and_stay_in_fluid(
            swirl in -2e-3f64..2e-3,
            axial in 2e-4f64..2e-3,
            n in 1usize..20,
        ) {
            // Channel with a solid floor step so some particles hit walls.
            let dims = [8, 30, 6];
            let cells = (0..dims[0] * dims[1] * dims[2])
                .map(|c| {
                    let i = c % dims[0];
                    let k = (c / dims[0]) % dims[2];
                    let j = c / (dims[0] * dims[2]);
                    if k == 0 && (10..20).contains(&j) || i == 7 && j > 15 { CellKind::Solid } else { CellKind::Fluid }
                })
                .collect();
            let grid = Arc::new(VoxelGrid::from_cells(5.0, dims, [0.0; 3], cells));
            let field = field_from(grid.clone(), |p| [swirl * (15.0 - p[2]) / 15.0, axial, swirl * (p[0] - 20.0) / 20.0]);
            let ens = seed_inlet(&grid, 2 * n).unwrap();
            let out = advect(&field, ens, &[50.0, 100.0]).unwrap();
            prop_assert_eq!(out.count(Status::Active) + out.count(Status::Exited) + out.count(Status::Stalled), 2 * n);
            prop_assert_eq!(out.count(Status::Active), 0);
            for (p, s) in out.positions.iter().zip(&out.status) {
                if *s != Status::Exited {
                    prop_assert!(in_fluid(&grid, *p));
                }
            }
            for snap in &out.snapshots {
                prop_assert!(snap.crossings.windows(2).all(|w| w[0].particle < w[1].particle));
            }
        }
    }
}
