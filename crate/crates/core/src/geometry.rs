//! Parametric mixer geometry and its voxelization.
//!
//! Coordinates are in micrometres: `x` runs across the channel width, `y`
//! along the mixing channel (inlet face at `y = 0`) and `z` is vertical with
//! the channel floor at `z = 0` and the top wall at `z = channel_height`.
//! Grooves are cut below the floor, the zigzag barrier hangs from the top
//! wall.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Variant {
    Plain,
    Sgm,
    Cdm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Plain => "PLAIN",
            Variant::Sgm => "SGM",
            Variant::Cdm => "CDM",
        }
    }

    pub fn has_grooves(self) -> bool {
        !matches!(self, Variant::Plain)
    }

    pub fn has_barrier(self) -> bool {
        matches!(self, Variant::Cdm)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PLAIN" => Ok(Variant::Plain),
            "SGM" => Ok(Variant::Sgm),
            "CDM" => Ok(Variant::Cdm),
            other => Err(Error::config(
                "variant",
                format!("unknown variant `{other}`, expected one of PLAIN, SGM, CDM"),
            )),
        }
    }
}

/// Dimensions of one mixer variant. All lengths in micrometres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixerConfig {
    pub variant: Variant,
    pub channel_length: f64,
    pub channel_width: f64,
    pub channel_height: f64,
    pub inlet_length: f64,
    pub groove_width: f64,
    pub groove_depth: f64,
    /// Degrees from the x-axis, in the xy plane.
    pub groove_angle: f64,
    pub groove_pitch: f64,
    pub grooves_per_period: usize,
    pub barrier_width: f64,
    pub barrier_height: f64,
    pub barrier_period: f64,
    /// Lateral half-excursion of the zigzag centerline.
    pub barrier_amplitude: f64,
    pub entrance_offset: f64,
    pub n_periods: usize,
}

impl Default for MixerConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Cdm,
            channel_length: 8100.0,
            channel_width: 200.0,
            channel_height: 70.0,
            inlet_length: 500.0,
            groove_width: 50.0,
            groove_depth: 50.0,
            groove_angle: 45.0,
            groove_pitch: 100.0,
            grooves_per_period: 8,
            barrier_width: 20.0,
            barrier_height: 40.0,
            barrier_period: 800.0,
            barrier_amplitude: 50.0,
            entrance_offset: 100.0,
            n_periods: 10,
        }
    }
}

impl MixerConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// Checks the structural invariants. Key names in errors match the run
    /// config keys.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channel_length_um", self.channel_length),
            ("channel_width_um", self.channel_width),
            ("channel_height_um", self.channel_height),
            ("inlet_length_um", self.inlet_length),
            ("barrier_period_um", self.barrier_period),
        ];
        for (key, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, format!("must be > 0 (got {v})")));
            }
        }
        if !(self.entrance_offset.is_finite() && self.entrance_offset >= 0.0) {
            return Err(Error::config("entrance_offset_um", "must be >= 0"));
        }
        if self.variant.has_grooves() {
            for (key, v) in [
                ("groove_width_um", self.groove_width),
                ("groove_depth_um", self.groove_depth),
                ("groove_pitch_um", self.groove_pitch),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::config(key, format!("must be > 0 (got {v})")));
                }
            }
            if !(self.groove_angle.abs() < 90.0) {
                return Err(Error::config(
                    "groove_angle_deg",
                    "must lie strictly between -90 and 90",
                ));
            }
            if self.grooves_per_period == 0 {
                return Err(Error::config("grooves_per_period", "must be > 0"));
            }
            if self.grooves_per_period as f64 * self.groove_pitch > self.barrier_period * (1.0 + 1e-12) {
                return Err(Error::config(
                    "grooves_per_period",
                    "grooves_per_period * groove_pitch <= barrier_period",
                ));
            }
        }
        if self.variant.has_barrier() {
            for (key, v) in [
                ("barrier_width_um", self.barrier_width),
                ("barrier_height_um", self.barrier_height),
                ("barrier_amplitude_um", self.barrier_amplitude),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::config(key, format!("must be > 0 (got {v})")));
                }
            }
            if self.barrier_height >= self.channel_height {
                return Err(Error::config(
                    "barrier_height_um",
                    format!(
                        "barrier_height < channel_height violated ({} >= {})",
                        self.barrier_height, self.channel_height
                    ),
                ));
            }
        }
        if self.entrance_offset + self.n_periods as f64 * self.barrier_period
            > self.channel_length * (1.0 + 1e-12)
        {
            return Err(Error::config(
                "n_periods",
                "entrance_offset + n_periods * barrier_period <= channel_length",
            ));
        }
        Ok(())
    }

    /// Depth of the groove layer actually present below the floor.
    pub fn effective_groove_depth(&self) -> f64 {
        if self.variant.has_grooves() {
            self.groove_depth
        } else {
            0.0
        }
    }

    pub fn centerline_x(&self) -> f64 {
        0.5 * self.channel_width
    }

    /// `[min, max]` corners of the computational domain.
    pub fn bounding_box(&self) -> ([f64; 3], [f64; 3]) {
        (
            [0.0, 0.0, -self.effective_groove_depth()],
            [self.channel_width, self.channel_length, self.channel_height],
        )
    }

    /// y-range covered by the groove pattern and the barrier.
    pub fn patterned_range(&self) -> (f64, f64) {
        (
            self.entrance_offset,
            self.entrance_offset + self.n_periods as f64 * self.barrier_period,
        )
    }

    fn in_groove(&self, x: f64, y: f64, z: f64) -> bool {
        if !self.variant.has_grooves() || z > 0.0 || z < -self.groove_depth {
            return false;
        }
        let (y0, y1) = self.patterned_range();
        if y < y0 || y > y1 {
            return false;
        }
        let theta = self.groove_angle.to_radians();
        // Offset along y from the groove line through the channel centerline.
        let s = y - (x - self.centerline_x()) * theta.tan() - y0;
        let half = 0.5 * self.groove_width;
        let p0 = (s / self.barrier_period).floor() as i64;
        for p in (p0 - 1)..=(p0 + 1) {
            if p < 0 || p >= self.n_periods as i64 {
                continue;
            }
            let base = p as f64 * self.barrier_period;
            for k in 0..self.grooves_per_period {
                let c = base + (k as f64 + 0.5) * self.groove_pitch;
                if (s - c).abs() * theta.cos() <= half {
                    return true;
                }
            }
        }
        false
    }

    /// Lateral position of the barrier centerline at `y`, if the barrier
    /// exists there.
    pub fn barrier_centerline_x(&self, y: f64) -> Option<f64> {
        if !self.variant.has_barrier() {
            return None;
        }
        let (y0, y1) = self.patterned_range();
        if y < y0 || y > y1 {
            return None;
        }
        let quarter = 0.25 * self.barrier_period;
        let m = (((y - y0) / quarter).floor() as usize).min(4 * self.n_periods - 1);
        let (ya, xa) = self.zigzag_vertex(m);
        let (yb, xb) = self.zigzag_vertex(m + 1);
        Some(xa + (xb - xa) * (y - ya) / (yb - ya))
    }

    fn zigzag_vertex(&self, m: usize) -> (f64, f64) {
        let y = self.entrance_offset + m as f64 * 0.25 * self.barrier_period;
        let xc = self.centerline_x();
        let x = match m % 4 {
            1 => xc + self.barrier_amplitude,
            3 => xc - self.barrier_amplitude,
            _ => xc,
        };
        (y, x)
    }

    /// Apex positions `(y, x)` of the zigzag, alternating right and left.
    pub fn barrier_apexes(&self) -> Vec<(f64, f64)> {
        if !self.variant.has_barrier() {
            return Vec::new();
        }
        (0..4 * self.n_periods)
            .filter(|m| m % 2 == 1)
            .map(|m| self.zigzag_vertex(m))
            .collect()
    }

    fn in_barrier(&self, x: f64, y: f64, z: f64) -> bool {
        if !self.variant.has_barrier() || z < self.channel_height - self.barrier_height {
            return false;
        }
        let (y0, y1) = self.patterned_range();
        if y < y0 || y > y1 || self.n_periods == 0 {
            return false;
        }
        let quarter = 0.25 * self.barrier_period;
        let last = 4 * self.n_periods - 1;
        let m = (((y - y0) / quarter).floor() as usize).min(last);
        let half = 0.5 * self.barrier_width;
        let lo = m.saturating_sub(1);
        let hi = (m + 1).min(last);
        (lo..=hi).any(|seg| {
            let a = self.zigzag_vertex(seg);
            let b = self.zigzag_vertex(seg + 1);
            segment_distance((y, x), a, b) <= half
        })
    }

    fn contains(&self, p: [f64; 3]) -> bool {
        let (lo, hi) = self.bounding_box();
        let tol = 1e-9 * (1.0 + self.channel_length);
        (0..3).all(|a| p[a] >= lo[a] - tol && p[a] <= hi[a] + tol)
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
    let (qx, qy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (qx * qx + qy * qy).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Membership {
    Fluid,
    Solid,
}

/// Exact point membership: main channel box, plus groove slots below the
/// floor, minus the barrier prism under the top wall.
pub fn classify_point(config: &MixerConfig, p: [f64; 3]) -> Result<Membership> {
    if !config.contains(p) {
        return Err(Error::OutsideDomain {
            x: p[0],
            y: p[1],
            z: p[2],
        });
    }
    let [x, y, z] = p;
    let in_channel = z >= 0.0 && z <= config.channel_height;
    let fluid = (in_channel || config.in_groove(x, y, z)) && !config.in_barrier(x, y, z);
    Ok(if fluid {
        Membership::Fluid
    } else {
        Membership::Solid
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CellKind {
    Fluid = 0,
    Solid = 1,
    InletA = 2,
    InletB = 3,
    Outlet = 4,
}

impl CellKind {
    #[inline]
    pub fn is_fluid(self) -> bool {
        !matches!(self, CellKind::Solid)
    }
}

/// Uniform cell-centred voxelization. Cell `(i, j, k)` spans
/// `origin + h * [i, i+1) x [j, j+1) x [k, k+1)`; storage is x-fastest, then
/// z, then y, so each y-plane is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub h: f64,
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub cells: Vec<CellKind>,
    /// x-position splitting the inlet face into species A and B.
    pub centerline_x: f64,
}

impl VoxelGrid {
    /// Builds a grid from explicit cell kinds. Intended for synthetic setups.
    pub fn from_cells(h: f64, dims: [usize; 3], origin: [f64; 3], cells: Vec<CellKind>) -> Self {
        assert_eq!(cells.len(), dims[0] * dims[1] * dims[2]);
        let centerline_x = origin[0] + 0.5 * h * dims[0] as f64;
        Self {
            h,
            dims,
            origin,
            cells,
            centerline_x,
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.dims[0] * self.dims[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (j * self.dims[2] + k) * self.dims[0] + i
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let nx = self.dims[0];
        let nz = self.dims[2];
        let i = idx % nx;
        let rest = idx / nx;
        (i, rest / nz, rest % nz)
    }

    #[inline]
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.h,
            self.origin[1] + (j as f64 + 0.5) * self.h,
            self.origin[2] + (k as f64 + 0.5) * self.h,
        ]
    }

    #[inline]
    pub fn kind(&self, i: usize, j: usize, k: usize) -> CellKind {
        self.cells[self.index(i, j, k)]
    }

    #[inline]
    pub fn is_fluid(&self, idx: usize) -> bool {
        self.cells[idx].is_fluid()
    }

    /// Upper corner of the grid box.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.origin[0] + self.h * self.dims[0] as f64,
            self.origin[1] + self.h * self.dims[1] as f64,
            self.origin[2] + self.h * self.dims[2] as f64,
        ]
    }

    /// Index of the cell containing `p`, if inside the grid box.
    pub fn locate(&self, p: [f64; 3]) -> Option<usize> {
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let s = (p[a] - self.origin[a]) / self.h;
            if !(s >= 0.0) || s > self.dims[a] as f64 {
                return None;
            }
            ijk[a] = (s.floor() as usize).min(self.dims[a] - 1);
        }
        Some(self.index(ijk[0], ijk[1], ijk[2]))
    }

    /// Cell-plane index `j` whose slab contains `y`.
    pub fn plane_index(&self, y: f64) -> Option<usize> {
        let s = (y - self.origin[1]) / self.h;
        if !(s >= 0.0) || s > self.dims[1] as f64 {
            return None;
        }
        Some((s.floor() as usize).min(self.dims[1] - 1))
    }

    pub fn fluid_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_fluid()).count()
    }

    /// Number of 6-connected components of the fluid region.
    pub fn fluid_components(&self) -> usize {
        let [nx, ny, nz] = self.dims;
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::new();
        let mut components = 0;
        for start in 0..self.len() {
            if seen[start] || !self.is_fluid(start) {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(idx) = queue.pop_front() {
                let (i, j, k) = self.coords(idx);
                let mut visit = |ii: usize, jj: usize, kk: usize| {
                    let n = self.index(ii, jj, kk);
                    if !seen[n] && self.is_fluid(n) {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                };
                if i > 0 {
                    visit(i - 1, j, k);
                }
                if i + 1 < nx {
                    visit(i + 1, j, k);
                }
                if j > 0 {
                    visit(i, j - 1, k);
                }
                if j + 1 < ny {
                    visit(i, j + 1, k);
                }
                if k > 0 {
                    visit(i, j, k - 1);
                }
                if k + 1 < nz {
                    visit(i, j, k + 1);
                }
            }
        }
        components
    }

    /// Flags the inlet face (split at `centerline_x`) and the outlet face.
    fn flag_boundaries(&mut self) {
        let [nx, ny, nz] = self.dims;
        for k in 0..nz {
            for i in 0..nx {
                let inlet = self.index(i, 0, k);
                if self.cells[inlet].is_fluid() {
                    let x = self.center(i, 0, k)[0];
                    self.cells[inlet] = if x < self.centerline_x {
                        CellKind::InletA
                    } else {
                        CellKind::InletB
                    };
                }
                let outlet = self.index(i, ny - 1, k);
                if self.cells[outlet].is_fluid() {
                    self.cells[outlet] = CellKind::Outlet;
                }
            }
        }
    }
}

fn cells_across(len: f64, h: f64, key: &str) -> usize {
    let n = len / h;
    let r = n.round();
    if (n - r).abs() > 0.01 {
        log::warn!("voxelize: h = {h} um does not divide {key} = {len} um (ratio {n:.3})");
    }
    r.max(1.0) as usize
}

/// Samples `classify_point` at every cell centre and flags the inlet and
/// outlet faces.
pub fn voxelize(config: &MixerConfig, h: f64) -> Result<VoxelGrid> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::config("h_um", "must be > 0"));
    }
    if config.variant.has_barrier() && config.barrier_height >= config.channel_height {
        return Err(Error::GeometryDisconnected(format!(
            "barrier of height {} um seals a channel of height {} um",
            config.barrier_height, config.channel_height
        )));
    }
    let depth = config.effective_groove_depth();
    let nx = cells_across(config.channel_width, h, "channel_width");
    let nz_channel = cells_across(config.channel_height, h, "channel_height");
    let nz_groove = if depth > 0.0 {
        cells_across(depth, h, "groove_depth")
    } else {
        0
    };
    let nz = nz_channel + nz_groove;
    let ny = cells_across(config.channel_length, h, "channel_length");
    if ny < 2 {
        return Err(Error::config("h_um", "grid needs at least two cells along the channel"));
    }
    let origin = [0.0, 0.0, -(nz_groove as f64) * h];
    let plane = nx * nz;
    let mut cells = vec![CellKind::Solid; plane * ny];
    cells
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(j, slab)| {
            let y = origin[1] + (j as f64 + 0.5) * h;
            for k in 0..nz {
                let z = origin[2] + (k as f64 + 0.5) * h;
                for i in 0..nx {
                    let x = origin[0] + (i as f64 + 0.5) * h;
                    // Centres outside the configured box (h not dividing the
                    // dimensions) are treated as wall.
                    let kind = match classify_point(config, [x, y, z]) {
                        Ok(Membership::Fluid) => CellKind::Fluid,
                        _ => CellKind::Solid,
                    };
                    slab[k * nx + i] = kind;
                }
            }
        });
    let mut grid = VoxelGrid {
        h,
        dims: [nx, ny, nz],
        origin,
        cells,
        centerline_x: config.centerline_x(),
    };
    let components = grid.fluid_components();
    if components != 1 {
        return Err(Error::GeometryDisconnected(format!(
            "fluid region has {components} connected components"
        )));
    }
    grid.flag_boundaries();
    Ok(grid)
}

/// Exit planes of each mixer period.
pub fn period_planes(config: &MixerConfig) -> Vec<f64> {
    (1..=config.n_periods)
        .map(|k| config.entrance_offset + k as f64 * config.barrier_period)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short(variant: Variant) -> MixerConfig {
        MixerConfig {
            variant,
            channel_length: 1700.0,
            n_periods: 2,
            ..MixerConfig::default()
        }
    }

    #[test]
    fn interior_point_is_fluid() {
        let cfg = MixerConfig::default();
        assert_eq!(classify_point(&cfg, [100.0, 4000.0, 35.0]).unwrap(), Membership::Fluid);
    }

    #[test]
    fn groove_slot_is_fluid_below_floor() {
        let cfg = MixerConfig::with_variant(Variant::Sgm);
        // First groove centre line crosses x = 100 at y = 100 + 50.
        assert_eq!(classify_point(&cfg, [100.0, 150.0, -25.0]).unwrap(), Membership::Fluid);
        // Between grooves the floor is solid.
        assert_eq!(classify_point(&cfg, [100.0, 200.0, -25.0]).unwrap(), Membership::Solid);
        let plain = MixerConfig::with_variant(Variant::Plain);
        assert!(classify_point(&plain, [100.0, 150.0, -25.0]).is_err());
    }

    #[test]
    fn barrier_only_in_cdm() {
        let cdm = MixerConfig::default();
        let (y, x) = cdm.barrier_apexes()[0];
        assert_eq!(classify_point(&cdm, [x, y, 60.0]).unwrap(), Membership::Solid);
        let y = 1000.0;
        let x = cdm.barrier_centerline_x(y).unwrap();
        assert_eq!(classify_point(&cdm, [x, y, 60.0]).unwrap(), Membership::Solid);
        assert_eq!(classify_point(&cdm, [x, y, 20.0]).unwrap(), Membership::Fluid);
        let sgm = MixerConfig::with_variant(Variant::Sgm);
        assert_eq!(classify_point(&sgm, [x, y, 60.0]).unwrap(), Membership::Fluid);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let cfg = MixerConfig::default();
        let err = classify_point(&cfg, [-1.0, 10.0, 10.0]).unwrap_err();
        assert!(err.to_string().contains("outside domain"));
        assert!(classify_point(&cfg, [10.0, 8100.5, 10.0]).is_err());
    }

    #[test]
    fn plain_cross_section_cell_count() {
        let cfg = MixerConfig {
            channel_length: 200.0,
            n_periods: 0,
            ..MixerConfig::with_variant(Variant::Plain)
        };
        let grid = voxelize(&cfg, 10.0).unwrap();
        assert_eq!(grid.dims, [20, 20, 7]);
        for j in 0..grid.dims[1] {
            let n = (0..7)
                .flat_map(|k| (0..20).map(move |i| (i, k)))
                .filter(|&(i, k)| grid.kind(i, j, k).is_fluid())
                .count();
            assert_eq!(n, 140);
        }
    }

    #[test]
    fn cdm_grid_spans_groove_bottom_to_top_wall() {
        let cfg = short(Variant::Cdm);
        let grid = voxelize(&cfg, 5.0).unwrap();
        assert_eq!(grid.dims[2], 24);
        assert_eq!(grid.origin[2], -50.0);
    }

    #[test]
    fn sealed_barrier_is_rejected() {
        let cfg = MixerConfig {
            barrier_height: 70.0,
            ..short(Variant::Cdm)
        };
        let err = voxelize(&cfg, 10.0).unwrap_err();
        assert!(err.to_string().contains("geometry disconnected"), "{err}");
    }

    #[test]
    fn boundary_faces_are_flagged() {
        let grid = voxelize(&short(Variant::Cdm), 10.0).unwrap();
        let [nx, ny, nz] = grid.dims;
        let mut a = 0;
        let mut b = 0;
        for idx in 0..grid.len() {
            let (i, j, k) = grid.coords(idx);
            let c = grid.cells[idx];
            match c {
                CellKind::InletA | CellKind::InletB => {
                    assert_eq!(j, 0);
                    let x = grid.center(i, j, k)[0];
                    if c == CellKind::InletA {
                        assert!(x < 100.0);
                        a += 1;
                    } else {
                        assert!(x >= 100.0);
                        b += 1;
                    }
                }
                CellKind::Outlet => assert_eq!(j, ny - 1),
                CellKind::Fluid => assert!(j > 0 && j < ny - 1),
                CellKind::Solid => {}
            }
        }
        assert_eq!(a, b);
        assert_eq!(a, nx / 2 * 7);
        let _ = nz;
    }

    #[test]
    fn period_plane_positions() {
        let cfg = MixerConfig::default();
        let planes = period_planes(&cfg);
        assert_eq!(planes.len(), 10);
        assert_eq!(planes[0], 900.0);
        assert_eq!(planes[9], 8100.0);
        let one = MixerConfig { n_periods: 1, ..cfg.clone() };
        assert_eq!(period_planes(&one), vec![900.0]);
        let none = MixerConfig { n_periods: 0, ..cfg };
        assert!(period_planes(&none).is_empty());
    }

    #[test]
    fn validation_messages_name_keys() {
        let cfg = MixerConfig {
            barrier_height: 70.0,
            ..MixerConfig::default()
        };
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("barrier_height_um"));
        assert!(msg.contains("barrier_height < channel_height"));
        let cfg = MixerConfig {
            n_periods: 11,
            ..MixerConfig::default()
        };
        assert!(cfg.validate().is_err());
        MixerConfig::default().validate().unwrap();
    }

    #[test]
    fn variants_differ_only_where_expected() {
        let h = 10.0;
        let plain = voxelize(&short(Variant::Plain), h).unwrap();
        let sgm = voxelize(&short(Variant::Sgm), h).unwrap();
        let cdm = voxelize(&short(Variant::Cdm), h).unwrap();
        let cfg = short(Variant::Cdm);
        // PLAIN has no groove layer; compare it with the channel part of SGM.
        let off = sgm.dims[2] - plain.dims[2];
        for j in 0..sgm.dims[1] {
            for k in 0..sgm.dims[2] {
                for i in 0..sgm.dims[0] {
                    let s = sgm.kind(i, j, k);
                    let c = cdm.kind(i, j, k);
                    if k >= off {
                        assert_eq!(s.is_fluid(), plain.kind(i, j, k - off).is_fluid());
                    }
                    if s.is_fluid() != c.is_fluid() {
                        let p = sgm.center(i, j, k);
                        assert!(p[2] >= cfg.channel_height - cfg.barrier_height);
                        assert!(cfg.in_barrier(p[0], p[1], p[2]));
                    }
                }
            }
        }
    }

    #[test]
    fn refinement_reduces_volume_error() {
        let cfg = short(Variant::Cdm);
        let vol = |h: f64| voxelize(&cfg, h).unwrap().fluid_count() as f64 * h * h * h;
        let (v20, v10, v5) = (vol(20.0), vol(10.0), vol(5.0));
        assert!((v5 - v10).abs() < (v10 - v20).abs(), "{v20} {v10} {v5}");
    }
}
