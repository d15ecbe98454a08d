//! Critical points and vortices of the in-plane velocity on cross-sectional
//! slices.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::VelocityField;

const NEWTON_ITERATIONS: usize = 50;
/// Speed tolerance relative to the slice's peak in-plane speed.
const SPEED_TOLERANCE: f64 = 1e-6;
/// Determinant and trace tolerances relative to `|J|_F^2` and `|J|_F`.
const JACOBIAN_TOLERANCE: f64 = 1e-9;
/// Roots may land this far (in cell units) outside their candidate cell.
const CELL_SLACK: f64 = 1e-3;

/// A slice through the channel. The plane contains the z direction and is
/// rotated by `slant_deg` about the z-parallel line through
/// `(pivot_x, y)`: sample `(x, z)` sits at `y + (x - pivot_x) tan(slant)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlicePlane {
    /// um
    pub y: f64,
    pub slant_deg: f64,
    /// um
    pub pivot_x: f64,
}

impl SlicePlane {
    pub fn normal(&self) -> [f64; 3] {
        let a = self.slant_deg.to_radians();
        [-a.sin(), a.cos(), 0.0]
    }

    pub fn point(&self, x: f64, z: f64) -> [f64; 3] {
        [x, self.y + (x - self.pivot_x) * self.slant_deg.to_radians().tan(), z]
    }
}

/// In-plane velocity sampled at the grid's `(x, z)` cell centres, projected
/// onto the xz plane. Index `k * nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceField {
    pub plane: SlicePlane,
    /// Sample spacing, um.
    pub h: f64,
    pub nx: usize,
    pub nz: usize,
    /// Position of sample `(0, 0)`, um.
    pub origin: [f64; 2],
    /// m/s
    pub ux: Vec<f64>,
    /// m/s
    pub uz: Vec<f64>,
    pub fluid: Vec<bool>,
}

impl SliceField {
    /// Samples an explicit in-plane field; for synthetic setups.
    pub fn from_fn(
        plane: SlicePlane,
        h: f64,
        dims: [usize; 2],
        origin: [f64; 2],
        f: impl Fn(f64, f64) -> Option<[f64; 2]>,
    ) -> Self {
        let [nx, nz] = dims;
        let mut s = Self {
            plane,
            h,
            nx,
            nz,
            origin,
            ux: vec![0.0; nx * nz],
            uz: vec![0.0; nx * nz],
            fluid: vec![false; nx * nz],
        };
        for k in 0..nz {
            for i in 0..nx {
                let (x, z) = s.position(i, k);
                if let Some(v) = f(x, z) {
                    let n = k * nx + i;
                    s.ux[n] = v[0];
                    s.uz[n] = v[1];
                    s.fluid[n] = true;
                }
            }
        }
        s
    }

    #[inline]
    pub fn position(&self, i: usize, k: usize) -> (f64, f64) {
        (self.origin[0] + i as f64 * self.h, self.origin[1] + k as f64 * self.h)
    }

    pub fn max_speed(&self) -> f64 {
        (0..self.ux.len())
            .filter(|&n| self.fluid[n])
            .map(|n| self.ux[n].hypot(self.uz[n]))
            .fold(0.0, f64::max)
    }

    /// `w_y = d(u_x)/dz - d(u_z)/dx` in 1/s by central differences (one-sided
    /// next to masked samples); `None` at masked samples.
    pub fn vorticity(&self) -> Vec<Option<f64>> {
        let d = |v: &[f64], i: usize, k: usize, along_x: bool| -> f64 {
            let (n, lim) = if along_x { (i, self.nx) } else { (k, self.nz) };
            let at = |m: usize| if along_x { k * self.nx + m } else { m * self.nx + i };
            let fwd = n + 1 < lim && self.fluid[at(n + 1)];
            let back = n > 0 && self.fluid[at(n - 1)];
            let h = self.h * 1e-6;
            match (back, fwd) {
                (true, true) => (v[at(n + 1)] - v[at(n - 1)]) / (2.0 * h),
                (false, true) => (v[at(n + 1)] - v[at(n)]) / h,
                (true, false) => (v[at(n)] - v[at(n - 1)]) / h,
                (false, false) => 0.0,
            }
        };
        (0..self.nz)
            .flat_map(|k| (0..self.nx).map(move |i| (i, k)))
            .map(|(i, k)| {
                self.fluid[k * self.nx + i].then(|| d(&self.ux, i, k, false) - d(&self.uz, i, k, true))
            })
            .collect()
    }
}

/// Samples the in-plane velocity of `field` on `plane`.
pub fn slice_field(field: &VelocityField, plane: SlicePlane) -> Result<SliceField> {
    let g = &*field.grid;
    let [nx, _, nz] = g.dims;
    let normal = plane.normal();
    let hi = g.extent();
    let origin = [g.origin[0] + 0.5 * g.h, g.origin[2] + 0.5 * g.h];
    let s = SliceField::from_fn(plane, g.h, [nx, nz], origin, |x, z| {
        let p = plane.point(x, z);
        if p[1] < g.origin[1] || p[1] > hi[1] {
            return None;
        }
        let c = g.locate(p)?;
        if !g.is_fluid(c) {
            return None;
        }
        let u = crate::tracer::interpolate_velocity(field, p).ok()?;
        let un = u[0] * normal[0] + u[1] * normal[1] + u[2] * normal[2];
        Some([u[0] - un * normal[0], u[2] - un * normal[2]])
    });
    if !s.fluid.iter().any(|f| *f) {
        return Err(if plane.y < g.origin[1] || plane.y > hi[1] {
            Error::PlaneOutsideDomain(plane.y)
        } else {
            Error::PlaneInSolid(plane.y)
        });
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CriticalKind {
    Saddle,
    NodeSource,
    NodeSink,
    FocusCw,
    FocusCcw,
    Center,
    Degenerate,
}

impl CriticalKind {
    pub fn name(self) -> &'static str {
        match self {
            CriticalKind::Saddle => "SADDLE",
            CriticalKind::NodeSource => "NODE_SOURCE",
            CriticalKind::NodeSink => "NODE_SINK",
            CriticalKind::FocusCw => "FOCUS_CW",
            CriticalKind::FocusCcw => "FOCUS_CCW",
            CriticalKind::Center => "CENTER",
            CriticalKind::Degenerate => "DEGENERATE",
        }
    }

    pub fn is_vortex(self) -> bool {
        matches!(self, CriticalKind::FocusCw | CriticalKind::FocusCcw | CriticalKind::Center)
    }
}

/// Rotation sense viewed toward +y, with x to the right and z up.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Sense {
    Cw,
    Ccw,
}

impl Sense {
    pub fn name(self) -> &'static str {
        match self {
            Sense::Cw => "CW",
            Sense::Ccw => "CCW",
        }
    }

    /// Sense of a rotation with vorticity `w_y`.
    pub fn from_vorticity(w: f64) -> Self {
        if w > 0.0 {
            Sense::Cw
        } else {
            Sense::Ccw
        }
    }
}

/// Jacobian `[[dux/dx, dux/dz], [duz/dx, duz/dz]]`, 1/s.
pub type Jacobian = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub kind: CriticalKind,
    /// Rotation sense for foci and centres.
    pub sense: Option<Sense>,
}

pub fn classify_critical_point(j: &Jacobian) -> Result<Classification> {
    if j.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteJacobian);
    }
    let norm2: f64 = j.iter().flatten().map(|v| v * v).sum();
    let eps_d = JACOBIAN_TOLERANCE * norm2;
    let eps_t = JACOBIAN_TOLERANCE * norm2.sqrt();
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let tr = j[0][0] + j[1][1];
    let rotation = j[1][0] - j[0][1];
    let sense = if rotation > 0.0 { Sense::Ccw } else { Sense::Cw };
    let c = |kind| Classification { kind, sense: None };
    Ok(if det.abs() <= eps_d {
        c(CriticalKind::Degenerate)
    } else if det < 0.0 {
        c(CriticalKind::Saddle)
    } else if tr * tr - 4.0 * det < 0.0 {
        let kind = if tr.abs() < eps_t {
            CriticalKind::Center
        } else if sense == Sense::Ccw {
            CriticalKind::FocusCcw
        } else {
            CriticalKind::FocusCw
        };
        Classification { kind, sense: Some(sense) }
    } else if tr > 0.0 {
        c(CriticalKind::NodeSource)
    } else {
        c(CriticalKind::NodeSink)
    })
}

/// Eigenvalues as `(re, im)` pairs.
pub fn eigenvalues(j: &Jacobian) -> [(f64, f64); 2] {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = tr * tr - 4.0 * det;
    if disc >= 0.0 {
        let r = disc.sqrt();
        [(0.5 * (tr + r), 0.0), (0.5 * (tr - r), 0.0)]
    } else {
        let r = (-disc).sqrt();
        [(0.5 * tr, 0.5 * r), (0.5 * tr, -0.5 * r)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalPoint {
    /// um
    pub x: f64,
    /// um
    pub z: f64,
    pub jacobian: Jacobian,
    pub kind: CriticalKind,
    pub sense: Option<Sense>,
}

/// Bilinear patch over the cell with lower-left sample `(i, k)`.
struct Patch {
    ux: [f64; 4],
    uz: [f64; 4],
}

impl Patch {
    /// Value and derivatives (per cell unit) at local `(s, t)`.
    fn eval(v: &[f64; 4], s: f64, t: f64) -> (f64, f64, f64) {
        let [a, b, c, d] = *v; // (0,0) (1,0) (0,1) (1,1)
        let val = a * (1.0 - s) * (1.0 - t) + b * s * (1.0 - t) + c * (1.0 - s) * t + d * s * t;
        let ds = (b - a) * (1.0 - t) + (d - c) * t;
        let dt = (c - a) * (1.0 - s) + (d - b) * s;
        (val, ds, dt)
    }

    fn newton(&self, tol: f64) -> Option<(f64, f64)> {
        let (mut s, mut t) = (0.5, 0.5);
        for _ in 0..NEWTON_ITERATIONS {
            let (fx, fxs, fxt) = Self::eval(&self.ux, s, t);
            let (fz, fzs, fzt) = Self::eval(&self.uz, s, t);
            if fx.hypot(fz) < tol {
                return Some((s, t));
            }
            let det = fxs * fzt - fxt * fzs;
            if det == 0.0 || !det.is_finite() {
                return None;
            }
            s -= (fx * fzt - fxt * fz) / det;
            t -= (fxs * fz - fx * fzs) / det;
            if !(s.is_finite() && t.is_finite()) || s.abs() > 10.0 || t.abs() > 10.0 {
                return None;
            }
        }
        let (fx, _, _) = Self::eval(&self.ux, s, t);
        let (fz, _, _) = Self::eval(&self.uz, s, t);
        (fx.hypot(fz) < tol).then_some((s, t))
    }
}

fn straddles(v: &[f64; 4]) -> bool {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    lo <= 0.0 && hi >= 0.0
}

/// Zeros of the bilinear interpolant inside cells whose four samples are
/// fluid and where both components change sign.
pub fn find_critical_points(slice: &SliceField) -> Vec<CriticalPoint> {
    let tol = SPEED_TOLERANCE * slice.max_speed();
    if tol == 0.0 {
        return Vec::new();
    }
    let nx = slice.nx;
    let scale = 1.0 / (slice.h * 1e-6);
    let mut found: Vec<CriticalPoint> = Vec::new();
    for k in 0..slice.nz.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let idx = [k * nx + i, k * nx + i + 1, (k + 1) * nx + i, (k + 1) * nx + i + 1];
            if !idx.iter().all(|&n| slice.fluid[n]) {
                continue;
            }
            let patch = Patch {
                ux: idx.map(|n| slice.ux[n]),
                uz: idx.map(|n| slice.uz[n]),
            };
            if !straddles(&patch.ux) || !straddles(&patch.uz) {
                continue;
            }
            let Some((s, t)) = patch.newton(tol) else {
                continue;
            };
            let inside = |v: f64| (-CELL_SLACK..=1.0 + CELL_SLACK).contains(&v);
            if !inside(s) || !inside(t) {
                continue;
            }
            let (x0, z0) = slice.position(i, k);
            let (x, z) = (x0 + s * slice.h, z0 + t * slice.h);
            if found.iter().any(|p| (p.x - x).hypot(p.z - z) < 0.5 * slice.h) {
                continue;
            }
            let (_, xs, xt) = Patch::eval(&patch.ux, s, t);
            let (_, zs, zt) = Patch::eval(&patch.uz, s, t);
            let jacobian = [[xs * scale, xt * scale], [zs * scale, zt * scale]];
            let Ok(c) = classify_critical_point(&jacobian) else {
                continue;
            };
            found.push(CriticalPoint {
                x,
                z,
                jacobian,
                kind: c.kind,
                sense: c.sense,
            });
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vortex {
    pub center: CriticalPoint,
    pub sense: Sense,
    /// Area of the thresholded vorticity region around the centre, um^2.
    pub size: f64,
    /// Largest |w_y| in that region, 1/s.
    pub peak_vorticity: f64,
}

/// One vortex per focus or centre, sized by flood fill of the connected
/// region where `|w_y| >= threshold * max|w_y|` with the centre's sign.
pub fn vortex_census(slice: &SliceField, points: &[CriticalPoint], threshold: f64) -> Vec<Vortex> {
    let w = slice.vorticity();
    let w_max = w.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
    let cut = threshold * w_max;
    let nx = slice.nx;
    let area = slice.h * slice.h;
    let mut out: Vec<Vortex> = points
        .iter()
        .filter(|p| p.kind.is_vortex())
        .map(|p| {
            let sense = p.sense.expect("vortex kinds carry a sense");
            let sign = if sense == Sense::Cw { 1.0 } else { -1.0 };
            let qualifies = |n: usize| w[n].is_some_and(|v| sign * v >= cut && sign * v > 0.0);
            // Seed: nearest qualifying sample among the enclosing cell's corners.
            let fi = ((p.x - slice.origin[0]) / slice.h).floor().max(0.0) as usize;
            let fk = ((p.z - slice.origin[1]) / slice.h).floor().max(0.0) as usize;
            let mut seeds: Vec<(f64, usize)> = [(fi, fk), (fi + 1, fk), (fi, fk + 1), (fi + 1, fk + 1)]
                .iter()
                .filter(|(i, k)| *i < nx && *k < slice.nz)
                .map(|&(i, k)| {
                    let (x, z) = slice.position(i, k);
                    ((x - p.x).hypot(z - p.z), k * nx + i)
                })
                .filter(|&(_, n)| qualifies(n))
                .collect();
            seeds.sort_by(|a, b| a.0.total_cmp(&b.0));
            let Some(&(_, seed)) = seeds.first() else {
                let n = fk.min(slice.nz - 1) * nx + fi.min(nx - 1);
                return Vortex {
                    center: *p,
                    sense,
                    size: area,
                    peak_vorticity: w[n].map_or(0.0, f64::abs),
                };
            };
            let mut seen = vec![false; w.len()];
            let mut queue = VecDeque::from([seed]);
            seen[seed] = true;
            let (mut count, mut peak) = (0usize, 0.0f64);
            while let Some(n) = queue.pop_front() {
                count += 1;
                peak = peak.max(w[n].map_or(0.0, f64::abs));
                let (i, k) = (n % nx, n / nx);
                let mut push = |m: usize| {
                    if !seen[m] && qualifies(m) {
                        seen[m] = true;
                        queue.push_back(m);
                    }
                };
                if i > 0 {
                    push(n - 1);
                }
                if i + 1 < nx {
                    push(n + 1);
                }
                if k > 0 {
                    push(n - nx);
                }
                if k + 1 < slice.nz {
                    push(n + nx);
                }
            }
            Vortex {
                center: *p,
                sense,
                size: count as f64 * area,
                peak_vorticity: peak,
            }
        })
        .collect();
    out.sort_by(|a, b| b.size.total_cmp(&a.size));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceAnalysis {
    pub plane: SlicePlane,
    pub points: Vec<CriticalPoint>,
    pub vortices: Vec<Vortex>,
}

impl SliceAnalysis {
    /// Whether a saddle lies between two opposite-sense vortices (in x) and,
    /// if so, the largest size ratio among such pairs.
    pub fn saddle_between_pair(&self) -> Option<f64> {
        let mut best: Option<f64> = None;
        for (n, a) in self.vortices.iter().enumerate() {
            for b in &self.vortices[n + 1..] {
                if a.sense == b.sense {
                    continue;
                }
                let (lo, hi) = (a.center.x.min(b.center.x), a.center.x.max(b.center.x));
                let between = self
                    .points
                    .iter()
                    .any(|p| p.kind == CriticalKind::Saddle && p.x > lo && p.x < hi);
                if between {
                    let ratio = a.size.max(b.size) / a.size.min(b.size);
                    best = Some(best.map_or(ratio, |r: f64| r.max(ratio)));
                }
            }
        }
        best
    }

    /// The saddle closest (in x) to `x`.
    pub fn nearest_saddle(&self, x: f64) -> Option<&CriticalPoint> {
        self.points
            .iter()
            .filter(|p| p.kind == CriticalKind::Saddle)
            .min_by(|a, b| (a.x - x).abs().total_cmp(&(b.x - x).abs()))
    }
}

/// Slices, critical points and vortex census for each plane, in order.
pub fn analyze_slices(field: &VelocityField, planes: &[SlicePlane], threshold: f64) -> Result<Vec<SliceAnalysis>> {
    planes
        .par_iter()
        .map(|&plane| {
            let slice = slice_field(field, plane)?;
            let points = find_critical_points(&slice);
            let vortices = vortex_census(&slice, &points, threshold);
            Ok(SliceAnalysis { plane, points, vortices })
        })
        .collect()
}
