//! Fully developed laminar flow in a rectangular duct (Fourier series).

use std::f64::consts::PI;

/// Default number of odd series terms.
pub const DEFAULT_TERMS: usize = 200;

/// Series solution on `[0, width] x [0, height]`, scaled to a given
/// volumetric flow rate.
#[derive(Debug, Clone)]
pub struct DuctProfile {
    width: f64,
    height: f64,
    n_terms: usize,
    /// Velocity per unit of the raw series value.
    scale: f64,
}

impl DuctProfile {
    /// `width`, `height` in any consistent length unit `L`; `flow_rate` in
    /// `L^3 / T`; velocities come out in `L / T`.
    pub fn new(width: f64, height: f64, flow_rate: f64, n_terms: usize) -> Self {
        let mut p = Self {
            width,
            height,
            n_terms: n_terms.max(1),
            scale: 1.0,
        };
        p.scale = flow_rate / p.unit_flow_rate();
        p
    }

    /// Half-widths ordered so the cosine series runs across the narrower side.
    fn halves(&self) -> (f64, f64, bool) {
        let (a, b) = (0.5 * self.width, 0.5 * self.height);
        if a <= b {
            (a, b, false)
        } else {
            (b, a, true)
        }
    }

    /// Flow rate of the raw series (pressure gradient / viscosity = 1).
    pub fn unit_flow_rate(&self) -> f64 {
        let (a, b, _) = self.halves();
        let mut sum = 0.0;
        for n in 0..self.n_terms {
            let i = (2 * n + 1) as f64;
            sum += (i * PI * b / (2.0 * a)).tanh() / i.powi(5);
        }
        4.0 * b * a.powi(3) / 3.0 * (1.0 - 192.0 * a / (PI.powi(5) * b) * sum)
    }

    /// Raw series value (pressure gradient / viscosity = 1).
    pub fn unit_velocity(&self, x: f64, z: f64) -> f64 {
        let (a, b, swapped) = self.halves();
        let (s, t) = if swapped {
            (z - 0.5 * self.height, x - 0.5 * self.width)
        } else {
            (x - 0.5 * self.width, z - 0.5 * self.height)
        };
        let mut sum = 0.0;
        for n in 0..self.n_terms {
            let i = (2 * n + 1) as f64;
            let k = i * PI / (2.0 * a);
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (1.0 - cosh_ratio(k * t, k * b)) * (k * s).cos() / i.powi(3);
        }
        16.0 * a * a / PI.powi(3) * sum
    }

    pub fn velocity(&self, x: f64, z: f64) -> f64 {
        if x <= 0.0 || x >= self.width || z <= 0.0 || z >= self.height {
            return 0.0;
        }
        self.scale * self.unit_velocity(x, z)
    }

    /// Pressure gradient magnitude over viscosity that drives the scaled flow.
    pub fn gradient_over_viscosity(&self) -> f64 {
        self.scale
    }
}

/// `cosh(x) / cosh(y)` for `|x| <= y`, without overflow.
fn cosh_ratio(x: f64, y: f64) -> f64 {
    let x = x.abs();
    ((x - y).exp()) * (1.0 + (-2.0 * x).exp()) / (1.0 + (-2.0 * y).exp())
}

/// Axial velocity (m/s) at `(x, z)` in a `width x height` duct (micrometres)
/// carrying `flow_rate` m^3/s.
pub fn analytic_duct_velocity(width: f64, height: f64, flow_rate: f64, x: f64, z: f64) -> f64 {
    let to_m = 1e-6;
    DuctProfile::new(width * to_m, height * to_m, flow_rate, DEFAULT_TERMS)
        .velocity(x * to_m, z * to_m)
}
