//! Run configuration: one JSON5 document with unit-suffixed keys.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowConditions, SolverSettings, UL_PER_MIN};
use crate::geometry::{MixerConfig, Variant};
use crate::topology::SlicePlane;
use crate::tracer::{BinSpec, TracerSettings};
use crate::transport::{InletMode, TransportParams};

/// Keys that must be present; the second entry is the accepted alias.
const REQUIRED: [(&str, &str); 2] = [
    ("variant", "variant"),
    ("flow_rate_per_inlet_ul_per_min", "flow_rate_per_inlet"),
];

/// Flat, fully defaulted run configuration. Lengths in um, flow rates in
/// ul/min; everything else SI. Unsuffixed geometry keys are accepted as
/// aliases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    #[serde(alias = "flow_rate_per_inlet")]
    pub flow_rate_per_inlet_ul_per_min: f64,

    #[serde(alias = "channel_length")]
    pub channel_length_um: f64,
    #[serde(alias = "channel_width")]
    pub channel_width_um: f64,
    #[serde(alias = "channel_height")]
    pub channel_height_um: f64,
    #[serde(alias = "inlet_length")]
    pub inlet_length_um: f64,
    #[serde(alias = "groove_width")]
    pub groove_width_um: f64,
    #[serde(alias = "groove_depth")]
    pub groove_depth_um: f64,
    #[serde(alias = "groove_angle")]
    pub groove_angle_deg: f64,
    #[serde(alias = "groove_pitch")]
    pub groove_pitch_um: f64,
    pub grooves_per_period: usize,
    #[serde(alias = "barrier_width")]
    pub barrier_width_um: f64,
    #[serde(alias = "barrier_height")]
    pub barrier_height_um: f64,
    #[serde(alias = "barrier_period")]
    pub barrier_period_um: f64,
    #[serde(alias = "barrier_amplitude")]
    pub barrier_amplitude_um: f64,
    #[serde(alias = "entrance_offset")]
    pub entrance_offset_um: f64,
    pub n_periods: usize,

    pub density_kg_per_m3: f64,
    pub dynamic_viscosity_pa_s: f64,
    pub stokes: bool,

    #[serde(alias = "h")]
    pub h_um: f64,
    pub lbm_tau: f64,
    pub flow_tol: f64,
    pub max_iterations: usize,
    pub flow_check_interval: usize,
    pub max_lattice_speed: f64,
    pub pressure_correction: bool,

    pub n_particles: usize,
    pub cfl: f64,
    pub dt_s: Option<f64>,
    pub max_transits: f64,
    pub bins_x: usize,
    pub bins_z: usize,

    pub slices_per_period: usize,
    /// Defaults to the groove angle.
    pub slice_slant_deg: Option<f64>,
    /// Add one cross-section (slant 0) through every barrier apex.
    pub apex_slices: bool,
    pub vortex_threshold: f64,

    pub diffusivity_m2_per_s: f64,
    pub rate_constant_m3_per_mol_s: f64,
    pub c_a0_mol_per_m3: f64,
    pub c_b0_mol_per_m3: f64,
    pub fret_threshold: f64,
    pub transport_tol: f64,
    pub max_sweeps: usize,

    pub output_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = MixerConfig::default();
        let f = FlowConditions::default();
        let s = SolverSettings::default();
        let t = TracerSettings::default();
        let r = TransportParams::default();
        Self {
            variant: g.variant,
            flow_rate_per_inlet_ul_per_min: f.flow_rate_per_inlet / UL_PER_MIN,
            channel_length_um: g.channel_length,
            channel_width_um: g.channel_width,
            channel_height_um: g.channel_height,
            inlet_length_um: g.inlet_length,
            groove_width_um: g.groove_width,
            groove_depth_um: g.groove_depth,
            groove_angle_deg: g.groove_angle,
            groove_pitch_um: g.groove_pitch,
            grooves_per_period: g.grooves_per_period,
            barrier_width_um: g.barrier_width,
            barrier_height_um: g.barrier_height,
            barrier_period_um: g.barrier_period,
            barrier_amplitude_um: g.barrier_amplitude,
            entrance_offset_um: g.entrance_offset,
            n_periods: g.n_periods,
            density_kg_per_m3: f.density,
            dynamic_viscosity_pa_s: f.dynamic_viscosity,
            stokes: f.stokes_mode,
            h_um: 5.0,
            lbm_tau: s.tau,
            flow_tol: s.tol,
            max_iterations: s.max_iterations,
            flow_check_interval: s.check_interval,
            max_lattice_speed: s.max_lattice_speed,
            pressure_correction: s.pressure_correction,
            n_particles: 14_000,
            cfl: t.cfl,
            dt_s: t.dt,
            max_transits: t.max_transits,
            bins_x: 10,
            bins_z: 7,
            slices_per_period: 8,
            slice_slant_deg: None,
            apex_slices: true,
            vortex_threshold: 0.2,
            diffusivity_m2_per_s: r.diffusivity,
            rate_constant_m3_per_mol_s: r.rate_constant,
            c_a0_mol_per_m3: r.c_a0,
            c_b0_mol_per_m3: r.c_b0,
            fret_threshold: r.threshold,
            transport_tol: r.tol,
            max_sweeps: r.max_sweeps,
            output_dir: None,
            threads: None,
        }
    }
}

/// Parses and validates a run config. Errors carry the offending key path.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let value: serde_json::Value = json5::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    let map = value
        .as_object()
        .ok_or_else(|| Error::Parse("config must be an object".into()))?;
    for (key, alias) in REQUIRED {
        if !map.contains_key(key) && !map.contains_key(alias) {
            return Err(Error::config(key, "missing required key"));
        }
    }
    let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        Error::config(path, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    pub fn mixer(&self) -> MixerConfig {
        MixerConfig {
            variant: self.variant,
            channel_length: self.channel_length_um,
            channel_width: self.channel_width_um,
            channel_height: self.channel_height_um,
            inlet_length: self.inlet_length_um,
            groove_width: self.groove_width_um,
            groove_depth: self.groove_depth_um,
            groove_angle: self.groove_angle_deg,
            groove_pitch: self.groove_pitch_um,
            grooves_per_period: self.grooves_per_period,
            barrier_width: self.barrier_width_um,
            barrier_height: self.barrier_height_um,
            barrier_period: self.barrier_period_um,
            barrier_amplitude: self.barrier_amplitude_um,
            entrance_offset: self.entrance_offset_um,
            n_periods: self.n_periods,
        }
    }

    pub fn flow_conditions(&self) -> FlowConditions {
        FlowConditions {
            flow_rate_per_inlet: self.flow_rate_per_inlet_ul_per_min * UL_PER_MIN,
            density: self.density_kg_per_m3,
            dynamic_viscosity: self.dynamic_viscosity_pa_s,
            stokes_mode: self.stokes,
        }
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tau: self.lbm_tau,
            tol: self.flow_tol,
            max_iterations: self.max_iterations,
            check_interval: self.flow_check_interval,
            max_lattice_speed: self.max_lattice_speed,
            pressure_correction: self.pressure_correction,
        }
    }

    pub fn tracer_settings(&self) -> TracerSettings {
        TracerSettings {
            cfl: self.cfl,
            dt: self.dt_s,
            max_transits: self.max_transits,
        }
    }

    /// Bins over the main-channel cross-section `[0, W] x [0, H]`.
    pub fn bins(&self) -> BinSpec {
        BinSpec {
            x_range: [0.0, self.channel_width_um],
            z_range: [0.0, self.channel_height_um],
            nx: self.bins_x,
            nz: self.bins_z,
        }
    }

    pub fn transport_params(&self) -> TransportParams {
        TransportParams {
            diffusivity: self.diffusivity_m2_per_s,
            rate_constant: self.rate_constant_m3_per_mol_s,
            c_a0: self.c_a0_mol_per_m3,
            c_b0: self.c_b0_mol_per_m3,
            threshold: self.fret_threshold,
            tol: self.transport_tol,
            max_sweeps: self.max_sweeps,
            inlet: InletMode::Split,
        }
    }

    pub fn slant_deg(&self) -> f64 {
        self.slice_slant_deg.unwrap_or(self.groove_angle_deg)
    }

    /// Evenly spaced slices through every period (pivot on the channel
    /// centreline), then apex slices when enabled. Sorted by `y`.
    pub fn slice_planes(&self) -> Vec<SlicePlane> {
        let mixer = self.mixer();
        let slant = self.slant_deg();
        let pivot = mixer.centerline_x();
        let mut planes = Vec::new();
        for k in 0..self.n_periods {
            let start = self.entrance_offset_um + k as f64 * self.barrier_period_um;
            for s in 0..self.slices_per_period {
                let y = start + (s as f64 + 0.5) / self.slices_per_period as f64 * self.barrier_period_um;
                planes.push(SlicePlane {
                    y,
                    slant_deg: slant,
                    pivot_x: pivot,
                });
            }
        }
        if self.apex_slices {
            // Pure cross-sections, so the whole slice lies beneath the apex.
            planes.extend(mixer.barrier_apexes().into_iter().map(|(y, x)| SlicePlane {
                y,
                slant_deg: 0.0,
                pivot_x: x,
            }));
        }
        planes.sort_by(|a, b| a.y.total_cmp(&b.y));
        planes
    }

    pub fn validate(&self) -> Result<()> {
        self.mixer().validate()?;
        self.flow_conditions().validate()?;
        self.solver_settings().validate()?;
        self.transport_params().validate()?;
        if !(self.h_um.is_finite() && self.h_um > 0.0) {
            return Err(Error::config("h_um", "must be > 0"));
        }
        if self.n_particles == 0 || self.n_particles % 2 == 1 {
            return Err(Error::config("n_particles", "must be even and positive"));
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(Error::config("cfl", "must lie in (0, 1]"));
        }
        if let Some(dt) = self.dt_s {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::config("dt_s", "must be > 0"));
            }
        }
        if !(self.max_transits >= 1.0) {
            return Err(Error::config("max_transits", "must be >= 1"));
        }
        if self.bins_x == 0 || self.bins_z == 0 {
            return Err(Error::config("bins_x", "bin counts must be > 0"));
        }
        if !(self.slant_deg().abs() < 90.0) {
            return Err(Error::config("slice_slant_deg", "must lie strictly between -90 and 90"));
        }
        if !(self.vortex_threshold > 0.0 && self.vortex_threshold < 1.0) {
            return Err(Error::config("vortex_threshold", "must lie in (0, 1)"));
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be > 0"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_reproduces_reference_geometry() {
        let c = parse_config(r#"{variant: "CDM", flow_rate_per_inlet: 5.0}"#).unwrap();
        let m = c.mixer();
        assert_eq!(
            (m.channel_length, m.channel_width, m.channel_height, m.barrier_period, m.n_periods),
            (8100.0, 200.0, 70.0, 800.0, 10)
        );
        assert_eq!(m.variant, Variant::Cdm);
        assert!((c.flow_conditions().flow_rate_per_inlet - 5.0e-9 / 60.0).abs() < 1e-24);
    }

    #[test]
    fn unknown_variant_names_key_and_choices() {
        let err = parse_config(r#"{variant: "XGM", flow_rate_per_inlet: 5.0}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("variant"), "{msg}");
        assert!(msg.contains("PLAIN") && msg.contains("SGM") && msg.contains("CDM"), "{msg}");
    }

    #[test]
    fn barrier_must_be_lower_than_channel() {
        let err = parse_config(r#"{variant: "CDM", flow_rate_per_inlet: 5.0, barrier_height: 70, channel_height: 70}"#)
            .unwrap_err();
        assert!(err.to_string().contains("barrier_height < channel_height"), "{err}");
    }

    #[test]
    fn unknown_and_missing_keys_are_rejected() {
        let err = parse_config(r#"{variant: "SGM", flow_rate_per_inlet: 5.0, chanel_width_um: 100}"#).unwrap_err();
        assert!(err.to_string().contains("chanel_width_um"), "{err}");
        let err = parse_config(r#"{variant: "SGM"}"#).unwrap_err();
        assert!(err.to_string().contains("flow_rate_per_inlet_ul_per_min"), "{err}");
        let err = parse_config(r#"{variant: "SGM", flow_rate_per_inlet: "fast"}"#).unwrap_err();
        assert!(err.to_string().contains("flow_rate_per_inlet"), "{err}");
    }

    #[test]
    fn slice_plan_covers_periods_and_apexes() {
        let c = parse_config(r#"{variant: "CDM", flow_rate_per_inlet: 5.0}"#).unwrap();
        let planes = c.slice_planes();
        assert_eq!(planes.len(), 80 + c.mixer().barrier_apexes().len());
        let apexes = planes.iter().filter(|p| p.slant_deg == 0.0).count();
        assert_eq!(apexes, c.mixer().barrier_apexes().len());
        assert_eq!(planes.iter().filter(|p| p.slant_deg == 45.0).count(), 80);
        assert!(planes.windows(2).all(|w| w[0].y <= w[1].y));
    }

    #[test]
    fn config_echo_round_trips() {
        let c = parse_config(r#"{variant: "PLAIN", flow_rate_per_inlet: 2.5, h_um: 10}"#).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
