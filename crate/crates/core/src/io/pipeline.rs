//! Stage orchestration and artifact bookkeeping.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::tables;
use super::vtk::{self, PointData};
use crate::error::{Error, Result};
use crate::flow::{self, solve_steady, VelocityField};
use crate::geometry::{period_planes, voxelize};
use crate::report::{build_report, write_report_csv, MixingReport, ReportConditions};
use crate::topology::analyze_slices;
use crate::tracer::{advect_with, seed_inlet, ParticleEnsemble, Status};
use crate::transport::{fret_profile, solve_transport, SpeciesFields};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Geometry,
    Flow,
    Trace,
    Topology,
    Transport,
    Report,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Geometry => "geometry",
            Stage::Flow => "flow",
            Stage::Trace => "trace",
            Stage::Topology => "topology",
            Stage::Transport => "transport",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }

    /// Whether running up to `self` executes `stage`.
    pub fn runs(self, stage: Stage) -> bool {
        use Stage::*;
        match self {
            All => true,
            Report => matches!(stage, Geometry | Flow | Trace | Transport | Report),
            Geometry => stage == Geometry,
            Flow => matches!(stage, Geometry | Flow),
            target => matches!(stage, Geometry | Flow) || stage == target,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// File name inside the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub dir: PathBuf,
    /// In write order; `meta.json` last.
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn get(&self, name: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.path == name)
    }
}

/// Names this pipeline may write; only these are replaced under `--force`.
fn is_artifact_name(name: &str) -> bool {
    const FIXED: [&str; 9] = [
        "grid.vtk",
        "velocity.vtk",
        "flow_history.csv",
        "topology.csv",
        "species.vtk",
        "fret.csv",
        "report.csv",
        "meta.json",
        "comparison.csv",
    ];
    FIXED.contains(&name)
        || name
            .strip_prefix("particles_period_")
            .and_then(|r| r.strip_suffix(".csv").or_else(|| r.strip_suffix(".vtk")))
            .is_some_and(|k| !k.is_empty() && k.bytes().all(|b| b.is_ascii_digit()))
}

/// Creates `dir`, refusing a non-empty one unless `force`; with `force`
/// only earlier pipeline artifacts are removed.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
        if !entries.is_empty() && !force {
            return Err(Error::OutputNotEmpty(dir.to_path_buf()));
        }
        for e in entries {
            if e.file_type()?.is_file() && e.file_name().to_str().is_some_and(is_artifact_name) {
                fs::remove_file(e.path())?;
            }
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

struct HashingWriter<W> {
    inner: W,
    hasher: Sha256,
    bytes: u64,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.update(&buf[..n]);
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

struct Outputs {
    dir: PathBuf,
    artifacts: Vec<Artifact>,
}

impl Outputs {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        let path = self.dir.join(name);
        // Registered before writing so a failed write is cleaned up too.
        self.artifacts.push(Artifact {
            path: name.to_string(),
            sha256: String::new(),
            bytes: 0,
        });
        let mut w = HashingWriter {
            inner: BufWriter::new(File::create(&path)?),
            hasher: Sha256::new(),
            bytes: 0,
        };
        body(&mut w)?;
        w.flush()?;
        let last = self.artifacts.last_mut().expect("pushed above");
        last.sha256 = format!("{:x}", w.hasher.finalize());
        last.bytes = w.bytes;
        Ok(())
    }

    fn remove_all(&self) {
        for a in &self.artifacts {
            let _ = fs::remove_file(self.dir.join(&a.path));
        }
    }
}

trait StageResult<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageResult<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.in_stage(stage.name()))
    }
}

/// Runs every stage `target` depends on, writing artifacts into `out`.
/// Partial artifacts are removed on failure.
pub fn run_pipeline(config: &RunConfig, target: Stage, out: &Path, force: bool) -> Result<Manifest> {
    config.validate()?;
    prepare_output_dir(out, force)?;
    let threads = config
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let mut outputs = Outputs {
        dir: out.to_path_buf(),
        artifacts: Vec::new(),
    };
    match pool.install(|| execute(config, target, &mut outputs)) {
        Ok(()) => Ok(Manifest {
            dir: out.to_path_buf(),
            artifacts: outputs.artifacts,
        }),
        Err(e) => {
            outputs.remove_all();
            Err(e)
        }
    }
}

fn timed<T>(stage: Stage, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    log::info!("{}: start", stage.name());
    let r = f().stage(stage);
    log::info!("{}: done in {:.1} s", stage.name(), start.elapsed().as_secs_f64());
    r
}

fn execute(config: &RunConfig, target: Stage, outputs: &mut Outputs) -> Result<()> {
    let mixer = config.mixer();
    let cond = config.flow_conditions();
    let planes = period_planes(&mixer);
    let mut meta = Map::new();
    meta.insert("config".into(), serde_json::to_value(config).expect("plain struct"));
    meta.insert(
        "units".into(),
        json!({
            "length": "um (config, CSV, VTK coordinates); m inside SI quantities",
            "velocity": "m/s",
            "pressure": "Pa relative to the outlet",
            "flow_rate": "ul/min in config, m^3/s internally (1 ul/min = 1.6667e-11 m^3/s)",
            "concentration": "mol/m^3",
            "time": "s",
        }),
    );
    meta.insert("notes".into(), json!(decision_notes(config)));
    meta.insert("stage".into(), json!(target.name()));

    let grid = timed(Stage::Geometry, || voxelize(&mixer, config.h_um))?;
    meta.insert(
        "geometry".into(),
        json!({
            "dims": grid.dims,
            "origin_um": grid.origin,
            "h_um": grid.h,
            "fluid_cells": grid.fluid_count(),
            "period_planes_um": planes,
        }),
    );
    outputs.write("grid.vtk", |w| vtk::write_grid(w, &grid)).stage(Stage::Geometry)?;

    if target.runs(Stage::Flow) {
        let field = timed(Stage::Flow, || solve_steady(Arc::new(grid), &cond, &config.solver_settings()))?;
        meta.insert("flow".into(), flow_meta(config, &field));
        outputs
            .write("velocity.vtk", |w| {
                vtk::write_structured_points(
                    w,
                    "velocity (m/s) and pressure (Pa)",
                    &field.grid,
                    &[PointData::Vectors("velocity", &field.u), PointData::Scalars("pressure", &field.p)],
                )
            })
            .stage(Stage::Flow)?;
        outputs
            .write("flow_history.csv", |w| tables::write_history(w, &field.history))
            .stage(Stage::Flow)?;

        let mut ensemble = None;
        if target.runs(Stage::Trace) {
            let ens = timed(Stage::Trace, || {
                let seeded = seed_inlet(&field.grid, config.n_particles)?;
                advect_with(&field, seeded, &planes, &config.tracer_settings())
            })?;
            meta.insert("trace".into(), trace_meta(&ens));
            for (n, snap) in ens.snapshots.iter().enumerate() {
                let k = n + 1;
                outputs
                    .write(&format!("particles_period_{k}.csv"), |w| tables::write_snapshot(w, snap, k))
                    .stage(Stage::Trace)?;
                outputs
                    .write(&format!("particles_period_{k}.vtk"), |w| vtk::write_particles(w, snap))
                    .stage(Stage::Trace)?;
            }
            ensemble = Some(ens);
        }

        if target.runs(Stage::Topology) {
            let analyses = timed(Stage::Topology, || {
                analyze_slices(&field, &config.slice_planes(), config.vortex_threshold)
            })?;
            let apex: Vec<Value> = analyses
                .iter()
                .filter(|a| mixer.barrier_apexes().iter().any(|&(y, x)| a.plane.pivot_x == x && a.plane.y == y))
                .map(|a| {
                    json!({
                        "y_um": a.plane.y,
                        "pivot_x_um": a.plane.pivot_x,
                        "vortices": a.vortices.len(),
                        "saddle_between_pair_size_ratio": a.saddle_between_pair(),
                    })
                })
                .collect();
            meta.insert(
                "topology".into(),
                json!({
                    "slices": analyses.len(),
                    "critical_points": analyses.iter().map(|a| a.points.len()).sum::<usize>(),
                    "apex_slices": apex,
                }),
            );
            outputs
                .write("topology.csv", |w| tables::write_topology(w, &analyses))
                .stage(Stage::Topology)?;
        }

        let mut species = None;
        if target.runs(Stage::Transport) {
            let params = config.transport_params();
            let fields = timed(Stage::Transport, || solve_transport(&field, &params))?;
            let profile = fret_profile(&fields, &planes, params.threshold).stage(Stage::Transport)?;
            meta.insert("transport".into(), transport_meta(&fields));
            outputs
                .write("species.vtk", |w| {
                    vtk::write_structured_points(
                        w,
                        "concentrations (mol/m^3)",
                        &fields.grid,
                        &[
                            PointData::Scalars("c_a", &fields.a),
                            PointData::Scalars("c_b", &fields.b),
                            PointData::Scalars("c_p", &fields.p),
                        ],
                    )
                })
                .stage(Stage::Transport)?;
            outputs
                .write("fret.csv", |w| tables::write_fret(w, &profile))
                .stage(Stage::Transport)?;
            species = Some(fields);
        }

        if target.runs(Stage::Report) {
            if let (Some(ens), Some(fields)) = (&ensemble, &species) {
                let conditions = report_conditions(config, &field);
                let report = build_report(config.variant, conditions, &planes, ens, &config.bins(), fields)
                    .stage(Stage::Report)?;
                meta.insert(
                    "report".into(),
                    serde_json::to_value(&report).expect("plain struct"),
                );
                outputs
                    .write("report.csv", |w| write_report_csv(std::slice::from_ref(&report), w))
                    .stage(Stage::Report)?;
            }
        }
    }

    meta.insert(
        "artifacts".into(),
        serde_json::to_value(&outputs.artifacts).expect("plain struct"),
    );
    let text = serde_json::to_string_pretty(&Value::Object(meta)).expect("plain values");
    outputs.write("meta.json", |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

/// Conditions two reports must share to be compared.
pub fn report_conditions(config: &RunConfig, field: &VelocityField) -> ReportConditions {
    ReportConditions {
        flow_rate_per_inlet_ul_per_min: config.flow_rate_per_inlet_ul_per_min,
        reynolds: flow::reynolds(&config.flow_conditions(), &config.mixer()),
        h_um: field.grid.h,
        diffusivity: config.diffusivity_m2_per_s,
        rate_constant: config.rate_constant_m3_per_mol_s,
        fret_threshold: config.fret_threshold,
        n_particles: config.n_particles,
    }
}

/// Reads the report recorded in a run directory's `meta.json`.
pub fn load_report(dir: &Path) -> Result<MixingReport> {
    let text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: Value = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", dir.display())))?;
    let report = meta
        .get("report")
        .ok_or_else(|| Error::Report(format!("{} holds no report (run the report stage)", dir.display())))?;
    serde_json::from_value(report.clone()).map_err(|e| Error::Parse(format!("{}: {e}", dir.display())))
}

fn decision_notes(config: &RunConfig) -> Vec<String> {
    vec![
        format!(
            "diffusivity {:.3e} m^2/s is chosen for a cell Peclet number near 10 at h = 5 um; physical protein diffusivities (~1e-11 m^2/s) would give cell Peclet numbers far above 50",
            config.diffusivity_m2_per_s
        ),
        format!(
            "reacted area: cells with product above {} of the stoichiometric product min(cA0, cB0)/2",
            config.fret_threshold
        ),
        format!(
            "mixing index: species-A fraction over {}x{} bins of the main-channel cross-section, bins with fewer than 5 particles ignored, groove particles clamped into the bottom row",
            config.bins_x, config.bins_z
        ),
        format!(
            "slices: {} per period slanted {} deg about z, plus a cross-section through every barrier apex",
            config.slices_per_period,
            config.slant_deg()
        ),
        "inlet: two-stream plug inflow through the full channel cross-section at y = 0; inlet arms are not modelled".into(),
        "flow: incompressible D3Q19 BGK lattice Boltzmann, halfway bounce-back walls, extrapolated zero-gradient outlet".into(),
    ]
}

fn flow_meta(config: &RunConfig, field: &VelocityField) -> Value {
    let cond = config.flow_conditions();
    let mixer = config.mixer();
    json!({
        "iterations": field.iterations,
        "residual": field.residual,
        "tolerance": config.flow_tol,
        "lattice_units": field.units,
        "mean_velocity_m_per_s": flow::mean_velocity(&cond, &mixer),
        "reynolds": flow::reynolds(&cond, &mixer),
        "max_speed_m_per_s": field.max_speed(),
        "stokes": cond.stokes_mode,
    })
}

fn trace_meta(ens: &ParticleEnsemble) -> Value {
    let rotation: Vec<Option<f64>> = (1..ens.snapshots.len()).map(|k| ens.mean_rotation(k - 1, k)).collect();
    json!({
        "particles": ens.len(),
        "dt_s": ens.dt,
        "exited": ens.count(Status::Exited),
        "stalled": ens.count(Status::Stalled),
        "active": ens.count(Status::Active),
        "crossings_per_period": ens.snapshots.iter().map(|s| s.crossings.len()).collect::<Vec<_>>(),
        "rotation_axis_um": ens.axis,
        "mean_rotation_between_periods_rad": rotation,
    })
}

fn transport_meta(fields: &SpeciesFields) -> Value {
    json!({
        "sweeps": fields.sweeps,
        "last_change": fields.last_change,
        "max_cell_peclet": fields.max_cell_peclet,
        "warnings": fields.warnings,
        "stoichiometric_product_mol_per_m3": fields.params.stoichiometric_product(),
    })
}
