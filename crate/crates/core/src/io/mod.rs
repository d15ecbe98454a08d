//! Run configuration, artifact writers and the stage pipeline.

mod config;
mod pipeline;
pub mod tables;
pub mod vtk;

pub use config::{parse_config, RunConfig};
pub use pipeline::{load_report, prepare_output_dir, report_conditions, run_pipeline, Artifact, Manifest, Stage};
