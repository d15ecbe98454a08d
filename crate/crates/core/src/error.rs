use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {key}: {message}")]
    InvalidConfig { key: String, message: String },

    #[error("point ({x}, {y}, {z}) um outside domain")]
    OutsideDomain { x: f64, y: f64, z: f64 },

    #[error("geometry disconnected: {0}")]
    GeometryDisconnected(String),

    #[error("flow solver did not converge after {iterations} iterations (last residual {last_residual:.3e})")]
    NotConverged {
        iterations: usize,
        last_residual: f64,
        history: Vec<(usize, f64)>,
    },

    #[error("reduce flow rate or refine: {0}")]
    Unstable(String),

    #[error("plane y = {0} um outside domain")]
    PlaneOutsideDomain(f64),

    #[error("plane y = {0} um lies entirely in solid")]
    PlaneInSolid(f64),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("particle seeding: {0}")]
    Seeding(String),

    #[error("mixing index: no bin holds at least {0} particles")]
    SparseBins(usize),

    #[error("non-finite Jacobian")]
    NonFiniteJacobian,

    #[error("transport solver did not converge after {iterations} sweeps (last change {last_change:.3e})")]
    TransportNotConverged { iterations: usize, last_change: f64 },

    #[error("report: {0}")]
    Report(String),

    #[error("reports not comparable:\n{0}")]
    ConditionMismatch(String),

    #[error("output directory {0} is not empty (use --force)")]
    OutputNotEmpty(PathBuf),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
