//! Simulation toolkit for passive chaotic micromixers: voxel geometry,
//! lattice Boltzmann flow, particle tracing, flow topology and
//! reaction-transport.

pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod report;
pub mod topology;
pub mod tracer;
pub mod transport;

pub use error::{Error, Result};
