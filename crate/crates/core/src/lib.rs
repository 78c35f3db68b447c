//! Simulation and statistics toolkit for parallel-connected lithium-ion
//! modules with cell-to-cell heterogeneity.

pub mod aging;
pub mod arrange;
pub mod error;
pub mod espm;
pub mod io;
pub mod module_solver;
pub mod montecarlo;
pub mod params;
pub mod registry;
pub mod stats;
pub mod thermal;
pub mod trace;

pub use error::{Error, Result};
