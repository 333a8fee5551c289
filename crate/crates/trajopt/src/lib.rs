//! Scenario generation, metrics, solver runners and result IO on top of
//! `trajopt-core`.

pub mod error;
pub mod horizon;
pub mod io;
pub mod metrics;
pub mod runner;
pub mod scenario;

pub use error::{BenchError, BenchResult};
pub use trajopt_core;
