//! Polynomial trajectory optimization.
#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod basis;
pub mod batch;
pub mod error;
pub mod geometry;
pub mod multiagent;
pub mod priest;
pub mod qp;
pub mod sampling;
pub mod schedule;
pub mod single;

pub use error::{Error, Result};
