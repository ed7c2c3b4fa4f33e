//! Allocation-only core of the gaze3d toolkit.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod error;
pub mod geometry;
pub(crate) mod linalg;
pub mod pnp;
pub mod features;
pub mod world;
pub mod gaze;
pub mod roi;
pub mod analytics;
pub mod sim;

pub use error::{Error, Result};
pub use nalgebra;
