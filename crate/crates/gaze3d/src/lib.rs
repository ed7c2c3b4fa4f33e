//! File formats and pipeline commands around `gaze3d-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;

pub use error::{Error, Result};
pub use gaze3d_core as core;
