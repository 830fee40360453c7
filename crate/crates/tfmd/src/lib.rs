//! File formats, dataset pipeline and command line for time-frequency
//! motor fault diagnosis. The algorithms live in [`tfmd_core`].

pub mod config;
pub mod container;
mod error;
pub mod formats;
pub mod pipeline;

pub use error::{Error, Result};
pub use tfmd_core as core;
