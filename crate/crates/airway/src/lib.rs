//! File formats, dataset rendering, evaluation and the command line on top
//! of `airway-core`.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod formats;

pub use airway_core as core;
pub use error::{Error, Result};
