//! File formats, synthetic corpora and the `camtrap` command-line tool.
//!
//! The data model, splitting and metrics live in [`camtrap_core`]; this
//! crate reads and writes the delimited files around them.

pub mod cli;
pub mod error;
pub mod predictions;
pub mod read;
pub mod synth;
pub mod write;

pub use camtrap_core as core;
pub use error::{Error, Result};
