//! Camera-trap dataset toolkit core.
//!
//! Pure, allocation-only building blocks: the unified record model and its
//! validation, the five-level taxonomy with rollup, geographic grid splitting,
//! dataset diagnostics, and scoring of externally produced predictions.
//! File formats, the command line and parallel drivers live in the `camtrap`
//! companion crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod eval;
pub mod geosplit;
pub mod ingest;
pub mod report;
pub mod stats;
pub mod taxonomy;
pub mod time;

pub use error::{Error, Result};
pub use ingest::{Deployment, ImageRecord, Source, SourceDescriptor, UnifiedDataset};
pub use report::{Issue, IssueKind, Severity, ValidationReport};
pub use taxonomy::{Level, RolledLabel, SpecialKind, TaxonRecord, TaxonomyTable};
pub use time::Timestamp;
