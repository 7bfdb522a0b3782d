//! Certificates and solvers for low-rank matrix completion under
//! deterministic sampling patterns.
//!
//! - [`obsgraph`]: observation patterns, degrees, connectivity and the
//!   graph profile.
//! - [`certify`]: incoherence, condition constants and theorem verdicts.
//! - [`solver`]: projections, singular value thresholding and the
//!   augmented Lagrangian completion solver.
//! - [`synth`]: random low-rank matrices, noise and block-model patterns.
//! - [`bench`]: the simulation harness.
//! - [`ingest`]: rating-file parsing and real-versus-random comparisons.
//! - [`io`]: Matrix Market and CSV readers and writers.

pub mod certify;
pub mod error;
pub mod io;
pub mod obsgraph;
pub mod solver;
mod svd;
pub mod synth;
pub mod bench;
pub mod ingest;

pub use error::{Error, Result};
pub use obsgraph::{GraphProfile, ObservationPattern, PatternMode};
