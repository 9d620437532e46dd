//! Deterministic simulation of DRAM decay and Rowhammer disturbance errors,
//! with the tooling to use the resulting bit flips as a physically
//! unclonable function.
//!
//! - [`dram`]: seeded device model (geometry, cell polarity, retention, susceptibility)
//! - [`pattern`]: hammer/PUF row interleaving and hammer access intervals
//! - [`engine`]: closed-form PUF queries
//! - [`metrics`]: flip sets, Jaccard robustness/uniqueness, entropy bounds
//! - [`fuzzy`]: code-offset fuzzy extractor over a repetition code
//! - [`experiments`]: evaluation sweeps and the calibration harness
//! - [`io`]: workspace layout and atomic file output

pub mod dram;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod fuzzy;
pub mod hash;
pub mod io;
pub mod metrics;
pub mod pattern;

pub use dram::{derive_device, CellPolarity, DramDevice, Geometry, ModelParams};
pub use engine::{simulate_decay_only, simulate_query, Measurement, PufConfig, QueryMode, QueryPlan};
pub use error::{Error, Result};
pub use metrics::{entropy_bits, extract_flip_set, jaccard, FlipSet, JaccardStats};
pub use pattern::{build_row_pattern, hammer_interval, RhType, RowPattern};
