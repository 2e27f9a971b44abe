//! Wall-clock benchmarks for window aggregation and the attention mechanisms
//! built on it, with CSV and JSON output.

pub mod error;
pub mod record;
pub mod scenarios;
pub mod timing;

pub use error::{BenchError, Result};
pub use record::{write_csv, write_outputs, BenchRecord, Mechanism, Scenario, CSV_HEADER, SCHEMA_VERSION};
pub use scenarios::{fit_complexity, loglog_slope, run, AttentionStack, BenchPlan, ComplexityFit};
pub use timing::{ensure_single_threaded, Timing};
