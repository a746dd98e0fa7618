//! Exact k-means with a cover-tree accelerated assignment step, a hybrid
//! that hands tree-derived bounds to Hamerly's algorithm, the usual
//! baselines, and instrumentation for counting distance evaluations.

pub mod bench;
pub mod bounds;
pub mod cover;
pub mod covertree;
pub mod data;
pub mod error;
pub mod hybrid;
pub mod kmeans;
pub mod oracle;
pub mod run;
pub mod synth;

pub use cover::{CoverMeans, ExportedBounds};
pub use covertree::{CoverTree, TreeConfig};
pub use data::{counted_distance, distance, load_dataset, CsvOptions, Dataset, DistanceCounter};
pub use error::{Error, Result};
pub use hybrid::{Hybrid, HybridConfig};
pub use kmeans::{Assignment, ClusterState};
pub use run::{run, run_observed, Algorithm, RunConfig, RunMetrics, RunResult};
