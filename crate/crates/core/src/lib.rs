//! Loss-difference OOD detection on wild data.
//!
//! Wild samples are labeled as an extra class and trained jointly with
//! labeled ID data. Per-sample mean losses are split with 1-D k-means, and a
//! binary detector is trained on the recovered OOD candidates.

pub mod data;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod theory;

pub use data::{HardSplit, LabeledDataset, SplitSpec, WildSet};
pub use detector::{DetectorConfig, DetectorModel};
pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, Scenario};
pub use filter::{Assignment, BatchRatio, ClusterSplit, FilterConfig, LossTrace};
pub use metrics::MetricsReport;
pub use nn::{Network, OptimizerConfig};
pub use theory::{TheoryConfig, TheoryTrace};
