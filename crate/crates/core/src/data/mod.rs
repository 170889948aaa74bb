//! Datasets, loaders and client partitioners.

mod dataset;
pub mod idx;
pub mod partition;
pub mod synthetic;
pub mod tabular;

pub use dataset::{DataShard, Dataset};
pub use partition::{partition, PartitionScheme};
pub use synthetic::GaussianMixture;
