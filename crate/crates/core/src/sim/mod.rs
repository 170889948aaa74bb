//! Deterministic discrete-event simulation of semi-asynchronous federated
//! training with heterogeneous sub-models.
//!
//! Clients train on virtual time: a round costs a download, `T` local steps
//! and an upload whose duration follows the client's bandwidth tier. The
//! server aggregates every `delta_t` seconds (or behind a barrier for the
//! synchronous comparison rules), updates densities, rebuilds masks and hands
//! fresh sub-models to every idle client.

pub mod bandwidth;
pub mod config;
mod engine;
pub mod metrics;

pub use bandwidth::{round_time, BandwidthConfig, BandwidthProfile, Heterogeneity, Jitter, RoundTime};
pub use config::{DataConfig, DataSource, EsmTarget, ImsMode, ModelConfig, SimConfig, Timing};
pub use engine::{prepare, run, run_with_observer, training_rng, ClientStatus, Prepared, SimOutcome, TickSnapshot};
pub use metrics::{MetricsLog, MetricsRow};
