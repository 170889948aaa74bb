//! Asynchronous, model-heterogeneous federated learning with gradual model
//! restoration.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`] and [`data`]: flat-parameter models, datasets, partitioners
//!   and masked local SGD.
//! - [`pruning`]: importance scores and nested sub-model extraction.
//! - [`density`]: the two-stage density controller (round-time equalisation,
//!   then plateau-triggered restoration along a density ladder).
//! - [`aggregation`]: buffered mask-aware aggregation, the GA/FA comparison
//!   rules and coverage bookkeeping.
//! - [`ims`]: incremental model splitting for server-to-client transfers.
//! - [`sim`]: the deterministic discrete-event engine tying it all together.
//! - [`diagnostics`] and [`checkpoint`]: post-run analysis and model dumps.
//! - [`experiments`]: canned experiment drivers shared by the CLI and tests.

pub mod aggregation;
pub mod checkpoint;
pub mod data;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod experiments;
pub mod ims;
pub mod model;
pub mod pruning;
pub mod rng;
pub mod sim;

pub use error::{Error, Result};
pub use model::{ClientId, Mask, ModelSpec, ParamVector};
