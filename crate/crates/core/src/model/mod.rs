//! Flat-parameter models and masked local training.

pub mod nn;
mod params;
mod spec;
pub mod train;

pub use nn::{forward_loss, loss_and_grad, Batch, LossEval};
pub use params::{ClientId, Mask, ParamVector};
pub use spec::{LayerLayout, ModelKind, ModelSpec};
pub use train::{masked_sgd_steps, masked_sgd_trace, LocalTrainConfig, LocalUpdate, Sampling};

use crate::data::Dataset;
use crate::error::Result;

/// Loss and accuracy of `model` over a whole dataset.
pub fn evaluate(model: &ParamVector, spec: &ModelSpec, data: &Dataset) -> Result<(f64, f64)> {
    let eval = forward_loss(model, spec, data.batch())?;
    Ok((eval.loss, eval.accuracy(data.len())))
}
