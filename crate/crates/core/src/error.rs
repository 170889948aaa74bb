use std::io;

use thiserror::Error;

use crate::model::ClientId;

#[derive(Debug, Error)]
pub enum Error {
    /// Vector lengths or model layouts disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A structural invariant (nesting, mask/model consistency) is violated.
    #[error("structural error: {0}")]
    Structural(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// An aggregation or dispatch rule was invoked outside its protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("client {client} holds increments from epoch {held}, server is at epoch {current}")]
    StaleIncrement { client: ClientId, held: u32, current: u32 },

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
