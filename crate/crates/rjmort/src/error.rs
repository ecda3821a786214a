use thiserror::Error;

use crate::params::BlockId;

/// Errors surfaced by the modelling and inference layers.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Structural problems in the data (shape mismatches, deaths without exposure, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A model configuration outside the catalog, or a malformed config string.
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),

    /// An operation referenced a parameter block that the configuration does not activate.
    #[error("block {0} is not active under this configuration")]
    InactiveBlock(BlockId),

    /// The age-profile bridge is undefined when the first entry is (numerically) zero.
    #[error("singular bridge: |b_1| <= 1e-8")]
    SingularBridge,
}

pub type Result<T> = std::result::Result<T, CoreError>;
