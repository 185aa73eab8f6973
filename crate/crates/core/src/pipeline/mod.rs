//! The pipelined actor: stages advance together once per tick, each reading
//! buffers its inputs wrote on the previous tick.

mod actor;
mod params;
mod topology;

pub use actor::{
    advance, advance_with, mask_connections, reset, reset_rows, reset_with, ActorState,
    DropoutMasks, EdgeMask, ResetMode,
};
pub use params::{Dense, PipelineParams, StageParams};
pub use topology::{
    normalize_edges, Activation, Edge, EdgeKind, ExecTime, PipelineTopology, StageSpec, Variant,
};

use thiserror::Error;

use crate::numerics::NumericsError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("invalid topology: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad connection mask: {0}")]
    Mask(String),
    #[error("topology text: {0}")]
    Serde(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}
