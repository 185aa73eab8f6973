//! Dense linear algebra and reverse-mode differentiation sized for small MLP
//! stages unrolled through time.

mod backend;
pub mod distributions;
pub mod optim;
mod rng;
mod tape;
mod tensor;

pub use backend::{Eager, Ops};
pub use optim::{clip_global_norm, Adam};
pub use rng::{fnv1a, Rng, RngStream};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub(crate) use tensor::matmul_into;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("loss must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("node {0} is not on the tape")]
    UnknownNode(usize),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
