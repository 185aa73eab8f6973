//! A small evaluation interface so network forward passes are written once and
//! run either eagerly on tensors or traced on a [`Tape`].

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use super::NumericsError;

pub trait Ops {
    type V: Clone;

    fn constant(&mut self, t: Tensor) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, NumericsError>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, NumericsError>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, NumericsError>;
    fn add_row(&mut self, a: &Self::V, bias: &Self::V) -> Result<Self::V, NumericsError>;
    fn relu(&mut self, a: &Self::V) -> Result<Self::V, NumericsError>;
    fn tanh(&mut self, a: &Self::V) -> Result<Self::V, NumericsError>;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V, NumericsError>;
}

/// Plain tensor evaluation, no recording.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

fn finite(t: Tensor, op: &'static str) -> Result<Tensor, NumericsError> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(NumericsError::NonFinite(op))
    }
}

impl Ops for Eager {
    type V = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        finite(a.matmul(b)?, "matmul")
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        finite(a.add(b)?, "add")
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
        finite(a.mul(b)?, "mul")
    }

    fn add_row(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
        finite(a.add_row(bias)?, "add_row")
    }

    fn relu(&mut self, a: &Tensor) -> Result<Tensor, NumericsError> {
        Ok(a.relu())
    }

    fn tanh(&mut self, a: &Tensor) -> Result<Tensor, NumericsError> {
        Ok(a.tanh())
    }

    fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor, NumericsError> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        Tensor::concat_cols(&refs)
    }
}

impl Ops for Tape {
    type V = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        Tape::value(self, *v)
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        Tape::matmul(self, *a, *b)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        Tape::add(self, *a, *b)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var, NumericsError> {
        Tape::mul(self, *a, *b)
    }

    fn add_row(&mut self, a: &Var, bias: &Var) -> Result<Var, NumericsError> {
        Tape::add_row(self, *a, *bias)
    }

    fn relu(&mut self, a: &Var) -> Result<Var, NumericsError> {
        Tape::relu(self, *a)
    }

    fn tanh(&mut self, a: &Var) -> Result<Var, NumericsError> {
        Tape::tanh(self, *a)
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        Tape::concat_cols(self, parts)
    }
}
