//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in creation order. Inputs always precede
//! the nodes that consume them, so [`Tape::backward`] can visit nodes in exact
//! reverse order and accumulate adjoints in a single sweep.

use super::tensor::{matmul_into, Tensor};
use super::NumericsError;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Sum(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Clamp(Var, f64, f64),
    Minimum(Var, Var),
    GatherCols(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Square(..) => "square",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::LogSoftmaxRows(..) => "log_softmax_rows",
            Op::Sum(..) => "sum",
            Op::SumCols(..) => "sum_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Clamp(..) => "clamp",
            Op::Minimum(..) => "minimum",
            Op::GatherCols(..) => "gather_cols",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// The adjoint of `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Tensor {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => {
                let shape = &self.shapes[v.0];
                Tensor::new(shape.clone(), vec![0.0; shape.iter().product()])
                    .expect("shape product matches")
            }
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let shape = &self.shapes[v.0];
                Tensor::new(shape.clone(), vec![0.0; shape.iter().product()])
                    .expect("shape product matches")
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Registers a parameter or constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var, NumericsError> {
        if !value.is_finite() {
            return Err(NumericsError::NonFinite(op.name()));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, v: Var) -> Result<(), NumericsError> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(NumericsError::UnknownNode(v.0))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add(self.value(b))?;
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).sub(self.value(b))?;
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).mul(self.value(b))?;
        self.push(value, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).add_row(self.value(bias))?;
        self.push(value, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).scale(c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|v| v + c);
        self.push(value, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).relu();
        self.push(value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).tanh();
        self.push(value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(f64::ln);
        self.push(value, Op::Log(a))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).softmax_rows()?;
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).log_softmax_rows()?;
        self.push(value, Op::LogSoftmaxRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, NumericsError> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Row sums: `[m, n]` to `[m, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (m, _) = t.dims2()?;
        let sums: Vec<f64> = (0..m).map(|r| t.row_slice(r).iter().sum()).collect();
        self.push(Tensor::column(&sums), Op::SumCols(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        for &p in parts {
            self.check(p)?;
        }
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&values)?;
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, NumericsError> {
        let value = self.value(a).slice_cols(start, end)?;
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var, NumericsError> {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(value, Op::Clamp(a, lo, hi))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let value = self.value(a).zip_map(self.value(b), f64::min)?;
        self.push(value, Op::Minimum(a, b))
    }

    /// Picks entry `index[r]` from row `r`: `[m, n]` to `[m, 1]`.
    pub fn gather_cols(&mut self, a: Var, index: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a);
        let (m, n) = t.dims2()?;
        if index.len() != m || index.iter().any(|&i| i >= n) {
            return Err(NumericsError::Shape(format!(
                "gather of {} indices from [{m}, {n}]",
                index.len()
            )));
        }
        let picked: Vec<f64> = index.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        self.push(Tensor::column(&picked), Op::GatherCols(a, index.to_vec()))
    }

    /// Reverse accumulation from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        self.check(loss)?;
        let loss_value = self.value(loss);
        if loss_value.len() != 1 {
            return Err(NumericsError::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(loss_value.shape().to_vec(), vec![1.0])?);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) -> Result<(), NumericsError> {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2()?;
                let n = bv.cols();
                // dA = G · Bᵀ, dB = Aᵀ · G
                let bt = bv.transpose()?;
                let mut da = vec![0.0; m * k];
                matmul_into(g.data(), bt.data(), &mut da, m, n, k);
                let at = av.transpose()?;
                let mut db = vec![0.0; k * n];
                matmul_into(at.data(), g.data(), &mut db, k, m, n);
                accumulate(grads, *a, Tensor::new(vec![m, k], da)?)?;
                accumulate(grads, *b, Tensor::new(vec![k, n], db)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.mul(self.value(*b))?)?;
                accumulate(grads, *b, g.mul(self.value(*a))?)?;
            }
            Op::AddRow(a, bias) => {
                accumulate(grads, *a, g.clone())?;
                let (m, n) = g.dims2()?;
                let mut db = vec![0.0; n];
                for r in 0..m {
                    for (d, v) in db.iter_mut().zip(g.row_slice(r)) {
                        *d += v;
                    }
                }
                accumulate(grads, *bias, Tensor::row(&db))?;
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.scale(*c))?,
            Op::AddScalar(a) => accumulate(grads, *a, g.clone())?,
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, g.zip_map(x, |gv, xv| if xv > 0.0 { gv } else { 0.0 })?)?;
            }
            Op::Tanh(a) => {
                accumulate(grads, *a, g.zip_map(out, |gv, y| gv * (1.0 - y * y))?)?;
            }
            Op::Exp(a) => accumulate(grads, *a, g.mul(out)?)?,
            Op::Log(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |gv, x| gv / x)?)?;
            }
            Op::Softplus(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |gv, x| gv * sigmoid(x))?)?;
            }
            Op::Square(a) => {
                accumulate(grads, *a, g.zip_map(self.value(*a), |gv, x| 2.0 * gv * x)?)?;
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = out.dims2()?;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        d[r * n + c] = y[c] * (gr[c] - dot);
                    }
                }
                accumulate(grads, *a, Tensor::new(vec![m, n], d)?)?;
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = out.dims2()?;
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    let y = out.row_slice(r);
                    let gr = g.row_slice(r);
                    let total: f64 = gr.iter().sum();
                    for c in 0..n {
                        d[r * n + c] = gr[c] - y[c].exp() * total;
                    }
                }
                accumulate(grads, *a, Tensor::new(vec![m, n], d)?)?;
            }
            Op::Sum(a) => {
                let gv = g.item()?;
                let shape = self.value(*a).shape().to_vec();
                let n = self.value(*a).len();
                accumulate(grads, *a, Tensor::new(shape, vec![gv; n])?)?;
            }
            Op::SumCols(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut d = Vec::with_capacity(m * n);
                for r in 0..m {
                    d.extend(std::iter::repeat_n(g.data()[r], n));
                }
                accumulate(grads, *a, Tensor::new(vec![m, n], d)?)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    accumulate(grads, *p, g.slice_cols(start, start + w)?)?;
                    start += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (m, n) = self.value(*a).dims2()?;
                let w = g.cols();
                let mut d = vec![0.0; m * n];
                for r in 0..m {
                    d[r * n + start..r * n + start + w].copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *a, Tensor::new(vec![m, n], d)?)?;
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    g.zip_map(x, |gv, xv| if xv >= *lo && xv <= *hi { gv } else { 0.0 })?,
                )?;
            }
            Op::Minimum(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let mask = av.zip_map(bv, |x, y| if x <= y { 1.0 } else { 0.0 })?;
                accumulate(grads, *a, g.mul(&mask)?)?;
                accumulate(grads, *b, g.zip_map(&mask, |gv, m| gv * (1.0 - m))?)?;
            }
            Op::GatherCols(a, index) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut d = vec![0.0; m * n];
                for (r, &c) in index.iter().enumerate() {
                    d[r * n + c] = g.data()[r];
                }
                accumulate(grads, *a, Tensor::new(vec![m, n], d)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) -> Result<(), NumericsError> {
    match &mut grads[v.0] {
        Some(existing) => {
            existing.same_shape(&g)?;
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
    Ok(())
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient() {
        let mut tape = Tape::new();
        let w = tape.leaf(Tensor::row(&[1.0, 1.0]));
        let x = tape.leaf(Tensor::column(&[2.0, 3.0]));
        let y = tape.matmul(w, x).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(w).data(), &[2.0, 3.0]);
    }

    #[test]
    fn stationary_point_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        let t = tape.tanh(x).unwrap();
        let loss = tape.square(t).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).data(), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 2));
        assert!(matches!(tape.backward(x), Err(NumericsError::NotScalar(_))));
        assert!(matches!(tape.backward(Var(99)), Err(NumericsError::UnknownNode(99))));
    }

    #[test]
    fn non_finite_values_are_an_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(0.0));
        assert!(matches!(tape.log(x), Err(NumericsError::NonFinite("log"))));
    }

    #[test]
    fn shared_inputs_accumulate() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let z = tape.add(y, x).unwrap();
        let grads = tape.backward(z).unwrap();
        assert_eq!(grads.get(x).data(), &[7.0]);
    }
}
