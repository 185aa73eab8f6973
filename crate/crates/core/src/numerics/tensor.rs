//! Dense row-major `f64` tensors.
//!
//! Every operation used by the networks works on rank-2 tensors; vectors are
//! `[1, n]` rows and scalars are `[1, 1]`. The only broadcast is a `[1, n]`
//! bias row added to every row of an `[m, n]` matrix.

use serde::{Deserialize, Serialize};

use super::NumericsError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumericsError::Shape(format!(
                "shape {:?} holds {} values but {} were given",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NumericsError> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(NumericsError::Shape("ragged rows".into()));
        }
        Self::new(vec![m, n], rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { shape: vec![rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self { shape: vec![rows, cols], data: vec![value; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1, 1], data: vec![value] }
    }

    pub fn row(values: &[f64]) -> Self {
        Self { shape: vec![1, values.len()], data: values.to_vec() }
    }

    /// A `[rows, 1]` column.
    pub fn column(values: &[f64]) -> Self {
        Self { shape: vec![values.len(), 1], data: values.to_vec() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub(crate) fn dims2(&self) -> Result<(usize, usize), NumericsError> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(NumericsError::Shape(format!("expected a matrix, got shape {other:?}"))),
        }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let n = self.cols();
        &self.data[r * n..(r + 1) * n]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> Result<f64, NumericsError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(NumericsError::NotScalar(self.shape.clone()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, NumericsError> {
        self.same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub(crate) fn same_shape(&self, other: &Self) -> Result<(), NumericsError> {
        if self.shape != other.shape {
            return Err(NumericsError::Shape(format!(
                "shape mismatch {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self, NumericsError> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(NumericsError::Shape(format!(
                "matmul inner dimensions differ: [{m}, {k}] x [{k2}, {n}]"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Self { shape: vec![m, n], data: out })
    }

    pub fn transpose(&self) -> Result<Self, NumericsError> {
        let (m, n) = self.dims2()?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Self { shape: vec![n, m], data: out })
    }

    pub fn add(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self, NumericsError> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| v * c)
    }

    /// Adds a `[1, n]` bias row to every row.
    pub fn add_row(&self, bias: &Self) -> Result<Self, NumericsError> {
        let (m, n) = self.dims2()?;
        let (br, bn) = bias.dims2()?;
        if br != 1 || bn != n {
            return Err(NumericsError::Shape(format!(
                "bias of shape [{br}, {bn}] cannot be added to rows of [{m}, {n}]"
            )));
        }
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub fn softmax_rows(&self) -> Result<Self, NumericsError> {
        let (_, n) = self.dims2()?;
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn log_softmax_rows(&self) -> Result<Self, NumericsError> {
        let (_, n) = self.dims2()?;
        let mut data = self.data.clone();
        for row in data.chunks_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(Self { shape: self.shape.clone(), data })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn concat_cols(parts: &[&Self]) -> Result<Self, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::Shape("concat of zero tensors".into()))?;
        let m = first.dims2()?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pm, pn) = p.dims2()?;
            if pm != m {
                return Err(NumericsError::Shape(format!(
                    "concat row counts differ: {m} vs {pm}"
                )));
            }
            widths.push(pn);
        }
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data[r * w..(r + 1) * w]);
            }
        }
        Ok(Self { shape: vec![m, n], data })
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self, NumericsError> {
        let (m, n) = self.dims2()?;
        if start > end || end > n {
            return Err(NumericsError::Shape(format!(
                "column range {start}..{end} outside width {n}"
            )));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&self.data[r * n + start..r * n + end]);
        }
        Ok(Self { shape: vec![m, w], data })
    }

    /// Stacks `[1, n]`-compatible rows into an `[m, n]` matrix.
    pub fn stack_rows(parts: &[&Self]) -> Result<Self, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::Shape("stack of zero tensors".into()))?;
        let n = first.dims2()?.1;
        let mut data = Vec::new();
        let mut m = 0;
        for p in parts {
            let (pm, pn) = p.dims2()?;
            if pn != n {
                return Err(NumericsError::Shape(format!("stack widths differ: {n} vs {pn}")));
            }
            m += pm;
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: vec![m, n], data })
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64, NumericsError> {
        self.same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `out += a[m×k] · b[k×n]`, i-k-j order so the inner loop is contiguous.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
        let (m, k) = (a.rows(), a.cols());
        let n = b.cols();
        let mut out = Tensor::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a.get(i, p) * b.get(p, j);
                }
                out.data_mut()[i * n + j] = s;
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
        Tensor::new(vec![m, n], (0..m * n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_zero() {
        let i = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap();
        assert_eq!(i.matmul(&x).unwrap(), x);
        let a = Tensor::row(&[1.0, 2.0]);
        let z = Tensor::column(&[0.0, 0.0]);
        assert_eq!(a.matmul(&z).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        assert!(a.matmul(&b).unwrap().max_abs_diff(&triple_loop(&a, &b)).unwrap() <= 1e-12);
        for _ in 0..40 {
            let (m, k, n) =
                (rng.random_range(1..=64), rng.random_range(1..=64), rng.random_range(1..=64));
            let a = random(&mut rng, m, k);
            let b = random(&mut rng, k, n);
            let diff = a.matmul(&b).unwrap().max_abs_diff(&triple_loop(&a, &b)).unwrap();
            assert!(diff <= 1e-12, "{m}x{k}x{n}: {diff}");
        }
    }

    #[test]
    fn matmul_shape_mismatch_is_an_error() {
        let a = Tensor::zeros(2, 3);
        let b = Tensor::zeros(2, 3);
        assert!(matches!(a.matmul(&b), Err(NumericsError::Shape(_))));
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(Tensor::row(&[-1.0, 0.0, 2.0]).relu().data(), &[0.0, 0.0, 2.0]);
        assert_eq!(Tensor::row(&[0.0]).tanh().data(), &[0.0]);
        assert_eq!(Tensor::row(&[0.0, 0.0]).softmax_rows().unwrap().data(), &[0.5, 0.5]);
        assert!(Tensor::zeros(1, 2).add(&Tensor::zeros(2, 1)).is_err());
    }

    #[test]
    fn construction_checks_element_count() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
