use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major array with shape metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[rows, last_dim]`.
    pub fn rows(&self) -> usize {
        if self.data.is_empty() {
            0
        } else {
            self.data.len() / self.last_dim()
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_shape(other.shape())?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(format!("expected {shape:?}, got {:?}", self.shape)));
        }
        Ok(())
    }

    pub fn row(&self, r: usize) -> &[T] {
        let d = self.last_dim();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        let d = self.last_dim();
        &mut self.data[r * d..(r + 1) * d]
    }

    /// Rows `start..end` of the `[rows, last_dim]` view as a new tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let d = self.last_dim();
        let mut shape = vec![end - start];
        shape.push(d);
        Self { shape, data: self.data[start * d..end * d].to_vec() }
    }

    /// Concatenates along the last axis; all inputs share the leading shape.
    pub fn concat_last(parts: &[&Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let rows = first.rows();
        let lead = &first.shape[..first.ndim().saturating_sub(1)];
        for p in parts {
            if p.rows() != rows || &p.shape[..p.ndim().saturating_sub(1)] != lead {
                return Err(Error::shape("concat inputs disagree on leading shape"));
            }
        }
        let width: usize = parts.iter().map(|p| p.last_dim()).sum();
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        Ok(Self { shape, data })
    }

    /// Inverse of [`Tensor::concat_last`] given the widths of each part.
    pub fn split_last(&self, widths: &[usize]) -> Result<Vec<Self>> {
        if widths.iter().sum::<usize>() != self.last_dim() {
            return Err(Error::shape("split widths do not add up to the last axis"));
        }
        let rows = self.rows();
        let lead = &self.shape[..self.ndim() - 1];
        let mut out: Vec<Self> = widths
            .iter()
            .map(|&w| {
                let mut shape = lead.to_vec();
                shape.push(w);
                Self { shape, data: Vec::with_capacity(rows * w) }
            })
            .collect();
        for r in 0..rows {
            let row = self.row(r);
            let mut off = 0;
            for (o, &w) in out.iter_mut().zip(widths) {
                o.data.extend_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| U::of(v.as_f64())).collect() }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }
}

/// `a[m,k] · b[k,n]`, either operand optionally transposed in storage.
///
/// With `trans_a` the slice `a` holds a `[k, m]` matrix; with `trans_b` the
/// slice `b` holds `[n, k]`. Result is accumulated into `out` when
/// `accumulate` is set, overwritten otherwise.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
    out: &mut [T],
    accumulate: bool,
) {
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    if !accumulate {
        out[..m * n].fill(T::zero());
    }
    T::gemm(m, k, n, T::one(), a, rsa, csa, b, rsb, csb, beta, out, n as isize, 1);
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.ndim() != 2 || b.ndim() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shape(format!("matmul {:?} x {:?}", a.shape, b.shape)));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(&a.data, &b.data, m, k, n, false, false, &mut out, false);
    Tensor::from_vec(&[m, n], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::<f64>::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.]).unwrap();
        let b = Tensor::<f64>::from_f64(&[3, 2], &[7., 8., 9., 10., 11., 12.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn transposed_gemm_matches() {
        // a^T stored as [k, m]
        let at = [1.0f32, 4., 2., 5., 3., 6.];
        let b = [7.0f32, 8., 9., 10., 11., 12.];
        let mut out = [0.0f32; 4];
        gemm(&at, &b, 2, 3, 2, true, false, &mut out, false);
        assert_eq!(out, [58., 64., 139., 154.]);
        gemm(&at, &b, 2, 3, 2, true, false, &mut out, true);
        assert_eq!(out, [116., 128., 278., 308.]);
    }

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::<f32>::from_f64(&[2, 1], &[1., 2.]).unwrap();
        let b = Tensor::<f32>::from_f64(&[2, 2], &[3., 4., 5., 6.]).unwrap();
        let c = Tensor::concat_last(&[&a, &b]).unwrap();
        assert_eq!(c.data(), &[1., 3., 4., 2., 5., 6.]);
        let parts = c.split_last(&[1, 2]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn from_vec_checks_len() {
        assert!(Tensor::<f32>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
    }
}
