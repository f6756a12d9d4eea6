use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

/// `x · W + b` over the last axis of `x`.
pub fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let (din, dout) = weight_dims(x, w)?;
    if let Some(b) = b {
        b.expect_shape(&[dout])?;
    }
    let rows = x.rows();
    let mut out = vec![T::zero(); rows * dout];
    if let Some(b) = b {
        for r in 0..rows {
            out[r * dout..(r + 1) * dout].copy_from_slice(b.data());
        }
    }
    gemm(x.data(), w.data(), rows, din, dout, false, false, &mut out, b.is_some());
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = dout;
    Tensor::from_vec(&shape, out)
}

/// Gradients of [`linear`]: `(dx, dW, db)`.
pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (din, dout) = weight_dims(x, w)?;
    let rows = x.rows();
    if dy.rows() != rows || dy.last_dim() != dout {
        return Err(Error::shape(format!("linear backward: dy {:?} vs x {:?}", dy.shape(), x.shape())));
    }
    let mut dx = vec![T::zero(); rows * din];
    gemm(dy.data(), w.data(), rows, dout, din, false, true, &mut dx, false);
    let mut dw = vec![T::zero(); din * dout];
    gemm(x.data(), dy.data(), din, rows, dout, true, false, &mut dw, false);
    let mut db = vec![T::zero(); dout];
    for r in 0..rows {
        for (acc, &g) in db.iter_mut().zip(dy.row(r)) {
            *acc += g;
        }
    }
    Ok((
        Tensor::from_vec(x.shape(), dx)?,
        Tensor::from_vec(&[din, dout], dw)?,
        Tensor::from_vec(&[dout], db)?,
    ))
}

fn weight_dims<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Result<(usize, usize)> {
    if w.ndim() != 2 || x.ndim() == 0 || x.last_dim() != w.shape()[0] {
        return Err(Error::shape(format!("linear: x {:?} with W {:?}", x.shape(), w.shape())));
    }
    Ok((w.shape()[0], w.shape()[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_example() {
        let x = Tensor::<f64>::from_f64(&[1, 2], &[1., 2.]).unwrap();
        let w = Tensor::from_f64(&[2, 2], &[1., 0., 0., 1.]).unwrap();
        let b = Tensor::from_f64(&[2], &[3., 4.]).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[4., 6.]);
        assert_eq!(linear(&x, &w, None).unwrap(), x);
    }

    #[test]
    fn zero_input_gives_bias() {
        let x = Tensor::<f32>::zeros(&[3, 2]);
        let w = Tensor::from_f64(&[2, 2], &[5., 6., 7., 8.]).unwrap();
        let b = Tensor::from_f64(&[2], &[3., 4.]).unwrap();
        assert_eq!(linear(&x, &w, Some(&b)).unwrap().data(), &[3., 4., 3., 4., 3., 4.]);
    }

    #[test]
    fn shape_mismatch() {
        let x = Tensor::<f32>::zeros(&[3, 3]);
        let w = Tensor::zeros(&[2, 2]);
        assert!(linear(&x, &w, None).is_err());
    }
}
