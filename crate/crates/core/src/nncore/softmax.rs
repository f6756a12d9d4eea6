use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// `softmax(x / tau)` along `axis`, stabilized by max subtraction.
pub fn softmax_with_temperature<T: Real>(x: &Tensor<T>, tau: T, axis: usize) -> Result<Tensor<T>> {
    if !(tau > T::zero()) {
        return Err(Error::invalid(format!("softmax temperature must be positive, got {tau}")));
    }
    if axis >= x.ndim() {
        return Err(Error::shape(format!("axis {axis} out of range for {:?}", x.shape())));
    }
    let n = x.shape()[axis];
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer: usize = x.shape()[..axis].iter().product();
    let mut out = x.clone();
    let data = out.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| o * n * inner + j * inner + i;
            let max = (0..n).map(|j| data[at(j)]).fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for j in 0..n {
                let e = ((data[at(j)] - max) / tau).exp();
                data[at(j)] = e;
                total += e;
            }
            for j in 0..n {
                data[at(j)] /= total;
            }
        }
    }
    Ok(out)
}

/// In-place softmax of a single row. Entries equal to `-inf` get zero mass;
/// a row that is entirely `-inf` becomes all zeros.
pub fn softmax_row_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::neg_infinity() {
        row.fill(T::zero());
        return;
    }
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Backward of a row softmax given its output `p`: `p ⊙ (dp − Σ dp·p)`.
pub fn softmax_row_backward<T: Real>(p: &[T], dp: &[T], out: &mut [T]) {
    let dot: T = p.iter().zip(dp).map(|(&a, &b)| a * b).sum();
    for ((o, &pi), &gi) in out.iter_mut().zip(p).zip(dp) {
        *o = pi * (gi - dot);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form() {
        let x = Tensor::<f64>::from_f64(&[2], &[0.0, 3f64.ln()]).unwrap();
        let y = softmax_with_temperature(&x, 1.0, 0).unwrap();
        assert!((y.data()[0] - 0.25).abs() < 1e-12);
        assert!((y.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn uniform_stays_uniform() {
        let x = Tensor::<f64>::full(&[5], 2.5);
        for tau in [0.1, 0.25, 1.0, 7.0] {
            let y = softmax_with_temperature(&x, tau, 0).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
        }
    }

    #[test]
    fn lower_temperature_is_peakier() {
        let x = Tensor::<f64>::from_f64(&[2], &[0.0, 1.0]).unwrap();
        let sharp = softmax_with_temperature(&x, 0.25, 0).unwrap();
        let soft = softmax_with_temperature(&x, 1.0, 0).unwrap();
        assert!(sharp.data()[1] > soft.data()[1]);
    }

    #[test]
    fn inner_axis() {
        // softmax down the columns of a 2x2
        let x = Tensor::<f64>::from_f64(&[2, 2], &[0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = softmax_with_temperature(&x, 1.0, 0).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_tau() {
        let x = Tensor::<f64>::zeros(&[3]);
        assert!(softmax_with_temperature(&x, 0.0, 0).is_err());
        assert!(softmax_with_temperature(&x, -1.0, 0).is_err());
    }

    #[test]
    fn masked_row() {
        let mut row = [f64::NEG_INFINITY; 3];
        softmax_row_in_place(&mut row);
        assert_eq!(row, [0.0; 3]);
        let mut row = [0.0, f64::NEG_INFINITY, 0.0];
        softmax_row_in_place(&mut row);
        assert_eq!(row, [0.5, 0.0, 0.5]);
    }
}
