use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(dy, |v, g| if v > T::zero() { g } else { T::zero() })
}

const GELU_C: f64 = 0.044715;

// sqrt(2/pi)
const GELU_K: f64 = 0.797_884_560_802_865_4;

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, k, half) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5));
    x.map(|v| half * v * (T::one() + (k * (v + c * v * v * v)).tanh()))
}

pub fn gelu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, k, half) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5));
    let three = T::of(3.0);
    x.zip_map(dy, |v, g| {
        let t = (k * (v + c * v * v * v)).tanh();
        let dt = k * (T::one() + three * c * v * v) * (T::one() - t * t);
        g * half * (T::one() + t + v * dt)
    })
}

/// Inverted dropout. Returns the output and the keep-mask scaling that the
/// backward pass multiplies into the upstream gradient.
pub fn dropout<T: Real, R: Rng>(
    x: &Tensor<T>,
    rate: f64,
    train: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !train || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut out = x.clone();
    for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
        *o *= m;
    }
    Ok((out, Some(mask)))
}

pub fn dropout_backward<T: Real>(dy: &Tensor<T>, mask: Option<&[T]>) -> Tensor<T> {
    match mask {
        None => dy.clone(),
        Some(mask) => {
            let mut dx = dy.clone();
            for (g, &m) in dx.data_mut().iter_mut().zip(mask) {
                *g *= m;
            }
            dx
        }
    }
}
