use super::tensor::Tensor;
use crate::error::Result;
use crate::real::Real;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Saved activations for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<T>,
}

/// Normalizes each row of the last axis, then applies `gamma`, `beta`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.last_dim();
    gamma.expect_shape(&[d])?;
    beta.expect_shape(&[d])?;
    let eps = T::of(LAYER_NORM_EPS);
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut xhat = x.clone();
    let mut out = x.clone();
    let mut rstd = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * rs;
        }
        rstd.push(rs);
        let (xh, o) = (xhat.row(r), out.row_mut(r));
        for i in 0..d {
            o[i] = xh[i] * gamma.data()[i] + beta.data()[i];
        }
    }
    Ok((out, LayerNormCache { xhat, rstd }))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    dy.expect_shape(cache.xhat.shape())?;
    let d = dy.last_dim();
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = vec![T::zero(); d];
    let mut dbeta = vec![T::zero(); d];
    let mut dxhat = vec![T::zero(); d];
    for r in 0..dy.rows() {
        let (g, xh) = (dy.row(r), cache.xhat.row(r));
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for i in 0..d {
            dgamma[i] += g[i] * xh[i];
            dbeta[i] += g[i];
            dxhat[i] = g[i] * gamma.data()[i];
            mean_dxhat += dxhat[i];
            mean_dxhat_xhat += dxhat[i] * xh[i];
        }
        mean_dxhat *= inv_d;
        mean_dxhat_xhat *= inv_d;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for i in 0..d {
            out[i] = rs * (dxhat[i] - mean_dxhat - xh[i] * mean_dxhat_xhat);
        }
    }
    Ok((dx, Tensor::from_vec(&[d], dgamma)?, Tensor::from_vec(&[d], dbeta)?))
}
