//! Channels-last (NHWC) convolution and pooling.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    pub fn out_size(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid("conv kernel and stride must be positive"));
        }
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::shape(format!("{h}x{w} input too small for kernel {}", self.kernel)));
        }
        Ok(())
    }
}

/// The unfolded input kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Conv2dCache<T> {
    cols: Vec<T>,
    input_shape: [usize; 4],
    out_hw: (usize, usize),
}

fn dims4<T: Real>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match x.shape() {
        &[n, h, w, c] => Ok([n, h, w, c]),
        s => Err(Error::shape(format!("expected NHWC tensor, got {s:?}"))),
    }
}

/// `weight` is `[kernel·kernel·c_in, c_out]` in (ky, kx, c_in) row order.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    spec: Conv2dSpec,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    let [n, h, w, cin] = dims4(x)?;
    spec.validate(h, w)?;
    let patch = spec.kernel * spec.kernel * cin;
    if weight.ndim() != 2 || weight.shape()[0] != patch {
        return Err(Error::shape(format!("conv weight {:?} for patch size {patch}", weight.shape())));
    }
    let cout = weight.shape()[1];
    bias.expect_shape(&[cout])?;
    let (ho, wo) = (spec.out_size(h), spec.out_size(w));
    let rows = n * ho * wo;

    let mut cols = vec![T::zero(); rows * patch];
    let src = x.data();
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = ((b * ho + oy) * wo + ox) * patch;
                for ky in 0..spec.kernel {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..spec.kernel {
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let s = ((b * h + iy as usize) * w + ix as usize) * cin;
                        let d = row + (ky * spec.kernel + kx) * cin;
                        cols[d..d + cin].copy_from_slice(&src[s..s + cin]);
                    }
                }
            }
        }
    }

    let mut out = vec![T::zero(); rows * cout];
    for r in 0..rows {
        out[r * cout..(r + 1) * cout].copy_from_slice(bias.data());
    }
    gemm(&cols, weight.data(), rows, patch, cout, false, false, &mut out, true);
    Ok((
        Tensor::from_vec(&[n, ho, wo, cout], out)?,
        Conv2dCache { cols, input_shape: [n, h, w, cin], out_hw: (ho, wo) },
    ))
}

/// Returns `(dx, dweight, dbias)`; `dx` is skipped when `need_dx` is false.
pub fn conv2d_backward<T: Real>(
    cache: &Conv2dCache<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    spec: Conv2dSpec,
    need_dx: bool,
) -> Result<(Option<Tensor<T>>, Tensor<T>, Tensor<T>)> {
    let [n, h, w, cin] = cache.input_shape;
    let (ho, wo) = cache.out_hw;
    let patch = spec.kernel * spec.kernel * cin;
    let cout = weight.shape()[1];
    dy.expect_shape(&[n, ho, wo, cout])?;
    let rows = n * ho * wo;

    let mut dw = vec![T::zero(); patch * cout];
    gemm(&cache.cols, dy.data(), patch, rows, cout, true, false, &mut dw, false);
    let mut db = vec![T::zero(); cout];
    for r in 0..rows {
        for (acc, &g) in db.iter_mut().zip(dy.row(r)) {
            *acc += g;
        }
    }

    let dx = if need_dx {
        let mut dcols = vec![T::zero(); rows * patch];
        gemm(dy.data(), weight.data(), rows, cout, patch, false, true, &mut dcols, false);
        let mut dx = vec![T::zero(); n * h * w * cin];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * patch;
                    for ky in 0..spec.kernel {
                        let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..spec.kernel {
                            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let d = ((b * h + iy as usize) * w + ix as usize) * cin;
                            let s = row + (ky * spec.kernel + kx) * cin;
                            for c in 0..cin {
                                dx[d + c] += dcols[s + c];
                            }
                        }
                    }
                }
            }
        }
        Some(Tensor::from_vec(&[n, h, w, cin], dx)?)
    } else {
        None
    };
    Ok((dx, Tensor::from_vec(&[patch, cout], dw)?, Tensor::from_vec(&[cout], db)?))
}

/// Max pooling without padding. The cache holds the flat input index chosen
/// for each output element.
pub fn max_pool2d<T: Real>(
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, h, w, c] = dims4(x)?;
    let spec = Conv2dSpec { kernel, stride, padding: 0 };
    spec.validate(h, w)?;
    let (ho, wo) = (spec.out_size(h), spec.out_size(w));
    let mut out = Vec::with_capacity(n * ho * wo * c);
    let mut argmax = Vec::with_capacity(out.capacity());
    let src = x.data();
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let at = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if src[at] > best {
                                best = src[at];
                                best_at = at;
                            }
                        }
                    }
                    out.push(best);
                    argmax.push(best_at);
                }
            }
        }
    }
    Ok((Tensor::from_vec(&[n, ho, wo, c], out)?, argmax))
}

pub fn max_pool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    if dy.len() != argmax.len() {
        return Err(Error::shape("max pool backward: gradient does not match cache"));
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&at, &g) in argmax.iter().zip(dy.data()) {
        dx.data_mut()[at] += g;
    }
    Ok(dx)
}

/// `[N, H, W, C] -> [N, C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, h, w, c] = dims4(x)?;
    let inv = T::one() / T::from_usize(h * w).unwrap();
    let mut out = vec![T::zero(); n * c];
    for b in 0..n {
        for p in 0..h * w {
            let s = (b * h * w + p) * c;
            for ch in 0..c {
                out[b * c + ch] += x.data()[s + ch];
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::from_vec(&[n, c], out)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let &[n, h, w, c] = input_shape else {
        return Err(Error::shape("global pool backward expects an NHWC shape"));
    };
    dy.expect_shape(&[n, c])?;
    let inv = T::one() / T::from_usize(h * w).unwrap();
    let mut dx = Tensor::zeros(input_shape);
    for b in 0..n {
        for p in 0..h * w {
            let d = (b * h * w + p) * c;
            for ch in 0..c {
                dx.data_mut()[d + ch] = dy.data()[b * c + ch] * inv;
            }
        }
    }
    Ok(dx)
}
