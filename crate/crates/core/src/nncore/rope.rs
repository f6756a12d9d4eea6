//! 2D rotary embedding with learnable mixed frequencies.
//!
//! Channel pair `i` of head `h` at position `p` is rotated by
//! `θ = fx[h][i]·p.x + fy[h][i]·p.y`. Because the angle is linear in the
//! position, the dot product of a rotated query and key depends only on the
//! difference of their positions.

use std::f64::consts::TAU;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geometry::NormalizedPosition;
use crate::real::Real;

/// Lowest and highest initial frequency, in cycles per page.
pub const ROPE_MIN_CYCLES: f64 = 1.0;
pub const ROPE_MAX_CYCLES: f64 = 20.0;

/// Per-head frequencies, each `[heads, head_dim / 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RopeFrequencies<T> {
    pub fx: Tensor<T>,
    pub fy: Tensor<T>,
}

impl<T: Real> RopeFrequencies<T> {
    /// Axial start: the first half of the pairs turn with x only, the rest
    /// with y only, each half on a geometric ladder from 2π·1 to 2π·20.
    pub fn axial(heads: usize, head_dim: usize) -> Result<Self> {
        if !head_dim.is_multiple_of(2) || head_dim == 0 {
            return Err(Error::invalid(format!("rope head_dim must be even, got {head_dim}")));
        }
        let pairs = head_dim / 2;
        let nx = pairs.div_ceil(2);
        let ny = pairs - nx;
        let ladder = |j: usize, count: usize| -> f64 {
            if count <= 1 {
                TAU * ROPE_MIN_CYCLES
            } else {
                let ratio = ROPE_MAX_CYCLES / ROPE_MIN_CYCLES;
                TAU * ROPE_MIN_CYCLES * ratio.powf(j as f64 / (count - 1) as f64)
            }
        };
        let mut fx = Tensor::zeros(&[heads, pairs]);
        let mut fy = Tensor::zeros(&[heads, pairs]);
        for h in 0..heads {
            for i in 0..pairs {
                if i < nx {
                    fx.data_mut()[h * pairs + i] = T::of(ladder(i, nx));
                } else {
                    fy.data_mut()[h * pairs + i] = T::of(ladder(i - nx, ny));
                }
            }
        }
        Ok(Self { fx, fy })
    }

    pub fn heads(&self) -> usize {
        self.fx.shape()[0]
    }

    pub fn pairs(&self) -> usize {
        self.fx.shape()[1]
    }
}

fn check(
    shape: &[usize],
    positions: &[NormalizedPosition],
    fx: &Tensor<impl Real>,
    fy: &Tensor<impl Real>,
) -> Result<(usize, usize, usize)> {
    let &[s, heads, head_dim] = shape else {
        return Err(Error::shape(format!("rope expects [S, heads, head_dim], got {shape:?}")));
    };
    if head_dim % 2 != 0 {
        return Err(Error::invalid(format!("rope head_dim must be even, got {head_dim}")));
    }
    if positions.len() != s {
        return Err(Error::shape(format!("{} positions for {s} tokens", positions.len())));
    }
    let want = [heads, head_dim / 2];
    if fx.shape() != want || fy.shape() != want {
        return Err(Error::shape(format!("rope frequencies must be {want:?}")));
    }
    Ok((s, heads, head_dim))
}

/// Rotates consecutive channel pairs of `x` (`[S, heads, head_dim]`).
pub fn rope_mixed_rotate<T: Real>(
    x: &Tensor<T>,
    positions: &[NormalizedPosition],
    freqs: &RopeFrequencies<T>,
) -> Result<Tensor<T>> {
    let (s, heads, head_dim) = check(x.shape(), positions, &freqs.fx, &freqs.fy)?;
    let mut out = x.clone();
    rotate_rows(out.data_mut(), s, heads, head_dim, positions, &freqs.fx, &freqs.fy);
    Ok(out)
}

/// In-place rotation over a flat `[S, heads·head_dim]` buffer.
pub(crate) fn rotate_rows<T: Real>(
    data: &mut [T],
    s: usize,
    heads: usize,
    head_dim: usize,
    positions: &[NormalizedPosition],
    fx: &Tensor<T>,
    fy: &Tensor<T>,
) {
    let pairs = head_dim / 2;
    for t in 0..s {
        let (px, py) = (T::of(positions[t].x), T::of(positions[t].y));
        for h in 0..heads {
            for i in 0..pairs {
                let theta = fx.data()[h * pairs + i] * px + fy.data()[h * pairs + i] * py;
                let (sin, cos) = theta.sin_cos();
                let at = t * heads * head_dim + h * head_dim + 2 * i;
                let (a, b) = (data[at], data[at + 1]);
                data[at] = a * cos - b * sin;
                data[at + 1] = a * sin + b * cos;
            }
        }
    }
}

/// Backward through [`rotate_rows`] given the rotated output `y` and its
/// gradient `dy` (both flat `[S, heads·head_dim]`). Overwrites `dy` with the
/// input gradient and accumulates frequency gradients into `dfx`, `dfy`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rotate_rows_backward<T: Real>(
    y: &[T],
    dy: &mut [T],
    s: usize,
    heads: usize,
    head_dim: usize,
    positions: &[NormalizedPosition],
    fx: &Tensor<T>,
    fy: &Tensor<T>,
    dfx: &mut [T],
    dfy: &mut [T],
) {
    let pairs = head_dim / 2;
    for t in 0..s {
        let (px, py) = (T::of(positions[t].x), T::of(positions[t].y));
        for h in 0..heads {
            for i in 0..pairs {
                let k = h * pairs + i;
                let theta = fx.data()[k] * px + fy.data()[k] * py;
                let (sin, cos) = theta.sin_cos();
                let at = t * heads * head_dim + h * head_dim + 2 * i;
                let (g0, g1) = (dy[at], dy[at + 1]);
                // d y0/dθ = -y1, d y1/dθ = y0
                let dtheta = -g0 * y[at + 1] + g1 * y[at];
                dfx[k] += dtheta * px;
                dfy[k] += dtheta * py;
                dy[at] = g0 * cos + g1 * sin;
                dy[at + 1] = -g0 * sin + g1 * cos;
            }
        }
    }
}

/// Gradient of [`rope_mixed_rotate`]: `(dx, dfx, dfy)`.
pub fn rope_mixed_rotate_backward<T: Real>(
    y: &Tensor<T>,
    dy: &Tensor<T>,
    positions: &[NormalizedPosition],
    freqs: &RopeFrequencies<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (s, heads, head_dim) = check(y.shape(), positions, &freqs.fx, &freqs.fy)?;
    dy.expect_shape(y.shape())?;
    let mut dx = dy.clone();
    let mut dfx = Tensor::zeros(freqs.fx.shape());
    let mut dfy = Tensor::zeros(freqs.fy.shape());
    rotate_rows_backward(
        y.data(),
        dx.data_mut(),
        s,
        heads,
        head_dim,
        positions,
        &freqs.fx,
        &freqs.fy,
        dfx.data_mut(),
        dfy.data_mut(),
    );
    Ok((dx, dfx, dfy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn origin_is_identity() {
        let freqs = RopeFrequencies::<f64>::axial(2, 4).unwrap();
        let x = Tensor::from_vec(&[1, 2, 4], (0..8).map(|v| v as f64).collect()).unwrap();
        let y = rope_mixed_rotate(&x, &[NormalizedPosition::ORIGIN], &freqs).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn quarter_turn() {
        let freqs = RopeFrequencies {
            fx: Tensor::<f64>::full(&[1, 1], FRAC_PI_2),
            fy: Tensor::zeros(&[1, 1]),
        };
        let x = Tensor::from_f64(&[1, 1, 2], &[1.0, 0.0]).unwrap();
        let y = rope_mixed_rotate(&x, &[NormalizedPosition::new(1.0, 0.0)], &freqs).unwrap();
        assert!(y.data()[0].abs() < 1e-15);
        assert!((y.data()[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn odd_head_dim_rejected() {
        assert!(RopeFrequencies::<f64>::axial(1, 3).is_err());
        let freqs = RopeFrequencies::<f64>::axial(1, 2).unwrap();
        let x = Tensor::zeros(&[1, 1, 3]);
        assert!(rope_mixed_rotate(&x, &[NormalizedPosition::ORIGIN], &freqs).is_err());
    }

    #[test]
    fn axial_schedule() {
        let f = RopeFrequencies::<f64>::axial(1, 8).unwrap();
        assert_eq!(f.pairs(), 4);
        assert!((f.fx.data()[0] - TAU).abs() < 1e-12);
        assert!((f.fx.data()[1] - TAU * 20.0).abs() < 1e-9);
        assert_eq!(&f.fx.data()[2..], &[0.0, 0.0]);
        assert_eq!(&f.fy.data()[..2], &[0.0, 0.0]);
        assert!((f.fy.data()[3] - TAU * 20.0).abs() < 1e-9);
    }
}
