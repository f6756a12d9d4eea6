//! Additive positional embeddings used by the ablation variants.

use std::f64::consts::TAU;

use super::rope::{ROPE_MAX_CYCLES, ROPE_MIN_CYCLES};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geometry::NormalizedPosition;
use crate::real::Real;

/// Cells per axis of the learnable position table.
pub const LPE_GRID: usize = 32;

fn frequency(j: usize, count: usize) -> f64 {
    if count <= 1 {
        return TAU * ROPE_MIN_CYCLES;
    }
    TAU * ROPE_MIN_CYCLES * (ROPE_MAX_CYCLES / ROPE_MIN_CYCLES).powf(j as f64 / (count - 1) as f64)
}

/// Fixed 2D sinusoidal embedding `[S, d_model]`. The first half of the
/// channels encodes x and the second half y, each as interleaved
/// `(sin ωp, cos ωp)` pairs.
pub fn ape_sinusoidal<T: Real>(positions: &[NormalizedPosition], d_model: usize) -> Result<Tensor<T>> {
    if !d_model.is_multiple_of(4) || d_model == 0 {
        return Err(Error::invalid(format!("APE needs d_model divisible by 4, got {d_model}")));
    }
    let n = d_model / 4;
    let mut out = Tensor::zeros(&[positions.len(), d_model]);
    for (t, p) in positions.iter().enumerate() {
        let row = out.row_mut(t);
        for (axis, coord) in [p.x, p.y].into_iter().enumerate() {
            for j in 0..n {
                let (s, c) = (frequency(j, n) * coord).sin_cos();
                row[axis * d_model / 2 + 2 * j] = T::of(s);
                row[axis * d_model / 2 + 2 * j + 1] = T::of(c);
            }
        }
    }
    Ok(out)
}

/// Row of the learnable table for a position: `qy·GRID + qx`.
pub fn lpe_index(p: NormalizedPosition) -> usize {
    let q = |v: f64| ((v.clamp(0.0, 1.0) * LPE_GRID as f64) as usize).min(LPE_GRID - 1);
    q(p.y) * LPE_GRID + q(p.x)
}

/// Gathers table rows (`[GRID², d]`) for each position.
pub fn lpe_lookup<T: Real>(table: &Tensor<T>, positions: &[NormalizedPosition]) -> Result<Tensor<T>> {
    if table.ndim() != 2 || table.shape()[0] != LPE_GRID * LPE_GRID {
        return Err(Error::shape(format!("LPE table must be [{}, d], got {:?}", LPE_GRID * LPE_GRID, table.shape())));
    }
    let d = table.shape()[1];
    let mut out = Tensor::zeros(&[positions.len(), d]);
    for (t, &p) in positions.iter().enumerate() {
        out.row_mut(t).copy_from_slice(table.row(lpe_index(p)));
    }
    Ok(out)
}

/// Scatters `dy` (`[S, d]`) back into a table-shaped gradient.
pub fn lpe_backward<T: Real>(
    table_shape: &[usize],
    positions: &[NormalizedPosition],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut grad = Tensor::zeros(table_shape);
    if dy.rows() != positions.len() || dy.last_dim() != table_shape[1] {
        return Err(Error::shape("LPE backward: gradient does not match positions"));
    }
    for (t, &p) in positions.iter().enumerate() {
        let src = dy.row(t).to_vec();
        for (g, v) in grad.row_mut(lpe_index(p)).iter_mut().zip(src) {
            *g += v;
        }
    }
    Ok(grad)
}
