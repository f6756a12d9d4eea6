//! Multi-head scaled dot-product attention over a batch of windows.
//!
//! Tokens are laid out as `[windows·S, d_model]`; attention never crosses a
//! window boundary. Keys whose mask entry is `false` get `-inf` logits.
//! A query whose window has no unmasked key outputs exactly zero.

use super::linear::{linear, linear_backward};
use super::rope::{rotate_rows, rotate_rows_backward};
use super::softmax::{softmax_row_backward, softmax_row_in_place};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::geometry::NormalizedPosition;
use crate::real::Real;

/// Borrowed projection weights: `W*` are `[d, d]`, `b*` are `[d]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a, T> {
    pub wq: &'a Tensor<T>,
    pub bq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub bk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub bv: &'a Tensor<T>,
    pub wo: &'a Tensor<T>,
    pub bo: &'a Tensor<T>,
}

/// Rotary inputs: one position per token plus `[heads, head_dim/2]` tables.
#[derive(Debug, Clone, Copy)]
pub struct RopeInputs<'a, T> {
    pub positions: &'a [NormalizedPosition],
    pub fx: &'a Tensor<T>,
    pub fy: &'a Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    q_in: Tensor<T>,
    k_in: Tensor<T>,
    v_in: Tensor<T>,
    /// Projected (and rotated, when rope is on) queries and keys.
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    /// `[windows, heads, S, S]` attention probabilities.
    probs: Vec<T>,
    mixed: Tensor<T>,
    dead_window: Vec<bool>,
    seq: usize,
    heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads<T> {
    pub dq_in: Tensor<T>,
    pub dk_in: Tensor<T>,
    pub dv_in: Tensor<T>,
    pub dwq: Tensor<T>,
    pub dbq: Tensor<T>,
    pub dwk: Tensor<T>,
    pub dbk: Tensor<T>,
    pub dwv: Tensor<T>,
    pub dbv: Tensor<T>,
    pub dwo: Tensor<T>,
    pub dbo: Tensor<T>,
    pub dfx: Option<Tensor<T>>,
    pub dfy: Option<Tensor<T>>,
}

/// `[S, dh]` view into a `[rows, d]` buffer starting at row `r0`, column `c0`.
#[inline]
fn block(r0: usize, c0: usize, d: usize) -> usize {
    r0 * d + c0
}

#[allow(clippy::too_many_arguments)]
fn gemm_view<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    (rsa, csa): (usize, usize),
    b: &[T],
    (rsb, csb): (usize, usize),
    c: &mut [T],
    (rsc, csc): (usize, usize),
    alpha: T,
    accumulate: bool,
) {
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(
        m, k, n, alpha, a, rsa as isize, csa as isize, b, rsb as isize, csb as isize, beta, c,
        rsc as isize, csc as isize,
    );
}

#[allow(clippy::too_many_arguments)]
pub fn multi_head_attention<T: Real>(
    q_in: &Tensor<T>,
    k_in: &Tensor<T>,
    v_in: &Tensor<T>,
    w: AttentionWeights<'_, T>,
    heads: usize,
    seq: usize,
    mask: &[bool],
    rope: Option<RopeInputs<'_, T>>,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let d = q_in.last_dim();
    let rows = q_in.rows();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::shape(format!("d_model {d} not divisible by {heads} heads")));
    }
    if seq == 0 || !rows.is_multiple_of(seq) {
        return Err(Error::shape(format!("{rows} tokens do not split into windows of {seq}")));
    }
    if k_in.shape() != q_in.shape() || v_in.shape() != q_in.shape() || q_in.ndim() != 2 {
        return Err(Error::shape("attention inputs must share a [tokens, d_model] shape"));
    }
    if mask.len() != rows {
        return Err(Error::shape(format!("mask has {} entries for {rows} tokens", mask.len())));
    }
    let dh = d / heads;
    let windows = rows / seq;

    let mut q = linear(q_in, w.wq, Some(w.bq))?;
    let mut k = linear(k_in, w.wk, Some(w.bk))?;
    let v = linear(v_in, w.wv, Some(w.bv))?;
    if let Some(r) = rope {
        if r.positions.len() != rows {
            return Err(Error::shape("rope needs one position per token"));
        }
        if !dh.is_multiple_of(2) {
            return Err(Error::invalid(format!("rope needs an even head_dim, got {dh}")));
        }
        if r.fx.shape() != [heads, dh / 2] || r.fy.shape() != [heads, dh / 2] {
            return Err(Error::shape("rope frequency tables do not match heads/head_dim"));
        }
        rotate_rows(q.data_mut(), rows, heads, dh, r.positions, r.fx, r.fy);
        rotate_rows(k.data_mut(), rows, heads, dh, r.positions, r.fx, r.fy);
    }

    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut probs = vec![T::zero(); windows * heads * seq * seq];
    let mut mixed = Tensor::zeros(&[rows, d]);
    let mut dead_window = vec![false; windows];
    for b in 0..windows {
        let keys = &mask[b * seq..(b + 1) * seq];
        if !keys.iter().any(|&m| m) {
            dead_window[b] = true;
            continue;
        }
        for h in 0..heads {
            let p = &mut probs[(b * heads + h) * seq * seq..(b * heads + h + 1) * seq * seq];
            let off = block(b * seq, h * dh, d);
            // scores = Q_h K_h^T
            gemm_view(
                seq, dh, seq,
                &q.data()[off..], (d, 1),
                &k.data()[off..], (1, d),
                p, (seq, 1),
                scale, false,
            );
            for i in 0..seq {
                let row = &mut p[i * seq..(i + 1) * seq];
                for (j, v) in row.iter_mut().enumerate() {
                    if !keys[j] {
                        *v = T::neg_infinity();
                    }
                }
                softmax_row_in_place(row);
            }
            gemm_view(
                seq, seq, dh,
                p, (seq, 1),
                &v.data()[off..], (d, 1),
                &mut mixed.data_mut()[off..], (d, 1),
                T::one(), false,
            );
        }
    }
    let mut out = linear(&mixed, w.wo, Some(w.bo))?;
    for (b, &dead) in dead_window.iter().enumerate() {
        if dead {
            out.data_mut()[b * seq * d..(b + 1) * seq * d].fill(T::zero());
        }
    }
    let cache = AttentionCache {
        q_in: q_in.clone(),
        k_in: k_in.clone(),
        v_in: v_in.clone(),
        q,
        k,
        v,
        probs,
        mixed,
        dead_window,
        seq,
        heads,
    };
    Ok((out, cache))
}

impl<T: Real> AttentionCache<T> {
    /// Attention probabilities of window `b`, head `h` as a row-major `S×S`.
    pub fn probabilities(&self, b: usize, h: usize) -> &[T] {
        let n = self.seq * self.seq;
        &self.probs[(b * self.heads + h) * n..(b * self.heads + h + 1) * n]
    }
}

pub fn multi_head_attention_backward<T: Real>(
    cache: &AttentionCache<T>,
    w: AttentionWeights<'_, T>,
    rope: Option<RopeInputs<'_, T>>,
    dout: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let (seq, heads) = (cache.seq, cache.heads);
    let d = cache.q.last_dim();
    let rows = cache.q.rows();
    dout.expect_shape(&[rows, d])?;
    let dh = d / heads;

    let mut dout = dout.clone();
    for (b, &dead) in cache.dead_window.iter().enumerate() {
        if dead {
            dout.data_mut()[b * seq * d..(b + 1) * seq * d].fill(T::zero());
        }
    }
    let (dmixed, dwo, dbo) = linear_backward(&cache.mixed, w.wo, &dout)?;

    let scale = T::one() / T::from_usize(dh).unwrap().sqrt();
    let mut dq = Tensor::zeros(&[rows, d]);
    let mut dk = Tensor::zeros(&[rows, d]);
    let mut dv = Tensor::zeros(&[rows, d]);
    let mut dp = vec![T::zero(); seq * seq];
    let mut ds = vec![T::zero(); seq * seq];
    for (b, &dead) in cache.dead_window.iter().enumerate() {
        if dead {
            continue;
        }
        for h in 0..heads {
            let p = cache.probabilities(b, h);
            let off = block(b * seq, h * dh, d);
            // dP = dmixed_h V_h^T
            gemm_view(
                seq, dh, seq,
                &dmixed.data()[off..], (d, 1),
                &cache.v.data()[off..], (1, d),
                &mut dp, (seq, 1),
                T::one(), false,
            );
            // dV_h = P^T dmixed_h
            gemm_view(
                seq, seq, dh,
                p, (1, seq),
                &dmixed.data()[off..], (d, 1),
                &mut dv.data_mut()[off..], (d, 1),
                T::one(), false,
            );
            for i in 0..seq {
                softmax_row_backward(
                    &p[i * seq..(i + 1) * seq],
                    &dp[i * seq..(i + 1) * seq],
                    &mut ds[i * seq..(i + 1) * seq],
                );
            }
            // dQ_h = dS K_h * scale, dK_h = dS^T Q_h * scale
            gemm_view(
                seq, seq, dh,
                &ds, (seq, 1),
                &cache.k.data()[off..], (d, 1),
                &mut dq.data_mut()[off..], (d, 1),
                scale, false,
            );
            gemm_view(
                seq, seq, dh,
                &ds, (1, seq),
                &cache.q.data()[off..], (d, 1),
                &mut dk.data_mut()[off..], (d, 1),
                scale, false,
            );
        }
    }

    let (mut dfx, mut dfy) = (None, None);
    if let Some(r) = rope {
        let mut gx = Tensor::zeros(r.fx.shape());
        let mut gy = Tensor::zeros(r.fy.shape());
        for (y, g) in [(&cache.q, &mut dq), (&cache.k, &mut dk)] {
            rotate_rows_backward(
                y.data(),
                g.data_mut(),
                rows,
                heads,
                dh,
                r.positions,
                r.fx,
                r.fy,
                gx.data_mut(),
                gy.data_mut(),
            );
        }
        dfx = Some(gx);
        dfy = Some(gy);
    }

    let (dq_in, dwq, dbq) = linear_backward(&cache.q_in, w.wq, &dq)?;
    let (dk_in, dwk, dbk) = linear_backward(&cache.k_in, w.wk, &dk)?;
    let (dv_in, dwv, dbv) = linear_backward(&cache.v_in, w.wv, &dv)?;
    Ok(AttentionGrads { dq_in, dk_in, dv_in, dwq, dbq, dwk, dbk, dwv, dbv, dwo, dbo, dfx, dfy })
}
