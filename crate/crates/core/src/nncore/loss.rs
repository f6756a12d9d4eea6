use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::real::Real;

/// Masked, optionally class-weighted cross-entropy of `softmax(logits / tau)`.
///
/// The result is `Σ w[y]·ce / Σ w[y]` over unmasked rows (a plain mean when
/// no weights are given). A batch with no unmasked rows has loss zero and a
/// zero gradient. Returns the loss and `d loss / d logits`.
pub fn cross_entropy_from_logits<T: Real>(
    logits: &Tensor<T>,
    labels: &[usize],
    mask: &[bool],
    tau: f64,
    class_weights: Option<&[f64]>,
) -> Result<(T, Tensor<T>)> {
    let classes = logits.last_dim();
    let rows = logits.rows();
    if labels.len() != rows || mask.len() != rows {
        return Err(Error::shape(format!(
            "cross entropy: {rows} rows, {} labels, {} mask entries",
            labels.len(),
            mask.len()
        )));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("temperature must be positive, got {tau}")));
    }
    if let Some(w) = class_weights {
        if w.len() != classes || w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("class weights must be non-negative, one per class"));
        }
    }
    let weight = |y: usize| class_weights.map_or(1.0, |w| w[y]);

    let mut total_weight = 0.0;
    for r in 0..rows {
        if mask[r] {
            if labels[r] >= classes {
                return Err(Error::invalid(format!("label {} out of range", labels[r])));
            }
            total_weight += weight(labels[r]);
        }
    }
    let mut grad = Tensor::zeros(logits.shape());
    if total_weight == 0.0 {
        return Ok((T::zero(), grad));
    }

    let inv_tau = T::of(1.0 / tau);
    let mut loss = T::zero();
    let mut probs = vec![T::zero(); classes];
    for r in 0..rows {
        if !mask[r] {
            continue;
        }
        let z = logits.row(r);
        let max = z.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for (p, &v) in probs.iter_mut().zip(z) {
            *p = ((v - max) * inv_tau).exp();
            sum += *p;
        }
        let y = labels[r];
        let log_p = (z[y] - max) * inv_tau - sum.ln();
        let w = T::of(weight(y) / total_weight);
        loss -= w * log_p;
        let g = grad.row_mut(r);
        for c in 0..classes {
            let onehot = if c == y { T::one() } else { T::zero() };
            g[c] = w * (probs[c] / sum - onehot) * inv_tau;
        }
    }
    Ok((loss, grad))
}
