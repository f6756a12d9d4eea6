use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelOutput;
use crate::nncore::cross_entropy_from_logits;
use crate::real::Real;
use crate::synthdoc::AttributeLabel;

/// Weights and temperature of the two-group cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub group_weight_t1: f64,
    pub group_weight_t2: f64,
    pub temperature: f64,
    pub class_weights_t1: Option<[f64; 4]>,
    pub class_weights_t2: Option<[f64; 4]>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            group_weight_t1: 0.25,
            group_weight_t2: 0.75,
            temperature: 0.25,
            class_weights_t1: None,
            class_weights_t2: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    /// Group cross-entropies before weighting; for a joint head both hold
    /// the 16-way cross-entropy.
    pub t1: f64,
    pub t2: f64,
}

/// `L = w1·CE_t1 + w2·CE_t2` with each CE the masked mean over tokens of the
/// cross-entropy of `softmax(logits / τ)`. A single joint head uses the
/// plain 16-way cross-entropy on `4·t1 + t2`. Returns the loss and its
/// gradient with respect to the raw logits.
pub fn multitask_loss<T: Real>(
    out: &ModelOutput<T>,
    labels: &[AttributeLabel],
    mask: &[bool],
    cfg: &LossConfig,
) -> Result<(LossValue, ModelOutput<T>)> {
    if labels.len() != out.tokens() || mask.len() != out.tokens() {
        return Err(Error::shape(format!(
            "loss over {} tokens with {} labels and {} mask entries",
            out.tokens(),
            labels.len(),
            mask.len()
        )));
    }
    if !(cfg.group_weight_t1 >= 0.0 && cfg.group_weight_t2 >= 0.0) {
        return Err(Error::config("group weights must be non-negative"));
    }
    match out {
        ModelOutput::Dual { t1, t2 } => {
            let y1: Vec<usize> = labels.iter().map(|l| l.t1 as usize).collect();
            let y2: Vec<usize> = labels.iter().map(|l| l.t2 as usize).collect();
            let (ce1, mut g1) = cross_entropy_from_logits(t1, &y1, mask, cfg.temperature, cfg.class_weights_t1.as_ref().map(|w| w.as_slice()))?;
            let (ce2, mut g2) = cross_entropy_from_logits(t2, &y2, mask, cfg.temperature, cfg.class_weights_t2.as_ref().map(|w| w.as_slice()))?;
            let (w1, w2) = (T::of(cfg.group_weight_t1), T::of(cfg.group_weight_t2));
            g1.data_mut().iter_mut().for_each(|g| *g *= w1);
            g2.data_mut().iter_mut().for_each(|g| *g *= w2);
            let (ce1, ce2) = (ce1.as_f64(), ce2.as_f64());
            Ok((
                LossValue { total: cfg.group_weight_t1 * ce1 + cfg.group_weight_t2 * ce2, t1: ce1, t2: ce2 },
                ModelOutput::Dual { t1: g1, t2: g2 },
            ))
        }
        ModelOutput::Joint(j) => {
            let y: Vec<usize> = labels.iter().map(|l| l.combined()).collect();
            let (ce, g) = cross_entropy_from_logits(j, &y, mask, cfg.temperature, None)?;
            let ce = ce.as_f64();
            Ok((LossValue { total: ce, t1: ce, t2: ce }, ModelOutput::Joint(g)))
        }
    }
}
