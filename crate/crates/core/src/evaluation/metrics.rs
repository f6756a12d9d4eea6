use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdoc::{AttributeLabel, T1_NAMES, T2_NAMES};

/// `counts[truth][pred]` for one 4-way head.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion(pub [[u64; 4]; 4]);

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    pub fn merge(self, other: Counts) -> Counts {
        Counts { tp: self.tp + other.tp, fp: self.fp + other.fp, fn_: self.fn_ + other.fn_ }
    }

    /// One-vs-rest scores. A class absent from both truth and prediction
    /// scores 1.0 everywhere.
    pub fn score(self) -> ClassScore {
        let ratio = |num: u64, den: u64| if den == 0 { 1.0 } else { num as f64 / den as f64 };
        let f1_den = 2 * self.tp + self.fp + self.fn_;
        ClassScore {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            f1: if f1_den == 0 { 1.0 } else { 2.0 * self.tp as f64 / f1_den as f64 },
            support: self.tp + self.fn_,
        }
    }
}

impl Confusion {
    pub fn add(&mut self, truth: u8, pred: u8) {
        self.0[truth as usize][pred as usize] += 1;
    }

    pub fn counts(&self, class: usize) -> Counts {
        let tp = self.0[class][class];
        let fn_ = self.0[class].iter().sum::<u64>() - tp;
        let fp = (0..4).map(|t| self.0[t][class]).sum::<u64>() - tp;
        Counts { tp, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.0.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// Names of the eight per-head classes in report order.
pub const CLASS_KEYS: [&str; 8] = [
    "t1_normal",
    "bold",
    "italic",
    "bold_italic",
    "t2_normal",
    "underline",
    "strikeout",
    "underline_strikeout",
];

/// The seven categories averaged into the macro score.
pub const MACRO_KEYS: [&str; 7] = ["normal", "bold", "italic", "bold_italic", "underline", "strikeout", "underline_strikeout"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// The eight per-head classes of [`CLASS_KEYS`].
    pub per_class: BTreeMap<String, ClassScore>,
    /// Normal counted over both heads together.
    pub pooled_normal: ClassScore,
    /// Unweighted mean F1 over pooled normal and the six attribute classes.
    #[serde(rename = "macro")]
    pub macro_f1: f64,
    pub confusion_t1: [[u64; 4]; 4],
    pub confusion_t2: [[u64; 4]; 4],
}

impl MetricsReport {
    pub fn from_confusions(t1: &Confusion, t2: &Confusion) -> Self {
        let mut per_class = BTreeMap::new();
        for c in 0..4 {
            per_class.insert(CLASS_KEYS[c].to_string(), t1.counts(c).score());
            per_class.insert(CLASS_KEYS[4 + c].to_string(), t2.counts(c).score());
        }
        let pooled_normal = t1.counts(0).merge(t2.counts(0)).score();
        let attrs = [1, 2, 3, 5, 6, 7].map(|i| per_class[CLASS_KEYS[i]].f1);
        let macro_f1 = (pooled_normal.f1 + attrs.iter().sum::<f64>()) / 7.0;
        Self { per_class, pooled_normal, macro_f1, confusion_t1: t1.0, confusion_t2: t2.0 }
    }

    pub fn f1(&self, key: &str) -> Option<f64> {
        if key == "normal" {
            return Some(self.pooled_normal.f1);
        }
        self.per_class.get(key).map(|s| s.f1)
    }

    /// The eight per-head F1 values in [`CLASS_KEYS`] order.
    pub fn f1_row(&self) -> [f64; 8] {
        CLASS_KEYS.map(|k| self.per_class[k].f1)
    }
}

/// Scores predictions against ground truth over identical key sets.
pub fn f1_scores<K: Ord + std::fmt::Debug>(
    preds: &BTreeMap<K, AttributeLabel>,
    truths: &BTreeMap<K, AttributeLabel>,
) -> Result<MetricsReport> {
    if preds.len() != truths.len() {
        return Err(Error::invalid(format!("{} predictions for {} annotated words", preds.len(), truths.len())));
    }
    let (mut t1, mut t2) = (Confusion::default(), Confusion::default());
    for (key, truth) in truths {
        let pred = preds.get(key).ok_or_else(|| Error::invalid(format!("no prediction for word {key:?}")))?;
        t1.add(truth.t1, pred.t1);
        t2.add(truth.t2, pred.t2);
    }
    Ok(MetricsReport::from_confusions(&t1, &t2))
}

/// Confusions for parallel label slices.
pub fn confusions(truths: &[AttributeLabel], preds: &[AttributeLabel]) -> (Confusion, Confusion) {
    let (mut t1, mut t2) = (Confusion::default(), Confusion::default());
    for (t, p) in truths.iter().zip(preds) {
        t1.add(t.t1, p.t1);
        t2.add(t.t2, p.t2);
    }
    (t1, t2)
}

/// Human-readable class names per head, for logs.
pub fn class_names() -> [String; 8] {
    std::array::from_fn(|i| if i < 4 { T1_NAMES[i].to_string() } else { T2_NAMES[i - 4].to_string() })
}
