//! Averaging of overlapping window logits (CAvg), F1 scoring and the end to
//! end evaluation run.

mod metrics;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use metrics::{
    class_names, confusions, f1_scores, ClassScore, Confusion, Counts, MetricsReport, CLASS_KEYS, MACRO_KEYS,
};

use crate::dataset::{Dataset, DocWindow};
use crate::error::{Error, Result};
use crate::geometry::GeometryConfig;
use crate::model::{HeadLogits, Model, WindowBatch};
use crate::real::Real;
use crate::synthdoc::AttributeLabel;

/// `(document id, word id)`.
pub type WordKey = (String, usize);

/// Raw logits one window produced for one of its words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    pub doc_id: String,
    pub word_id: usize,
    pub window_id: usize,
    pub logits: HeadLogits,
}

fn bits(l: &HeadLogits) -> Vec<u64> {
    match l {
        HeadLogits::Dual { t1, t2 } => t1.iter().chain(t2).map(|v| v.to_bits()).collect(),
        HeadLogits::Joint(all) => all.iter().map(|v| v.to_bits()).collect(),
    }
}

/// Mean logits of one word's records, summed in a canonical order.
fn mean_logits(group: &mut [&LogitRecord]) -> Result<HeadLogits> {
    group.sort_by(|a, b| a.window_id.cmp(&b.window_id).then_with(|| bits(&a.logits).cmp(&bits(&b.logits))));
    let k = group.len() as f64;
    match &group[0].logits {
        HeadLogits::Dual { .. } => {
            let (mut t1, mut t2) = ([0.0; 4], [0.0; 4]);
            for r in group.iter() {
                let HeadLogits::Dual { t1: a, t2: b } = &r.logits else {
                    return Err(Error::invalid("records mix dual and joint head logits"));
                };
                for c in 0..4 {
                    t1[c] += a[c];
                    t2[c] += b[c];
                }
            }
            Ok(HeadLogits::Dual { t1: t1.map(|v| v / k), t2: t2.map(|v| v / k) })
        }
        HeadLogits::Joint(first) => {
            let mut sum = vec![0.0; first.len()];
            for r in group.iter() {
                let HeadLogits::Joint(a) = &r.logits else {
                    return Err(Error::invalid("records mix dual and joint head logits"));
                };
                if a.len() != sum.len() {
                    return Err(Error::shape("joint logit records differ in length"));
                }
                for (s, v) in sum.iter_mut().zip(a) {
                    *s += v;
                }
            }
            Ok(HeadLogits::Joint(sum.into_iter().map(|v| v / k).collect()))
        }
    }
}

/// Averages each word's logits over all windows that contain it and takes
/// the per-head argmax (lowest class on ties).
///
/// Sums run in a canonical order, so the result does not depend on record
/// order; logits that started as `f32` are summed exactly in `f64`, so `k`
/// copies of one record average back to that record.
pub fn cavg(records: &[LogitRecord]) -> Result<BTreeMap<WordKey, AttributeLabel>> {
    Ok(cavg_logits(records)?.into_iter().map(|(k, l)| (k, l.predict())).collect())
}

/// The averaged logits behind [`cavg`].
pub fn cavg_logits(records: &[LogitRecord]) -> Result<BTreeMap<WordKey, HeadLogits>> {
    let mut groups: BTreeMap<WordKey, Vec<&LogitRecord>> = BTreeMap::new();
    for r in records {
        if !r.logits.is_finite() {
            return Err(Error::invalid(format!("non-finite logits for {} word {}", r.doc_id, r.word_id)));
        }
        groups.entry((r.doc_id.clone(), r.word_id)).or_default().push(r);
    }
    groups.into_iter().map(|(key, mut g)| Ok((key, mean_logits(&mut g)?))).collect()
}

/// [`cavg`] plus a check that every word of every document received at
/// least one record.
pub fn cavg_covering(records: &[LogitRecord], dataset: &Dataset) -> Result<BTreeMap<WordKey, AttributeLabel>> {
    let labels = cavg(records)?;
    for d in &dataset.docs {
        for word in 0..d.crops.len() {
            if !labels.contains_key(&(d.id.clone(), word)) {
                return Err(Error::MissingCoverage { doc: d.id.clone(), word });
            }
        }
    }
    let expected = dataset.words();
    if labels.len() != expected {
        return Err(Error::invalid(format!("{} words predicted, dataset has {expected}", labels.len())));
    }
    Ok(labels)
}

/// Ground-truth labels keyed like [`cavg`]'s output.
pub fn truth_labels(dataset: &Dataset) -> BTreeMap<WordKey, AttributeLabel> {
    dataset
        .docs
        .iter()
        .flat_map(|d| d.crops.iter().enumerate().map(move |(w, c)| ((d.id.clone(), w), c.label)))
        .collect()
}

/// Runs the model over `windows` in batches of `batch_windows` and returns
/// one record per real window member. Window ids are positions in `windows`.
pub fn infer_records<T: Real>(
    model: &Model<T>,
    dataset: &Dataset,
    windows: &[DocWindow],
    batch_windows: usize,
) -> Result<Vec<LogitRecord>> {
    let mut records = Vec::new();
    for (chunk_index, chunk) in windows.chunks(batch_windows.max(1)).enumerate() {
        let items: Vec<_> = chunk.iter().map(|w| (&w.window, dataset.docs[w.doc].crops.as_slice())).collect();
        let batch = WindowBatch::<T>::assemble(&items, &model.config)?;
        let out = model.predict(&batch)?;
        for (j, w) in chunk.iter().enumerate() {
            let window_id = chunk_index * batch_windows.max(1) + j;
            for (slot, member) in w.window.members.iter().enumerate() {
                if let Some(word_id) = member {
                    records.push(LogitRecord {
                        doc_id: dataset.docs[w.doc].id.clone(),
                        word_id: *word_id,
                        window_id,
                        logits: out.token(j * model.config.s + slot),
                    });
                }
            }
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    pub predictions: BTreeMap<WordKey, AttributeLabel>,
    pub records: Vec<LogitRecord>,
}

/// Windows every document, runs inference, averages with CAvg and scores
/// the result against the dataset labels.
pub fn evaluate_run<T: Real>(
    model: &Model<T>,
    dataset: &Dataset,
    geometry: &GeometryConfig,
    seed: u64,
    batch_windows: usize,
) -> Result<EvalOutcome> {
    if geometry.s != model.config.s {
        return Err(Error::config(format!(
            "window size {} differs from the model's S = {}",
            geometry.s, model.config.s
        )));
    }
    let windows = dataset.windows(geometry, seed)?;
    let records = infer_records(model, dataset, &windows, batch_windows)?;
    let predictions = cavg_covering(&records, dataset)?;
    let report = f1_scores(&predictions, &truth_labels(dataset))?;
    Ok(EvalOutcome { report, predictions, records })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(word: usize, window: usize, t1: [f64; 4]) -> LogitRecord {
        LogitRecord { doc_id: "d".into(), word_id: word, window_id: window, logits: HeadLogits::Dual { t1, t2: [0.0; 4] } }
    }

    #[test]
    fn single_window_is_identity() {
        let r = cavg(&[rec(0, 0, [0.1, 0.5, 0.2, 0.0])]).unwrap();
        assert_eq!(r[&("d".to_string(), 0)].t1, 1);
    }

    #[test]
    fn two_window_hand_example() {
        let records = [rec(0, 0, [2.0, 0.0, 0.0, 0.0]), rec(0, 1, [0.0, 4.0, 0.0, 0.0])];
        let avg = cavg_logits(&records).unwrap();
        assert_eq!(avg[&("d".to_string(), 0)], HeadLogits::Dual { t1: [1.0, 2.0, 0.0, 0.0], t2: [0.0; 4] });
        assert_eq!(cavg(&records).unwrap()[&("d".to_string(), 0)].t1, 1);
    }

    #[test]
    fn copies_are_idempotent_and_order_free() {
        let x = [0.1f32 as f64, 0.3f32 as f64, -0.7f32 as f64, 0.3f32 as f64];
        let one = cavg_logits(&[rec(0, 0, x)]).unwrap();
        let many: Vec<_> = (0..7).map(|w| rec(0, w, x)).collect();
        assert_eq!(cavg_logits(&many).unwrap(), one);
        let mut mixed = vec![rec(0, 0, [1.0, 0.2, 0.0, 0.1]), rec(0, 1, [0.3, 0.9, 0.1, 0.0]), rec(0, 2, x)];
        let a = cavg_logits(&mixed).unwrap();
        mixed.reverse();
        assert_eq!(cavg_logits(&mixed).unwrap(), a);
    }

    #[test]
    fn ties_pick_lowest_class() {
        assert_eq!(cavg(&[rec(0, 0, [1.0, 1.0, 0.0, 1.0])]).unwrap()[&("d".to_string(), 0)].t1, 0);
    }

    #[test]
    fn missing_word_is_reported() {
        use crate::dataset::LabeledDocument;
        use crate::geometry::{DocumentLayout, WordBox};
        use crate::synthdoc::WordCrop;
        let layout = DocumentLayout::new(
            10,
            10,
            vec![WordBox::new(0, 0.0, 0.0, 1.0, 1.0), WordBox::new(1, 2.0, 2.0, 3.0, 3.0)],
        )
        .unwrap();
        let crops = vec![WordCrop::blank(4, 3, AttributeLabel::NORMAL); 2];
        let ds = Dataset { docs: vec![LabeledDocument::new("d", layout, crops).unwrap()] };
        let err = cavg_covering(&[rec(0, 0, [0.0; 4])], &ds).unwrap_err();
        assert!(matches!(err, Error::MissingCoverage { word: 1, .. }));
    }
}
