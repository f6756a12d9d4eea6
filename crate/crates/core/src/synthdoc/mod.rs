//! Procedural documents made of pseudo-glyph words, with ground-truth
//! attribute labels and deliberately ambiguous regions.

mod augment;
mod crop;
mod document;
mod label;
mod render;
pub mod signature;

use serde::{Deserialize, Serialize};

pub use augment::{
    affine, augment, color_jitter, gaussian_blur, horizontal_flip, rotate, total_variation, AffinePolicy,
    AugmentPolicy, BlurPolicy, ColorJitterPolicy, FlipPolicy, RotationPolicy,
};
pub use crop::WordCrop;
pub use document::{document_seed, generate_document, HorizontalRule, PageImage, Region, SynthDocument};
pub use label::{AttributeLabel, T1_NAMES, T2_NAMES};
pub use render::{
    add_line_decoration, baseline_row, italicize_shear, render_word, render_word_weighted, row_of, LineKind,
    ASCENDER_FRAC, BASELINE_FRAC, MEAN_LINE_FRAC, STRIKE_FRAC, UNDERLINE_FRAC,
};

use crate::error::{Error, Result};

/// Default T1 and T2 marginals; the default class mix is their outer product.
pub const DEFAULT_T1_MARGINAL: [f64; 4] = [0.6, 0.2, 0.1, 0.1];
pub const DEFAULT_T2_MARGINAL: [f64; 4] = [0.7, 0.12, 0.1, 0.08];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub crop_height: usize,
    pub crop_width: usize,
    /// Inclusive range of words per document.
    pub words_per_doc: [usize; 2],
    pub words_per_line: usize,
    /// Stroke widths in pixels at a crop height of 32.
    pub stroke_width_normal: f64,
    pub stroke_width_bold: f64,
    /// Per-document multiplier on every stroke width.
    pub ink_weight_range: [f64; 2],
    /// Italic shear angle range in degrees.
    pub shear_angle_range: [f64; 2],
    /// Maximum vertical offset of decoration lines, pixels at height 32.
    pub line_jitter: f64,
    /// `class_mix[t1][t2]` is the probability of that label in body text.
    pub class_mix: [[f64; 4]; 4],
    /// Probability that a document contains a ruled table, and separately
    /// an all-bold heading line.
    pub ambiguity_rate: f64,
    pub table_rows: [usize; 2],
    pub table_cols: [usize; 2],
    pub seed: u64,
}

pub fn outer_mix(t1: [f64; 4], t2: [f64; 4]) -> [[f64; 4]; 4] {
    let mut mix = [[0.0; 4]; 4];
    for (i, row) in mix.iter_mut().enumerate() {
        for (j, p) in row.iter_mut().enumerate() {
            *p = t1[i] * t2[j];
        }
    }
    mix
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            crop_height: 32,
            crop_width: 24,
            words_per_doc: [40, 60],
            words_per_line: 8,
            stroke_width_normal: 1.5,
            stroke_width_bold: 2.8,
            ink_weight_range: [0.85, 1.15],
            shear_angle_range: [12.0, 22.0],
            line_jitter: 0.5,
            class_mix: outer_mix(DEFAULT_T1_MARGINAL, DEFAULT_T2_MARGINAL),
            ambiguity_rate: 0.2,
            table_rows: [3, 5],
            table_cols: [3, 5],
            seed: 0,
        }
    }
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: &[T; 2]) -> Result<()> {
    if r[0] > r[1] {
        return Err(Error::config(format!("{name}: lower bound {:?} exceeds upper bound {:?}", r[0], r[1])));
    }
    Ok(())
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.crop_height < 8 || self.crop_width < 8 {
            return Err(Error::config("crop size must be at least 8x8"));
        }
        check_range("words_per_doc", &self.words_per_doc)?;
        if self.words_per_doc[0] == 0 {
            return Err(Error::config("documents need at least one word"));
        }
        if self.words_per_line == 0 {
            return Err(Error::config("words_per_line must be positive"));
        }
        if !(self.stroke_width_normal > 0.0) || !self.stroke_width_bold.is_finite() {
            return Err(Error::config("stroke widths must be positive and finite"));
        }
        if self.stroke_width_bold <= self.stroke_width_normal {
            return Err(Error::config(format!(
                "bold stroke width {} must exceed normal stroke width {}",
                self.stroke_width_bold, self.stroke_width_normal
            )));
        }
        check_range("ink_weight_range", &self.ink_weight_range)?;
        if !(self.ink_weight_range[0] > 0.0) {
            return Err(Error::config("ink weights must be positive"));
        }
        check_range("shear_angle_range", &self.shear_angle_range)?;
        if self.shear_angle_range.iter().any(|a| !(a.abs() <= 45.0)) {
            return Err(Error::config("shear angles must lie in [-45, 45] degrees"));
        }
        if !(self.line_jitter >= 0.0) {
            return Err(Error::config("line_jitter must be non-negative"));
        }
        let probs = self.class_mix.iter().flatten();
        if probs.clone().any(|p| !(*p >= 0.0)) {
            return Err(Error::config("class_mix entries must be non-negative"));
        }
        let total: f64 = probs.sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::config(format!("class_mix sums to {total}, expected 1")));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return Err(Error::config("ambiguity_rate must lie in [0, 1]"));
        }
        check_range("table_rows", &self.table_rows)?;
        check_range("table_cols", &self.table_cols)?;
        if self.table_rows[0] == 0 || self.table_cols[0] == 0 {
            return Err(Error::config("tables need at least one row and column"));
        }
        Ok(())
    }
}
