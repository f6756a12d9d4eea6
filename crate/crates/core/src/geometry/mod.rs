//! Context-window selection over the word boxes of a page.
//!
//! Distances are measured between normalized box centers with a weighted
//! Chebyshev metric, so a window grown around an anchor is a rectangle whose
//! aspect follows `m / k`. With the default `k = 1, m = 2` vertical offsets
//! cost twice as much as horizontal ones and windows come out wide.

mod windows;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdoc::AttributeLabel;

pub use windows::{nearest_window, sequential_context_windows};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub id: usize,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub label: Option<AttributeLabel>,
}

impl WordBox {
    pub fn new(id: usize, x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { id, x_min, y_min, x_max, y_max, label: None }
    }

    pub fn with_label(mut self, label: AttributeLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentLayout {
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<WordBox>,
}

impl DocumentLayout {
    /// Builds a layout and checks its invariants.
    pub fn new(width: u32, height: u32, boxes: Vec<WordBox>) -> Result<Self> {
        let layout = Self { width, height, boxes };
        layout.validate()?;
        Ok(layout)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("layout has zero width or height"));
        }
        if self.boxes.is_empty() {
            return Err(Error::invalid("layout has no word boxes"));
        }
        let (w, h) = (self.width as f64, self.height as f64);
        for (i, b) in self.boxes.iter().enumerate() {
            if b.id != i {
                return Err(Error::invalid(format!(
                    "box ids must be dense and ordered: position {i} holds id {}",
                    b.id
                )));
            }
            let coords = [b.x_min, b.y_min, b.x_max, b.y_max];
            if coords.iter().any(|c| !c.is_finite()) {
                return Err(Error::invalid(format!("box {i} has non-finite coordinates")));
            }
            if !(b.x_min < b.x_max && b.y_min < b.y_max) {
                return Err(Error::invalid(format!("box {i} is degenerate")));
            }
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
                return Err(Error::invalid(format!("box {i} lies outside the page")));
            }
        }
        Ok(())
    }

    /// Normalized centers of every box, in id order.
    pub fn centers(&self) -> Result<Vec<NormalizedPosition>> {
        self.boxes.iter().map(|b| normalize_center(b, self)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalizedPosition {
    pub x: f64,
    pub y: f64,
}

impl NormalizedPosition {
    pub const ORIGIN: Self = Self { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// `S` slots around one anchor. Slots past the real members are padding:
/// their member is `None`, mask is `false` and position is the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub anchor_id: usize,
    pub members: Vec<Option<usize>>,
    pub positions: Vec<NormalizedPosition>,
    pub padding_mask: Vec<bool>,
}

impl ContextWindow {
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Ids of the real (unpadded) members in slot order.
    pub fn real_members(&self) -> impl Iterator<Item = usize> + '_ {
        self.members.iter().filter_map(|m| *m)
    }
}

/// Window selection parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Window size.
    pub s: usize,
    /// Horizontal weight.
    pub k: f64,
    /// Vertical weight.
    pub m: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { s: 16, k: 1.0, m: 2.0 }
    }
}

impl GeometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::config("window size S must be at least 1"));
        }
        check_weights(self.k, self.m)
    }
}

fn check_weights(k: f64, m: f64) -> Result<()> {
    if !(k.is_finite() && m.is_finite() && k > 0.0 && m > 0.0) {
        return Err(Error::config(format!("metric weights must be positive, got k={k}, m={m}")));
    }
    if k == m {
        log::warn!("k == m ({k}): context windows will be square rather than wide");
    }
    Ok(())
}

/// `max(k·|c.x − a.x|, m·|c.y − a.y|)`.
pub fn weighted_chebyshev(
    c: NormalizedPosition,
    a: NormalizedPosition,
    k: f64,
    m: f64,
) -> Result<f64> {
    if !(c.x.is_finite() && c.y.is_finite() && a.x.is_finite() && a.y.is_finite()) {
        return Err(Error::invalid("non-finite coordinate in distance"));
    }
    Ok((k * (c.x - a.x).abs()).max(m * (c.y - a.y).abs()))
}

pub fn normalize_center(b: &WordBox, layout: &DocumentLayout) -> Result<NormalizedPosition> {
    if layout.width == 0 || layout.height == 0 {
        return Err(Error::invalid("cannot normalize against a zero-sized layout"));
    }
    Ok(NormalizedPosition {
        x: (b.x_min + b.x_max) / 2.0 / layout.width as f64,
        y: (b.y_min + b.y_max) / 2.0 / layout.height as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> NormalizedPosition {
        NormalizedPosition::new(x, y)
    }

    #[test]
    fn chebyshev_identity() {
        assert_eq!(weighted_chebyshev(p(0.5, 0.5), p(0.5, 0.5), 3.0, 7.0).unwrap(), 0.0);
    }

    #[test]
    fn chebyshev_hand_values() {
        let d = weighted_chebyshev(p(0.3, 0.40), p(0.1, 0.45), 1.0, 2.0).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        // both branches equal
        let d = weighted_chebyshev(p(0.1, 0.2), p(0.2, 0.0), 2.0, 1.0).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_rejects_nan() {
        assert!(weighted_chebyshev(p(f64::NAN, 0.0), p(0.0, 0.0), 1.0, 2.0).is_err());
    }

    #[test]
    fn equal_weights_only_warn() {
        assert!(GeometryConfig { s: 4, k: 1.0, m: 1.0 }.validate().is_ok());
        assert!(GeometryConfig { s: 4, k: 0.0, m: 1.0 }.validate().is_err());
        assert!(GeometryConfig { s: 0, k: 1.0, m: 2.0 }.validate().is_err());
    }

    #[test]
    fn centers() {
        let layout = DocumentLayout::new(10, 10, vec![WordBox::new(0, 0.0, 0.0, 10.0, 10.0)]).unwrap();
        assert_eq!(normalize_center(&layout.boxes[0], &layout).unwrap(), p(0.5, 0.5));

        let layout = DocumentLayout::new(100, 50, vec![WordBox::new(0, 0.0, 0.0, 20.0, 10.0)]).unwrap();
        let c = normalize_center(&layout.boxes[0], &layout).unwrap();
        assert!((c.x - 0.1).abs() < 1e-12 && (c.y - 0.1).abs() < 1e-12);
    }

    #[test]
    fn zero_sized_layout_is_rejected() {
        let layout = DocumentLayout { width: 0, height: 10, boxes: vec![] };
        let b = WordBox::new(0, 0.0, 0.0, 1.0, 1.0);
        assert!(normalize_center(&b, &layout).is_err());
    }

    #[test]
    fn layout_validation() {
        assert!(DocumentLayout::new(10, 10, vec![]).is_err());
        assert!(DocumentLayout::new(10, 10, vec![WordBox::new(1, 0.0, 0.0, 1.0, 1.0)]).is_err());
        assert!(DocumentLayout::new(10, 10, vec![WordBox::new(0, 5.0, 0.0, 1.0, 1.0)]).is_err());
        assert!(DocumentLayout::new(10, 10, vec![WordBox::new(0, 0.0, 0.0, 11.0, 1.0)]).is_err());
    }
}
