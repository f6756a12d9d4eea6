//! Measurable image signatures of each attribute, used to check that
//! rendered crops agree with their labels.

use super::render::{row_of, ASCENDER_FRAC, BASELINE_FRAC, STRIKE_FRAC, UNDERLINE_FRAC};
use super::WordCrop;

/// Pixels counted as ink by the row signatures.
const INK_THRESHOLD: f32 = 0.5;
/// Row coverage that counts as a horizontal rule.
pub const LINE_COVERAGE: f64 = 0.8;

pub fn ink_fraction(crop: &WordCrop) -> f64 {
    crop.pixels.iter().map(|&v| v as f64).sum::<f64>() / crop.pixels.len() as f64
}

/// Share of pixels in row `y` above the ink threshold.
pub fn row_ink_fraction(crop: &WordCrop, y: usize) -> f64 {
    crop.row(y).iter().filter(|&&v| v > INK_THRESHOLD).count() as f64 / crop.width as f64
}

fn has_rule_near(crop: &WordCrop, frac: f64, reach: usize) -> bool {
    let center = row_of(crop.height, frac);
    let lo = center.saturating_sub(reach);
    let hi = (center + reach).min(crop.height - 1);
    (lo..=hi).any(|y| row_ink_fraction(crop, y) > LINE_COVERAGE)
}

fn reach(crop: &WordCrop) -> usize {
    ((crop.height as f64 / 32.0).round() as usize).max(1)
}

/// A near-full-width ink row just below the baseline.
pub fn has_underline_signature(crop: &WordCrop) -> bool {
    has_rule_near(crop, UNDERLINE_FRAC, reach(crop))
}

/// A near-full-width ink row through the middle of the x-height band.
pub fn has_strikeout_signature(crop: &WordCrop) -> bool {
    has_rule_near(crop, STRIKE_FRAC, reach(crop))
}

/// Slant (degrees, positive leaning right) that best aligns the glyph
/// stems, found by un-shearing the glyph band over a grid of angles and
/// keeping the one with the sharpest column ink profile.
pub fn dominant_stroke_angle(crop: &WordCrop) -> f64 {
    let top = row_of(crop.height, ASCENDER_FRAC);
    let base = row_of(crop.height, BASELINE_FRAC);
    let strike = row_of(crop.height, STRIKE_FRAC);
    let skip = reach(crop);
    let mut best = (f64::NEG_INFINITY, 0.0);
    for step in -15..=15 {
        let angle = step as f64 * 2.0;
        let t = angle.to_radians().tan();
        let mut profile = vec![0.0f64; crop.width * 3];
        for y in top..base {
            if y + skip >= strike && y <= strike + skip {
                continue;
            }
            let shift = (t * (base as f64 - y as f64)).round() as isize;
            for x in 0..crop.width {
                let col = x as isize - shift + crop.width as isize;
                if col >= 0 && (col as usize) < profile.len() {
                    profile[col as usize] += crop.get(y, x) as f64;
                }
            }
        }
        let sharpness: f64 = profile.iter().map(|v| v * v).sum();
        // strict improvement keeps the smallest |angle| on ties
        if sharpness > best.0 + 1e-9 || (sharpness > best.0 - 1e-9 && angle.abs() < f64::abs(best.1)) {
            best = (sharpness, angle);
        }
    }
    best.1
}
