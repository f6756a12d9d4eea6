//! Pseudo-glyph word rendering and the decoration / italic transforms.
//!
//! A word is two to four glyph cells built from stems and bars. All vertical
//! positions are fractions of the crop height so the same geometry works at
//! 32×24 and at 128×96.

use rand::Rng;

use super::{AttributeLabel, SynthConfig, WordCrop};
use crate::error::{Error, Result};

pub const ASCENDER_FRAC: f64 = 0.20;
pub const MEAN_LINE_FRAC: f64 = 0.35;
pub const BASELINE_FRAC: f64 = 0.65;
pub const UNDERLINE_FRAC: f64 = 0.77;
pub const STRIKE_FRAC: f64 = 0.50;
/// Horizontal extent of glyphs and decoration lines.
pub const INK_LEFT_FRAC: f64 = 0.06;
pub const INK_RIGHT_FRAC: f64 = 0.94;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineKind {
    Underline,
    Strikeout,
}

impl LineKind {
    pub fn row_frac(self) -> f64 {
        match self {
            LineKind::Underline => UNDERLINE_FRAC,
            LineKind::Strikeout => STRIKE_FRAC,
        }
    }
}

pub fn row_of(height: usize, frac: f64) -> usize {
    ((height as f64 * frac).floor() as usize).min(height - 1)
}

pub fn baseline_row(height: usize) -> usize {
    row_of(height, BASELINE_FRAC)
}

/// Anti-aliased thick segment, merged into the crop by `max`.
fn stroke(crop: &mut WordCrop, (x0, y0): (f64, f64), (x1, y1): (f64, f64), width: f64) {
    let half = width / 2.0;
    let (dx, dy) = (x1 - x0, y1 - y0);
    let len2 = dx * dx + dy * dy;
    let ymin = (y0.min(y1) - half - 1.0).floor().max(0.0) as usize;
    let ymax = ((y0.max(y1) + half + 1.0).ceil() as usize).min(crop.height - 1);
    let xmin = (x0.min(x1) - half - 1.0).floor().max(0.0) as usize;
    let xmax = ((x0.max(x1) + half + 1.0).ceil() as usize).min(crop.width - 1);
    for y in ymin..=ymax {
        for x in xmin..=xmax {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 == 0.0 { 0.0 } else { (((px - x0) * dx + (py - y0) * dy) / len2).clamp(0.0, 1.0) };
            let (cx, cy) = (x0 + t * dx, y0 + t * dy);
            let dist = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
            let ink = (half + 0.5 - dist).clamp(0.0, 1.0) as f32;
            let v = crop.get(y, x).max(ink);
            crop.set(y, x, v);
        }
    }
}

/// Random glyph skeletons. Drawn once per word so that bold and normal
/// renders from the same RNG state share their geometry.
#[derive(Debug, Clone)]
struct Skeleton {
    segments: Vec<((f64, f64), (f64, f64))>,
}

fn skeleton<R: Rng>(height: usize, width: usize, rng: &mut R) -> Skeleton {
    let (h, w) = (height as f64, width as f64);
    let left = w * (INK_LEFT_FRAC + 0.03);
    let right = w * (INK_RIGHT_FRAC - 0.03);
    let glyphs = rng.random_range(2..=4usize);
    let cell = (right - left) / glyphs as f64;
    let mean = h * MEAN_LINE_FRAC;
    let base = h * BASELINE_FRAC;
    let asc = h * ASCENDER_FRAC;
    let mut segments = Vec::new();
    for g in 0..glyphs {
        let x0 = left + g as f64 * cell + cell * 0.18;
        let x1 = left + (g as f64 + 1.0) * cell - cell * 0.18;
        let top = if rng.random_bool(0.35) { asc } else { mean };
        match rng.random_range(0..4u8) {
            // stem only
            0 => segments.push(((x0 + (x1 - x0) * 0.5, top), (x0 + (x1 - x0) * 0.5, base))),
            // stem with a top arch and a second stem
            1 => {
                segments.push(((x0, top), (x0, base)));
                segments.push(((x0, mean), (x1, mean)));
                segments.push(((x1, mean), (x1, base)));
            }
            // closed bowl
            2 => {
                segments.push(((x0, mean), (x0, base)));
                segments.push(((x1, mean), (x1, base)));
                segments.push(((x0, mean), (x1, mean)));
                segments.push(((x0, base), (x1, base)));
            }
            // stem with a foot
            _ => {
                segments.push(((x0, top), (x0, base)));
                segments.push(((x0, base), (x1, base)));
                segments.push(((x1, mean), (x1, base)));
            }
        }
    }
    Skeleton { segments }
}

/// Every random quantity a render consumes, drawn in a fixed order so the
/// label never changes the RNG stream.
#[derive(Debug, Clone)]
struct WordDraw {
    skeleton: Skeleton,
    width_jitter: f64,
    shear_deg: f64,
    line_seeds: [u64; 2],
}

fn draw_word<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> WordDraw {
    let skeleton = skeleton(cfg.crop_height, cfg.crop_width, rng);
    let width_jitter = rng.random_range(0.95..=1.05);
    let [lo, hi] = cfg.shear_angle_range;
    let shear_deg = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let line_seeds = [rng.random(), rng.random()];
    WordDraw { skeleton, width_jitter, shear_deg, line_seeds }
}

/// Renders a pseudo-word showing `label`'s attributes at unit ink weight.
pub fn render_word<R: Rng>(label: AttributeLabel, cfg: &SynthConfig, rng: &mut R) -> WordCrop {
    render_word_weighted(label, cfg, 1.0, rng)
}

/// As [`render_word`], with every stroke width scaled by `ink_weight`
/// (a per-document font heaviness).
pub fn render_word_weighted<R: Rng>(
    label: AttributeLabel,
    cfg: &SynthConfig,
    ink_weight: f64,
    rng: &mut R,
) -> WordCrop {
    use rand::SeedableRng;

    let draw = draw_word(cfg, rng);
    let scale = cfg.crop_height as f64 / 32.0;
    let base_width = if label.bold() { cfg.stroke_width_bold } else { cfg.stroke_width_normal };
    let width = base_width * scale * ink_weight * draw.width_jitter;

    let mut crop = WordCrop::blank(cfg.crop_height, cfg.crop_width, AttributeLabel::NORMAL);
    for &(a, b) in &draw.skeleton.segments {
        stroke(&mut crop, a, b, width);
    }
    crop.label = AttributeLabel { t1: label.t1 & 1, t2: 0 };
    if label.italic() {
        crop = italicize_shear(&crop, draw.shear_deg).expect("configured shear within range");
    }
    let jitter = cfg.line_jitter * scale;
    if label.underline() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(draw.line_seeds[0]);
        crop = add_line_decoration(&crop, LineKind::Underline, jitter, &mut r);
    }
    if label.strikeout() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(draw.line_seeds[1]);
        crop = add_line_decoration(&crop, LineKind::Strikeout, jitter, &mut r);
    }
    debug_assert_eq!(crop.label, label);
    crop
}

/// Shears rows horizontally about the baseline: row `y` moves right by
/// `round(tan(angle)·(baseline − y))` pixels. Integer row shifts make
/// `shear(a)` followed by `shear(−a)` exact wherever no ink left the crop.
/// Normal becomes italic and bold becomes bold & italic.
pub fn italicize_shear(crop: &WordCrop, angle_deg: f64) -> Result<WordCrop> {
    if !angle_deg.is_finite() || angle_deg.abs() > 45.0 {
        return Err(Error::invalid(format!("shear angle {angle_deg}° outside [-45, 45]")));
    }
    let t = angle_deg.to_radians().tan();
    let base = baseline_row(crop.height) as f64;
    let mut out = WordCrop::blank(crop.height, crop.width, crop.label.with_italic());
    for y in 0..crop.height {
        let shift = (t * (base - y as f64)).round() as isize;
        for x in 0..crop.width {
            let src = x as isize - shift;
            if src >= 0 && (src as usize) < crop.width {
                out.set(y, x, crop.get(y, src as usize));
            }
        }
    }
    Ok(out)
}

/// Draws an underline or strikeout and updates `t2`.
///
/// `jitter` (pixels) bounds a random vertical offset and the end-to-end
/// slope; thickness varies between 1.5 and 2.2 px per 32 px of height. With
/// `jitter == 0` the line is horizontal and centered on the nominal row.
pub fn add_line_decoration<R: Rng>(crop: &WordCrop, kind: LineKind, jitter: f64, rng: &mut R) -> WordCrop {
    let scale = crop.height as f64 / 32.0;
    let thickness = rng.random_range(1.5..=2.2) * scale;
    let (offset, tilt) = if jitter > 0.0 {
        (rng.random_range(-jitter..=jitter), rng.random_range(-0.5..=0.5) * jitter)
    } else {
        (0.0, 0.0)
    };
    let y = row_of(crop.height, kind.row_frac()) as f64 + 0.5 + offset;
    let x0 = crop.width as f64 * INK_LEFT_FRAC;
    let x1 = crop.width as f64 * INK_RIGHT_FRAC;
    let mut out = crop.clone();
    stroke(&mut out, (x0, y - tilt / 2.0), (x1, y + tilt / 2.0), thickness);
    out.label = match kind {
        LineKind::Underline => crop.label.with_underline(),
        LineKind::Strikeout => crop.label.with_strikeout(),
    };
    out
}
