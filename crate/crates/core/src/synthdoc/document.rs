//! Page layout: body lines, an optional bold heading and an optional ruled
//! table whose cell rules sit exactly where an underline would.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::{row_of, UNDERLINE_FRAC};
use super::{render_word_weighted, AttributeLabel, SynthConfig, WordCrop};
use crate::error::{Error, Result};
use crate::geometry::{DocumentLayout, WordBox};

/// Where a word sits on the page.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Body,
    Heading,
    /// A table cell: drawn with a rule under it, labelled without underline.
    Table,
}

/// A one-pixel rule drawn on the page between word boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizontalRule {
    pub y: usize,
    pub x0: usize,
    pub x1: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDocument {
    pub layout: DocumentLayout,
    pub crops: Vec<WordCrop>,
    pub regions: Vec<Region>,
    /// Seed of the RNG each crop was rendered from.
    pub word_seeds: Vec<u64>,
    pub ink_weight: f64,
    pub rules: Vec<HorizontalRule>,
}

/// Seed of document `index` in a corpus generated from `base`.
pub fn document_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_label<R: Rng>(mix: &[[f64; 4]; 4], rng: &mut R) -> AttributeLabel {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = AttributeLabel::NORMAL;
    for (t1, row) in mix.iter().enumerate() {
        for (t2, &p) in row.iter().enumerate() {
            if p > 0.0 {
                last = AttributeLabel { t1: t1 as u8, t2: t2 as u8 };
                acc += p;
                if u < acc {
                    return last;
                }
            }
        }
    }
    last
}

fn range<R: Rng>(rng: &mut R, r: [usize; 2]) -> usize {
    rng.random_range(r[0]..=r[1])
}

struct Placed {
    x: usize,
    y: usize,
    label: AttributeLabel,
    region: Region,
}

/// Generates one labeled document. The same config and seed always give a
/// bit-identical result.
pub fn generate_document(cfg: &SynthConfig, seed: u64) -> Result<SynthDocument> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.crop_height, cfg.crop_width);

    let n = range(&mut rng, cfg.words_per_doc);
    let [lo, hi] = cfg.ink_weight_range;
    let ink_weight = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let has_table = rng.random_bool(cfg.ambiguity_rate);
    let has_heading = rng.random_bool(cfg.ambiguity_rate);
    let (rows, cols) = (range(&mut rng, cfg.table_rows), range(&mut rng, cfg.table_cols));
    let heading_len = rng.random_range(2..=5usize);

    let cols = cols.min(n);
    let table_words = if has_table { (rows * cols).min(n - n % cols) } else { 0 };
    let heading_words = if has_heading { heading_len.min(n - table_words) } else { 0 };
    let body_words = n - table_words - heading_words;
    let body_before = rng.random_range(0..=body_words);

    let margin = w;
    let gap = w / 2;
    let x_jitter = (w / 8) as i64;
    let y_jitter = (h / 10) as i64;
    let line_pitch = h + h * 3 / 5;
    let row_pitch = h + h * 3 / 10;
    let col_pitch = 2 * w;
    let page_width = 2 * margin + cfg.words_per_line * (w + gap) + w;

    let mut placed: Vec<Placed> = Vec::with_capacity(n);
    let mut rules = Vec::new();
    let mut y = margin;

    let flow = |count: usize, region: Region, y: &mut usize, placed: &mut Vec<Placed>, rng: &mut ChaCha8Rng| {
        let mut col = 0;
        for i in 0..count {
            if col == cfg.words_per_line {
                col = 0;
                *y += line_pitch;
            }
            let label = match region {
                Region::Heading => AttributeLabel { t1: 1, t2: 0 },
                _ => sample_label(&cfg.class_mix, rng),
            };
            let dx = rng.random_range(-x_jitter..=x_jitter);
            let dy = rng.random_range(-y_jitter..=y_jitter);
            let x = (margin + col * (w + gap)) as i64 + dx;
            let yy = (*y as i64 + y_jitter) + dy;
            placed.push(Placed { x: x as usize, y: yy as usize, label, region });
            col += 1;
            if i + 1 == count {
                *y += line_pitch;
            }
        }
    };

    flow(heading_words, Region::Heading, &mut y, &mut placed, &mut rng);
    flow(body_before, Region::Body, &mut y, &mut placed, &mut rng);
    if table_words > 0 {
        let table_rows = table_words / cols;
        let under = row_of(h, UNDERLINE_FRAC);
        for r in 0..table_rows {
            let cy = y + r * row_pitch;
            for c in 0..cols {
                let t1 = sample_label(&cfg.class_mix, &mut rng).t1;
                placed.push(Placed { x: margin + c * col_pitch, y: cy, label: AttributeLabel { t1, t2: 0 }, region: Region::Table });
            }
            rules.push(HorizontalRule { y: cy + under, x0: margin, x1: margin + (cols - 1) * col_pitch + w });
        }
        y += table_rows * row_pitch + h / 2;
    }
    flow(body_words - body_before, Region::Body, &mut y, &mut placed, &mut rng);

    let page_width = page_width.max(margin * 2 + cols * col_pitch);
    let page_height = y + margin;

    let mut boxes = Vec::with_capacity(n);
    let mut crops = Vec::with_capacity(n);
    let mut regions = Vec::with_capacity(n);
    let mut word_seeds = Vec::with_capacity(n);
    for (id, p) in placed.iter().enumerate() {
        let word_seed: u64 = rng.random();
        let mut word_rng = ChaCha8Rng::seed_from_u64(word_seed);
        let drawn = match p.region {
            Region::Table => p.label.with_underline(),
            _ => p.label,
        };
        let mut crop = render_word_weighted(drawn, cfg, ink_weight, &mut word_rng);
        crop.label = p.label;
        boxes.push(
            WordBox::new(id, p.x as f64, p.y as f64, (p.x + w) as f64, (p.y + h) as f64).with_label(p.label),
        );
        crops.push(crop);
        regions.push(p.region);
        word_seeds.push(word_seed);
    }
    let layout = DocumentLayout::new(page_width as u32, page_height as u32, boxes)?;
    Ok(SynthDocument { layout, crops, regions, word_seeds, ink_weight, rules })
}

/// Grayscale page, `1.0` ink on a `0.0` background.
#[derive(Debug, Clone, PartialEq)]
pub struct PageImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl PageImage {
    pub fn blank(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0.0; width * height] }
    }

    /// Cuts out `b` and resizes it to `height × width`.
    pub fn crop(&self, b: &WordBox, height: usize, width: usize) -> Result<WordCrop> {
        let x0 = b.x_min.floor().max(0.0) as usize;
        let y0 = b.y_min.floor().max(0.0) as usize;
        let x1 = (b.x_max.ceil() as usize).min(self.width);
        let y1 = (b.y_max.ceil() as usize).min(self.height);
        if x1 <= x0 || y1 <= y0 {
            return Err(Error::invalid(format!("word box {} lies outside the page", b.id)));
        }
        let mut crop = WordCrop::blank(y1 - y0, x1 - x0, b.label.unwrap_or(AttributeLabel::NORMAL));
        for y in y0..y1 {
            for x in x0..x1 {
                crop.set(y - y0, x - x0, self.pixels[y * self.width + x]);
            }
        }
        Ok(crop.resized(height, width))
    }

    /// 8-bit grayscale with a white background.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (255.0 - 255.0 * v.clamp(0.0, 1.0)).round() as u8).collect()
    }

    pub fn from_gray8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height {
            return Err(Error::shape(format!("{width}x{height} page with {} bytes", bytes.len())));
        }
        Ok(Self { width, height, pixels: bytes.iter().map(|&b| 1.0 - b as f32 / 255.0).collect() })
    }
}

impl SynthDocument {
    /// Composites every crop at its box and draws table rules in the gaps
    /// between boxes, so cutting a box back out returns its crop exactly.
    pub fn render_page(&self) -> PageImage {
        let mut page = PageImage::blank(self.layout.width as usize, self.layout.height as usize);
        let mut covered = vec![false; page.pixels.len()];
        for (b, crop) in self.layout.boxes.iter().zip(&self.crops) {
            let (x0, y0) = (b.x_min as usize, b.y_min as usize);
            for y in 0..crop.height {
                for x in 0..crop.width {
                    let i = (y0 + y) * page.width + x0 + x;
                    page.pixels[i] = crop.get(y, x);
                    covered[i] = true;
                }
            }
        }
        for r in &self.rules {
            for x in r.x0..r.x1.min(page.width) {
                let i = r.y * page.width + x;
                if !covered[i] {
                    page.pixels[i] = 1.0;
                }
            }
        }
        page
    }

    pub fn labels(&self) -> Vec<AttributeLabel> {
        self.crops.iter().map(|c| c.label).collect()
    }
}
