//! On-disk formats: JSON-lines annotations and windows, grayscale PNG pages,
//! the packed crop archive and the dataset directory that ties them together.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::dataset::{Dataset, DocWindow, LabeledDocument};
use crate::error::{Error, Result};
use crate::geometry::{DocumentLayout, WordBox};
use crate::synthdoc::{AttributeLabel, PageImage, WordCrop};

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const CROPS_FILE: &str = "crops.bin";
pub const CROP_ARCHIVE_MAGIC: &[u8; 8] = b"TXTRCROP";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationWord {
    pub id: usize,
    pub bbox: [f64; 4],
    pub t1: Option<u8>,
    pub t2: Option<u8>,
}

/// One line of an annotation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image: String,
    pub width: u32,
    pub height: u32,
    pub words: Vec<AnnotationWord>,
}

impl AnnotationRecord {
    pub fn from_layout(image: impl Into<String>, layout: &DocumentLayout) -> Self {
        let words = layout
            .boxes
            .iter()
            .map(|b| AnnotationWord {
                id: b.id,
                bbox: [b.x_min, b.y_min, b.x_max, b.y_max],
                t1: b.label.map(|l| l.t1),
                t2: b.label.map(|l| l.t2),
            })
            .collect();
        Self { image: image.into(), width: layout.width, height: layout.height, words }
    }

    /// Validated layout. A word carries a label only when both groups are
    /// given; giving one without the other is an error.
    pub fn to_layout(&self) -> Result<DocumentLayout> {
        let boxes = self
            .words
            .iter()
            .map(|w| {
                let [x0, y0, x1, y1] = w.bbox;
                let b = WordBox::new(w.id, x0, y0, x1, y1);
                match (w.t1, w.t2) {
                    (Some(t1), Some(t2)) => Ok(b.with_label(AttributeLabel::new(t1, t2)?)),
                    (None, None) => Ok(b),
                    _ => Err(Error::Format(format!("{}: word {} has only one of t1/t2", self.image, w.id))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        DocumentLayout::new(self.width, self.height, boxes)
    }
}

/// One line of a window file. Padded slots are `null` members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowRecord {
    pub doc: String,
    pub anchor: usize,
    pub members: Vec<Option<usize>>,
    pub mask: Vec<bool>,
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn window_records(dataset: &Dataset, windows: &[DocWindow]) -> Vec<WindowRecord> {
    windows
        .iter()
        .map(|w| WindowRecord {
            doc: dataset.docs[w.doc].id.clone(),
            anchor: w.window.anchor_id,
            members: w.window.members.clone(),
            mask: w.window.padding_mask.clone(),
        })
        .collect()
}

/// Writes an 8-bit grayscale PNG with a white background.
pub fn write_page_png(path: impl AsRef<Path>, page: &PageImage) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(w, page.width as u32, page.height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    writer.write_image_data(&page.to_gray8()).map_err(|e| Error::Format(e.to_string()))?;
    writer.finish().map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Reads a PNG of any common color type as a grayscale page.
pub fn read_page_png(path: impl AsRef<Path>) -> Result<PageImage> {
    let path = path.as_ref();
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Format("PNG too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let bytes = &buf[..info.buffer_size()];
    let gray: Vec<u8> = match info.color_type {
        png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha => bytes.chunks(channels).map(|p| p[0]).collect(),
        png::ColorType::Rgb | png::ColorType::Rgba => bytes
            .chunks(channels)
            .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).round() as u8)
            .collect(),
        other => return Err(Error::Format(format!("{}: unsupported PNG color type {other:?}", path.display()))),
    };
    PageImage::from_gray8(w, h, &gray)
}

/// Packed crops: magic, `u64` count, `u32` height, `u32` width, then every
/// crop as row-major little-endian `f32`.
pub fn write_crop_archive(path: impl AsRef<Path>, crops: &[&WordCrop]) -> Result<()> {
    let (h, w) = crops.first().map_or((0, 0), |c| (c.height, c.width));
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(CROP_ARCHIVE_MAGIC)?;
    out.write_all(&(crops.len() as u64).to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    for c in crops {
        if c.height != h || c.width != w {
            return Err(Error::shape("all crops in an archive must share one size"));
        }
        for v in &c.pixels {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Returns `(height, width, pixels per crop)`.
pub fn read_crop_archive(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<Vec<f32>>)> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 24 || &bytes[..8] != CROP_ARCHIVE_MAGIC {
        return Err(Error::Format("not a crop archive".into()));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let h = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[20..24].try_into().expect("4 bytes")) as usize;
    let body = &bytes[24..];
    if body.len() != count * h * w * 4 {
        return Err(Error::Format(format!("crop archive body has {} bytes, header implies {}", body.len(), count * h * w * 4)));
    }
    let floats: Vec<f32> = body.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    let crops = if h * w == 0 { vec![Vec::new(); count] } else { floats.chunks(h * w).map(|c| c.to_vec()).collect() };
    Ok((h, w, crops))
}

/// Writes `annotations.jsonl`, the crop archive and, when given, one PNG per
/// document at the path named by its id (relative to `dir`).
pub fn save_dataset(dir: impl AsRef<Path>, dataset: &Dataset, pages: Option<&[PageImage]>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let records: Vec<_> = dataset.docs.iter().map(|d| AnnotationRecord::from_layout(d.id.clone(), &d.layout)).collect();
    write_jsonl(dir.join(ANNOTATIONS_FILE), &records)?;
    let crops: Vec<&WordCrop> = dataset.docs.iter().flat_map(|d| d.crops.iter()).collect();
    write_crop_archive(dir.join(CROPS_FILE), &crops)?;
    if let Some(pages) = pages {
        for (d, page) in dataset.docs.iter().zip(pages) {
            let path = dir.join(&d.id);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            write_page_png(path, page)?;
        }
    }
    Ok(())
}

fn resolve(base: &Path, image: &str) -> PathBuf {
    let p = Path::new(image);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Crops every word of `record` out of its page image, resized to
/// `height × width`. Unlabelled words get the normal label.
pub fn crops_from_page(record: &AnnotationRecord, base: &Path, height: usize, width: usize) -> Result<(DocumentLayout, Vec<WordCrop>)> {
    let layout = record.to_layout()?;
    let page = read_page_png(resolve(base, &record.image))?;
    let crops = layout
        .boxes
        .iter()
        .map(|b| {
            let mut c = page.crop(b, height, width)?;
            c.label = b.label.unwrap_or(AttributeLabel::NORMAL);
            Ok(c)
        })
        .collect::<Result<_>>()?;
    Ok((layout, crops))
}

/// Loads an annotation file as a dataset. Crops come from `crops.bin` next
/// to the annotations when it matches the word count, otherwise from the
/// page images. With `require_labels`, every word must be labelled.
pub fn load_annotations(path: impl AsRef<Path>, height: usize, width: usize, require_labels: bool) -> Result<Dataset> {
    let path = path.as_ref();
    let base = path.parent().unwrap_or(Path::new("."));
    let records: Vec<AnnotationRecord> = read_jsonl(path)?;
    let archive = base.join(CROPS_FILE);
    let packed = if archive.exists() { Some(read_crop_archive(&archive)?) } else { None };
    let total: usize = records.iter().map(|r| r.words.len()).sum();
    let packed = packed.filter(|(_, _, crops)| crops.len() == total);

    let mut docs = Vec::with_capacity(records.len());
    let mut offset = 0;
    for r in &records {
        let (layout, crops) = match &packed {
            Some((h, w, all)) => {
                let layout = r.to_layout()?;
                let crops = layout
                    .boxes
                    .iter()
                    .zip(&all[offset..offset + r.words.len()])
                    .map(|(b, px)| {
                        let c = WordCrop::from_pixels(*h, *w, px.clone(), b.label.unwrap_or(AttributeLabel::NORMAL))?;
                        Ok(c.resized(height, width))
                    })
                    .collect::<Result<Vec<_>>>()?;
                (layout, crops)
            }
            None => crops_from_page(r, base, height, width)?,
        };
        offset += r.words.len();
        if require_labels {
            if let Some(b) = layout.boxes.iter().find(|b| b.label.is_none()) {
                return Err(Error::Format(format!("{}: word {} has no label", r.image, b.id)));
            }
        }
        docs.push(LabeledDocument::new(r.image.clone(), layout, crops)?);
    }
    Ok(Dataset { docs })
}

/// [`load_annotations`] on `dir/annotations.jsonl`.
pub fn load_dataset(dir: impl AsRef<Path>, height: usize, width: usize) -> Result<Dataset> {
    load_annotations(dir.as_ref().join(ANNOTATIONS_FILE), height, width, true)
}
