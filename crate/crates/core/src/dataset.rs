//! In-memory labeled documents and the windows drawn from them.

use crate::error::{Error, Result};
use crate::geometry::{sequential_context_windows, ContextWindow, DocumentLayout, GeometryConfig};
use crate::synthdoc::{document_seed, generate_document, AttributeLabel, SynthConfig, WordCrop};

/// One page: its layout and one crop per word, indexed by word id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDocument {
    pub id: String,
    pub layout: DocumentLayout,
    pub crops: Vec<WordCrop>,
}

impl LabeledDocument {
    pub fn new(id: impl Into<String>, layout: DocumentLayout, crops: Vec<WordCrop>) -> Result<Self> {
        let id = id.into();
        if crops.len() != layout.boxes.len() {
            return Err(Error::invalid(format!(
                "document {id}: {} crops for {} word boxes",
                crops.len(),
                layout.boxes.len()
            )));
        }
        Ok(Self { id, layout, crops })
    }

    pub fn labels(&self) -> Vec<AttributeLabel> {
        self.crops.iter().map(|c| c.label).collect()
    }
}

/// A window together with the index of the document it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DocWindow {
    pub doc: usize,
    pub window: ContextWindow,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub docs: Vec<LabeledDocument>,
}

impl Dataset {
    /// `count` synthetic documents; document `i` uses `document_seed(seed, i)`
    /// and is named `images/doc{i:05}.png`.
    pub fn synthesize(cfg: &SynthConfig, count: usize, seed: u64) -> Result<Self> {
        let docs = (0..count)
            .map(|i| {
                let doc = generate_document(cfg, document_seed(seed, i as u64))?;
                LabeledDocument::new(format!("images/doc{i:05}.png"), doc.layout, doc.crops)
            })
            .collect::<Result<_>>()?;
        Ok(Self { docs })
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn words(&self) -> usize {
        self.docs.iter().map(|d| d.crops.len()).sum()
    }

    /// Sequential context windows over every document; document `i` draws
    /// its anchors with `document_seed(seed, i)`.
    pub fn windows(&self, geometry: &GeometryConfig, seed: u64) -> Result<Vec<DocWindow>> {
        geometry.validate()?;
        let mut out = Vec::new();
        for (i, d) in self.docs.iter().enumerate() {
            let wins = sequential_context_windows(&d.layout, geometry.s, geometry.k, geometry.m, document_seed(seed, i as u64))?;
            out.extend(wins.into_iter().map(|window| DocWindow { doc: i, window }));
        }
        Ok(out)
    }
}
