use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which positional mechanism follows the context encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeVariant {
    /// No positional block; heads read the context encoder output.
    None,
    /// Fixed 2D sinusoid added before plain attention blocks.
    Ape,
    /// Learnable 32×32 position table added before plain attention blocks.
    Lpe,
    /// Attention blocks with rotary 2D mixed-frequency q/k rotation.
    RopeMixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Words per context window.
    pub s: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    /// Output channels of each stride-2 conv block in the feature extractor.
    pub fen_channels: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub tenc_layers: usize,
    pub rope_layers: usize,
    pub pe_variant: PeVariant,
    pub dual_head: bool,
    pub concat: bool,
    pub head_hidden: usize,
    pub dropout: f64,
    /// Softmax temperature used by the training loss.
    pub temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full model at the small default scale.
    pub fn desk() -> Self {
        Self {
            s: 16,
            crop_height: 32,
            crop_width: 24,
            fen_channels: vec![16, 32, 64, 128],
            d_model: 128,
            heads: 4,
            ffn_dim: 256,
            tenc_layers: 4,
            rope_layers: 2,
            pe_variant: PeVariant::RopeMixed,
            dual_head: true,
            concat: true,
            head_hidden: 128,
            dropout: 0.3,
            temperature: 0.25,
        }
    }

    /// Window of 125 words and 128×96 crops.
    pub fn full() -> Self {
        Self {
            s: 125,
            crop_height: 128,
            crop_width: 96,
            fen_channels: vec![32, 64, 128, 256],
            d_model: 256,
            heads: 8,
            ffn_dim: 1024,
            tenc_layers: 6,
            ..Self::desk()
        }
    }

    /// Tiny configuration for gradient checks and smoke tests.
    pub fn toy() -> Self {
        Self {
            s: 4,
            crop_height: 8,
            crop_width: 6,
            fen_channels: vec![4, 8],
            d_model: 32,
            heads: 2,
            ffn_dim: 32,
            tenc_layers: 1,
            rope_layers: 1,
            head_hidden: 16,
            ..Self::desk()
        }
    }

    /// Single-word comparator: feature extractor plus heads, no context.
    pub fn baseline() -> Self {
        Self::desk().as_baseline()
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "full" => Ok(Self::full()),
            "toy" => Ok(Self::toy()),
            "baseline" => Ok(Self::baseline()),
            other => Err(Error::config(format!("unknown model preset `{other}` (desk, full, toy, baseline)"))),
        }
    }

    pub fn as_baseline(&self) -> Self {
        Self { tenc_layers: 0, pe_variant: PeVariant::None, ..self.clone() }
    }

    /// The first-stage model: same extractor, encoder and heads, no
    /// positional block.
    pub fn stage1(&self) -> Self {
        Self { pe_variant: PeVariant::None, ..self.clone() }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn has_positional_block(&self) -> bool {
        self.pe_variant != PeVariant::None
    }

    /// Width of the vectors the classification heads read.
    pub fn head_input_dim(&self) -> usize {
        if self.has_positional_block() && self.concat {
            2 * self.d_model
        } else {
            self.d_model
        }
    }

    pub fn outputs(&self) -> usize {
        if self.dual_head {
            8
        } else {
            16
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.s == 0 {
            return Err(Error::config("window size S must be positive"));
        }
        if self.crop_height == 0 || self.crop_width == 0 {
            return Err(Error::config("crop size must be positive"));
        }
        let expected_w = self.crop_height as f64 * 3.0 / 4.0;
        if (self.crop_width as f64 - expected_w).abs() > 1.0 {
            return Err(Error::config(format!(
                "crop {}x{} is not 4:3 (height:width)",
                self.crop_height, self.crop_width
            )));
        }
        if self.fen_channels.is_empty() || self.fen_channels.contains(&0) {
            return Err(Error::config("fen_channels must be a non-empty list of positive widths"));
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(Error::config(format!("d_model {} not divisible by heads {}", self.d_model, self.heads)));
        }
        if self.ffn_dim == 0 || self.head_hidden == 0 {
            return Err(Error::config("ffn_dim and head_hidden must be positive"));
        }
        match self.pe_variant {
            PeVariant::RopeMixed if !self.head_dim().is_multiple_of(2) => {
                return Err(Error::config("RoPE-Mixed needs an even head dimension"));
            }
            PeVariant::Ape if !self.d_model.is_multiple_of(4) => {
                return Err(Error::config("APE needs d_model divisible by 4"));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout must lie in [0, 1)"));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("temperature must be positive"));
        }
        Ok(())
    }
}
