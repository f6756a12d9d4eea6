use serde::{Deserialize, Serialize};

use super::AttributeLabel;
use crate::error::{Error, Result};

/// Grayscale word image, row-major, `0.0` background and `1.0` full ink.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordCrop {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub label: AttributeLabel,
}

impl WordCrop {
    pub fn blank(height: usize, width: usize, label: AttributeLabel) -> Self {
        Self { height, width, pixels: vec![0.0; height * width], label }
    }

    pub fn from_pixels(height: usize, width: usize, pixels: Vec<f32>, label: AttributeLabel) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::shape(format!("{height}x{width} crop with {} pixels", pixels.len())));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("crop pixels must lie in [0, 1]"));
        }
        Ok(Self { height, width, pixels, label })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Bilinear sample with zero outside the image.
    pub fn sample(&self, y: f64, x: f64) -> f32 {
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let at = |yy: isize, xx: isize| -> f32 {
            if yy < 0 || xx < 0 || yy >= self.height as isize || xx >= self.width as isize {
                0.0
            } else {
                self.pixels[yy as usize * self.width + xx as usize]
            }
        };
        let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
        let bottom = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn clamp(&mut self) {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear resize to `height × width`.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Self::blank(height, width, self.label);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            for x in 0..width {
                let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
                let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                out.set(y, x, self.sample(src_y, src_x));
            }
        }
        out.clamp();
        out
    }
}
