//! Training-time photometric and geometric augmentation. Labels are never
//! changed.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::WordCrop;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationPolicy {
    pub prob: f64,
    pub max_degrees: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlurPolicy {
    pub prob: f64,
    pub sigma: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColorJitterPolicy {
    pub prob: f64,
    /// Additive brightness offset drawn from `[-brightness, brightness]`.
    pub brightness: f64,
    /// Contrast factor drawn from `[1 - contrast, 1 + contrast]`.
    pub contrast: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlipPolicy {
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffinePolicy {
    pub prob: f64,
    /// Translation in pixels per 32 px of crop height.
    pub translate: f64,
    pub scale: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct AugmentPolicy {
    pub rotation: RotationPolicy,
    pub blur: BlurPolicy,
    pub color_jitter: ColorJitterPolicy,
    pub horizontal_flip: FlipPolicy,
    pub affine: AffinePolicy,
}

impl Default for RotationPolicy {
    fn default() -> Self {
        Self { prob: 0.2, max_degrees: 3.0 }
    }
}

impl Default for BlurPolicy {
    fn default() -> Self {
        Self { prob: 0.2, sigma: [0.3, 0.7] }
    }
}

impl Default for ColorJitterPolicy {
    fn default() -> Self {
        Self { prob: 0.3, brightness: 0.1, contrast: 0.2 }
    }
}

impl Default for FlipPolicy {
    fn default() -> Self {
        Self { prob: 0.1 }
    }
}

impl Default for AffinePolicy {
    fn default() -> Self {
        Self { prob: 0.2, translate: 1.0, scale: [0.95, 1.05] }
    }
}


impl AugmentPolicy {
    /// A policy that never fires.
    pub fn disabled() -> Self {
        Self {
            rotation: RotationPolicy { prob: 0.0, ..Default::default() },
            blur: BlurPolicy { prob: 0.0, ..Default::default() },
            color_jitter: ColorJitterPolicy { prob: 0.0, ..Default::default() },
            horizontal_flip: FlipPolicy { prob: 0.0 },
            affine: AffinePolicy { prob: 0.0, ..Default::default() },
        }
    }

    pub fn is_disabled(&self) -> bool {
        [
            self.rotation.prob,
            self.blur.prob,
            self.color_jitter.prob,
            self.horizontal_flip.prob,
            self.affine.prob,
        ]
        .iter()
        .all(|&p| p <= 0.0)
    }
}

fn uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Applies each enabled transform with its probability, in the order
/// rotation, affine, flip, blur, color jitter. Every transform draws its
/// parameters whether or not it fires so the RNG stream has a fixed length.
pub fn augment<R: Rng>(crop: &WordCrop, policy: &AugmentPolicy, rng: &mut R) -> WordCrop {
    let mut out = crop.clone();

    let fire = rng.random::<f64>() < policy.rotation.prob;
    let angle = uniform(rng, -policy.rotation.max_degrees, policy.rotation.max_degrees);
    if fire {
        out = rotate(&out, angle);
    }

    let fire = rng.random::<f64>() < policy.affine.prob;
    let t = policy.affine.translate * crop.height as f64 / 32.0;
    let (tx, ty) = (uniform(rng, -t, t), uniform(rng, -t, t));
    let s = uniform(rng, policy.affine.scale[0], policy.affine.scale[1]);
    if fire {
        out = affine(&out, s, tx, ty);
    }

    if rng.random::<f64>() < policy.horizontal_flip.prob {
        out = horizontal_flip(&out);
    }

    let fire = rng.random::<f64>() < policy.blur.prob;
    let sigma = uniform(rng, policy.blur.sigma[0], policy.blur.sigma[1]);
    if fire {
        out = gaussian_blur(&out, sigma);
    }

    let fire = rng.random::<f64>() < policy.color_jitter.prob;
    let b = uniform(rng, -policy.color_jitter.brightness, policy.color_jitter.brightness);
    let c = uniform(rng, 1.0 - policy.color_jitter.contrast, 1.0 + policy.color_jitter.contrast);
    if fire {
        out = color_jitter(&out, b, c);
    }
    out
}

/// Rotation about the crop center with bilinear sampling.
pub fn rotate(crop: &WordCrop, degrees: f64) -> WordCrop {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((crop.height as f64 - 1.0) / 2.0, (crop.width as f64 - 1.0) / 2.0);
    warp(crop, |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (cy - sin * dx + cos * dy, cx + cos * dx + sin * dy)
    })
}

/// Scale about the center followed by a translation.
pub fn affine(crop: &WordCrop, scale: f64, tx: f64, ty: f64) -> WordCrop {
    let (cy, cx) = ((crop.height as f64 - 1.0) / 2.0, (crop.width as f64 - 1.0) / 2.0);
    warp(crop, |y, x| (cy + (y - ty - cy) / scale, cx + (x - tx - cx) / scale))
}

fn warp(crop: &WordCrop, src: impl Fn(f64, f64) -> (f64, f64)) -> WordCrop {
    let mut out = WordCrop::blank(crop.height, crop.width, crop.label);
    for y in 0..crop.height {
        for x in 0..crop.width {
            let (sy, sx) = src(y as f64, x as f64);
            out.set(y, x, crop.sample(sy, sx));
        }
    }
    out.clamp();
    out
}

pub fn horizontal_flip(crop: &WordCrop) -> WordCrop {
    let mut out = crop.clone();
    for y in 0..crop.height {
        for x in 0..crop.width {
            out.set(y, x, crop.get(y, crop.width - 1 - x));
        }
    }
    out
}

/// Separable Gaussian blur with clamped borders. `sigma <= 0` is identity.
pub fn gaussian_blur(crop: &WordCrop, sigma: f64) -> WordCrop {
    if sigma <= 0.0 {
        return crop.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (crop.height as isize, crop.width as isize);
    let pass = |src: &WordCrop, horizontal: bool| -> WordCrop {
        let mut out = WordCrop::blank(src.height, src.width, src.label);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, k) in (-radius..=radius).zip(&kernel) {
                    let (yy, xx) = if horizontal { (y, (x + i).clamp(0, w - 1)) } else { ((y + i).clamp(0, h - 1), x) };
                    acc += k * src.get(yy as usize, xx as usize) as f64;
                }
                out.set(y as usize, x as usize, acc as f32);
            }
        }
        out
    };
    let mut out = pass(&pass(crop, true), false);
    out.clamp();
    out
}

/// `v' = clamp((v − mean)·contrast + mean + brightness)`.
pub fn color_jitter(crop: &WordCrop, brightness: f64, contrast: f64) -> WordCrop {
    if brightness == 0.0 && contrast == 1.0 {
        return crop.clone();
    }
    let mean = crop.pixels.iter().map(|&v| v as f64).sum::<f64>() / crop.pixels.len() as f64;
    let mut out = crop.clone();
    for v in &mut out.pixels {
        *v = (((*v as f64 - mean) * contrast + mean + brightness).clamp(0.0, 1.0)) as f32;
    }
    out
}

/// Sum of absolute differences between neighbouring pixels.
pub fn total_variation(crop: &WordCrop) -> f64 {
    let mut tv = 0.0;
    for y in 0..crop.height {
        for x in 0..crop.width {
            let v = crop.get(y, x) as f64;
            if x + 1 < crop.width {
                tv += (crop.get(y, x + 1) as f64 - v).abs();
            }
            if y + 1 < crop.height {
                tv += (crop.get(y + 1, x) as f64 - v).abs();
            }
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdoc::{render_word, AttributeLabel, SynthConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_crop() -> WordCrop {
        render_word(AttributeLabel::new(1, 1).unwrap(), &SynthConfig::default(), &mut ChaCha8Rng::seed_from_u64(2))
    }

    #[test]
    fn disabled_policy_is_identity() {
        let crop = sample_crop();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert_eq!(augment(&crop, &AugmentPolicy::disabled(), &mut rng), crop);
        }
    }

    #[test]
    fn zero_strength_transforms_are_identity() {
        let crop = sample_crop();
        let close = |a: &WordCrop| a.pixels.iter().zip(&crop.pixels).all(|(x, y)| (x - y).abs() < 1e-6);
        assert!(close(&rotate(&crop, 0.0)));
        assert!(close(&gaussian_blur(&crop, 0.0)));
        assert!(close(&color_jitter(&crop, 0.0, 1.0)));
        assert!(close(&affine(&crop, 1.0, 0.0, 0.0)));
        assert_eq!(horizontal_flip(&horizontal_flip(&crop)), crop);
    }

    #[test]
    fn blur_lowers_total_variation() {
        let crop = sample_crop();
        assert!(total_variation(&gaussian_blur(&crop, 2.0)) < total_variation(&crop));
    }

    #[test]
    fn labels_and_range_preserved() {
        let crop = sample_crop();
        let policy = AugmentPolicy {
            rotation: RotationPolicy { prob: 1.0, max_degrees: 10.0 },
            blur: BlurPolicy { prob: 1.0, sigma: [0.5, 1.5] },
            color_jitter: ColorJitterPolicy { prob: 1.0, brightness: 0.5, contrast: 0.8 },
            horizontal_flip: FlipPolicy { prob: 0.5 },
            affine: AffinePolicy { prob: 1.0, translate: 3.0, scale: [0.8, 1.2] },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let out = augment(&crop, &policy, &mut rng);
            assert_eq!(out.label, crop.label);
            assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
