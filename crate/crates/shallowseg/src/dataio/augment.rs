//! Training-time augmentation: color exchange, flips, right-angle rotation,
//! scale jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{resize_sample, Sample};
use crate::colorimetry::{color_exchange, ImageRGB};
use crate::metrics::MaskGT;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AugmentConfig {
    /// Probability of a horizontal flip, and independently of a vertical one.
    pub flip_p: f64,
    /// Probability of rotating by an angle drawn from `angles`.
    pub rotate_p: f64,
    /// Right angles only, so masks never need interpolation.
    pub angles: Vec<u32>,
    /// Resolution multipliers for scale jitter.
    pub scales: Vec<f64>,
    pub color_exchange: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_p: 0.5,
            rotate_p: 0.5,
            angles: vec![90, 180, 270],
            scales: vec![0.75, 1.0, 1.25],
            color_exchange: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Identity pipeline; useful as a baseline and in tests.
    pub fn identity() -> Self {
        Self {
            flip_p: 0.0,
            rotate_p: 0.0,
            angles: vec![90, 180, 270],
            scales: vec![1.0],
            color_exchange: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.flip_p) || !(0.0..=1.0).contains(&self.rotate_p) {
            return Err("augment probabilities must lie in [0,1]".into());
        }
        if self.angles.iter().any(|a| a % 90 != 0) {
            return Err("rotation angles must be multiples of 90 degrees".into());
        }
        if self.scales.is_empty() || self.scales.iter().any(|&s| s <= 0.0) {
            return Err("scale multipliers must be positive and non-empty".into());
        }
        Ok(())
    }
}

/// RNG stream for one sample: parallel and serial batch assembly draw the
/// same numbers.
pub fn rng_for_sample(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn flip_h(data: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                out[(y * w + x) * ch + c] = data[(y * w + (w - 1 - x)) * ch + c];
            }
        }
    }
    out
}

fn flip_v(data: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        let src = &data[(h - 1 - y) * w * ch..(h - y) * w * ch];
        out[y * w * ch..(y + 1) * w * ch].copy_from_slice(src);
    }
    out
}

/// Rotate counter-clockwise by 90 degrees; output is w×h.
fn rot90(data: &[f64], h: usize, w: usize, ch: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let (ny, nx) = (w - 1 - x, y);
            for c in 0..ch {
                out[(ny * h + nx) * ch + c] = data[(y * w + x) * ch + c];
            }
        }
    }
    out
}

fn mask_to_f64(m: &MaskGT) -> Vec<f64> {
    m.data.iter().map(|&v| f64::from(v)).collect()
}

fn f64_to_mask(data: Vec<f64>, h: usize, w: usize) -> MaskGT {
    MaskGT::new(h, w, data.into_iter().map(|v| u8::from(v > 0.5)).collect())
}

/// Apply the configured pipeline in order: color exchange (image only),
/// flips, rotation, scale jitter. Geometric transforms hit image and mask
/// identically; deterministic given the RNG state.
pub fn augment(
    sample: &Sample,
    partner: &Sample,
    cfg: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Sample {
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();

    if cfg.color_exchange {
        let (exchanged, _) = color_exchange(&image, &partner.image);
        image = exchanged;
    }

    let do_h = rng.gen_bool(cfg.flip_p);
    let do_v = rng.gen_bool(cfg.flip_p);
    let (mut h, mut w) = (image.height, image.width);
    let mut img_data = image.data;
    let mut mask_data = mask_to_f64(&mask);
    if do_h {
        img_data = flip_h(&img_data, h, w, 3);
        mask_data = flip_h(&mask_data, h, w, 1);
    }
    if do_v {
        img_data = flip_v(&img_data, h, w, 3);
        mask_data = flip_v(&mask_data, h, w, 1);
    }

    let rotate = rng.gen_bool(cfg.rotate_p);
    let angle = if cfg.angles.is_empty() {
        0
    } else {
        cfg.angles[rng.gen_range(0..cfg.angles.len())] % 360
    };
    if rotate {
        for _ in 0..angle / 90 {
            img_data = rot90(&img_data, h, w, 3);
            mask_data = rot90(&mask_data, h, w, 1);
            std::mem::swap(&mut h, &mut w);
        }
    }

    image = ImageRGB::new(w, h, img_data);
    mask = f64_to_mask(mask_data, h, w);
    let out = Sample { image, mask, id: sample.id.clone() };

    let scale = cfg.scales[rng.gen_range(0..cfg.scales.len())];
    if (scale - 1.0).abs() < f64::EPSILON {
        out
    } else {
        let oh = ((out.image.height as f64 * scale).round() as usize).max(1);
        let ow = ((out.image.width as f64 * scale).round() as usize).max(1);
        resize_sample(&out, oh, ow)
    }
}
