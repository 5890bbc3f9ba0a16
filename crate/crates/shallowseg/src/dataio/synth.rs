//! Synthetic elliptical-blob segmentation benchmark.
//!
//! Each image holds one smooth elliptical blob over a textured background
//! sprinkled with small blob-colored distractor speckles, so a model needs
//! context beyond local color to avoid false positives. Area fractions are
//! drawn from a configurable range skewed toward small targets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{augment::rng_for_sample, Sample};
use crate::colorimetry::ImageRGB;
use crate::metrics::MaskGT;

/// Global color regime. The confound palettes give train and test splits
/// systematically shifted color casts while keeping shapes identically
/// distributed; they exist to measure how much a model leans on absolute
/// color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Palette {
    Standard,
    ConfoundTrain,
    ConfoundTest,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BlobSpec {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Open interval of admissible foreground area fractions.
    pub size_range: (f64, f64),
    pub seed: u64,
    pub palette: Palette,
}

impl BlobSpec {
    pub fn new(count: usize, height: usize, width: usize, seed: u64) -> Self {
        Self {
            count,
            height,
            width,
            size_range: (0.01, 0.15),
            seed,
            palette: Palette::Standard,
        }
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos_t: f64,
    sin_t: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let dy = y - self.cy;
        let dx = x - self.cx;
        let u = (dx * self.cos_t + dy * self.sin_t) / self.a;
        let v = (-dx * self.sin_t + dy * self.cos_t) / self.b;
        u * u + v * v <= 1.0
    }
}

fn rasterize(e: &Ellipse, h: usize, w: usize) -> (Vec<u8>, usize) {
    let mut mask = vec![0u8; h * w];
    let mut count = 0;
    let r = e.a.max(e.b);
    let y_lo = ((e.cy - r).floor().max(0.0)) as usize;
    let y_hi = ((e.cy + r).ceil() as usize + 1).min(h);
    let x_lo = ((e.cx - r).floor().max(0.0)) as usize;
    let x_hi = ((e.cx + r).ceil() as usize + 1).min(w);
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            if e.contains(y as f64 + 0.5, x as f64 + 0.5) {
                mask[y * w + x] = 1;
                count += 1;
            }
        }
    }
    (mask, count)
}

/// Build the blob mask, rescaling the axes until the pixel-counted area
/// fraction lands inside `size_range`.
fn blob_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, size_range: (f64, f64)) -> (Vec<u8>, Ellipse) {
    let (lo, hi) = size_range;
    let span = hi - lo;
    // Aim inside the interval so rasterization error stays in range.
    let target = rng.gen_range(lo + 0.15 * span..hi - 0.15 * span);
    let ratio: f64 = rng.gen_range(0.6..1.6);
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let area = target * (h * w) as f64;
    let r0 = (area / std::f64::consts::PI).sqrt();
    let mut a = r0 * ratio.sqrt();
    let mut b = r0 / ratio.sqrt();
    let margin = a.max(b) + 1.0;
    let cy = rng.gen_range(margin..h as f64 - margin);
    let cx = rng.gen_range(margin..w as f64 - margin);
    let mut ellipse = Ellipse { cy, cx, a, b, cos_t: theta.cos(), sin_t: theta.sin() };
    for _ in 0..12 {
        let (mask, count) = rasterize(&ellipse, h, w);
        let frac = count as f64 / (h * w) as f64;
        if frac > lo && frac < hi {
            return (mask, ellipse);
        }
        let adjust = (target / frac.max(1e-9)).sqrt().clamp(0.5, 2.0);
        a *= adjust;
        b *= adjust;
        ellipse.a = a;
        ellipse.b = b;
    }
    let (mask, _) = rasterize(&ellipse, h, w);
    (mask, ellipse)
}

/// Warm–cool axis for the confound palettes: positive multiples push red up
/// and blue down, negative the reverse.
const CAST_AXIS: [f64; 3] = [0.11, 0.02, -0.11];

fn cast_for(palette: Palette, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let t = match palette {
        Palette::Standard => 0.0,
        // Per-image casts spread over the whole axis: statistics-swap
        // augmentation can recombine them freely.
        Palette::ConfoundTrain => rng.gen_range(-1.0..1.0),
        // Cool casts extrapolated beyond the training range, so absolute
        // colors are off-distribution while local contrast is unchanged.
        Palette::ConfoundTest => rng.gen_range(-1.8..-1.25),
    };
    [CAST_AXIS[0] * t, CAST_AXIS[1] * t, CAST_AXIS[2] * t]
}

/// Generate `spec.count` samples. Fixed seed gives a bit-identical dataset;
/// sample `i` uses RNG stream `(seed, i)`.
pub fn synth_blobs(spec: &BlobSpec) -> Vec<Sample> {
    assert!(
        spec.size_range.0 > 0.0 && spec.size_range.1 < 1.0 && spec.size_range.0 < spec.size_range.1,
        "size_range must be a sub-interval of (0,1)"
    );
    let (h, w) = (spec.height, spec.width);
    (0..spec.count)
        .map(|i| {
            let mut rng = rng_for_sample(spec.seed, i as u64);
            let cast = cast_for(spec.palette, &mut rng);

            let bg_base = [
                0.62 + rng.gen_range(-0.08..0.08),
                0.47 + rng.gen_range(-0.08..0.08),
                0.40 + rng.gen_range(-0.08..0.08),
            ];
            let fg_base = [
                0.80 + rng.gen_range(-0.06..0.06),
                0.33 + rng.gen_range(-0.06..0.06),
                0.30 + rng.gen_range(-0.06..0.06),
            ];
            // Low-frequency texture waves.
            let (fy1, fx1) = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);

            let (mask, _) = blob_mask(&mut rng, h, w, spec.size_range);

            // Distractor speckles share the blob color family.
            let n_speckles = rng.gen_range(5..10);
            let speckles: Vec<Ellipse> = (0..n_speckles)
                .map(|_| {
                    let r: f64 = rng.gen_range(1.0..2.3);
                    Ellipse {
                        cy: rng.gen_range(2.0..h as f64 - 2.0),
                        cx: rng.gen_range(2.0..w as f64 - 2.0),
                        a: r,
                        b: r * rng.gen_range(0.7..1.3),
                        cos_t: 1.0,
                        sin_t: 0.0,
                    }
                })
                .collect();

            let mut data = Vec::with_capacity(h * w * 3);
            for y in 0..h {
                for x in 0..w {
                    let wave = 0.06
                        * (std::f64::consts::TAU
                            * (fy1 * y as f64 / h as f64 + fx1 * x as f64 / w as f64)
                            + phase)
                            .sin();
                    let noise = rng.gen_range(-0.03..0.03);
                    let yc = y as f64 + 0.5;
                    let xc = x as f64 + 0.5;
                    let in_blob = mask[y * w + x] == 1;
                    let in_speckle =
                        !in_blob && speckles.iter().any(|s| s.contains(yc, xc));
                    let base = if in_blob || in_speckle { fg_base } else { bg_base };
                    for c in 0..3 {
                        let v = base[c] + wave + noise + cast[c];
                        data.push(v.clamp(0.0, 1.0));
                    }
                }
            }
            Sample {
                image: ImageRGB::new(w, h, data),
                mask: MaskGT::new(h, w, mask),
                id: format!("blob_{i:04}"),
            }
        })
        .collect()
}
