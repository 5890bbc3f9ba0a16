//! sRGB / CIE-L*a*b* conversion, per-channel statistics, and color exchange.
//!
//! All conversions run in f64. Images are stored as real-valued interleaved
//! RGB in [0,1]; 8-bit quantization happens only at file I/O.

/// D65 white point (matches the row sums of [`RGB_TO_XYZ`]).
const WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

/// Linear sRGB -> XYZ, D65. The standard 7-digit matrix with the Y row
/// nudged in its last digit so each row sums exactly to the pinned white
/// point (the textbook values sum to 1.0000001 in Y, which would push
/// white a few 1e-6 off L*=100).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721749],
    [0.0193339, 0.1191920, 0.9503041],
];

const EPS_STD: f64 = 1e-6;

/// H×W×3 image of sRGB components in [0,1], row-major, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRGB {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// H×W×3 image of (L*, a*, b*) values.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageLAB {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// Per-LAB-channel mean and population standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl ImageRGB {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        assert_eq!(data.len(), width * height * 3, "data length mismatch");
        debug_assert!(data.iter().all(|&v| (0.0..=1.0).contains(&v)));
        Self { width, height, data }
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self::new(width, height, data)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

impl ImageLAB {
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.0031308 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

// CIE f(t), threshold (6/29)^3.
#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

#[inline]
fn lab_f_inv(ft: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if ft > DELTA {
        ft * ft * ft
    } else {
        3.0 * DELTA * DELTA * (ft - 4.0 / 29.0)
    }
}

#[inline]
fn rgb_pixel_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let (rl, gl, bl) = (srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
    let m = &RGB_TO_XYZ;
    let x = m[0][0] * rl + m[0][1] * gl + m[0][2] * bl;
    let y = m[1][0] * rl + m[1][1] * gl + m[1][2] * bl;
    let z = m[2][0] * rl + m[2][1] * gl + m[2][2] * bl;
    let fx = lab_f(x / WHITE[0]);
    let fy = lab_f(y / WHITE[1]);
    let fz = lab_f(z / WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn xyz_to_rgb_matrix() -> [[f64; 3]; 3] {
    invert3(&RGB_TO_XYZ)
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let inv_det = 1.0 / det;
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let a = m[(j + 1) % 3][(i + 1) % 3] * m[(j + 2) % 3][(i + 2) % 3];
            let b = m[(j + 1) % 3][(i + 2) % 3] * m[(j + 2) % 3][(i + 1) % 3];
            out[i][j] = (a - b) * inv_det;
        }
    }
    out
}

#[inline]
fn lab_pixel_to_rgb(l: f64, a: f64, b: f64, inv: &[[f64; 3]; 3]) -> [f64; 3] {
    let fy = (l + 16.0) / 116.0;
    let fx = fy + a / 500.0;
    let fz = fy - b / 200.0;
    let x = WHITE[0] * lab_f_inv(fx);
    let y = WHITE[1] * lab_f_inv(fy);
    let z = WHITE[2] * lab_f_inv(fz);
    let rl = inv[0][0] * x + inv[0][1] * y + inv[0][2] * z;
    let gl = inv[1][0] * x + inv[1][1] * y + inv[1][2] * z;
    let bl = inv[2][0] * x + inv[2][1] * y + inv[2][2] * z;
    [
        linear_to_srgb(rl).clamp(0.0, 1.0),
        linear_to_srgb(gl).clamp(0.0, 1.0),
        linear_to_srgb(bl).clamp(0.0, 1.0),
    ]
}

/// sRGB -> CIE-L*a*b* (D65, IEC 61966-2-1 transfer).
pub fn rgb_to_lab(img: &ImageRGB) -> ImageLAB {
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        data.extend_from_slice(&rgb_pixel_to_lab(px[0], px[1], px[2]));
    }
    ImageLAB { width: img.width, height: img.height, data }
}

/// CIE-L*a*b* -> sRGB with per-component clamping to [0,1].
pub fn lab_to_rgb(img: &ImageLAB) -> ImageRGB {
    let inv = xyz_to_rgb_matrix();
    let mut data = Vec::with_capacity(img.data.len());
    for px in img.data.chunks_exact(3) {
        data.extend_from_slice(&lab_pixel_to_rgb(px[0], px[1], px[2], &inv));
    }
    ImageRGB { width: img.width, height: img.height, data }
}

/// Per-channel mean and population standard deviation (divide by N).
pub fn channel_stats(img: &ImageLAB) -> ChannelStats {
    let n = img.pixels();
    assert!(n > 0, "empty image");
    let mut mean = [0.0f64; 3];
    for px in img.data.chunks_exact(3) {
        for c in 0..3 {
            mean[c] += px[c];
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut var = [0.0f64; 3];
    for px in img.data.chunks_exact(3) {
        for c in 0..3 {
            let d = px[c] - mean[c];
            var[c] += d * d;
        }
    }
    let mut std = [0.0f64; 3];
    for c in 0..3 {
        std[c] = (var[c] / n as f64).sqrt();
    }
    ChannelStats { mean, std }
}

fn transfer(lab: &ImageLAB, from: &ChannelStats, to: &ChannelStats) -> ImageLAB {
    let mut data = Vec::with_capacity(lab.data.len());
    for px in lab.data.chunks_exact(3) {
        for c in 0..3 {
            let std_from = from.std[c].max(EPS_STD);
            data.push((px[c] - from.mean[c]) / std_from * to.std[c] + to.mean[c]);
        }
    }
    ImageLAB { width: lab.width, height: lab.height, data }
}

/// Color exchange: each image's LAB channels are standardized by its own
/// statistics and re-scaled by the other image's, then converted back to
/// sRGB with gamut clamping.
pub fn color_exchange(img1: &ImageRGB, img2: &ImageRGB) -> (ImageRGB, ImageRGB) {
    let lab1 = rgb_to_lab(img1);
    let lab2 = rgb_to_lab(img2);
    let s1 = channel_stats(&lab1);
    let s2 = channel_stats(&lab2);
    let out1 = lab_to_rgb(&transfer(&lab1, &s1, &s2));
    let out2 = lab_to_rgb(&transfer(&lab2, &s2, &s1));
    (out1, out2)
}
