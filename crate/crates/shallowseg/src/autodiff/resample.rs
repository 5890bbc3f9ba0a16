//! Bilinear upsampling and 2×2 average pooling.

use crate::scalar::Scalar;

/// Per-axis interpolation taps for align_corners=false: source coordinate is
/// (i + 0.5)·scale − 0.5, clamped to the valid range.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            let frac = s - i0 as f64;
            (i0, i1, frac)
        })
        .collect()
}

pub(super) fn upsample_forward<F: Scalar>(
    x: &[F],
    [n, c, h, w]: [usize; 4],
    [oh, ow]: [usize; 2],
) -> Vec<F> {
    let ys = bilinear_taps(h, oh);
    let xs = bilinear_taps(w, ow);
    let mut out = vec![F::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let wy1 = F::from_f64(fy);
            let wy0 = F::one() - wy1;
            let r0 = &src[y0 * w..y0 * w + w];
            let r1 = &src[y1 * w..y1 * w + w];
            let drow = &mut dst[oy * ow..(oy + 1) * ow];
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let wx1 = F::from_f64(fx);
                let wx0 = F::one() - wx1;
                drow[ox] = wy0 * (wx0 * r0[x0] + wx1 * r0[x1]) + wy1 * (wx0 * r1[x0] + wx1 * r1[x1]);
            }
        }
    }
    out
}

/// Transpose of the interpolation: scatter each output gradient onto its four
/// source taps.
pub(super) fn upsample_backward<F: Scalar>(
    gy: &[F],
    [n, c, h, w]: [usize; 4],
    [oh, ow]: [usize; 2],
    gx: &mut [F],
) {
    let ys = bilinear_taps(h, oh);
    let xs = bilinear_taps(w, ow);
    for plane in 0..n * c {
        let g = &gy[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let wy1 = F::from_f64(fy);
            let wy0 = F::one() - wy1;
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let wx1 = F::from_f64(fx);
                let wx0 = F::one() - wx1;
                let gv = g[oy * ow + ox];
                dst[y0 * w + x0] = dst[y0 * w + x0] + gv * wy0 * wx0;
                dst[y0 * w + x1] = dst[y0 * w + x1] + gv * wy0 * wx1;
                dst[y1 * w + x0] = dst[y1 * w + x0] + gv * wy1 * wx0;
                dst[y1 * w + x1] = dst[y1 * w + x1] + gv * wy1 * wx1;
            }
        }
    }
}

pub(super) fn avgpool2_forward<F: Scalar>(x: &[F], [n, c, h, w]: [usize; 4]) -> Vec<F> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::from_f64(0.25);
    let mut out = vec![F::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let i = 2 * oy * w + 2 * ox;
                dst[oy * ow + ox] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
            }
        }
    }
    out
}

pub(super) fn avgpool2_backward<F: Scalar>(gy: &[F], [n, c, h, w]: [usize; 4], gx: &mut [F]) {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::from_f64(0.25);
    for plane in 0..n * c {
        let g = &gy[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let gv = g[oy * ow + ox] * quarter;
                let i = 2 * oy * w + 2 * ox;
                dst[i] = dst[i] + gv;
                dst[i + 1] = dst[i + 1] + gv;
                dst[i + w] = dst[i + w] + gv;
                dst[i + w + 1] = dst[i + w + 1] + gv;
            }
        }
    }
}
