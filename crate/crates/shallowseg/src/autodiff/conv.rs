//! 2D cross-correlation kernels (forward and backward).
//!
//! Output extent is floor((H + 2p - k)/s) + 1. Loops are ordered so the
//! innermost walk is contiguous in the input row for the common stride-1
//! case.

use crate::scalar::Scalar;

/// Range of output positions whose source index o*s + k - p lies in [0, len).
#[inline]
fn out_range(len: usize, olen: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    // smallest o with o*s + k - p >= 0
    let lo = if k >= padding { 0 } else { (padding - k).div_ceil(stride) };
    // largest o with o*s + k - p < len
    let hi = if len + padding > k {
        (((len + padding - k - 1) / stride) + 1).min(olen)
    } else {
        0
    };
    (lo.min(hi), hi)
}

#[allow(clippy::too_many_arguments)]
pub(super) fn forward<F: Scalar>(
    x: &[F],
    w: &[F],
    bias: &[F],
    [n, ci, h, wd]: [usize; 4],
    [co, k]: [usize; 2],
    stride: usize,
    padding: usize,
    [oh, ow]: [usize; 2],
) -> Vec<F> {
    let mut out = vec![F::zero(); n * co * oh * ow];
    for ni in 0..n {
        for coi in 0..co {
            let o_base = (ni * co + coi) * oh * ow;
            let b = bias[coi];
            for v in &mut out[o_base..o_base + oh * ow] {
                *v = b;
            }
            for cii in 0..ci {
                let x_base = (ni * ci + cii) * h * wd;
                let w_base = (coi * ci + cii) * k * k;
                for kh in 0..k {
                    let (oh_lo, oh_hi) = out_range(h, oh, kh, stride, padding);
                    for kw in 0..k {
                        let wv = w[w_base + kh * k + kw];
                        if wv == F::zero() {
                            continue;
                        }
                        let (ow_lo, ow_hi) = out_range(wd, ow, kw, stride, padding);
                        for ohi in oh_lo..oh_hi {
                            let ih = ohi * stride + kh - padding;
                            let xrow = &x[x_base + ih * wd..x_base + (ih + 1) * wd];
                            let orow = &mut out[o_base + ohi * ow..o_base + (ohi + 1) * ow];
                            for owi in ow_lo..ow_hi {
                                let iw = owi * stride + kw - padding;
                                orow[owi] = orow[owi] + wv * xrow[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
pub(super) fn backward<F: Scalar>(
    gy: &[F],
    x: &[F],
    w: &[F],
    [n, ci, h, wd]: [usize; 4],
    [co, k]: [usize; 2],
    stride: usize,
    padding: usize,
    [oh, ow]: [usize; 2],
    gx: &mut [F],
    gw: &mut [F],
    gb: &mut [F],
) {
    for ni in 0..n {
        for coi in 0..co {
            let o_base = (ni * co + coi) * oh * ow;
            let gyv = &gy[o_base..o_base + oh * ow];
            let mut acc = F::zero();
            for &g in gyv {
                acc = acc + g;
            }
            gb[coi] = gb[coi] + acc;
            for cii in 0..ci {
                let x_base = (ni * ci + cii) * h * wd;
                let w_base = (coi * ci + cii) * k * k;
                for kh in 0..k {
                    let (oh_lo, oh_hi) = out_range(h, oh, kh, stride, padding);
                    for kw in 0..k {
                        let (ow_lo, ow_hi) = out_range(wd, ow, kw, stride, padding);
                        let wv = w[w_base + kh * k + kw];
                        let mut wacc = F::zero();
                        for ohi in oh_lo..oh_hi {
                            let ih = ohi * stride + kh - padding;
                            let xrow = &x[x_base + ih * wd..x_base + (ih + 1) * wd];
                            let gxrow = &mut gx[x_base + ih * wd..x_base + (ih + 1) * wd];
                            let grow = &gyv[ohi * ow..(ohi + 1) * ow];
                            for owi in ow_lo..ow_hi {
                                let iw = owi * stride + kw - padding;
                                let g = grow[owi];
                                wacc = wacc + g * xrow[iw];
                                gxrow[iw] = gxrow[iw] + g * wv;
                            }
                        }
                        gw[w_base + kh * k + kw] = gw[w_base + kh * k + kw] + wacc;
                    }
                }
            }
        }
    }
}

/// Direct 6-loop reference convolution, deliberately naive. Test oracle for
/// the tiled implementation above; kept independent of it.
#[allow(clippy::too_many_arguments)]
pub fn brute_force_conv2d<F: Scalar>(
    x: &[F],
    w: &[F],
    bias: &[F],
    [n, ci, h, wd]: [usize; 4],
    [co, k]: [usize; 2],
    stride: usize,
    padding: usize,
) -> (Vec<usize>, Vec<F>) {
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (wd + 2 * padding - k) / stride + 1;
    let mut out = vec![F::zero(); n * co * oh * ow];
    for ni in 0..n {
        for coi in 0..co {
            for ohi in 0..oh {
                for owi in 0..ow {
                    let mut acc = bias[coi];
                    for cii in 0..ci {
                        for kh in 0..k {
                            for kw in 0..k {
                                let ih = (ohi * stride + kh) as isize - padding as isize;
                                let iw = (owi * stride + kw) as isize - padding as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= wd as isize {
                                    continue;
                                }
                                let xv = x[((ni * ci + cii) * h + ih as usize) * wd + iw as usize];
                                let wv = w[((coi * ci + cii) * k + kh) * k + kw];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out[((ni * co + coi) * oh + ohi) * ow + owi] = acc;
                }
            }
        }
    }
    (vec![n, co, oh, ow], out)
}
