//! Separable bicubic resampling with the Keys cubic convolution kernel.
//!
//! The kernel uses a = -0.5 (Catmull-Rom), the common imaging default. Sample
//! positions are center-aligned: output index `o` reads the source at
//! `(o + 0.5) * in/out - 0.5`, and out-of-range taps clamp to the border
//! sample. This variant reproduces constants exactly (the four tap weights
//! always sum to 1) and linear ramps exactly on interior pixels.

use crate::error::{Error, Result};
use crate::image::ImagePatch;
use crate::tensor::{Element, Tensor};

const A: f64 = -0.5;

/// Keys cubic kernel value at offset `t`.
pub fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// One output sample's four source taps: clamped indices plus weights.
#[derive(Debug, Clone, Copy)]
pub struct Tap {
    pub index: [usize; 4],
    pub weight: [f64; 4],
}

/// Tap plan for resampling a length-`in_len` axis to `out_len`.
pub fn plan(in_len: usize, out_len: usize) -> Vec<Tap> {
    assert!(in_len >= 1 && out_len >= 1);
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let base = src.floor() as isize;
            let mut index = [0usize; 4];
            let mut weight = [0f64; 4];
            for k in 0..4 {
                let i = base - 1 + k as isize;
                index[k] = i.clamp(0, in_len as isize - 1) as usize;
                weight[k] = cubic_weight(src - i as f64);
            }
            Tap { index, weight }
        })
        .collect()
}

/// Resample a rank-3 tensor (C,H,W) to (C,out_h,out_w). Pure interpolation:
/// no clamping of values, so the operation stays linear in its input.
pub fn resize_tensor<T: Element>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let (c, h, w) = input.shape3().expect("resize expects a rank-3 tensor");
    let hplan = plan(w, out_w);
    let vplan = plan(h, out_h);

    // Horizontal pass: (C,H,W) -> (C,H,out_w).
    let mut mid = Tensor::<T>::zeros(&[c, h, out_w]);
    for ch in 0..c {
        for y in 0..h {
            let src = input.row3(ch, y);
            let dst = mid.row3_mut(ch, y);
            for (x, tap) in hplan.iter().enumerate() {
                let mut acc = 0.0f64;
                for k in 0..4 {
                    acc += tap.weight[k] * src[tap.index[k]].to_f64();
                }
                dst[x] = T::from_f64(acc);
            }
        }
    }

    // Vertical pass: (C,H,out_w) -> (C,out_h,out_w).
    let mut out = Tensor::<T>::zeros(&[c, out_h, out_w]);
    for ch in 0..c {
        for (y, tap) in vplan.iter().enumerate() {
            for x in 0..out_w {
                let mut acc = 0.0f64;
                for k in 0..4 {
                    acc += tap.weight[k] * mid.at3(ch, tap.index[k], x).to_f64();
                }
                out.set3(ch, y, x, T::from_f64(acc));
            }
        }
    }
    out
}

/// Adjoint of [`resize_tensor`] with the same tap plans: scatters a gradient
/// over the output grid back onto the input grid. Needed to backpropagate
/// through a bicubic upsampling layer.
pub fn resize_tensor_adjoint<T: Element>(
    grad_out: &Tensor<T>,
    in_h: usize,
    in_w: usize,
) -> Tensor<T> {
    let (c, out_h, out_w) = grad_out.shape3().expect("rank-3 gradient");
    let hplan = plan(in_w, out_w);
    let vplan = plan(in_h, out_h);

    // Transpose of the vertical pass: (C,out_h,out_w) -> (C,in_h,out_w).
    let mut mid = Tensor::<T>::zeros(&[c, in_h, out_w]);
    for ch in 0..c {
        for (y, tap) in vplan.iter().enumerate() {
            for x in 0..out_w {
                let g = grad_out.at3(ch, y, x).to_f64();
                for k in 0..4 {
                    let v = mid.at3(ch, tap.index[k], x).to_f64() + tap.weight[k] * g;
                    mid.set3(ch, tap.index[k], x, T::from_f64(v));
                }
            }
        }
    }

    // Transpose of the horizontal pass: (C,in_h,out_w) -> (C,in_h,in_w).
    let mut out = Tensor::<T>::zeros(&[c, in_h, in_w]);
    for ch in 0..c {
        for y in 0..in_h {
            for (x, tap) in hplan.iter().enumerate() {
                let g = mid.at3(ch, y, x).to_f64();
                for k in 0..4 {
                    let v = out.at3(ch, y, tap.index[k]).to_f64() + tap.weight[k] * g;
                    out.set3(ch, y, tap.index[k], T::from_f64(v));
                }
            }
        }
    }
    out
}

/// Resize an image patch, clamping the result back into [0, 1]. This is the
/// degradation operator of the dataset pipeline (downscale by the SR factor)
/// as well as the bicubic upscaling baseline.
pub fn bicubic_resize(patch: &ImagePatch, out_h: usize, out_w: usize) -> Result<ImagePatch> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be at least 1x1"));
    }
    let pixels = resize_tensor(&patch.pixels, out_h, out_w).clamp(0.0, 1.0);
    Ok(ImagePatch {
        id: patch.id.clone(),
        pixels,
        source_offset: patch.source_offset,
    })
}
