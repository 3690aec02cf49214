//! Forward and backward passes for every layer kind in the model zoo.
//!
//! Gradients are hand-derived per layer; there is no tape. All functions are
//! pure: they read their inputs and return fresh tensors. Convolution is the
//! usual cross-correlation with zero padding; the transposed convolution is
//! its exact adjoint under a shared kernel, which the tests pin down via the
//! inner-product identity `<conv(x), y> == <x, tconv(y)>`.

use crate::error::{Error, Result};
use crate::resample;
use crate::tensor::{Element, Tensor};

/// Output length of a convolution along one axis. Fails unless the stride
/// divides the span exactly, so layer stacks cannot silently truncate.
pub fn conv_out_len(in_len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let span = in_len + 2 * padding;
    if span < k {
        return Err(Error::shape(format!(
            "kernel {k} larger than padded extent {span}"
        )));
    }
    if !(span - k).is_multiple_of(stride) {
        return Err(Error::shape(format!(
            "conv output not integral: ({in_len} + 2*{padding} - {k}) not divisible by {stride}"
        )));
    }
    Ok((span - k) / stride + 1)
}

/// Output length of a transposed convolution along one axis.
pub fn tconv_out_len(in_len: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::invalid("stride must be >= 1"));
    }
    let grown = (in_len - 1) * stride + k;
    if grown <= 2 * padding {
        return Err(Error::shape(format!(
            "transposed conv output empty: ({in_len}-1)*{stride} + {k} <= 2*{padding}"
        )));
    }
    Ok(grown - 2 * padding)
}

/// Range of output indices `o` for which `o*stride + k_off - pad` lands in
/// `[0, in_len)`. Returns `lo..hi` (possibly empty).
#[inline]
fn valid_range(in_len: usize, k_off: usize, pad: usize, stride: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > k_off {
        (pad - k_off).div_ceil(stride)
    } else {
        0
    };
    let hi_incl = (in_len - 1 + pad).checked_sub(k_off).map(|v| v / stride);
    match hi_incl {
        Some(h) => (lo.min(out_len), (h + 1).min(out_len)),
        None => (0, 0),
    }
}

/// `acc[i] += a * xs[i]`; independent lanes, so this vectorizes cleanly.
#[inline]
fn axpy<T: Element>(acc: &mut [T], a: T, xs: &[T]) {
    for (d, s) in acc.iter_mut().zip(xs) {
        *d += a * *s;
    }
}

/// Dot product with eight independent partial sums so the reduction
/// vectorizes without reassociation surprises; the lane split is fixed, so
/// results are deterministic.
#[inline]
fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    let mut lanes = [T::ZERO; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (pa, pb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            lanes[l] += pa[l] * pb[l];
        }
    }
    let mut tail = T::ZERO;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    let s01 = lanes[0] + lanes[1];
    let s23 = lanes[2] + lanes[3];
    let s45 = lanes[4] + lanes[5];
    let s67 = lanes[6] + lanes[7];
    ((s01 + s23) + (s45 + s67)) + tail
}

/// Patch matrix for convolution lowering: row `r = (ci, ky, kx)` holds, for
/// every output position `j`, the input sample that kernel tap reads (zero
/// where the tap falls into padding). Shape `R x N` with `R = C*kh*kw`,
/// `N = oh*ow`, row-major.
fn im2col<T: Element>(
    input: &Tensor<T>,
    k: (usize, usize),
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
) -> Vec<T> {
    let (c, h, w) = input.shape3().expect("rank-3");
    let (kh, kw) = k;
    let (oh, ow) = out_hw;
    let n = oh * ow;
    let mut cols = vec![T::ZERO; c * kh * kw * n];
    for ci in 0..c {
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(h, ky, padding, stride, oh);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(w, kx, padding, stride, ow);
                let row = &mut cols[((ci * kh + ky) * kw + kx) * n..][..n];
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - padding;
                    let src = input.row3(ci, iy);
                    let dst = &mut row[oy * ow..][..ow];
                    if stride == 1 {
                        let ix0 = ox_lo + kx - padding;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Exact adjoint of [`im2col`]: scatter-add each row back onto the grid.
fn col2im_add<T: Element>(
    cols: &[T],
    grid: &mut Tensor<T>,
    k: (usize, usize),
    stride: usize,
    padding: usize,
    out_hw: (usize, usize),
) {
    let (c, h, w) = grid.shape3().expect("rank-3");
    let (kh, kw) = k;
    let (oh, ow) = out_hw;
    let n = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            let (oy_lo, oy_hi) = valid_range(h, ky, padding, stride, oh);
            for kx in 0..kw {
                let (ox_lo, ox_hi) = valid_range(w, kx, padding, stride, ow);
                let row = &cols[((ci * kh + ky) * kw + kx) * n..][..n];
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + ky - padding;
                    let dst = grid.row3_mut(ci, iy);
                    let src = &row[oy * ow..][..ow];
                    for ox in ox_lo..ox_hi {
                        dst[ox * stride + kx - padding] += src[ox];
                    }
                }
            }
        }
    }
}

fn check_conv_shapes<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    transposed: bool,
) -> Result<()> {
    let (cin, _, _) = input.shape3()?;
    let (w0, w1, _, _) = weights.shape4()?;
    let (w_in, w_out) = if transposed { (w0, w1) } else { (w1, w0) };
    if w_in != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels, kernel expects {w_in} (weights {:?})",
            weights.dims()
        )));
    }
    if bias.rank() != 1 || bias.len() != w_out {
        return Err(Error::shape(format!(
            "bias dims {:?} do not match {w_out} output channels",
            bias.dims()
        )));
    }
    Ok(())
}

pub fn conv2d_forward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_conv_shapes(input, weights, bias, false)?;
    let (cin, h, w) = input.shape3()?;
    let (cout, _, kh, kw) = weights.shape4()?;
    let oh = conv_out_len(h, kh, stride, padding)?;
    let ow = conv_out_len(w, kw, stride, padding)?;

    let n = oh * ow;
    let r_len = cin * kh * kw;
    let cols = im2col(input, (kh, kw), stride, padding, (oh, ow));

    let mut out = Tensor::<T>::zeros(&[cout, oh, ow]);
    for co in 0..cout {
        let wrow = &weights.data()[co * r_len..][..r_len];
        let dst = &mut out.data_mut()[co * n..][..n];
        let b = bias.data()[co];
        for v in dst.iter_mut() {
            *v = b;
        }
        for (r, &wv) in wrow.iter().enumerate() {
            if wv != T::ZERO {
                axpy(dst, wv, &cols[r * n..][..n]);
            }
        }
    }
    Ok(out)
}

/// Gradients of a scalar sum-loss through [`conv2d_forward`].
pub fn conv2d_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, h, w) = input.shape3()?;
    let (cout, wcin, kh, kw) = weights.shape4()?;
    if wcin != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels, kernel expects {wcin}"
        )));
    }
    let oh = conv_out_len(h, kh, stride, padding)?;
    let ow = conv_out_len(w, kw, stride, padding)?;
    let (gc, gh, gw) = grad_out.shape3()?;
    if (gc, gh, gw) != (cout, oh, ow) {
        return Err(Error::shape(format!(
            "grad_output dims {:?}, forward produces ({cout},{oh},{ow})",
            grad_out.dims()
        )));
    }

    let n = oh * ow;
    let r_len = cin * kh * kw;
    let cols = im2col(input, (kh, kw), stride, padding, (oh, ow));

    let mut grad_in = Tensor::<T>::zeros(&[cin, h, w]);
    let mut grad_w = Tensor::<T>::zeros(&[cout, cin, kh, kw]);
    let mut grad_b = Tensor::<T>::zeros(&[cout]);
    // Columns of W^T * grad_out; scattered back onto the input grid below.
    let mut dcols = vec![T::ZERO; r_len * n];

    for co in 0..cout {
        let grow = &grad_out.data()[co * n..][..n];
        let mut acc = T::ZERO;
        for &g in grow {
            acc += g;
        }
        grad_b.data_mut()[co] = acc;

        let wrow = &weights.data()[co * r_len..][..r_len];
        let gwrow = &mut grad_w.data_mut()[co * r_len..][..r_len];
        for r in 0..r_len {
            gwrow[r] = dot(grow, &cols[r * n..][..n]);
            let wv = wrow[r];
            if wv != T::ZERO {
                axpy(&mut dcols[r * n..][..n], wv, grow);
            }
        }
    }
    col2im_add(&dcols, &mut grad_in, (kh, kw), stride, padding, (oh, ow));
    Ok((grad_in, grad_w, grad_b))
}

/// Transposed convolution. Weights are `(in_channels, out_channels, kh, kw)`;
/// with a shared kernel this is the exact adjoint of [`conv2d_forward`].
pub fn tconv2d_forward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    check_conv_shapes(input, weights, bias, true)?;
    let (cin, h, w) = input.shape3()?;
    let (_, cout, kh, kw) = weights.shape4()?;
    let oh = tconv_out_len(h, kh, stride, padding)?;
    let ow = tconv_out_len(w, kw, stride, padding)?;

    // The transposed convolution is the adjoint of a convolution whose input
    // grid is this op's output: compute per-tap columns W^T * input over the
    // small grid, then scatter them onto the large grid.
    let n = h * w;
    let r_len = cout * kh * kw;
    let mut dcols = vec![T::ZERO; r_len * n];
    for ci in 0..cin {
        let irow = &input.data()[ci * n..][..n];
        let wrow = &weights.data()[ci * r_len..][..r_len];
        for (r, &wv) in wrow.iter().enumerate() {
            if wv != T::ZERO {
                axpy(&mut dcols[r * n..][..n], wv, irow);
            }
        }
    }
    let mut out = Tensor::<T>::zeros(&[cout, oh, ow]);
    for co in 0..cout {
        let b = bias.data()[co];
        for v in &mut out.data_mut()[co * oh * ow..][..oh * ow] {
            *v = b;
        }
    }
    col2im_add(&dcols, &mut out, (kh, kw), stride, padding, (h, w));
    Ok(out)
}

/// Gradients of a scalar sum-loss through [`tconv2d_forward`].
pub fn tconv2d_backward<T: Element>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (cin, h, w) = input.shape3()?;
    let (wcin, cout, kh, kw) = weights.shape4()?;
    if wcin != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels, kernel expects {wcin}"
        )));
    }
    let oh = tconv_out_len(h, kh, stride, padding)?;
    let ow = tconv_out_len(w, kw, stride, padding)?;
    if grad_out.dims() != [cout, oh, ow] {
        return Err(Error::shape(format!(
            "grad_output dims {:?}, forward produces ({cout},{oh},{ow})",
            grad_out.dims()
        )));
    }

    let n = h * w;
    let r_len = cout * kh * kw;
    // Gathering grad_out through the same tap map turns both remaining
    // gradients into contiguous row operations.
    let gcols = im2col(grad_out, (kh, kw), stride, padding, (h, w));

    let mut grad_in = Tensor::<T>::zeros(&[cin, h, w]);
    let mut grad_w = Tensor::<T>::zeros(&[cin, cout, kh, kw]);
    let mut grad_b = Tensor::<T>::zeros(&[cout]);

    for co in 0..cout {
        let mut acc = T::ZERO;
        for &g in &grad_out.data()[co * oh * ow..][..oh * ow] {
            acc += g;
        }
        grad_b.data_mut()[co] = acc;
    }
    for ci in 0..cin {
        let irow = &input.data()[ci * n..][..n];
        let wrow = &weights.data()[ci * r_len..][..r_len];
        let gwrow = &mut grad_w.data_mut()[ci * r_len..][..r_len];
        let gin = &mut grad_in.data_mut()[ci * n..][..n];
        for r in 0..r_len {
            let gcol = &gcols[r * n..][..n];
            gwrow[r] = dot(irow, gcol);
            let wv = wrow[r];
            if wv != T::ZERO {
                axpy(gin, wv, gcol);
            }
        }
    }
    Ok((grad_in, grad_w, grad_b))
}

/// PReLU with one learnable slope per channel.
pub fn prelu_forward<T: Element>(input: &Tensor<T>, slopes: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.shape3()?;
    if slopes.rank() != 1 || slopes.len() != c {
        return Err(Error::shape(format!(
            "prelu slopes {:?} vs {c} channels",
            slopes.dims()
        )));
    }
    let mut out = Tensor::<T>::zeros(&[c, h, w]);
    for ch in 0..c {
        let a = slopes.data()[ch];
        for y in 0..h {
            let src = input.row3(ch, y);
            let dst = out.row3_mut(ch, y);
            for (d, &x) in dst.iter_mut().zip(src) {
                *d = if x > T::ZERO { x } else { a * x };
            }
        }
    }
    Ok(out)
}

pub fn prelu_backward<T: Element>(
    input: &Tensor<T>,
    slopes: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if grad_out.dims() != input.dims() {
        return Err(Error::shape(format!(
            "prelu grad dims {:?} vs input {:?}",
            grad_out.dims(),
            input.dims()
        )));
    }
    let (c, h, _) = input.shape3()?;
    let mut grad_in = Tensor::<T>::zeros(input.dims());
    let mut grad_slopes = Tensor::<T>::zeros(&[c]);
    for ch in 0..c {
        let a = slopes.data()[ch];
        let mut sacc = T::ZERO;
        for y in 0..h {
            let xs = input.row3(ch, y);
            let gs = grad_out.row3(ch, y);
            let gid = grad_in.row3_mut(ch, y);
            for ((&x, &g), gi) in xs.iter().zip(gs).zip(gid.iter_mut()) {
                if x > T::ZERO {
                    *gi = g;
                } else {
                    *gi = a * g;
                    sacc += g * x;
                }
            }
        }
        grad_slopes.data_mut()[ch] = sacc;
    }
    Ok((grad_in, grad_slopes))
}

/// Non-overlapping k-by-k average pooling. Extent must divide exactly.
pub fn avg_pool_forward<T: Element>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (c, h, w) = input.shape3()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!(
            "avg_pool kernel {k} must divide ({h},{w})"
        )));
    }
    let (oh, ow) = (h / k, w / k);
    let norm = T::from_f64(1.0 / (k * k) as f64);
    let mut out = Tensor::<T>::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = T::ZERO;
                for dy in 0..k {
                    let row = input.row3(ch, oy * k + dy);
                    for dx in 0..k {
                        acc += row[ox * k + dx];
                    }
                }
                out.set3(ch, oy, ox, acc * norm);
            }
        }
    }
    Ok(out)
}

pub fn avg_pool_backward<T: Element>(
    in_dims: &[usize],
    k: usize,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut grad_in = Tensor::<T>::zeros(in_dims);
    let (c, h, w) = grad_in.shape3()?;
    let (gc, gh, gw) = grad_out.shape3()?;
    if gc != c || gh != h / k || gw != w / k {
        return Err(Error::shape(format!(
            "avg_pool grad dims {:?} vs input {in_dims:?} / k={k}",
            grad_out.dims()
        )));
    }
    let norm = T::from_f64(1.0 / (k * k) as f64);
    for ch in 0..c {
        for oy in 0..gh {
            for ox in 0..gw {
                let g = grad_out.at3(ch, oy, ox) * norm;
                for dy in 0..k {
                    let row = grad_in.row3_mut(ch, oy * k + dy);
                    for dx in 0..k {
                        row[ox * k + dx] += g;
                    }
                }
            }
        }
    }
    Ok(grad_in)
}

/// Mean over the spatial extent, producing (C,1,1).
pub fn global_avg_pool_forward<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.shape3()?;
    let norm = T::from_f64(1.0 / (h * w) as f64);
    let mut out = Tensor::<T>::zeros(&[c, 1, 1]);
    for ch in 0..c {
        let mut acc = T::ZERO;
        for y in 0..h {
            for &v in input.row3(ch, y) {
                acc += v;
            }
        }
        out.set3(ch, 0, 0, acc * norm);
    }
    Ok(out)
}

pub fn global_avg_pool_backward<T: Element>(
    in_dims: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut grad_in = Tensor::<T>::zeros(in_dims);
    let (c, h, w) = grad_in.shape3()?;
    if grad_out.dims() != [c, 1, 1] {
        return Err(Error::shape(format!(
            "global pool grad dims {:?} vs (C,1,1)",
            grad_out.dims()
        )));
    }
    let norm = T::from_f64(1.0 / (h * w) as f64);
    for ch in 0..c {
        let g = grad_out.at3(ch, 0, 0) * norm;
        for y in 0..h {
            for v in grad_in.row3_mut(ch, y) {
                *v += g;
            }
        }
    }
    Ok(grad_in)
}

/// Bicubic upsampling as a (parameterless, linear) layer.
pub fn upsample_bicubic_forward<T: Element>(input: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor == 0 {
        return Err(Error::invalid("upsample factor must be >= 1"));
    }
    let (_, h, w) = input.shape3()?;
    Ok(resample::resize_tensor(input, h * factor, w * factor))
}

pub fn upsample_bicubic_backward<T: Element>(
    in_dims: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    if in_dims.len() != 3 {
        return Err(Error::shape("upsample expects rank-3 input".to_string()));
    }
    Ok(resample::resize_tensor_adjoint(
        grad_out, in_dims[1], in_dims[2],
    ))
}
