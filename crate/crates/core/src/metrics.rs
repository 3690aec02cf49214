//! Scalar image quality metrics: PSNR, windowed SSIM, and histogram entropy.
//!
//! These three numbers drive the whole routing story: the easy/difficult
//! label is an SSIM difference, the benchmark reports PSNR/SSIM means, and
//! entropy is the strawman signal the labeler improves upon. All accumulation
//! happens in f64 regardless of the input precision.

use crate::error::{Error, Result};
use crate::image::ImagePatch;
use crate::tensor::Tensor;

/// PSNR in dB against a peak of 1.0, over all channels.
/// Identical inputs return `f64::INFINITY`.
pub fn psnr(x: &ImagePatch, y: &ImagePatch) -> Result<f64> {
    if x.pixels.dims() != y.pixels.dims() {
        return Err(Error::shape(format!(
            "psnr over {:?} vs {:?}",
            x.pixels.dims(),
            y.pixels.dims()
        )));
    }
    Ok(psnr_tensor(&x.pixels, &y.pixels))
}

/// PSNR over raw tensors of either precision (peak 1.0, accumulation in f64).
pub fn psnr_tensor<T: crate::tensor::Element>(x: &Tensor<T>, y: &Tensor<T>) -> f64 {
    let mut se = 0.0f64;
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let d = a.to_f64() - b.to_f64();
        se += d * d;
    }
    let mse = se / x.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - c;
            let dx = x as f64 - c;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Mean SSIM on the luma channel: 11x11 Gaussian window (sigma 1.5), K1=0.01,
/// K2=0.03, dynamic range 1.0, averaged over all fully-interior window
/// positions. RGB inputs are converted via BT.601 first.
pub fn ssim(x: &ImagePatch, y: &ImagePatch) -> Result<f64> {
    if x.pixels.dims() != y.pixels.dims() {
        return Err(Error::shape(format!(
            "ssim over {:?} vs {:?}",
            x.pixels.dims(),
            y.pixels.dims()
        )));
    }
    ssim_luma(&x.luma(), &y.luma())
}

/// SSIM over two single-channel tensors in [0,1].
pub fn ssim_luma(lx: &Tensor<f32>, ly: &Tensor<f32>) -> Result<f64> {
    let (_, h, w) = lx.shape3()?;
    if lx.dims() != ly.dims() {
        return Err(Error::shape(format!(
            "ssim over {:?} vs {:?}",
            lx.dims(),
            ly.dims()
        )));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let c1 = K1 * K1; // dynamic range is 1.0
    let c2 = K2 * K2;

    let mut total = 0.0f64;
    let positions = (h - SSIM_WINDOW + 1) * (w - SSIM_WINDOW + 1);
    for oy in 0..=(h - SSIM_WINDOW) {
        for ox in 0..=(w - SSIM_WINDOW) {
            let mut mu_x = 0.0f64;
            let mut mu_y = 0.0f64;
            let mut xx = 0.0f64;
            let mut yy = 0.0f64;
            let mut xy = 0.0f64;
            for wy in 0..SSIM_WINDOW {
                let rx = lx.row3(0, oy + wy);
                let ry = ly.row3(0, oy + wy);
                for wx in 0..SSIM_WINDOW {
                    let g = win[wy * SSIM_WINDOW + wx];
                    let a = rx[ox + wx] as f64;
                    let b = ry[ox + wx] as f64;
                    mu_x += g * a;
                    mu_y += g * b;
                    xx += g * a * a;
                    yy += g * b * b;
                    xy += g * a * b;
                }
            }
            let var_x = xx - mu_x * mu_x;
            let var_y = yy - mu_y * mu_y;
            let cov = xy - mu_x * mu_y;
            let numerator = (2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2);
            let denominator = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2);
            total += numerator / denominator;
        }
    }
    // Guard against epsilon drift past the mathematical range.
    Ok((total / positions as f64).clamp(-1.0, 1.0))
}

/// Shannon entropy (bits) of the 256-bin histogram of the 8-bit-quantized
/// luma channel. Ranges over [0, 8].
pub fn entropy(x: &ImagePatch) -> f64 {
    let luma = x.luma();
    let mut hist = [0u64; 256];
    for &v in luma.data() {
        hist[crate::image::quantize(v) as usize] += 1;
    }
    let n = luma.len() as f64;
    let mut bits = 0.0f64;
    for &count in &hist {
        if count > 0 {
            let p = count as f64 / n;
            bits -= p * p.log2();
        }
    }
    bits
}

/// The three per-patch quality numbers emitted by metric dumps.
#[derive(Debug, Clone, Copy)]
pub struct MetricTriple {
    pub psnr_db: f64,
    pub ssim: f64,
    pub entropy_bits: f64,
}

/// Format with 9 significant digits; infinities map to "inf".
pub fn format_sig9(v: f64) -> String {
    format_sig(v, 9)
}

/// Format `v` with `sig` significant digits in plain decimal notation.
pub fn format_sig(v: f64, sig: usize) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    if v == 0.0 {
        return format!("{:.*}", sig - 1, 0.0);
    }
    let magnitude = v.abs().log10().floor() as i64;
    let decimals = sig as i64 - 1 - magnitude;
    if decimals >= 0 {
        format!("{:.*}", (decimals as usize).min(17), v)
    } else {
        // Round away digits left of the decimal point.
        let scale = 10f64.powi((-decimals) as i32);
        format!("{:.0}", (v / scale).round() * scale)
    }
}

/// CSV dump `patch_id,psnr_db,ssim,entropy_bits`, one row per entry.
pub fn metrics_csv(rows: &[(String, MetricTriple)]) -> String {
    let mut out = String::from("patch_id,psnr_db,ssim,entropy_bits\n");
    for (id, m) in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            id,
            format_sig9(m.psnr_db),
            format_sig9(m.ssim),
            format_sig9(m.entropy_bits)
        ));
    }
    out
}
