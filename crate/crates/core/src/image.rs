//! Image patches, PNG I/O, and mosaic tiling.
//!
//! Pixels live in `[0, 1]` as `(channels, height, width)` tensors with 1
//! (gray) or 3 (RGB) channels. Loading maps byte `v` to `v/255`; saving is
//! the exact inverse with round-half-up, so an 8-bit image survives a
//! load/save round trip untouched.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

/// BT.601 luma weights, the usual choice for SDR imagery.
const LUMA: [f32; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub id: String,
    /// (channels, height, width), values in [0, 1].
    pub pixels: Tensor<f32>,
    /// (row, col) of this patch's top-left corner in its parent mosaic.
    pub source_offset: (usize, usize),
}

impl ImagePatch {
    pub fn new(id: impl Into<String>, pixels: Tensor<f32>) -> Result<Self> {
        let (c, _, _) = pixels.shape3()?;
        if c != 1 && c != 3 {
            return Err(Error::shape(format!("image must have 1 or 3 channels, got {c}")));
        }
        Ok(ImagePatch {
            id: id.into(),
            pixels,
            source_offset: (0, 0),
        })
    }

    pub fn channels(&self) -> usize {
        self.pixels.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.pixels.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.dims()[2]
    }

    /// Single-channel luma view: identity for gray, BT.601 for RGB.
    pub fn luma(&self) -> Tensor<f32> {
        let (c, h, w) = self.pixels.shape3().expect("valid patch");
        if c == 1 {
            return self.pixels.clone();
        }
        let mut out = Tensor::<f32>::zeros(&[1, h, w]);
        for y in 0..h {
            let r = self.pixels.row3(0, y);
            let g = self.pixels.row3(1, y);
            let b = self.pixels.row3(2, y);
            let dst = out.row3_mut(0, y);
            for x in 0..w {
                dst[x] = LUMA[0] * r[x] + LUMA[1] * g[x] + LUMA[2] * b[x];
            }
        }
        out
    }
}

/// 8-bit quantization used everywhere a float image becomes bytes.
pub fn quantize(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn load_png(path: &Path) -> Result<ImagePatch> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Codec {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Codec {
        path: path.into(),
        message: e.to_string(),
    })?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Codec {
            path: path.into(),
            message: format!("unsupported bit depth {:?}, expected 8", info.bit_depth),
        });
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::Codec {
                path: path.into(),
                message: format!("unsupported color type {other:?}, expected gray or RGB"),
            })
        }
    };
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    // Interleaved bytes -> planar floats.
    let mut pixels = Tensor::<f32>::zeros(&[channels, h, w]);
    for y in 0..h {
        for c in 0..channels {
            let row = pixels.row3_mut(c, y);
            for (x, v) in row.iter_mut().enumerate() {
                *v = bytes[(y * w + x) * channels + c] as f32 / 255.0;
            }
        }
    }
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());
    ImagePatch::new(id, pixels)
}

pub fn save_png(patch: &ImagePatch, path: &Path) -> Result<()> {
    let (c, h, w) = patch.pixels.shape3()?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| Error::Codec {
        path: path.into(),
        message: e.to_string(),
    })?;
    let mut bytes = vec![0u8; c * h * w];
    for y in 0..h {
        for ch in 0..c {
            let row = patch.pixels.row3(ch, y);
            for x in 0..w {
                bytes[(y * w + x) * c + ch] = quantize(row[x]);
            }
        }
    }
    writer.write_image_data(&bytes).map_err(|e| Error::Codec {
        path: path.into(),
        message: e.to_string(),
    })?;
    Ok(())
}

/// Cut a mosaic into a non-overlapping row-major grid of `ph` x `pw` patches.
/// Trailing rows/columns that do not fill a whole patch are discarded.
pub fn tile(mosaic: &ImagePatch, ph: usize, pw: usize) -> Result<Vec<ImagePatch>> {
    let (c, h, w) = mosaic.pixels.shape3()?;
    if ph == 0 || pw == 0 || ph > h || pw > w {
        return Err(Error::invalid(format!(
            "patch size {ph}x{pw} does not fit mosaic {h}x{w}"
        )));
    }
    let rows = h / ph;
    let cols = w / pw;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for col in 0..cols {
            let (oy, ox) = (r * ph, col * pw);
            let mut pixels = Tensor::<f32>::zeros(&[c, ph, pw]);
            for ch in 0..c {
                for y in 0..ph {
                    pixels
                        .row3_mut(ch, y)
                        .copy_from_slice(&mosaic.pixels.row3(ch, oy + y)[ox..ox + pw]);
                }
            }
            out.push(ImagePatch {
                id: format!("{}_r{:04}_c{:04}", mosaic.id, r, col),
                pixels,
                source_offset: (oy, ox),
            });
        }
    }
    Ok(out)
}
