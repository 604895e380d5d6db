//! Grayscale image IO, luma conversion, resampling and the ghost overlay.

use std::path::Path;

use anyhow::{bail, Context, Result};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use homalign_core::sampler::warp_resize;
use homalign_core::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImageFormat {
    Png16,
    Png8,
    Pgm,
}

impl ImageFormat {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "png16" => ImageFormat::Png16,
            "png8" => ImageFormat::Png8,
            "pgm" => ImageFormat::Pgm,
            other => bail!("output.image_format must be png16, png8 or pgm, got {other:?}"),
        })
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png16 | ImageFormat::Png8 => "png",
            ImageFormat::Pgm => "pgm",
        }
    }
}

/// Loads an image as a grayscale tensor in [0,1]. Color inputs convert with
/// the 0.299/0.587/0.114 luma weights; grayscale inputs pass through.
pub fn load_gray(path: &Path) -> Result<Tensor<f64>> {
    let img = image::open(path).with_context(|| format!("cannot read image {}", path.display()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(buf) => buf.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => {
            buf.pixels().map(|p| p.0[0] as f64 / 65535.0).collect()
        }
        other => {
            let rgb = other.to_rgb8();
            rgb.pixels()
                .map(|p| {
                    (0.299 * p.0[0] as f64 + 0.587 * p.0[1] as f64 + 0.114 * p.0[2] as f64) / 255.0
                })
                .collect()
        }
    };
    Ok(Tensor::from_vec(&[1, 1, h, w], data).expect("image dimensions"))
}

/// Writes a grayscale tensor scaled from [0,1].
pub fn save_gray(path: &Path, tensor: &Tensor<f64>, format: ImageFormat) -> Result<()> {
    let (h, w) = spatial(tensor)?;
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    match format {
        ImageFormat::Png16 => {
            let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(
                w as u32,
                h as u32,
                |x, y| {
                    let v = clamp(tensor.data()[y as usize * w + x as usize]);
                    Luma([(v * 65535.0).round() as u16])
                },
            );
            buf.save(path)
        }
        ImageFormat::Png8 | ImageFormat::Pgm => {
            let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_fn(
                w as u32,
                h as u32,
                |x, y| {
                    let v = clamp(tensor.data()[y as usize * w + x as usize]);
                    Luma([(v * 255.0).round() as u8])
                },
            );
            buf.save(path)
        }
    }
    .with_context(|| format!("cannot write image {}", path.display()))
}

fn spatial(tensor: &Tensor<f64>) -> Result<(usize, usize)> {
    let s = tensor.shape();
    if s.len() != 4 || s[0] != 1 || s[1] != 1 {
        bail!("expected a 1×1×H×W grayscale tensor, got shape {s:?}");
    }
    Ok((s[2], s[3]))
}

/// Bilinearly resamples to the target size (axis-aligned scaling map).
pub fn resize_gray(tensor: &Tensor<f64>, out_h: usize, out_w: usize) -> Result<Tensor<f64>> {
    let (h, w) = spatial(tensor)?;
    if (h, w) == (out_h, out_w) {
        return Ok(tensor.clone());
    }
    // Output pixel (x, y) samples the input at the proportional position.
    let sx = if out_w > 1 { (w - 1) as f64 / (out_w - 1) as f64 } else { 0.0 };
    let sy = if out_h > 1 { (h - 1) as f64 / (out_h - 1) as f64 } else { 0.0 };
    let smat = [sx, 0.0, 0.0, 0.0, sy, 0.0, 0.0, 0.0, 1.0];
    Ok(warp_resize(tensor, &smat, out_h, out_w).warped)
}

/// The diagnostic color mix: blue and green carry the warped image, red the
/// target, so misalignment shows as red or green ghosts.
pub fn ghost_overlay(warped: &Tensor<f64>, target: &Tensor<f64>) -> Result<image::RgbImage> {
    let (h, w) = spatial(warped)?;
    let (th, tw) = spatial(target)?;
    if (h, w) != (th, tw) {
        bail!("ghost overlay needs same-size images, got {h}×{w} and {th}×{tw}");
    }
    let to8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let wv = to8(warped.data()[i]);
        let tv = to8(target.data()[i]);
        Rgb([tv, wv, wv])
    }))
}
