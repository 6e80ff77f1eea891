//! Raster decoding, resizing and PNG encoding.

use std::path::Path;

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::tensor::{denormalize, normalize, ImageTensor, RawRaster, ValueRange};

pub const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "tif", "tiff"];

pub fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn decode(path: &Path) -> Result<DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn planar(channels: usize, width: u32, height: u32, interleaved: &[f32]) -> RawRaster {
    let (w, h) = (width as usize, height as usize);
    let mut samples = vec![0f32; channels * h * w];
    for (i, px) in interleaved.chunks_exact(channels).enumerate() {
        for (c, &v) in px.iter().enumerate() {
            samples[c * h * w + i] = v;
        }
    }
    RawRaster {
        channels,
        height: h,
        width: w,
        samples,
    }
}

fn interleaved(raw: &RawRaster) -> Vec<f32> {
    let hw = raw.height * raw.width;
    let mut out = Vec::with_capacity(raw.samples.len());
    for i in 0..hw {
        for c in 0..raw.channels {
            out.push(raw.samples[c * hw + i]);
        }
    }
    out
}

/// Decodes a colour raster as RGB together with its native sample range.
pub fn read_rgb_raw(path: &Path) -> Result<(RawRaster, ValueRange)> {
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    Ok(match img {
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let buf = img.to_rgb16();
            let v: Vec<f32> = buf.as_raw().iter().map(|&s| s as f32).collect();
            (planar(3, w, h, &v), ValueRange::U16)
        }
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => {
            (planar(3, w, h, img.to_rgb32f().as_raw()), ValueRange::new(0.0, 1.0))
        }
        _ => {
            let buf = img.to_rgb8();
            let v: Vec<f32> = buf.as_raw().iter().map(|&s| s as f32).collect();
            (planar(3, w, h, &v), ValueRange::U8)
        }
    })
}

/// Decodes a single-channel raster (8-bit, 16-bit or float) with its native range.
pub fn read_depth_raw(path: &Path) -> Result<(RawRaster, ValueRange)> {
    let img = decode(path)?;
    let (w, h) = (img.width(), img.height());
    Ok(match img {
        DynamicImage::ImageLuma8(b) => {
            let v: Vec<f32> = b.as_raw().iter().map(|&s| s as f32).collect();
            (planar(1, w, h, &v), ValueRange::U8)
        }
        DynamicImage::ImageLuma16(b) => {
            let v: Vec<f32> = b.as_raw().iter().map(|&s| s as f32).collect();
            (planar(1, w, h, &v), ValueRange::U16)
        }
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => {
            let b = img.to_luma32f();
            (planar(1, w, h, b.as_raw()), ValueRange::new(0.0, 1.0))
        }
        other => {
            return Err(Error::Data(format!(
                "{}: depth maps must be single-channel, found {:?}",
                path.display(),
                other.color()
            )))
        }
    })
}

fn resize_with(raw: &RawRaster, height: usize, width: usize, filter: FilterType) -> Result<RawRaster> {
    if (raw.height, raw.width) == (height, width) {
        return Ok(raw.clone());
    }
    let (w, h) = (raw.width as u32, raw.height as u32);
    // Float pixels are clamped to [0, 1] by the resampler, so work in that range.
    let lo = raw.samples.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = raw.samples.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data: Vec<f32> = interleaved(raw).iter().map(|v| (v - lo) / span).collect();
    let out: Vec<f32> = match raw.channels {
        1 => {
            let buf = ImageBuffer::<Luma<f32>, _>::from_raw(w, h, data)
                .ok_or_else(|| Error::Shape("raster buffer size mismatch".into()))?;
            imageops::resize(&buf, width as u32, height as u32, filter).into_raw()
        }
        3 => {
            let buf = ImageBuffer::<Rgb<f32>, _>::from_raw(w, h, data)
                .ok_or_else(|| Error::Shape("raster buffer size mismatch".into()))?;
            imageops::resize(&buf, width as u32, height as u32, filter).into_raw()
        }
        c => return Err(Error::Shape(format!("cannot resize a {c}-channel raster"))),
    };
    let out: Vec<f32> = out.iter().map(|v| (v * span + lo).clamp(lo, hi)).collect();
    Ok(planar(raw.channels, width as u32, height as u32, &out))
}

pub fn resize_bilinear(raw: &RawRaster, height: usize, width: usize) -> Result<RawRaster> {
    resize_with(raw, height, width, FilterType::Triangle)
}

pub fn resize_nearest(raw: &RawRaster, height: usize, width: usize) -> Result<RawRaster> {
    resize_with(raw, height, width, FilterType::Nearest)
}

/// Reads an RGB image, optionally resized (bilinear) to `size x size`.
pub fn load_rgb(path: &Path, size: Option<usize>) -> Result<ImageTensor> {
    let (mut raw, range) = read_rgb_raw(path)?;
    if let Some(s) = size {
        raw = resize_bilinear(&raw, s, s)?;
    }
    normalize(&raw, range)
}

/// Reads a depth map, clamps it to `range` (default: its bit depth) and
/// resizes it with nearest-neighbour sampling.
pub fn load_depth(path: &Path, range: Option<ValueRange>, size: Option<usize>) -> Result<ImageTensor> {
    let (mut raw, native) = read_depth_raw(path)?;
    let range = range.unwrap_or(native);
    let mut clamped = 0usize;
    for v in &mut raw.samples {
        let c = (*v as f64).clamp(range.min, range.max) as f32;
        if c != *v {
            clamped += 1;
        }
        *v = c;
    }
    if clamped > 0 {
        log::debug!("{}: clamped {clamped} depth samples to [{}, {}]", path.display(), range.min, range.max);
    }
    if let Some(s) = size {
        raw = resize_nearest(&raw, s, s)?;
    }
    normalize(&raw, range).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes the colour part of an image as 8-bit PNG (single-channel images as grey).
pub fn save_png(path: &Path, image: &ImageTensor) -> Result<()> {
    let img = if image.channels() >= 3 { image.rgb()? } else { image.clone() };
    let raw = denormalize(&img, ValueRange::U8);
    let bytes: Vec<u8> = interleaved(&raw).iter().map(|&v| v as u8).collect();
    let (w, h) = (raw.width as u32, raw.height as u32);
    let dynamic = if raw.channels == 1 {
        DynamicImage::ImageLuma8(ImageBuffer::from_raw(w, h, bytes).expect("sized buffer"))
    } else {
        DynamicImage::ImageRgb8(ImageBuffer::from_raw(w, h, bytes).expect("sized buffer"))
    };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    dynamic.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a single-channel raster as 16-bit PNG (depth fixtures and exports).
pub fn save_depth_png(path: &Path, width: u32, height: u32, samples: &[u16]) -> Result<()> {
    let buf = ImageBuffer::<Luma<u16>, _>::from_raw(width, height, samples.to_vec())
        .ok_or_else(|| Error::Shape("depth buffer size mismatch".into()))?;
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
