//! Image values exchanged between every component.
//!
//! Images are stored channel-first, `(channels, height, width)`, in the canonical
//! range `[-1, 1]`. Loaders convert from raw rasters at the boundary with
//! [`normalize`]; writers go back with [`denormalize`].

use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Which side of the translation a sample belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    SourceUniformLighting,
    TargetUnderwater,
}

/// Closed interval of raw sample values, e.g. `[0, 255]` for 8-bit rasters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub min: f64,
    pub max: f64,
}

impl ValueRange {
    pub const U8: ValueRange = ValueRange { min: 0.0, max: 255.0 };
    pub const U16: ValueRange = ValueRange {
        min: 0.0,
        max: 65535.0,
    };

    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn check(&self) -> Result<()> {
        if !(self.min.is_finite() && self.max.is_finite()) || self.max <= self.min {
            return Err(Error::InvalidInput(format!(
                "constant-range image: declared range [{}, {}] is degenerate",
                self.min, self.max
            )));
        }
        Ok(())
    }
}

/// Raster as read from disk: channel-first samples in some declared range.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRaster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<f32>,
}

impl RawRaster {
    pub fn new(channels: usize, height: usize, width: usize, samples: Vec<f32>) -> Result<Self> {
        if samples.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "raster of {channels}x{height}x{width} needs {} samples, got {}",
                channels * height * width,
                samples.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            samples,
        })
    }
}

/// Normalized `(C, H, W)` image with `C ∈ {1, 3, 4}`; channel 3 of a 4-channel
/// image is a depth plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image from channel-first data already in `[-1, 1]`.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(Error::Shape(format!(
                "image channels must be 1, 3 or 4, got {channels}"
            )));
        }
        if height == 0 || width == 0 {
            return Err(Error::Shape("image has an empty spatial extent".into()));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "image of {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite value {} at flat index {pos}",
                data[pos]
            )));
        }
        if let Some(pos) = data.iter().position(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!(
                "value {} at flat index {pos} lies outside [-1, 1]",
                data[pos]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds an image from a `(C, H, W)` or `(1, C, H, W)` tensor.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            3 => t.clone(),
            _ => {
                return Err(Error::Shape(format!(
                    "expected a (C, H, W) tensor, got {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        Self::new(c, h, w, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn has_depth(&self) -> bool {
        self.channels == 4
    }

    /// One channel as an `H*W` row-major slice.
    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    /// Copies channels `[start, start + count)` into a new image.
    pub fn select_channels(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.channels {
            return Err(Error::Shape(format!(
                "channels [{start}, {}) out of range for a {}-channel image",
                start + count,
                self.channels
            )));
        }
        let n = self.height * self.width;
        let data = self.data[start * n..(start + count) * n].to_vec();
        Self::new(count, self.height, self.width, data)
    }

    /// RGB part of the image (drops a depth plane if present).
    pub fn rgb(&self) -> Result<Self> {
        match self.channels {
            3 => Ok(self.clone()),
            4 => self.select_channels(0, 3),
            c => Err(Error::Shape(format!("{c}-channel image has no RGB part"))),
        }
    }

    pub fn to_tensor(&self, device: &Device) -> Result<Tensor> {
        Ok(Tensor::from_slice(
            &self.data,
            (self.channels, self.height, self.width),
            device,
        )?)
    }

    /// Stacks equally shaped images into a `(B, C, H, W)` float tensor.
    pub fn stack(images: &[&ImageTensor], device: &Device) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("cannot stack an empty image list".into()))?;
        let shape = first.shape();
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if img.shape() != shape {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    img.shape(),
                    shape
                )));
            }
            data.extend_from_slice(&img.data);
        }
        Ok(Tensor::from_vec(
            data,
            (images.len(), shape.0, shape.1, shape.2),
            device,
        )?)
    }

    /// Splits a `(B, C, H, W)` tensor into images.
    pub fn unstack(batch: &Tensor) -> Result<Vec<Self>> {
        let b = batch.dim(0)?;
        (0..b).map(|i| Self::from_tensor(&batch.get(i)?)).collect()
    }
}

/// Affinely maps raw samples from `range` onto `[-1, 1]`.
pub fn normalize(raw: &RawRaster, range: ValueRange) -> Result<ImageTensor> {
    range.check()?;
    let scale = 2.0 / (range.max - range.min);
    let data = raw
        .samples
        .iter()
        .map(|&v| ((v as f64 - range.min) * scale - 1.0) as f32)
        .collect();
    ImageTensor::new(raw.channels, raw.height, raw.width, data)
}

/// Maps `[-1, 1]` back onto `range`, rounding to the nearest integer step.
pub fn denormalize(image: &ImageTensor, range: ValueRange) -> RawRaster {
    let half_span = (range.max - range.min) / 2.0;
    let samples = image
        .data
        .iter()
        .map(|&v| {
            let raw = (v as f64 + 1.0) * half_span + range.min;
            raw.round().clamp(range.min, range.max) as f32
        })
        .collect();
    RawRaster {
        channels: image.channels,
        height: image.height,
        width: image.width,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raster(values: Vec<f32>) -> RawRaster {
        let n = values.len();
        RawRaster::new(1, 1, n, values).unwrap()
    }

    #[test]
    fn normalize_endpoints() {
        let hi = normalize(&raster(vec![255.0; 4]), ValueRange::U8).unwrap();
        assert!(hi.data().iter().all(|&v| v == 1.0));
        let lo = normalize(&raster(vec![0.0; 4]), ValueRange::U8).unwrap();
        assert!(lo.data().iter().all(|&v| v == -1.0));
    }

    #[test]
    fn normalize_midpoint() {
        let img = normalize(&raster(vec![128.0]), ValueRange::U8).unwrap();
        let expected = 2.0 * 128.0 / 255.0 - 1.0;
        assert!((img.data()[0] as f64 - expected).abs() < 1e-7);
        assert!((img.data()[0] - 0.00392).abs() < 1e-5);
    }

    #[test]
    fn degenerate_range_rejected() {
        let err = normalize(&raster(vec![3.0]), ValueRange::new(5.0, 5.0)).unwrap_err();
        assert!(err.to_string().contains("constant-range image"));
    }

    #[test]
    fn denormalize_values() {
        let img = ImageTensor::new(1, 1, 2, vec![-1.0, 0.5]).unwrap();
        let raw = denormalize(&img, ValueRange::U8);
        assert_eq!(raw.samples, vec![0.0, 191.0]);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, f32::NAN]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![f32::INFINITY, 0.0]).is_err());
        assert!(ImageTensor::new(2, 1, 1, vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn stack_and_unstack() {
        let a = ImageTensor::new(3, 2, 2, vec![0.25; 12]).unwrap();
        let b = ImageTensor::new(3, 2, 2, vec![-0.5; 12]).unwrap();
        let t = ImageTensor::stack(&[&a, &b], &Device::Cpu).unwrap();
        assert_eq!(t.dims(), &[2, 3, 2, 2]);
        let back = ImageTensor::unstack(&t).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    proptest! {
        #[test]
        fn u8_round_trip(channels in prop::sample::select(vec![1usize, 3, 4]),
                         pixels in prop::collection::vec(0u8..=255, 4)) {
            let samples: Vec<f32> = pixels.iter().cycle().take(channels * 4).map(|&p| p as f32).collect();
            let raw = RawRaster::new(channels, 2, 2, samples).unwrap();
            let img = normalize(&raw, ValueRange::U8).unwrap();
            prop_assert!(img.data().iter().all(|v| (-1.0..=1.0).contains(v)));
            prop_assert_eq!(denormalize(&img, ValueRange::U8), raw);
        }

        #[test]
        fn u16_round_trip(pixels in prop::collection::vec(0u16..=u16::MAX, 6)) {
            let raw = RawRaster::new(1, 2, 3, pixels.iter().map(|&p| p as f32).collect()).unwrap();
            let img = normalize(&raw, ValueRange::U16).unwrap();
            let back = denormalize(&img, ValueRange::U16);
            for (a, b) in back.samples.iter().zip(&raw.samples) {
                prop_assert!((a - b).abs() <= 1.0);
            }
        }
    }
}
