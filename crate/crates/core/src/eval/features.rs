use std::collections::HashMap;
use std::path::Path;

use candle_core::{Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::data::io::resize_bilinear;
use crate::tensor::{ImageTensor, RawRaster};

/// Maps an image to a fixed-length feature vector for FID.
pub trait FeatureExtractor {
    fn name(&self) -> &str;
    fn output_dim(&self) -> usize;
    /// Same image in, same features out.
    fn deterministic(&self) -> bool;
    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>>;

    fn extract_all(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f64>>> {
        images.iter().map(|i| self.extract(i)).collect()
    }
}

/// Box-averages the RGB planes of `img` onto a `grid × grid` raster,
/// returned channel-major in [0, 1].
pub fn pooled_rgb(img: &ImageTensor, grid: usize) -> Result<Vec<f64>> {
    let rgb = img.rgb()?;
    let (h, w) = (rgb.height(), rgb.width());
    let span = |i: usize, n: usize| {
        let start = i * n / grid;
        (start, ((i + 1) * n / grid).max(start + 1).min(n))
    };
    let mut out = Vec::with_capacity(3 * grid * grid);
    for c in 0..3 {
        let plane = rgb.plane(c);
        for gy in 0..grid {
            let (y0, y1) = span(gy, h);
            for gx in 0..grid {
                let (x0, x1) = span(gx, w);
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += plane[y * w + x] as f64;
                    }
                }
                let mean = sum / ((y1 - y0) * (x1 - x0)) as f64;
                out.push((mean + 1.0) / 2.0);
            }
        }
    }
    Ok(out)
}

/// Fixed-seed random features: pool to a small grid, project with a
/// Gaussian matrix, apply `tanh`. Cheap, dependency-free and deterministic;
/// its FID values are only comparable with other runs of the same extractor.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    name: String,
    grid: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    dim: usize,
}

impl RandomProjection {
    pub const DEFAULT_SEED: u64 = 0x5EED_F1D0;
    pub const DEFAULT_DIM: usize = 64;
    pub const DEFAULT_GRID: usize = 16;

    pub fn new(seed: u64, dim: usize, grid: usize) -> Result<Self> {
        if dim == 0 || grid == 0 {
            return Err(Error::InvalidInput("projection dimension and grid must be positive".into()));
        }
        let inputs = 3 * grid * grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (1.0 / inputs as f64).sqrt();
        let mut draw = |n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| StandardNormal.sample(&mut rng)).map(|v: f64| v * s).collect()
        };
        let weights = draw(dim * inputs, scale);
        let bias = draw(dim, 0.5);
        Ok(Self {
            name: format!("random-projection(seed={seed},dim={dim},grid={grid})"),
            grid,
            weights,
            bias,
            dim,
        })
    }
}

impl Default for RandomProjection {
    fn default() -> Self {
        Self::new(Self::DEFAULT_SEED, Self::DEFAULT_DIM, Self::DEFAULT_GRID).expect("valid defaults")
    }
}

impl FeatureExtractor for RandomProjection {
    fn name(&self) -> &str {
        &self.name
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let x: Vec<f64> = pooled_rgb(image, self.grid)?.into_iter().map(|v| v - 0.5).collect();
        let n = x.len();
        Ok((0..self.dim)
            .map(|k| {
                let row = &self.weights[k * n..(k + 1) * n];
                let z: f64 = row.iter().zip(&x).map(|(w, v)| w * v).sum::<f64>() + self.bias[k];
                z.tanh()
            })
            .collect())
    }
}

/// A convolutional trunk read from a safetensors file, for FID with a
/// pretrained classifier's features.
///
/// The file holds `conv{i}.weight` (`[out, in, k, k]`) and optional
/// `conv{i}.bias` for `i = 0, 1, ...`, plus optional `mean` and `std`
/// (`[3]`) for input standardization. Each conv runs with stride 2 and
/// padding `k / 2` followed by ReLU; the features are the global average
/// of the last activation. Inputs are resized to `input_size` and scaled
/// to [0, 1] before standardization.
#[derive(Debug)]
pub struct ConvTrunk {
    name: String,
    input_size: usize,
    convs: Vec<(Tensor, Option<Tensor>)>,
    mean: Option<Tensor>,
    std: Option<Tensor>,
    dim: usize,
}

impl ConvTrunk {
    pub fn load(path: &Path, input_size: usize) -> Result<Self> {
        let tensors: HashMap<String, Tensor> = candle_core::safetensors::load(path, &Device::Cpu)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        let f32 = |t: &Tensor| t.to_dtype(candle_core::DType::F32);
        let mut convs = Vec::new();
        let mut in_ch = 3;
        while let Some(w) = tensors.get(&format!("conv{}.weight", convs.len())) {
            let i = convs.len();
            let (out, cin, kh, kw) = w
                .dims4()
                .map_err(|_| Error::Checkpoint(format!("{}: `conv{i}.weight` is not 4-D", path.display())))?;
            if cin != in_ch || kh != kw {
                return Err(Error::Checkpoint(format!(
                    "{}: `conv{i}.weight` has shape {:?}; expected [_, {in_ch}, k, k]",
                    path.display(),
                    w.dims()
                )));
            }
            let b = tensors.get(&format!("conv{i}.bias")).map(f32).transpose()?;
            convs.push((f32(w)?, b));
            in_ch = out;
        }
        if convs.is_empty() {
            return Err(Error::Checkpoint(format!("{}: no `conv0.weight` entry", path.display())));
        }
        let stat = |k: &str| -> Result<Option<Tensor>> {
            tensors.get(k).map(|t| Ok(f32(t)?.reshape((1, 3, 1, 1))?)).transpose()
        };
        Ok(Self {
            name: format!("conv-trunk({})", path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()),
            input_size,
            mean: stat("mean")?,
            std: stat("std")?,
            dim: in_ch,
            convs,
        })
    }
}

impl FeatureExtractor for ConvTrunk {
    fn name(&self) -> &str {
        &self.name
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn extract(&self, image: &ImageTensor) -> Result<Vec<f64>> {
        let rgb = image.rgb()?;
        let size = self.input_size;
        let raw = RawRaster {
            channels: 3,
            height: rgb.height(),
            width: rgb.width(),
            samples: rgb.data().to_vec(),
        };
        let resized = resize_bilinear(&raw, size, size)?;
        let x = Tensor::from_vec(resized.samples, (1, 3, size, size), &Device::Cpu)?;
        let mut x = ((x + 1.0)? * 0.5)?;
        if let Some(m) = &self.mean {
            x = x.broadcast_sub(m)?;
        }
        if let Some(s) = &self.std {
            x = x.broadcast_div(s)?;
        }
        for (w, b) in &self.convs {
            let k = w.dim(2)?;
            x = x.conv2d(w, k / 2, 2, 1, 1)?;
            if let Some(b) = b {
                x = x.broadcast_add(&b.reshape((1, b.elem_count(), 1, 1))?)?;
            }
            x = x.relu()?;
        }
        let pooled = x.mean((2, 3))?.flatten_all()?.to_dtype(candle_core::DType::F64)?;
        Ok(pooled.to_vec1::<f64>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image(seed: u64, size: usize) -> ImageTensor {
        crate::fixtures::Scene::generate(seed, size, 0).uniform_image().unwrap()
    }

    #[test]
    fn pooling_averages_cells() {
        let img = ImageTensor::new(3, 2, 2, vec![-1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(pooled_rgb(&img, 1).unwrap(), vec![0.75, 0.5, 1.0]);
        assert_eq!(pooled_rgb(&img, 2).unwrap()[..4], [0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn random_projection_is_deterministic() {
        let a = RandomProjection::default();
        let b = RandomProjection::default();
        let img = image(1, 32);
        let fa = a.extract(&img).unwrap();
        assert_eq!(fa, b.extract(&img).unwrap());
        assert_eq!(fa.len(), 64);
        assert!(fa.iter().all(|v| v.abs() < 1.0));
        assert_ne!(fa, a.extract(&image(2, 32)).unwrap());
        assert_ne!(fa, RandomProjection::new(1, 64, 16).unwrap().extract(&img).unwrap());
    }

    #[test]
    fn conv_trunk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunk.safetensors");
        let dev = Device::Cpu;
        let mut t = HashMap::new();
        t.insert("conv0.weight".to_string(), Tensor::ones((4, 3, 3, 3), candle_core::DType::F32, &dev).unwrap());
        t.insert("conv1.weight".to_string(), Tensor::ones((5, 4, 3, 3), candle_core::DType::F32, &dev).unwrap());
        t.insert("conv1.bias".to_string(), Tensor::zeros(5, candle_core::DType::F32, &dev).unwrap());
        candle_core::safetensors::save(&t, &path).unwrap();
        let trunk = ConvTrunk::load(&path, 16).unwrap();
        assert_eq!(trunk.output_dim(), 5);
        let f = trunk.extract(&image(3, 24)).unwrap();
        assert_eq!(f.len(), 5);
        assert!(f.windows(2).all(|w| w[0] == w[1]));

        t.insert("conv2.weight".to_string(), Tensor::ones((2, 3, 3, 3), candle_core::DType::F32, &dev).unwrap());
        candle_core::safetensors::save(&t, &path).unwrap();
        let err = ConvTrunk::load(&path, 16).unwrap_err();
        assert!(err.to_string().contains("conv2.weight"), "{err}");
    }
}
