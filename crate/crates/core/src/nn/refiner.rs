//! Residual refiner: downsampling encoder, residual blocks, fractional-stride decoder.
//!
//! The encoder is enumerated as a flat list of layers so that the patchwise
//! contrastive loss can tap intermediate activations by index:
//!
//! | id          | layer                          | channels | spatial |
//! |-------------|--------------------------------|----------|---------|
//! | 0           | reflection pad 3               | in       | H+6     |
//! | 1, 2, 3     | conv 7x7, norm, relu           | ngf      | H       |
//! | 4, 5, 6     | conv 3x3 /2, norm, relu        | 2 ngf    | H/2     |
//! | 7, 8, 9     | conv 3x3 /2, norm, relu        | 4 ngf    | H/4     |
//! | 10 ..       | residual blocks                | 4 ngf    | H/4     |

use candle_core::Tensor;

use super::layers::{instance_norm, reflection_pad2d, Conv2d, ConvTranspose2d};
use super::params::ParamPath;
use super::{PatchEncoder, Translator};
use crate::error::{Error, Result};

/// Layers before the first residual block.
const STEM_LAYERS: usize = 10;

pub fn encoder_depth(n_res_blocks: usize) -> usize {
    STEM_LAYERS + n_res_blocks
}

#[derive(Debug, Clone)]
struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(p: &mut ParamPath<'_>, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&mut p.pp("conv1"), channels, channels, 3, 1, 0)?,
            conv2: Conv2d::new(&mut p.pp("conv2"), channels, channels, 3, 1, 0)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(&reflection_pad2d(x, 1)?)?;
        let h = instance_norm(&h)?.relu()?;
        let h = self.conv2.forward(&reflection_pad2d(&h, 1)?)?;
        let h = instance_norm(&h)?;
        Ok((x + h)?)
    }
}

#[derive(Debug, Clone)]
enum EncoderLayer {
    Pad(usize),
    Conv(Conv2d),
    Norm,
    Relu,
    Res(ResBlock),
}

impl EncoderLayer {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            EncoderLayer::Pad(p) => reflection_pad2d(x, *p),
            EncoderLayer::Conv(c) => c.forward(x),
            EncoderLayer::Norm => instance_norm(x),
            EncoderLayer::Relu => Ok(x.relu()?),
            EncoderLayer::Res(r) => r.forward(x),
        }
    }
}

/// Generator mapping `(in_channels, H, W)` inputs to `(3, H, W)` outputs in `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct Refiner {
    in_channels: usize,
    ngf: usize,
    n_res_blocks: usize,
    encoder: Vec<EncoderLayer>,
    up1: ConvTranspose2d,
    up2: ConvTranspose2d,
    out: Conv2d,
}

impl Refiner {
    pub fn new(p: &mut ParamPath<'_>, in_channels: usize, ngf: usize, n_res_blocks: usize) -> Result<Self> {
        if !matches!(in_channels, 3 | 4) {
            return Err(Error::Shape(format!(
                "refiner input must have 3 or 4 channels, got {in_channels}"
            )));
        }
        let mut enc = p.pp("encoder");
        let mut encoder = vec![
            EncoderLayer::Pad(3),
            EncoderLayer::Conv(Conv2d::new(&mut enc.pp("stem"), in_channels, ngf, 7, 1, 0)?),
            EncoderLayer::Norm,
            EncoderLayer::Relu,
            EncoderLayer::Conv(Conv2d::new(&mut enc.pp("down1"), ngf, 2 * ngf, 3, 2, 1)?),
            EncoderLayer::Norm,
            EncoderLayer::Relu,
            EncoderLayer::Conv(Conv2d::new(&mut enc.pp("down2"), 2 * ngf, 4 * ngf, 3, 2, 1)?),
            EncoderLayer::Norm,
            EncoderLayer::Relu,
        ];
        for i in 0..n_res_blocks {
            encoder.push(EncoderLayer::Res(ResBlock::new(
                &mut enc.pp(format!("res{i}")),
                4 * ngf,
            )?));
        }
        let mut dec = p.pp("decoder");
        let up1 = ConvTranspose2d::new(&mut dec.pp("up1"), 4 * ngf, 2 * ngf, 3, 2, 1, 1)?;
        let up2 = ConvTranspose2d::new(&mut dec.pp("up2"), 2 * ngf, ngf, 3, 2, 1, 1)?;
        let out = Conv2d::new(&mut dec.pp("out"), ngf, 3, 7, 1, 0)?;
        Ok(Self {
            in_channels,
            ngf,
            n_res_blocks,
            encoder,
            up1,
            up2,
            out,
        })
    }

    pub fn n_res_blocks(&self) -> usize {
        self.n_res_blocks
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "refiner expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h < 8 || w < 8 {
            return Err(Error::Shape(format!(
                "refiner input {h}x{w} must be at least 8x8 and divisible by 4"
            )));
        }
        Ok(())
    }

    /// Full encoder output `z`.
    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.encoder {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let h = instance_norm(&self.up1.forward(z)?)?.relu()?;
        let h = instance_norm(&self.up2.forward(&h)?)?.relu()?;
        let h = self.out.forward(&reflection_pad2d(&h, 3)?)?;
        Ok(h.tanh()?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(x)?)
    }
}

impl PatchEncoder for Refiner {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn layer_count(&self) -> usize {
        self.encoder.len()
    }

    fn layer_channels(&self, layer: usize) -> Result<usize> {
        let ngf = self.ngf;
        match layer {
            0 => Ok(self.in_channels),
            1..=3 => Ok(ngf),
            4..=6 => Ok(2 * ngf),
            l if l < self.encoder.len() => Ok(4 * ngf),
            l => Err(Error::InvalidInput(format!(
                "encoder layer {l} does not exist; valid ids are 0..{}",
                self.encoder.len()
            ))),
        }
    }

    fn encode_layers(&self, x: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>> {
        self.check_input(x)?;
        let last = match layers.iter().max() {
            Some(&l) => l,
            None => return Ok(Vec::new()),
        };
        if last >= self.encoder.len() {
            return Err(Error::InvalidInput(format!(
                "encoder layer {last} does not exist; valid ids are 0..{}",
                self.encoder.len()
            )));
        }
        let mut taps = vec![None; layers.len()];
        let mut h = x.clone();
        for (id, layer) in self.encoder.iter().enumerate().take(last + 1) {
            h = layer.forward(&h)?;
            for (slot, &want) in taps.iter_mut().zip(layers) {
                if want == id {
                    *slot = Some(h.clone());
                }
            }
        }
        Ok(taps.into_iter().map(|t| t.expect("tapped layer")).collect())
    }
}

impl Translator for Refiner {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn translate(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ParamStore;
    use candle_core::{DType, Device};

    fn tiny(in_channels: usize) -> (ParamStore, Refiner) {
        let mut store = ParamStore::new(3, DType::F32);
        let r = Refiner::new(&mut store.root().pp("refiner"), in_channels, 4, 2).unwrap();
        (store, r)
    }

    #[test]
    fn shape_contract_small() {
        let (_s, r) = tiny(3);
        let x = Tensor::randn(0f32, 1., (1, 3, 64, 64), &Device::Cpu).unwrap();
        assert_eq!(r.forward(&x).unwrap().dims(), &[1, 3, 64, 64]);
        let (_s, r4) = tiny(4);
        let x = Tensor::randn(0f32, 1., (2, 4, 16, 24), &Device::Cpu).unwrap();
        assert_eq!(r4.forward(&x).unwrap().dims(), &[2, 3, 16, 24]);
    }

    #[test]
    fn outputs_bounded() {
        let (_s, r) = tiny(3);
        for i in 0..100 {
            let x = (Tensor::randn(0f32, 1., (1, 3, 8, 8), &Device::Cpu).unwrap() * (1.0 + i as f64)).unwrap();
            let y = r.forward(&x).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
            assert!(y.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let (_s, r) = tiny(4);
        let x = Tensor::zeros((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(r.forward(&x).is_err());
    }

    #[test]
    fn tapped_layers_have_declared_shapes() {
        let (_s, r) = tiny(4);
        let x = Tensor::randn(0f32, 1., (1, 4, 16, 16), &Device::Cpu).unwrap();
        let layers = [0, 3, 4, 8, 11];
        let feats = r.encode_layers(&x, &layers).unwrap();
        let dims: Vec<_> = feats.iter().map(|f| f.dims().to_vec()).collect();
        assert_eq!(
            dims,
            vec![
                vec![1, 4, 22, 22],
                vec![1, 4, 16, 16],
                vec![1, 8, 8, 8],
                vec![1, 16, 4, 4],
                vec![1, 16, 4, 4]
            ]
        );
        for (&l, f) in layers.iter().zip(&feats) {
            assert_eq!(r.layer_channels(l).unwrap(), f.dim(1).unwrap());
        }
        assert!(r.encode_layers(&x, &[12]).is_err());
    }
}
