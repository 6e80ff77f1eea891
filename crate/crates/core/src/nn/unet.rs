//! U-Net generator with skip connections, used by the paired pix2pix recipe.

use candle_core::Tensor;

use super::layers::{instance_norm, leaky_relu, Conv2d, ConvTranspose2d};
use super::params::ParamPath;
use super::Translator;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct UnetGenerator {
    in_channels: usize,
    downs: Vec<Conv2d>,
    ups: Vec<ConvTranspose2d>,
}

impl UnetGenerator {
    /// `num_downs` stride-2 levels; 8 levels take a 256x256 input down to 1x1.
    pub fn new(p: &mut ParamPath<'_>, in_channels: usize, out_channels: usize, ngf: usize, num_downs: usize) -> Result<Self> {
        if num_downs < 2 {
            return Err(Error::InvalidInput("U-Net needs at least two levels".into()));
        }
        let width = |i: usize| ngf * (1usize << i.min(3));
        let mut downs = Vec::with_capacity(num_downs);
        let mut ups = Vec::with_capacity(num_downs);
        for i in 0..num_downs {
            let in_c = if i == 0 { in_channels } else { width(i - 1) };
            downs.push(Conv2d::new(&mut p.pp(format!("down{i}")), in_c, width(i), 4, 2, 1)?);
        }
        for i in 0..num_downs {
            // Level i maps back to the resolution of level i - 1.
            let in_c = if i == num_downs - 1 { width(i) } else { 2 * width(i) };
            let out_c = if i == 0 { out_channels } else { width(i - 1) };
            ups.push(ConvTranspose2d::new(&mut p.pp(format!("up{i}")), in_c, out_c, 4, 2, 1, 0)?);
        }
        Ok(Self {
            in_channels,
            downs,
            ups,
        })
    }

    pub fn num_downs(&self) -> usize {
        self.downs.len()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        let depth = self.downs.len();
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "U-Net expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let step = 1usize << depth;
        if h % step != 0 || w % step != 0 {
            return Err(Error::Shape(format!(
                "U-Net with {depth} levels needs sides divisible by {step}, got {h}x{w}"
            )));
        }
        let mut skips = Vec::with_capacity(depth);
        let mut h_cur = self.downs[0].forward(x)?;
        skips.push(h_cur.clone());
        for i in 1..depth {
            h_cur = self.downs[i].forward(&leaky_relu(&h_cur, 0.2)?)?;
            if i < depth - 1 {
                h_cur = instance_norm(&h_cur)?;
            }
            skips.push(h_cur.clone());
        }
        let mut u = skips[depth - 1].clone();
        for i in (1..depth).rev() {
            u = instance_norm(&self.ups[i].forward(&u.relu()?)?)?;
            u = Tensor::cat(&[&u, &skips[i - 1]], 1)?;
        }
        Ok(self.ups[0].forward(&u.relu()?)?.tanh()?)
    }
}

impl Translator for UnetGenerator {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn translate(&self, x: &Tensor) -> Result<Tensor> {
        self.forward(x)
    }
}
