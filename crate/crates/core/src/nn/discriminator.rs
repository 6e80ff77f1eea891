//! PatchGAN discriminator: a fully convolutional stack whose output is a grid of
//! real/fake logits, one per overlapping input patch.

use candle_core::Tensor;

use super::layers::{instance_norm, leaky_relu, Conv2d};
use super::params::ParamPath;
use crate::error::{Error, Result};

const KERNEL: usize = 4;
const PADDING: usize = 1;

/// Strides of the conv schedule: `n_layers` stride-2 convs, then two stride-1 convs.
fn strides(n_layers: usize) -> Vec<usize> {
    let mut s = vec![2; n_layers];
    s.extend([1, 1]);
    s
}

/// Side of the input patch seen by one output logit.
pub fn receptive_field(n_layers: usize) -> usize {
    strides(n_layers)
        .iter()
        .rev()
        .fold(1, |rf, &s| (rf - 1) * s + KERNEL)
}

/// Side of the logits grid for an input of side `size`, or `None` when the grid is empty.
pub fn grid_size(size: usize, n_layers: usize) -> Option<usize> {
    strides(n_layers).iter().try_fold(size, |s, &stride| {
        (s + 2 * PADDING).checked_sub(KERNEL).map(|v| v / stride + 1)
    })
}

#[derive(Debug, Clone)]
pub struct PatchDiscriminator {
    in_channels: usize,
    n_layers: usize,
    convs: Vec<Conv2d>,
}

impl PatchDiscriminator {
    pub fn new(p: &mut ParamPath<'_>, in_channels: usize, ndf: usize, n_layers: usize) -> Result<Self> {
        if n_layers == 0 {
            return Err(Error::InvalidInput("discriminator needs at least one layer".into()));
        }
        let width = |i: usize| ndf * (1usize << i.min(3));
        let mut convs = Vec::with_capacity(n_layers + 2);
        convs.push(Conv2d::new(&mut p.pp("conv0"), in_channels, ndf, KERNEL, 2, PADDING)?);
        for i in 1..n_layers {
            convs.push(Conv2d::new(
                &mut p.pp(format!("conv{i}")),
                width(i - 1),
                width(i),
                KERNEL,
                2,
                PADDING,
            )?);
        }
        convs.push(Conv2d::new(
            &mut p.pp(format!("conv{n_layers}")),
            width(n_layers - 1),
            width(n_layers),
            KERNEL,
            1,
            PADDING,
        )?);
        convs.push(Conv2d::new(
            &mut p.pp("out"),
            width(n_layers),
            1,
            KERNEL,
            1,
            PADDING,
        )?);
        Ok(Self {
            in_channels,
            n_layers,
            convs,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.n_layers)
    }

    /// `(B, C, H, W)` images to `(B, 1, h, w)` logits.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != self.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels, got {c}",
                self.in_channels
            )));
        }
        let rf = self.receptive_field();
        if h < rf || w < rf {
            return Err(Error::Shape(format!(
                "input {h}x{w} is smaller than the {rf}x{rf} receptive field"
            )));
        }
        let last = self.convs.len() - 1;
        let mut x = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(&x)?;
            if i == last {
                break;
            }
            if i > 0 {
                x = instance_norm(&x)?;
            }
            x = leaky_relu(&x, 0.2)?;
        }
        Ok(x)
    }
}
