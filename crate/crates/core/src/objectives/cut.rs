use candle_core::Tensor;

use super::gan::{gan_loss, GanRole};
use super::nce::patch_nce;
use super::LossValue;
use crate::config::{ContrastiveConfig, GanMode};
use crate::error::{Error, Result};
use crate::nn::{PatchDiscriminator, PatchEncoder, ProjectionHeads, Refiner};

/// Per-term weights of the CUT generator objective. All 1.0 by default;
/// a zero weight skips the term entirely.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutWeights {
    pub gan: f64,
    pub nce_x: f64,
    pub nce_y: f64,
}

impl Default for CutWeights {
    fn default() -> Self {
        Self {
            gan: 1.0,
            nce_x: 1.0,
            nce_y: 1.0,
        }
    }
}

pub struct CutNetworks<'a> {
    pub refiner: &'a Refiner,
    pub heads: &'a ProjectionHeads,
    pub discriminator: &'a PatchDiscriminator,
}

/// Generator-side objective given an already translated batch `fake = R(x)`.
/// `y` must carry the refiner's input channels (depth included for a
/// 4-channel refiner) so the identity term can run `R(y)`.
pub fn cut_generator_loss(
    nets: &CutNetworks<'_>,
    x: &Tensor,
    fake: &Tensor,
    y: &Tensor,
    cfg: &ContrastiveConfig,
    mode: GanMode,
    weights: CutWeights,
    seed: u64,
) -> Result<LossValue> {
    let mut parts = Vec::with_capacity(3);
    if weights.gan != 0.0 {
        let logits = nets.discriminator.forward(fake)?;
        let g = gan_loss(None, &logits, GanRole::Generator, mode)?;
        parts.push(("gan", weights.gan, g.tensor().clone()));
    }
    if weights.nce_x != 0.0 {
        let nce = patch_nce(nets.refiner, nets.heads, x, fake, cfg, seed)?;
        parts.push(("patchnce_x", weights.nce_x, nce));
    }
    if weights.nce_y != 0.0 {
        let needed = nets.refiner.in_channels();
        if y.dim(1)? != needed {
            return Err(Error::Shape(format!(
                "identity term needs {needed}-channel target images, got {}",
                y.dim(1)?
            )));
        }
        let idt = nets.refiner.forward(y)?;
        let nce = patch_nce(nets.refiner, nets.heads, y, &idt, cfg, seed)?;
        parts.push(("patchnce_y", weights.nce_y, nce));
    }
    LossValue::weighted(parts)
}

/// Adversarial term plus PatchNCE on the source batch and on the target
/// batch (identity term).
pub fn combined_cut_loss(
    nets: &CutNetworks<'_>,
    x: &Tensor,
    y: &Tensor,
    cfg: &ContrastiveConfig,
    mode: GanMode,
    weights: CutWeights,
    seed: u64,
) -> Result<LossValue> {
    let fake = nets.refiner.forward(x)?;
    cut_generator_loss(nets, x, &fake, y, cfg, mode, weights, seed)
}
