//! Networks: refiner, projection heads, patch discriminator, U-Net generator
//! and autoencoder. All are built from a [`params::ParamStore`] and run on
//! `(B, C, H, W)` tensors.

pub mod autoencoder;
pub mod discriminator;
pub mod heads;
pub mod layers;
pub mod params;
pub mod refiner;
pub mod unet;

use candle_core::Tensor;

use crate::error::{Error, Result};

pub use autoencoder::{Autoencoder, CapturedLayer};
pub use discriminator::PatchDiscriminator;
pub use heads::{encode_features, FeatureStack, LayerFeatures, ProjectionHeads};
pub use params::ParamStore;
pub use refiner::Refiner;
pub use unet::UnetGenerator;

/// An encoder whose intermediate layers can be tapped for patch features.
pub trait PatchEncoder {
    fn in_channels(&self) -> usize;
    fn layer_count(&self) -> usize;
    fn layer_channels(&self, layer: usize) -> Result<usize>;
    /// `(B, C_l, H_l, W_l)` activations at each requested layer, in request order.
    fn encode_layers(&self, x: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>>;
}

/// Anything that maps a batch of images to translated images.
pub trait Translator {
    fn in_channels(&self) -> usize;
    fn translate(&self, x: &Tensor) -> Result<Tensor>;
}

/// Returns its input unchanged (RGB part only).
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Translator for Identity {
    fn in_channels(&self) -> usize {
        3
    }

    fn translate(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        if c < 3 {
            return Err(Error::Shape(format!("identity needs RGB input, got {c} channels")));
        }
        Ok(x.narrow(1, 0, 3)?)
    }
}
