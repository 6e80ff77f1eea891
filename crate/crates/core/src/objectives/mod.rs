//! Loss functions. Each returns either a scalar tensor or a [`LossValue`]
//! whose component names (`gan`, `patchnce_x`, `patchnce_y`, `cycle`, `mse`,
//! `l1`, `d_real`, `d_fake`) are the logging vocabulary.

pub mod cut;
pub mod gan;
mod loss_value;
pub mod nce;
pub mod pixel;

pub use cut::{combined_cut_loss, cut_generator_loss, CutNetworks, CutWeights};
pub use gan::{gan_loss, GanRole};
pub use loss_value::{LossTerm, LossValue};
pub use nce::{info_nce, patch_nce, patch_nce_from_features, patch_nce_layer};
pub use pixel::{cycle_consistency_loss, cycle_terms, l1_loss, mse_loss};
