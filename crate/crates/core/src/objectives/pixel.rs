//! Pixelwise reconstruction losses.

use candle_core::Tensor;

use super::LossValue;
use crate::error::{Error, Result};
use crate::nn::Translator;

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "mse shape mismatch")?;
    Ok((pred - target)?.sqr()?.mean_all()?)
}

pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    same_shape(pred, target, "l1 shape mismatch")?;
    Ok((pred - target)?.abs()?.mean_all()?)
}

/// `mean|rec_x - x| + mean|rec_y - y|` from precomputed reconstructions.
pub fn cycle_terms(rec_x: &Tensor, x: &Tensor, rec_y: &Tensor, y: &Tensor) -> Result<Tensor> {
    Ok((l1_loss(rec_x, x)? + l1_loss(rec_y, y)?)?)
}

/// Cycle consistency of `g_xy: X -> Y` and `g_yx: Y -> X`.
pub fn cycle_consistency_loss(g_xy: &dyn Translator, g_yx: &dyn Translator, x: &Tensor, y: &Tensor) -> Result<LossValue> {
    let rec_x = g_yx.translate(&g_xy.translate(x)?)?;
    let rec_y = g_xy.translate(&g_yx.translate(y)?)?;
    LossValue::single("cycle", cycle_terms(&rec_x, x, &rec_y, y)?)
}
