//! Adversarial losses over patch-logit grids.

use candle_core::Tensor;

use super::LossValue;
use crate::config::GanMode;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GanRole {
    Generator,
    Discriminator,
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

fn check(logits: &Tensor, which: &str) -> Result<()> {
    if logits.elem_count() == 0 {
        return Err(Error::InvalidInput(format!("empty {which} logit grid")));
    }
    Ok(())
}

/// Mean of the per-cell loss for logits pushed toward `target` (1 real, 0 fake).
fn cell_loss(logits: &Tensor, target_real: bool, mode: GanMode) -> Result<Tensor> {
    let per_cell = match mode {
        GanMode::LeastSquares => {
            let target = if target_real { 1.0 } else { 0.0 };
            (logits - target)?.sqr()?
        }
        // -log sigmoid(x) = softplus(-x); -log(1 - sigmoid(x)) = softplus(x)
        GanMode::Vanilla => {
            if target_real {
                softplus(&logits.neg()?)?
            } else {
                softplus(logits)?
            }
        }
    };
    Ok(per_cell.mean_all()?)
}

/// Generator role uses only `fake` and reports one `gan` component (the
/// vanilla generator is non-saturating: it pushes fake logits toward "real").
/// Discriminator role reports `d_real` and `d_fake`, each weighted 1/2.
/// Reduction is the mean over grid cells and batch.
pub fn gan_loss(real: Option<&Tensor>, fake: &Tensor, role: GanRole, mode: GanMode) -> Result<LossValue> {
    check(fake, "fake")?;
    match role {
        GanRole::Generator => LossValue::single("gan", cell_loss(fake, true, mode)?),
        GanRole::Discriminator => {
            let real = real.ok_or_else(|| {
                Error::InvalidInput("discriminator loss needs real logits".into())
            })?;
            check(real, "real")?;
            LossValue::weighted(vec![
                ("d_real", 0.5, cell_loss(real, true, mode)?),
                ("d_fake", 0.5, cell_loss(fake, false, mode)?),
            ])
        }
    }
}
