//! One optimization step per recipe. Each returns the values to log.

use std::sync::atomic::{AtomicBool, Ordering};

use candle_core::{DType, Tensor};

use super::adam::Adam;
use super::state::{Models, TrainerState};
use crate::config::GanMode;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::objectives::{cut_generator_loss, cycle_terms, gan_loss, l1_loss, mse_loss, CutNetworks, CutWeights, GanRole, LossValue};

/// Depth value of a constant zero-depth plane (raw 0 with a zero-based range).
pub const ZERO_DEPTH: f64 = -1.0;

static ZERO_DEPTH_WARNED: AtomicBool = AtomicBool::new(false);

pub type Logged = Vec<(String, f64)>;

/// Weighted contributions of every term followed by `total_name`.
fn loss_records(loss: &LossValue, total_name: &str) -> Logged {
    let mut out: Logged = loss.terms().iter().map(|t| (t.name.clone(), t.weight * t.value)).collect();
    out.push((total_name.to_string(), loss.value()));
    out
}

/// Fraction of real cells scored above and fake cells below the decision threshold.
fn disc_accuracy(real: &Tensor, fake: &Tensor, mode: GanMode) -> Result<f64> {
    let threshold = match mode {
        GanMode::LeastSquares => 0.5,
        GanMode::Vanilla => 0.0,
    };
    let r = real.ge(threshold)?.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    let f = fake.lt(threshold)?.to_dtype(DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    Ok((r + f) / (real.elem_count() + fake.elem_count()) as f64)
}

fn disc_update(opt: &mut Adam, real: &Tensor, fake: &Tensor, mode: GanMode) -> Result<Logged> {
    let loss = gan_loss(Some(real), fake, GanRole::Discriminator, mode)?;
    opt.step(&loss.tensor().backward()?)?;
    let mut out = loss_records(&loss, "d_total");
    out.push(("d_acc".into(), disc_accuracy(real, fake, mode)?));
    Ok(out)
}

/// Sum of two discriminator losses sharing one optimizer step.
fn disc_update_pair(opt: &mut Adam, a: (&Tensor, &Tensor), b: (&Tensor, &Tensor), mode: GanMode) -> Result<Logged> {
    let la = gan_loss(Some(a.0), a.1, GanRole::Discriminator, mode)?;
    let lb = gan_loss(Some(b.0), b.1, GanRole::Discriminator, mode)?;
    let grads = (la.tensor() + lb.tensor())?.backward()?;
    opt.step(&grads)?;
    let sum = |name: &str| {
        la.terms().iter().chain(lb.terms()).filter(|t| t.name == name).map(|t| t.weight * t.value).sum::<f64>()
    };
    let acc = (disc_accuracy(a.0, a.1, mode)? + disc_accuracy(b.0, b.1, mode)?) / 2.0;
    Ok(vec![
        ("d_real".into(), sum("d_real")),
        ("d_fake".into(), sum("d_fake")),
        ("d_total".into(), la.value() + lb.value()),
        ("d_acc".into(), acc),
    ])
}

/// Brings target images to the refiner's channel count for the identity term.
pub fn identity_input(y: &Tensor, channels: usize) -> Result<Tensor> {
    let c = y.dim(1)?;
    if c == channels {
        return Ok(y.clone());
    }
    if c > channels {
        return Ok(y.narrow(1, 0, channels)?);
    }
    if c == 3 && channels == 4 {
        if !ZERO_DEPTH_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("target images carry no depth; the identity term uses a constant zero-depth plane");
        }
        let (b, _, h, w) = y.dims4()?;
        let plane = Tensor::full(ZERO_DEPTH as f32, (b, 1, h, w), y.device())?.to_dtype(y.dtype())?;
        return Ok(Tensor::cat(&[y, &plane], 1)?);
    }
    Err(Error::Shape(format!("cannot feed {c}-channel targets to a {channels}-channel refiner")))
}

fn rgb(t: &Tensor) -> Result<Tensor> {
    Ok(if t.dim(1)? > 3 { t.narrow(1, 0, 3)? } else { t.clone() })
}

/// Generator outputs computed during the discriminator phase, reused by
/// the generator phase (generator weights do not change in between).
#[derive(Debug, Clone, Default)]
pub struct Fakes(Vec<Tensor>);

fn cut_input(cfg_channels: usize, x: &Tensor) -> Result<Tensor> {
    Ok(x.narrow(1, 0, cfg_channels.min(x.dim(1)?))?)
}

/// Updates only the discriminator side. Returns its log values and the
/// generator outputs it was trained against.
pub fn discriminator_update(state: &mut TrainerState, batch: &Batch) -> Result<(Logged, Fakes)> {
    let mode = state.config.gan_mode;
    let in_channels = state.config.in_channels();
    let TrainerState { models, disc_opt, .. } = state;
    let Some(disc_opt) = disc_opt.as_mut() else {
        return Ok((Vec::new(), Fakes::default()));
    };
    match models {
        Models::Autoencoder(_) => Ok((Vec::new(), Fakes::default())),
        Models::Pix2Pix {
            generator,
            discriminator,
        } => {
            let (x, y) = (rgb(&batch.x)?, rgb(&batch.y)?);
            let fake = generator.forward(&x)?;
            let real_pair = Tensor::cat(&[&x, &y], 1)?;
            let fake_pair = Tensor::cat(&[&x, &fake.detach()], 1)?;
            let out = disc_update(
                disc_opt,
                &discriminator.forward(&real_pair)?,
                &discriminator.forward(&fake_pair)?,
                mode,
            )?;
            Ok((out, Fakes(vec![fake])))
        }
        Models::CycleGan { g_xy, g_yx, d_x, d_y } => {
            let (x, y) = (&batch.x, &batch.y);
            if x.dim(1)? != 3 || y.dim(1)? != 3 {
                return Err(Error::Data(format!(
                    "CycleGAN trains on 3-channel images, got {} and {} channels",
                    x.dim(1)?,
                    y.dim(1)?
                )));
            }
            let fake_y = g_xy.forward(x)?;
            let fake_x = g_yx.forward(y)?;
            let out = disc_update_pair(
                disc_opt,
                (&d_y.forward(y)?, &d_y.forward(&fake_y.detach())?),
                (&d_x.forward(x)?, &d_x.forward(&fake_x.detach())?),
                mode,
            )?;
            Ok((out, Fakes(vec![fake_y, fake_x])))
        }
        Models::Cut {
            refiner,
            discriminator,
            ..
        } => {
            let fake = refiner.forward(&cut_input(in_channels, &batch.x)?)?;
            let out = disc_update(
                disc_opt,
                &discriminator.forward(&rgb(&batch.y)?)?,
                &discriminator.forward(&fake.detach())?,
                mode,
            )?;
            Ok((out, Fakes(vec![fake])))
        }
    }
}

/// Updates only the generator side (generators, plus projection heads for
/// CUT). Missing `fakes` are recomputed.
pub fn generator_update(state: &mut TrainerState, batch: &Batch, fakes: Fakes, seed: u64) -> Result<Logged> {
    let cfg = &state.config;
    let mode = cfg.gan_mode;
    let TrainerState { models, gen_opt, .. } = state;
    let mut fakes = fakes.0.into_iter();
    let loss = match models {
        Models::Autoencoder(ae) => {
            let pred = ae.forward_t(&rgb(&batch.x)?, true)?;
            LossValue::single("mse", mse_loss(&pred, &rgb(&batch.y)?)?)?
        }
        Models::Pix2Pix {
            generator,
            discriminator,
        } => {
            let (x, y) = (rgb(&batch.x)?, rgb(&batch.y)?);
            let fake = match fakes.next() {
                Some(f) => f,
                None => generator.forward(&x)?,
            };
            let logits = discriminator.forward(&Tensor::cat(&[&x, &fake], 1)?)?;
            let adv = gan_loss(None, &logits, GanRole::Generator, mode)?;
            LossValue::weighted(vec![
                ("gan", cfg.lambda_gan, adv.tensor().clone()),
                ("l1", cfg.lambda_l1, l1_loss(&fake, &y)?),
            ])?
        }
        Models::CycleGan { g_xy, g_yx, d_x, d_y } => {
            let (x, y) = (&batch.x, &batch.y);
            let fake_y = match fakes.next() {
                Some(f) => f,
                None => g_xy.forward(x)?,
            };
            let fake_x = match fakes.next() {
                Some(f) => f,
                None => g_yx.forward(y)?,
            };
            let adv_y = gan_loss(None, &d_y.forward(&fake_y)?, GanRole::Generator, mode)?;
            let adv_x = gan_loss(None, &d_x.forward(&fake_x)?, GanRole::Generator, mode)?;
            let cycle = cycle_terms(&g_yx.forward(&fake_y)?, x, &g_xy.forward(&fake_x)?, y)?;
            LossValue::weighted(vec![
                ("gan", cfg.lambda_gan, (adv_y.tensor() + adv_x.tensor())?),
                ("cycle", cfg.lambda_cycle, cycle),
            ])?
        }
        Models::Cut {
            refiner,
            heads,
            discriminator,
        } => {
            let x = cut_input(cfg.in_channels(), &batch.x)?;
            let fake = match fakes.next() {
                Some(f) => f,
                None => refiner.forward(&x)?,
            };
            let y_in = identity_input(&batch.y, cfg.in_channels())?;
            let nets = CutNetworks {
                refiner,
                heads,
                discriminator,
            };
            let weights = CutWeights {
                gan: cfg.lambda_gan,
                nce_x: cfg.lambda_nce_x,
                nce_y: cfg.lambda_nce_y,
            };
            cut_generator_loss(&nets, &x, &fake, &y_in, &cfg.contrastive, mode, weights, seed)?
        }
    };
    gen_opt.step(&loss.tensor().backward()?)?;
    Ok(loss_records(&loss, "total"))
}

/// One discriminator update followed by one generator update.
pub fn step(state: &mut TrainerState, batch: &Batch, seed: u64) -> Result<Logged> {
    let (mut out, fakes) = discriminator_update(state, batch)?;
    out.extend(generator_update(state, batch, fakes, seed)?);
    Ok(out)
}
