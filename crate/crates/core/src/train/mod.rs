//! Training recipes for the autoencoder, pix2pix, CycleGAN, CUT and
//! CUT + depth, with checkpointing and metric logging.
//!
//! Every recipe shares one loop: batches come from a [`BatchSchedule`]
//! keyed by `(seed, epoch)`, one discriminator update (if any) precedes one
//! generator update, and all values go through a [`MetricsLogger`].
//! Logged loss components are weighted contributions, so on every step the
//! generator components sum to `total` and `d_real + d_fake = d_total`.

pub mod adam;
pub mod logger;
pub mod state;
pub mod steps;

use std::path::{Path, PathBuf};

use candle_core::Device;

use crate::config::{Method, TrainConfig};
use crate::data::{iterate_batches, BatchSchedule, DatasetRef, PairedExample, UnpairedDataset};
use crate::error::{Error, Result};

pub use adam::Adam;
pub use logger::{MetricRecord, MetricsLogger, CSV_HEADER};
pub use state::{load_checkpoint, save_checkpoint, BestMetric, CheckpointDescriptor, Models, TrainerState};

/// Where and how a run persists itself.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoints go to `<dir>/epoch_NNNN` (every `checkpoint_every` epochs)
    /// and `<dir>/last` (end of run).
    pub checkpoint_dir: Option<PathBuf>,
    /// Also keep `<dir>/best`, the epoch with the lowest mean total loss.
    pub keep_best: bool,
}

/// Seed for the patch sampling of one step.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn check_dataset(cfg: &TrainConfig, data: &DatasetRef<'_>) -> Result<()> {
    let paired = matches!(data, DatasetRef::Paired(_));
    if paired != cfg.method.is_paired() {
        return Err(Error::Data(format!(
            "{} trains on {} data, got a {} dataset",
            cfg.method.display_name(),
            if cfg.method.is_paired() { "paired" } else { "unpaired" },
            if paired { "paired" } else { "unpaired" }
        )));
    }
    let source_channels = match data {
        DatasetRef::Paired(p) => p.first().map(|e| e.x.channels()),
        DatasetRef::Unpaired(u) => u.source.first().map(|s| s.channels()),
    }
    .ok_or_else(|| Error::Data("dataset is empty".into()))?;
    match cfg.method {
        Method::CutDepth if source_channels != 4 => Err(Error::Data(format!(
            "CUT + depth needs 4-channel sources (RGB + depth), got {source_channels} channels"
        ))),
        Method::CycleGan if source_channels != 3 => Err(Error::Data(format!(
            "CycleGAN takes 3-channel sources, got {source_channels}; depth input is CUT-only"
        ))),
        _ => Ok(()),
    }
}

/// Trains `state` on `data` until `config.epochs` epochs (or `max_steps`
/// steps) have been completed, continuing from `state.global_step`.
pub fn run(state: &mut TrainerState, data: DatasetRef<'_>, logger: &mut MetricsLogger, opts: &TrainOptions) -> Result<()> {
    check_dataset(&state.config, &data)?;
    let cfg = state.config.clone();
    let schedule: BatchSchedule = data.schedule(cfg.batch_size, cfg.seed)?;
    let per_epoch = schedule.batches_per_epoch() as u64;
    let mut end = cfg.epochs as u64 * per_epoch;
    if cfg.max_steps > 0 {
        end = end.min(cfg.max_steps as u64);
    }
    let device = Device::Cpu;
    while state.global_step < end {
        let epoch = state.global_step / per_epoch;
        let offset = (state.global_step % per_epoch) as usize;
        state.epoch = epoch;
        let (mut sum, mut count) = (0.0, 0usize);
        for batch in iterate_batches(data, cfg.batch_size, cfg.seed, epoch, &device)?.start_at(offset) {
            if state.global_step >= end {
                break;
            }
            let batch = batch?;
            let records = steps::step(state, &batch, step_seed(cfg.seed, state.global_step))?;
            state.global_step += 1;
            if let Some((_, v)) = records.iter().find(|(n, _)| n == "total") {
                sum += v;
                count += 1;
            }
            logger.log_all(state.global_step, epoch, &records)?;
        }
        if state.global_step % per_epoch == 0 {
            state.epoch = epoch + 1;
            finish_epoch(state, epoch + 1, sum, count, opts, state.global_step < end)?;
        }
    }
    logger.flush()?;
    if let Some(dir) = &opts.checkpoint_dir {
        save_checkpoint(state, &dir.join("last"))?;
    }
    Ok(())
}

fn finish_epoch(state: &mut TrainerState, done: u64, sum: f64, count: usize, opts: &TrainOptions, more: bool) -> Result<()> {
    let Some(dir) = &opts.checkpoint_dir else {
        return Ok(());
    };
    if count > 0 && opts.keep_best {
        let mean = sum / count as f64;
        if state.best.as_ref().map(|b| mean < b.value).unwrap_or(true) {
            state.best = Some(BestMetric {
                name: "total".into(),
                value: mean,
                epoch: done,
            });
            save_checkpoint(state, &dir.join("best"))?;
        }
    }
    let every = state.config.checkpoint_every as u64;
    if more && every > 0 && done % every == 0 {
        save_checkpoint(state, &dir.join(format!("epoch_{done:04}")))?;
    }
    Ok(())
}

fn expect_method(config: &TrainConfig, allowed: &[Method]) -> Result<()> {
    if !allowed.contains(&config.method) {
        return Err(Error::config(
            "method",
            format!("this trainer cannot run `{}`", config.method),
        ));
    }
    Ok(())
}

pub fn train_autoencoder(config: TrainConfig, data: &[PairedExample], logger: &mut MetricsLogger, opts: &TrainOptions) -> Result<TrainerState> {
    expect_method(&config, &[Method::Autoencoder])?;
    let mut state = TrainerState::new(config)?;
    run(&mut state, DatasetRef::Paired(data), logger, opts)?;
    Ok(state)
}

pub fn train_pix2pix(config: TrainConfig, data: &[PairedExample], logger: &mut MetricsLogger, opts: &TrainOptions) -> Result<TrainerState> {
    expect_method(&config, &[Method::Pix2Pix])?;
    let mut state = TrainerState::new(config)?;
    run(&mut state, DatasetRef::Paired(data), logger, opts)?;
    Ok(state)
}

pub fn train_cyclegan(config: TrainConfig, data: &UnpairedDataset, logger: &mut MetricsLogger, opts: &TrainOptions) -> Result<TrainerState> {
    expect_method(&config, &[Method::CycleGan])?;
    let mut state = TrainerState::new(config)?;
    run(&mut state, DatasetRef::Unpaired(data), logger, opts)?;
    Ok(state)
}

/// CUT, or CUT + depth when `use_depth` (the refiner then takes RGBD input).
pub fn train_cut(
    mut config: TrainConfig,
    data: &UnpairedDataset,
    use_depth: bool,
    logger: &mut MetricsLogger,
    opts: &TrainOptions,
) -> Result<TrainerState> {
    expect_method(&config, &[Method::Cut, Method::CutDepth])?;
    config.method = if use_depth { Method::CutDepth } else { Method::Cut };
    let mut state = TrainerState::new(config)?;
    run(&mut state, DatasetRef::Unpaired(data), logger, opts)?;
    Ok(state)
}

/// Continues the run stored in `checkpoint` with `config`'s training settings.
pub fn resume(checkpoint: &Path, config: &TrainConfig, data: DatasetRef<'_>, logger: &mut MetricsLogger, opts: &TrainOptions) -> Result<TrainerState> {
    let mut state = load_checkpoint(checkpoint, Some(config))?;
    run(&mut state, data, logger, opts)?;
    Ok(state)
}
