use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::DType;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use crate::config::{Method, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{Autoencoder, PatchDiscriminator, ParamStore, ProjectionHeads, Refiner, Translator, UnetGenerator};
use crate::tensor::ValueRange;

pub const DESCRIPTOR_FILE: &str = "descriptor.toml";
pub const CONFIG_FILE: &str = "config.toml";
pub const PARAMS_FILE: &str = "params.safetensors";
const FORMAT_VERSION: u32 = 1;

/// The networks of one recipe.
#[derive(Debug)]
pub enum Models {
    Autoencoder(Autoencoder),
    Pix2Pix {
        generator: UnetGenerator,
        discriminator: PatchDiscriminator,
    },
    CycleGan {
        g_xy: Refiner,
        g_yx: Refiner,
        d_x: PatchDiscriminator,
        d_y: PatchDiscriminator,
    },
    Cut {
        refiner: Refiner,
        heads: ProjectionHeads,
        discriminator: PatchDiscriminator,
    },
}

impl Models {
    pub fn build(cfg: &TrainConfig, store: &mut ParamStore) -> Result<Self> {
        let mut root = store.root();
        Ok(match cfg.method {
            Method::Autoencoder => Models::Autoencoder(Autoencoder::new(&mut root.pp("ae"), cfg.ae_width, cfg.image_size)?),
            Method::Pix2Pix => {
                let generator = UnetGenerator::new(&mut root.pp("g"), 3, 3, cfg.ngf, cfg.unet_downs)?;
                let discriminator = PatchDiscriminator::new(&mut root.pp("d"), 6, cfg.ndf, cfg.disc_layers)?;
                Models::Pix2Pix {
                    generator,
                    discriminator,
                }
            }
            Method::CycleGan => {
                let g_xy = Refiner::new(&mut root.pp("g_xy"), 3, cfg.ngf, cfg.n_res_blocks)?;
                let g_yx = Refiner::new(&mut root.pp("g_yx"), 3, cfg.ngf, cfg.n_res_blocks)?;
                let d_x = PatchDiscriminator::new(&mut root.pp("d_x"), 3, cfg.ndf, cfg.disc_layers)?;
                let d_y = PatchDiscriminator::new(&mut root.pp("d_y"), 3, cfg.ndf, cfg.disc_layers)?;
                Models::CycleGan { g_xy, g_yx, d_x, d_y }
            }
            Method::Cut | Method::CutDepth => {
                let refiner = Refiner::new(&mut root.pp("refiner"), cfg.in_channels(), cfg.ngf, cfg.n_res_blocks)?;
                let heads = ProjectionHeads::new(&mut root.pp("heads"), &refiner, &cfg.contrastive)?;
                let discriminator = PatchDiscriminator::new(&mut root.pp("disc"), 3, cfg.ndf, cfg.disc_layers)?;
                Models::Cut {
                    refiner,
                    heads,
                    discriminator,
                }
            }
        })
    }

    /// Parameter-name prefixes of the generator side and the discriminator side.
    pub fn groups(method: Method) -> (&'static [&'static str], &'static [&'static str]) {
        match method {
            Method::Autoencoder => (&["ae."], &[]),
            Method::Pix2Pix => (&["g."], &["d."]),
            Method::CycleGan => (&["g_xy.", "g_yx."], &["d_x.", "d_y."]),
            Method::Cut | Method::CutDepth => (&["refiner.", "heads."], &["disc."]),
        }
    }

    /// The network applied at inference time (the X -> Y direction).
    pub fn translator(&self) -> &dyn Translator {
        match self {
            Models::Autoencoder(ae) => ae,
            Models::Pix2Pix { generator, .. } => generator,
            Models::CycleGan { g_xy, .. } => g_xy,
            Models::Cut { refiner, .. } => refiner,
        }
    }
}

/// Lowest epoch-mean total loss seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMetric {
    pub name: String,
    pub value: f64,
    pub epoch: u64,
}

/// Everything needed to continue a run: parameters, optimizer moments,
/// counters and the random state. Batch order and patch sampling are pure
/// functions of `(config.seed, global_step)`, so those two integers are the
/// complete random state.
#[derive(Debug)]
pub struct TrainerState {
    pub config: TrainConfig,
    pub store: ParamStore,
    pub models: Models,
    pub gen_opt: Adam,
    pub disc_opt: Option<Adam>,
    pub epoch: u64,
    pub global_step: u64,
    pub best: Option<BestMetric>,
    /// Depth normalization range of the training data, if it carried depth.
    pub depth_range: Option<ValueRange>,
}

impl TrainerState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(config.seed, DType::F32);
        let models = Models::build(&config, &mut store)?;
        let (gen, disc) = Models::groups(config.method);
        let opt = |prefixes: &[&str]| {
            Adam::new(
                store.trainable(prefixes),
                config.learning_rate,
                config.beta1,
                config.beta2,
                config.weight_decay,
            )
        };
        let gen_opt = opt(gen)?;
        let disc_opt = if disc.is_empty() { None } else { Some(opt(disc)?) };
        Ok(Self {
            config,
            store,
            models,
            gen_opt,
            disc_opt,
            epoch: 0,
            global_step: 0,
            best: None,
            depth_range: None,
        })
    }

    pub fn translator(&self) -> &dyn Translator {
        self.models.translator()
    }

    pub fn descriptor(&self) -> CheckpointDescriptor {
        let c = &self.config;
        CheckpointDescriptor {
            format_version: FORMAT_VERSION,
            method: c.method.as_str().to_string(),
            in_channels: c.in_channels(),
            out_channels: 3,
            n_res_blocks: c.n_res_blocks,
            ngf: c.ngf,
            ndf: c.ndf,
            disc_layers: c.disc_layers,
            unet_downs: c.unet_downs,
            ae_width: c.ae_width,
            image_size: c.image_size,
            config_hash: c.architecture_hash(),
            epoch: self.epoch,
            global_step: self.global_step,
            seed: c.seed,
            gen_opt_steps: self.gen_opt.steps_taken(),
            disc_opt_steps: self.disc_opt.as_ref().map(|o| o.steps_taken()).unwrap_or(0),
            depth_min: self.depth_range.map(|r| r.min),
            depth_max: self.depth_range.map(|r| r.max),
            best: self.best.clone(),
        }
    }
}

/// Structured-text header of a checkpoint directory. Field names are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointDescriptor {
    pub format_version: u32,
    pub method: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub n_res_blocks: usize,
    pub ngf: usize,
    pub ndf: usize,
    pub disc_layers: usize,
    pub unet_downs: usize,
    pub ae_width: usize,
    pub image_size: usize,
    pub config_hash: String,
    pub epoch: u64,
    pub global_step: u64,
    pub seed: u64,
    pub gen_opt_steps: u64,
    pub disc_opt_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best: Option<BestMetric>,
}

impl CheckpointDescriptor {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(DESCRIPTOR_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }

    pub fn method(&self) -> Result<Method> {
        self.method
            .parse()
            .map_err(|_| Error::Checkpoint(format!("{DESCRIPTOR_FILE}: unknown method `{}`", self.method)))
    }
}

/// Writes descriptor, resolved config and all tensors into `dir`.
pub fn save_checkpoint(state: &TrainerState, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors: HashMap<String, candle_core::Tensor> = state
        .store
        .tensors()
        .into_iter()
        .map(|(k, v)| (format!("param.{k}"), v))
        .collect();
    tensors.extend(state.gen_opt.state_tensors("opt.gen"));
    if let Some(d) = &state.disc_opt {
        tensors.extend(d.state_tensors("opt.disc"));
    }
    let params = dir.join(PARAMS_FILE);
    candle_core::safetensors::save(&tensors, &params)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", params.display())))?;
    let config = dir.join(CONFIG_FILE);
    std::fs::write(&config, state.config.to_toml_string()).map_err(|e| Error::io(&config, e))?;
    let descriptor = toml::to_string(&state.descriptor())
        .map_err(|e| Error::Checkpoint(format!("cannot encode descriptor: {e}")))?;
    let path = dir.join(DESCRIPTOR_FILE);
    std::fs::write(&path, descriptor).map_err(|e| Error::io(&path, e))
}

fn read_config(dir: &Path) -> Result<TrainConfig> {
    let path = dir.join(CONFIG_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    TrainConfig::from_table(&table).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

/// Restores a checkpoint. With `expected`, the checkpoint must have been
/// produced by a compatible configuration (same method, channel count and
/// architecture hash); training-only fields of `expected` such as epochs or
/// learning rate replace the stored ones.
pub fn load_checkpoint(dir: &Path, expected: Option<&TrainConfig>) -> Result<TrainerState> {
    let descriptor = CheckpointDescriptor::read(dir)?;
    if descriptor.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{DESCRIPTOR_FILE}: format version {} is not supported",
            descriptor.format_version
        )));
    }
    let stored = read_config(dir)?;
    if stored.architecture_hash() != descriptor.config_hash {
        return Err(Error::Checkpoint(format!(
            "{DESCRIPTOR_FILE}: config hash {} does not match the stored configuration ({})",
            descriptor.config_hash,
            stored.architecture_hash()
        )));
    }
    let config = match expected {
        None => stored,
        Some(exp) => {
            if exp.in_channels() != descriptor.in_channels {
                return Err(Error::Checkpoint(format!(
                    "channel mismatch: checkpoint `{}` takes {}-channel input, configuration `{}` expects {}",
                    descriptor.method,
                    descriptor.in_channels,
                    exp.method,
                    exp.in_channels()
                )));
            }
            if exp.method != descriptor.method()? {
                return Err(Error::Checkpoint(format!(
                    "method mismatch: checkpoint is `{}`, configuration is `{}`",
                    descriptor.method, exp.method
                )));
            }
            if exp.architecture_hash() != descriptor.config_hash {
                return Err(Error::Checkpoint(format!(
                    "config hash mismatch: checkpoint {} vs configuration {}",
                    descriptor.config_hash,
                    exp.architecture_hash()
                )));
            }
            let mut cfg = exp.clone();
            if cfg.seed != descriptor.seed {
                log::warn!("keeping the checkpoint seed {} (configuration asked for {})", descriptor.seed, cfg.seed);
                cfg.seed = descriptor.seed;
            }
            cfg
        }
    };

    let mut state = TrainerState::new(config)?;
    let params = dir.join(PARAMS_FILE);
    let raw = candle_core::safetensors::load(&params, state.store.device())
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", params.display())))?;
    let mut by_group: BTreeMap<&str, HashMap<String, candle_core::Tensor>> = BTreeMap::new();
    for (k, v) in raw {
        let (group, rest) = if let Some(r) = k.strip_prefix("param.") {
            ("param", r.to_string())
        } else if k.starts_with("opt.") {
            ("opt", k.clone())
        } else {
            return Err(Error::Checkpoint(format!("{}: unexpected entry `{k}`", params.display())));
        };
        by_group.entry(group).or_default().insert(rest, v);
    }
    let empty = HashMap::new();
    let ctx = params.display().to_string();
    state.store.assign_from(by_group.get("param").unwrap_or(&empty), &ctx)?;
    let opt = by_group.get("opt").unwrap_or(&empty);
    state.gen_opt.load_state("opt.gen", opt, descriptor.gen_opt_steps)?;
    if let Some(d) = &mut state.disc_opt {
        d.load_state("opt.disc", opt, descriptor.disc_opt_steps)?;
    }
    state.epoch = descriptor.epoch;
    state.global_step = descriptor.global_step;
    state.best = descriptor.best.clone();
    state.depth_range = match (descriptor.depth_min, descriptor.depth_max) {
        (Some(a), Some(b)) => Some(ValueRange::new(a, b)),
        _ => None,
    };
    Ok(state)
}
