//! Training and contrastive configuration records.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Training recipe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Autoencoder,
    Pix2Pix,
    CycleGan,
    Cut,
    CutDepth,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Pix2Pix,
        Method::Autoencoder,
        Method::CycleGan,
        Method::Cut,
        Method::CutDepth,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Autoencoder => "autoencoder",
            Method::Pix2Pix => "pix2pix",
            Method::CycleGan => "cyclegan",
            Method::Cut => "cut",
            Method::CutDepth => "cut_depth",
        }
    }

    /// Name used in report tables.
    pub fn display_name(&self) -> &'static str {
        match self {
            Method::Autoencoder => "Autoencoder",
            Method::Pix2Pix => "Pix2Pix",
            Method::CycleGan => "CycleGAN",
            Method::Cut => "CUT",
            Method::CutDepth => "CUT + depth",
        }
    }

    pub fn is_paired(&self) -> bool {
        matches!(self, Method::Autoencoder | Method::Pix2Pix)
    }

    pub fn is_contrastive(&self) -> bool {
        matches!(self, Method::Cut | Method::CutDepth)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '+', ' '], "_").as_str() {
            "autoencoder" | "ae" => Ok(Method::Autoencoder),
            "pix2pix" => Ok(Method::Pix2Pix),
            "cyclegan" => Ok(Method::CycleGan),
            "cut" => Ok(Method::Cut),
            "cut_depth" | "cutdepth" | "cut__depth" => Ok(Method::CutDepth),
            other => Err(Error::config(
                "method",
                format!("unknown method `{other}` (expected autoencoder, pix2pix, cyclegan, cut, cut_depth)"),
            )),
        }
    }
}

/// Adversarial loss variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GanMode {
    /// Binary cross-entropy on logits; generator uses the non-saturating form.
    Vanilla,
    LeastSquares,
}

impl GanMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GanMode::Vanilla => "vanilla",
            GanMode::LeastSquares => "least_squares",
        }
    }
}

impl FromStr for GanMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vanilla" => Ok(GanMode::Vanilla),
            "least_squares" | "lsgan" | "ls" => Ok(GanMode::LeastSquares),
            other => Err(Error::config(
                "gan_mode",
                format!("unknown GAN mode `{other}` (expected vanilla or least_squares)"),
            )),
        }
    }
}

/// Patchwise contrastive settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub negatives_per_anchor: usize,
    pub patches_per_image: usize,
    pub embed_dim: usize,
    /// Encoder layer ids to tap, strictly increasing.
    pub layer_indices: Vec<usize>,
    /// L2-normalize projected embeddings before the dot products.
    pub normalize_embeddings: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            temperature: 0.07,
            negatives_per_anchor: 255,
            patches_per_image: 256,
            embed_dim: 256,
            layer_indices: vec![0, 4, 8, 12, 16],
            normalize_embeddings: true,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(
                "contrastive.temperature",
                "must be a positive finite number",
            ));
        }
        if self.negatives_per_anchor == 0 {
            return Err(Error::config(
                "contrastive.negatives_per_anchor",
                "must be at least 1",
            ));
        }
        if self.patches_per_image < self.negatives_per_anchor + 1 {
            return Err(Error::config(
                "contrastive.patches_per_image",
                format!(
                    "{} patches cannot supply one positive and {} negatives",
                    self.patches_per_image, self.negatives_per_anchor
                ),
            ));
        }
        if self.embed_dim == 0 {
            return Err(Error::config("contrastive.embed_dim", "must be positive"));
        }
        if self.layer_indices.is_empty() {
            return Err(Error::config("contrastive.layer_indices", "must not be empty"));
        }
        if self.layer_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "contrastive.layer_indices",
                "must be strictly increasing",
            ));
        }
        Ok(())
    }

    /// Five evenly spaced taps over an encoder with `depth` enumerated layers.
    pub fn default_layers(depth: usize) -> Vec<usize> {
        let step = (depth.saturating_sub(1) / 4).max(1);
        let mut layers: Vec<usize> = (0..5).map(|i| i * step).filter(|&l| l < depth).collect();
        layers.dedup();
        layers
    }
}

/// Everything a trainer needs, including network widths.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps; 0 means no limit.
    pub max_steps: usize,
    pub gan_mode: GanMode,
    pub n_res_blocks: usize,
    pub image_size: usize,
    pub seed: u64,
    /// Refiner / U-Net base width.
    pub ngf: usize,
    /// Discriminator base width.
    pub ndf: usize,
    /// Number of stride-2 convolutions in the patch discriminator.
    pub disc_layers: usize,
    pub unet_downs: usize,
    /// Autoencoder stem width; stage widths are 1x, 2x, 4x and 8x this.
    pub ae_width: usize,
    pub lambda_gan: f64,
    pub lambda_l1: f64,
    /// Default chosen by the toy sweep in `tests/sweeps.rs` (1, 5, 10).
    pub lambda_cycle: f64,
    pub lambda_nce_x: f64,
    pub lambda_nce_y: f64,
    /// Checkpoint every this many epochs; 0 keeps only the final checkpoint.
    pub checkpoint_every: usize,
    pub log_flush_every: usize,
    pub deterministic: bool,
    pub contrastive: ContrastiveConfig,
}

impl TrainConfig {
    /// Documented defaults for each recipe.
    pub fn for_method(method: Method) -> Self {
        let base = TrainConfig {
            method,
            learning_rate: 2e-4,
            weight_decay: 0.0,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 1,
            epochs: 200,
            max_steps: 0,
            gan_mode: GanMode::LeastSquares,
            n_res_blocks: 9,
            image_size: 256,
            seed: 0,
            ngf: 64,
            ndf: 64,
            disc_layers: 3,
            unet_downs: 8,
            ae_width: 64,
            lambda_gan: 1.0,
            lambda_l1: 100.0,
            lambda_cycle: 5.0,
            lambda_nce_x: 1.0,
            lambda_nce_y: 1.0,
            checkpoint_every: 10,
            log_flush_every: 50,
            deterministic: true,
            contrastive: ContrastiveConfig::default(),
        };
        match method {
            Method::Autoencoder => TrainConfig {
                learning_rate: 1e-3,
                weight_decay: 5e-5,
                beta1: 0.9,
                epochs: 500,
                batch_size: 8,
                ..base
            },
            Method::Pix2Pix | Method::CycleGan => base,
            Method::Cut | Method::CutDepth => TrainConfig {
                learning_rate: 2e-3,
                batch_size: 8,
                ..base
            },
        }
    }

    pub fn in_channels(&self) -> usize {
        if self.method == Method::CutDepth {
            4
        } else {
            3
        }
    }

    /// Number of enumerated layers in the refiner encoder.
    pub fn encoder_depth(&self) -> usize {
        crate::nn::refiner::encoder_depth(self.n_res_blocks)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay", "must be non-negative"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        let positive = [
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
            ("n_res_blocks", self.n_res_blocks),
            ("image_size", self.image_size),
            ("ngf", self.ngf),
            ("ndf", self.ndf),
            ("ae_width", self.ae_width),
            ("log_flush_every", self.log_flush_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.image_size % 4 != 0 {
            return Err(Error::config(
                "image_size",
                format!("{} is not divisible by 4", self.image_size),
            ));
        }
        if self.method == Method::Pix2Pix {
            if self.unet_downs == 0 || self.unet_downs > 16 {
                return Err(Error::config("unet_downs", "must lie in 1..=16"));
            }
            if self.image_size % (1 << self.unet_downs) != 0 {
                return Err(Error::config(
                    "unet_downs",
                    format!(
                        "image_size {} is not divisible by 2^{}",
                        self.image_size, self.unet_downs
                    ),
                ));
            }
        }
        if !self.method.is_paired() || self.method == Method::Pix2Pix {
            let rf = crate::nn::discriminator::receptive_field(self.disc_layers);
            if rf > self.image_size {
                return Err(Error::config(
                    "disc_layers",
                    format!(
                        "receptive field {rf} of a {}-layer discriminator exceeds image_size {}",
                        self.disc_layers, self.image_size
                    ),
                ));
            }
        }
        if self.method.is_contrastive() {
            self.contrastive.validate()?;
            let depth = self.encoder_depth();
            if let Some(&bad) = self.contrastive.layer_indices.iter().find(|&&l| l >= depth) {
                return Err(Error::config(
                    "contrastive.layer_indices",
                    format!("layer {bad} does not exist; the encoder has layers 0..{depth}"),
                ));
            }
        }
        Ok(())
    }

    /// Hash over the fields that determine parameter shapes.
    pub fn architecture_hash(&self) -> String {
        let mut canonical = format!(
            "method={};in={};res={};ngf={};ndf={};dl={};",
            self.method,
            self.in_channels(),
            self.n_res_blocks,
            self.ngf,
            self.ndf,
            self.disc_layers
        );
        match self.method {
            Method::Pix2Pix => canonical.push_str(&format!("unet={};", self.unet_downs)),
            Method::Autoencoder => canonical.push_str(&format!("ae={};", self.ae_width)),
            Method::Cut | Method::CutDepth => canonical.push_str(&format!(
                "layers={:?};k={};",
                self.contrastive.layer_indices, self.contrastive.embed_dim
            )),
            Method::CycleGan => {}
        }
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Sets one field from a config-file value. Keys may carry a `train.` or
    /// `contrastive.` section prefix. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &toml::Value) -> Result<()> {
        let key = key.strip_prefix("train.").unwrap_or(key);
        let (section, name) = match key.split_once('.') {
            Some((s, n)) => (Some(s), n),
            None => (None, key),
        };
        if section == Some("contrastive") {
            return self.set_contrastive(name, value);
        }
        if let Some(s) = section {
            return Err(Error::config(key, format!("unknown section `{s}`")));
        }
        let field = name;
        match field {
            "method" => self.method = as_str(field, value)?.parse()?,
            "learning_rate" | "lr" => self.learning_rate = as_f64(field, value)?,
            "weight_decay" => self.weight_decay = as_f64(field, value)?,
            "beta1" => self.beta1 = as_f64(field, value)?,
            "beta2" => self.beta2 = as_f64(field, value)?,
            "batch_size" => self.batch_size = as_usize(field, value)?,
            "epochs" => self.epochs = as_usize(field, value)?,
            "max_steps" => self.max_steps = as_usize(field, value)?,
            "gan_mode" => self.gan_mode = as_str(field, value)?.parse()?,
            "n_res_blocks" => self.n_res_blocks = as_usize(field, value)?,
            "image_size" => self.image_size = as_usize(field, value)?,
            "seed" => self.seed = as_usize(field, value)? as u64,
            "ngf" => self.ngf = as_usize(field, value)?,
            "ndf" => self.ndf = as_usize(field, value)?,
            "disc_layers" => self.disc_layers = as_usize(field, value)?,
            "unet_downs" => self.unet_downs = as_usize(field, value)?,
            "ae_width" => self.ae_width = as_usize(field, value)?,
            "lambda_gan" => self.lambda_gan = as_f64(field, value)?,
            "lambda_l1" => self.lambda_l1 = as_f64(field, value)?,
            "lambda_cycle" => self.lambda_cycle = as_f64(field, value)?,
            "lambda_nce_x" => self.lambda_nce_x = as_f64(field, value)?,
            "lambda_nce_y" => self.lambda_nce_y = as_f64(field, value)?,
            "checkpoint_every" => self.checkpoint_every = as_usize(field, value)?,
            "log_flush_every" => self.log_flush_every = as_usize(field, value)?,
            "deterministic" => self.deterministic = as_bool(field, value)?,
            _ => return Err(Error::config(field, "unknown key")),
        }
        Ok(())
    }

    fn set_contrastive(&mut self, name: &str, value: &toml::Value) -> Result<()> {
        let field = format!("contrastive.{name}");
        let c = &mut self.contrastive;
        match name {
            "temperature" => c.temperature = as_f64(&field, value)?,
            "negatives_per_anchor" => c.negatives_per_anchor = as_usize(&field, value)?,
            "patches_per_image" => c.patches_per_image = as_usize(&field, value)?,
            "embed_dim" => c.embed_dim = as_usize(&field, value)?,
            "normalize_embeddings" => c.normalize_embeddings = as_bool(&field, value)?,
            "layer_indices" => {
                let arr = value
                    .as_array()
                    .ok_or_else(|| Error::config(&field, "expected an array of integers"))?;
                c.layer_indices = arr
                    .iter()
                    .map(|v| as_usize(&field, v))
                    .collect::<Result<_>>()?;
            }
            _ => return Err(Error::config(field, "unknown key")),
        }
        Ok(())
    }

    /// Serializes every field as `key = value` lines under `[train]` and `[contrastive]`.
    pub fn to_toml_string(&self) -> String {
        let c = &self.contrastive;
        format!(
            "[train]\nmethod = \"{}\"\nlearning_rate = {:e}\nweight_decay = {:e}\nbeta1 = {}\nbeta2 = {}\n\
batch_size = {}\nepochs = {}\nmax_steps = {}\ngan_mode = \"{}\"\nn_res_blocks = {}\nimage_size = {}\n\
seed = {}\nngf = {}\nndf = {}\ndisc_layers = {}\nunet_downs = {}\nae_width = {}\nlambda_gan = {:?}\n\
lambda_l1 = {:?}\nlambda_cycle = {:?}\nlambda_nce_x = {:?}\nlambda_nce_y = {:?}\ncheckpoint_every = {}\n\
log_flush_every = {}\ndeterministic = {}\n\n[contrastive]\ntemperature = {:?}\nnegatives_per_anchor = {}\n\
patches_per_image = {}\nembed_dim = {}\nlayer_indices = {:?}\nnormalize_embeddings = {}\n",
            self.method,
            self.learning_rate,
            self.weight_decay,
            fmt_f64(self.beta1),
            fmt_f64(self.beta2),
            self.batch_size,
            self.epochs,
            self.max_steps,
            self.gan_mode.as_str(),
            self.n_res_blocks,
            self.image_size,
            self.seed,
            self.ngf,
            self.ndf,
            self.disc_layers,
            self.unet_downs,
            self.ae_width,
            self.lambda_gan,
            self.lambda_l1,
            self.lambda_cycle,
            self.lambda_nce_x,
            self.lambda_nce_y,
            self.checkpoint_every,
            self.log_flush_every,
            self.deterministic,
            c.temperature,
            c.negatives_per_anchor,
            c.patches_per_image,
            c.embed_dim,
            c.layer_indices,
            c.normalize_embeddings,
        )
    }

    /// Parses a `[train]` / `[contrastive]` table. The method is read first so
    /// that its defaults apply to every unspecified field. When `n_res_blocks`
    /// is given without explicit `layer_indices`, the default taps follow the
    /// encoder depth.
    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let train = match table.get("train") {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(Error::config("train", "expected a table")),
            None => return Err(Error::config("train", "missing [train] section")),
        };
        let method: Method = as_str(
            "method",
            train
                .get("method")
                .ok_or_else(|| Error::config("method", "missing"))?,
        )?
        .parse()?;
        let mut cfg = TrainConfig::for_method(method);
        for (k, v) in &train {
            cfg.set(k, v)?;
        }
        let mut layers_explicit = false;
        if let Some(c) = table.get("contrastive") {
            let c = c
                .as_table()
                .ok_or_else(|| Error::config("contrastive", "expected a table"))?;
            for (k, v) in c {
                layers_explicit |= k == "layer_indices";
                cfg.set_contrastive(k, v)?;
            }
        }
        if !layers_explicit {
            cfg.contrastive.layer_indices = ContrastiveConfig::default_layers(cfg.encoder_depth());
        }
        Ok(cfg)
    }
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

pub(crate) fn as_f64(field: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::String(s) => s
            .parse()
            .map_err(|_| Error::config(field, format!("`{s}` is not a number"))),
        _ => Err(Error::config(field, "expected a number")),
    }
}

pub(crate) fn as_usize(field: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        toml::Value::String(s) => s
            .parse()
            .map_err(|_| Error::config(field, format!("`{s}` is not a non-negative integer"))),
        _ => Err(Error::config(field, "expected a non-negative integer")),
    }
}

pub(crate) fn as_bool(field: &str, v: &toml::Value) -> Result<bool> {
    match v {
        toml::Value::Boolean(b) => Ok(*b),
        toml::Value::String(s) => s
            .parse()
            .map_err(|_| Error::config(field, format!("`{s}` is not a boolean"))),
        _ => Err(Error::config(field, "expected a boolean")),
    }
}

pub(crate) fn as_str<'a>(field: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::config(field, "expected a string"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_defaults() {
        let ae = TrainConfig::for_method(Method::Autoencoder);
        assert_eq!(ae.learning_rate, 1e-3);
        assert_eq!(ae.weight_decay, 5e-5);
        assert_eq!(ae.epochs, 500);

        let cut = TrainConfig::for_method(Method::CutDepth);
        assert_eq!(cut.learning_rate, 2e-3);
        assert_eq!(cut.batch_size, 8);
        assert_eq!(cut.epochs, 200);
        assert_eq!(cut.n_res_blocks, 9);
        assert_eq!(cut.gan_mode, GanMode::LeastSquares);
        assert_eq!(cut.in_channels(), 4);
        assert_eq!(cut.contrastive.layer_indices, vec![0, 4, 8, 12, 16]);
        cut.validate().unwrap();
        assert_eq!(TrainConfig::for_method(Method::CycleGan).lambda_cycle, 5.0);
    }

    #[test]
    fn contrastive_invariants() {
        let mut c = ContrastiveConfig::default();
        c.validate().unwrap();
        c.patches_per_image = 4;
        c.negatives_per_anchor = 4;
        assert!(c.validate().is_err());
        c.negatives_per_anchor = 3;
        c.validate().unwrap();
        c.layer_indices = vec![2, 2];
        assert!(c.validate().is_err());
        c.layer_indices = vec![];
        assert!(c.validate().is_err());
        c.layer_indices = vec![0];
        c.temperature = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn default_layer_taps() {
        assert_eq!(ContrastiveConfig::default_layers(19), vec![0, 4, 8, 12, 16]);
        assert_eq!(ContrastiveConfig::default_layers(13), vec![0, 3, 6, 9, 12]);
    }

    #[test]
    fn image_size_must_close_the_resampling_path() {
        let mut cfg = TrainConfig::for_method(Method::Cut);
        cfg.image_size = 258;
        let err = cfg.validate().unwrap_err();
        assert!(err.to_string().contains("image_size"));
    }

    #[test]
    fn set_rejects_unknown_keys() {
        let mut cfg = TrainConfig::for_method(Method::Cut);
        cfg.set("epochs", &toml::Value::Integer(3)).unwrap();
        cfg.set("train.seed", &toml::Value::Integer(9)).unwrap();
        cfg.set("contrastive.temperature", &toml::Value::Float(0.5)).unwrap();
        assert_eq!((cfg.epochs, cfg.seed, cfg.contrastive.temperature), (3, 9, 0.5));
        assert!(cfg.set("epoch", &toml::Value::Integer(3)).is_err());
        assert!(cfg.set("foo.bar", &toml::Value::Integer(3)).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = TrainConfig::for_method(Method::CutDepth);
        cfg.n_res_blocks = 3;
        cfg.contrastive.layer_indices = vec![0, 3, 6];
        cfg.learning_rate = 1.5e-4;
        let table: toml::Table = cfg.to_toml_string().parse().unwrap();
        assert_eq!(TrainConfig::from_table(&table).unwrap(), cfg);
    }

    #[test]
    fn hash_tracks_architecture_only() {
        let a = TrainConfig::for_method(Method::Cut);
        let mut b = a.clone();
        b.epochs = 3;
        b.learning_rate = 1e-5;
        assert_eq!(a.architecture_hash(), b.architecture_hash());
        b.ngf = 32;
        assert_ne!(a.architecture_hash(), b.architecture_hash());
        let d = TrainConfig::for_method(Method::CutDepth);
        assert_ne!(a.architecture_hash(), d.architecture_hash());
    }
}
