//! The `uwt` command line: `train`, `translate`, `evaluate` and `visualize`.
//!
//! Errors are printed to stderr and mapped to exit codes: 2 for bad
//! configuration or arguments, 3 for data problems, 4 for checkpoint
//! incompatibility and 1 for anything else (including an evaluation with
//! failed rows).

pub mod run_config;
pub mod visualize;

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use candle_core::Device;
use clap::{Args, Parser, Subcommand};

use crate::config::Method;
use crate::data::io::{load_depth, load_rgb, save_png};
use crate::data::{build_unpaired_split, list_images, load_paired, load_test_set, DatasetManifest, DatasetRef, TestExample, DATA_ROOT_ENV};
use crate::error::{Error, Result};
use crate::eval::{
    checkpoint_label, evaluate_translator, translate_images, ConvTrunk, FeatureExtractor, MetricsReport, RandomProjection,
    ReportRow, Subset,
};
use crate::nn::{Identity, Translator};
use crate::tensor::{ImageTensor, ValueRange};
use crate::train::{self, load_checkpoint, CheckpointDescriptor, MetricsLogger, Models, TrainOptions, TrainerState};

pub use run_config::RunConfig;

/// Files `train` writes into its output directory.
pub const RUN_ARTIFACTS: [&str; 3] = ["config.toml", "metrics.csv", "checkpoints"];

#[derive(Debug, Parser)]
#[command(name = "uwt", version, about = "Uniform-lighting to underwater image translation")]
pub struct Cli {
    /// Single-threaded, reproducible execution.
    #[arg(long, global = true)]
    pub deterministic: bool,

    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a run configuration.
    Train(TrainArgs),
    /// Translate images with a trained checkpoint.
    Translate(TranslateArgs),
    /// Score checkpoints with SSIM and FID on named test subsets.
    Evaluate(EvaluateArgs),
    /// Render autoencoder feature maps and kernels.
    Visualize(VisualizeArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML file with [train], [contrastive] and [data] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `epochs=5`, `contrastive.temperature=0.07`, `data.root=/x`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Overrides `train.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory: config.toml, metrics.csv and checkpoints/.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace the outputs of a previous run in `--out`.
    #[arg(long)]
    pub overwrite: bool,
    /// Continue from this checkpoint directory.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also keep the epoch with the lowest mean loss as checkpoints/best.
    #[arg(long)]
    pub keep_best: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    /// Checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// An image file or a directory of images.
    #[arg(long)]
    pub input: PathBuf,
    /// Depth map file or directory (matched by file stem); CUT + depth only.
    #[arg(long)]
    pub depth: Option<PathBuf>,
    /// Translations are written here as `<stem>.png`.
    #[arg(long)]
    pub out: PathBuf,
    /// Replace existing translations.
    #[arg(long)]
    pub overwrite: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint directory; repeat to compare models.
    #[arg(long)]
    pub checkpoint: Vec<PathBuf>,
    /// Dataset manifest of the test split.
    #[arg(long, conflicts_with = "data_root")]
    pub manifest: Option<PathBuf>,
    /// Test split in the default folder layout.
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    /// `name=all`, `name=id,id,...` or `name=@file`; repeatable. Default: `full=all`.
    #[arg(long, value_name = "NAME=IDS")]
    pub subset: Vec<String>,
    /// Writes report.csv and report.txt here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Safetensors weights of a convolutional feature trunk for FID.
    #[arg(long)]
    pub extractor_weights: Option<PathBuf>,
    /// Side the trunk's inputs are resized to.
    #[arg(long, default_value_t = 299)]
    pub extractor_input_size: usize,
    /// Add a row scoring the untranslated inputs.
    #[arg(long)]
    pub identity_baseline: bool,
    /// Image side for the identity baseline when no checkpoint fixes one.
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VisualizeArgs {
    /// Autoencoder checkpoint directory.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Image fed through the encoder.
    #[arg(long)]
    pub image: PathBuf,
    /// Comma-separated layer ids.
    #[arg(long, default_value = "4,8,19,22,43,63")]
    pub layers: String,
    /// Receives `layer_NNN_activations.png` and `layer_NNN_weights.png`.
    #[arg(long)]
    pub out: PathBuf,
}

impl Cli {
    /// Whether this invocation should run single-threaded: `--deterministic`,
    /// or a training configuration that asks for it.
    pub fn wants_deterministic(&self) -> bool {
        if self.deterministic {
            return true;
        }
        match &self.command {
            Command::Train(a) => RunConfig::load(a.config.as_deref(), &a.set)
                .map(|c| c.train.deterministic)
                .unwrap_or(false),
            _ => false,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn execute<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                2
            } else {
                0
            }
        }
    }
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(a) => cmd_train(a, cli.deterministic).map(|()| 0),
        Command::Translate(a) => cmd_translate(a).map(|()| 0),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Visualize(a) => cmd_visualize(a).map(|()| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn prepare_out_dir(out: &Path, overwrite: bool) -> Result<()> {
    let existing: Vec<&str> = RUN_ARTIFACTS.iter().copied().filter(|a| out.join(a).exists()).collect();
    if !existing.is_empty() {
        if !overwrite {
            return Err(Error::config(
                "--out",
                format!(
                    "{} already holds a run ({}); pass --overwrite to replace it",
                    out.display(),
                    existing.join(", ")
                ),
            ));
        }
        for a in existing {
            let p = out.join(a);
            let removed = if p.is_dir() { std::fs::remove_dir_all(&p) } else { std::fs::remove_file(&p) };
            removed.map_err(|e| Error::io(&p, e))?;
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn cmd_train(args: TrainArgs, deterministic: bool) -> Result<()> {
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if deterministic {
        overrides.push("deterministic=true".into());
    }
    let rc = RunConfig::load(args.config.as_deref(), &overrides)?;
    if let Some(r) = &args.resume {
        if !r.join(train::state::DESCRIPTOR_FILE).is_file() {
            return Err(Error::config("--resume", format!("{} is not a checkpoint directory", r.display())));
        }
    }
    prepare_out_dir(&args.out, args.overwrite)?;
    let snapshot = args.out.join("config.toml");
    std::fs::write(&snapshot, rc.to_toml_string()).map_err(|e| Error::io(&snapshot, e))?;

    let cfg = &rc.train;
    let paired;
    let unpaired;
    let data = if cfg.method.is_paired() {
        paired = load_paired(&rc.manifest, false)?;
        log::info!("{} training pairs", paired.len());
        DatasetRef::Paired(&paired)
    } else {
        unpaired = build_unpaired_split(
            &rc.manifest,
            rc.source_range.clone(),
            rc.target_range.clone(),
            cfg.method == Method::CutDepth,
        )?;
        log::info!("{} source and {} target images", unpaired.source.len(), unpaired.target.len());
        DatasetRef::Unpaired(&unpaired)
    };

    let mut state = match &args.resume {
        Some(dir) => load_checkpoint(dir, Some(cfg))?,
        None => TrainerState::new(cfg.clone())?,
    };
    if cfg.method == Method::CutDepth {
        state.depth_range = rc.manifest.depth_range;
    }
    let every = cfg.log_flush_every.max(1) as u64;
    let mut logger = MetricsLogger::new(cfg.log_flush_every)
        .with_csv(&args.out.join("metrics.csv"))?
        .with_callback(move |r| {
            if r.name == "total" && r.step % every == 0 {
                log::info!("step {} epoch {} total {:.4}", r.step, r.epoch, r.value);
            }
        });
    let checkpoints = args.out.join("checkpoints");
    let opts = TrainOptions {
        checkpoint_dir: Some(checkpoints.clone()),
        keep_best: args.keep_best,
    };
    train::run(&mut state, data, &mut logger, &opts)?;
    println!(
        "trained {} for {} steps; checkpoint in {}",
        cfg.method.display_name(),
        state.global_step,
        checkpoints.join("last").display()
    );
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn image_list(path: &Path, what: &str) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let files = list_images(path)?;
        if files.is_empty() {
            return Err(Error::Data(format!("no images in {}", path.display())));
        }
        Ok(files)
    } else if path.is_file() {
        Ok(vec![path.to_path_buf()])
    } else {
        Err(Error::Data(format!("{what} {} does not exist", path.display())))
    }
}

fn load_input(path: &Path, depth: Option<&Path>, size: usize, range: Option<ValueRange>) -> Result<ImageTensor> {
    let rgb = load_rgb(path, Some(size))?;
    match depth {
        None => Ok(rgb),
        Some(d) => crate::data::assemble_rgbd(&rgb, &load_depth(d, range, Some(size))?),
    }
}

fn cmd_translate(args: TranslateArgs) -> Result<()> {
    let state = load_checkpoint(&args.checkpoint, None)?;
    let translator = state.translator();
    let size = state.config.image_size;
    let inputs = image_list(&args.input, "input")?;
    let wants_depth = translator.in_channels() == 4;
    let depths: Option<BTreeMap<String, PathBuf>> = match (&args.depth, wants_depth) {
        (None, true) => {
            return Err(Error::Checkpoint(format!(
                "channel mismatch: `{}` takes 4-channel input (RGB + depth); pass --depth",
                state.config.method
            )))
        }
        (Some(_), false) => {
            log::warn!("{} takes RGB input; ignoring --depth", state.config.method);
            None
        }
        (Some(d), true) => Some(image_list(d, "depth")?.into_iter().map(|p| (stem(&p), p)).collect()),
        (None, false) => None,
    };
    let targets: Vec<PathBuf> = inputs.iter().map(|p| args.out.join(format!("{}.png", stem(p)))).collect();
    if !args.overwrite {
        if let Some(t) = targets.iter().find(|t| t.exists()) {
            return Err(Error::config("--out", format!("{} exists; pass --overwrite to replace it", t.display())));
        }
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for (input, target) in inputs.iter().zip(&targets) {
        let depth = match &depths {
            None => None,
            Some(map) if inputs.len() == 1 && map.len() == 1 => map.values().next(),
            Some(map) => Some(
                map.get(&stem(input))
                    .ok_or_else(|| Error::Data(format!("{} has no depth map", input.display())))?,
            ),
        };
        let x = load_input(input, depth.map(PathBuf::as_path), size, state.depth_range)?;
        let y = translate_images(translator, &[&x])?;
        save_png(target, &y[0])?;
    }
    println!("translated {} image(s) into {}", inputs.len(), args.out.display());
    Ok(())
}

/// Parses `name=all`, `name=a,b,c` or `name=@file` (ids separated by commas
/// or whitespace).
pub fn parse_subset(spec: &str, test: &[TestExample]) -> Result<Subset> {
    let (name, ids) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("--subset", format!("`{spec}` is not of the form name=ids")))?;
    let name = name.trim();
    if name.is_empty() {
        return Err(Error::config("--subset", format!("`{spec}` has no name")));
    }
    let ids = ids.trim();
    if ids == "all" {
        return Ok(Subset::all(name, test));
    }
    let listed = match ids.strip_prefix('@') {
        Some(file) => std::fs::read_to_string(file)
            .map_err(|e| Error::config("--subset", format!("cannot read {file}: {e}")))?,
        None => ids.to_string(),
    };
    let ids: Vec<String> = listed
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    if ids.is_empty() {
        return Err(Error::config("--subset", format!("subset `{name}` lists no ids")));
    }
    Ok(Subset::new(name, ids))
}

fn eval_manifest(args: &EvaluateArgs) -> Result<DatasetManifest> {
    if let Some(m) = &args.manifest {
        if !m.is_file() {
            return Err(Error::config("--manifest", format!("{} does not exist", m.display())));
        }
        return DatasetManifest::load(m);
    }
    let root = args
        .data_root
        .clone()
        .or_else(|| std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
        .ok_or_else(|| Error::config("--manifest", format!("give --manifest or --data-root, or set ${DATA_ROOT_ENV}")))?;
    let mut m = DatasetManifest::new(root);
    if m.depth_dir().is_some_and(|d| !d.is_dir()) {
        m.depth = None;
    }
    Ok(m)
}

type TestKey = (usize, bool, Option<(u64, u64)>);

/// Test sets loaded once per image size and depth setting.
struct TestSets {
    manifest: DatasetManifest,
    loaded: HashMap<TestKey, Vec<TestExample>>,
}

impl TestSets {
    fn get(&mut self, size: usize, depth: bool, range: Option<ValueRange>) -> Result<&[TestExample]> {
        let key = (size, depth, range.map(|r| (r.min.to_bits(), r.max.to_bits())));
        if !self.loaded.contains_key(&key) {
            let mut m = self.manifest.clone();
            m.image_size = Some(size);
            if range.is_some() {
                m.depth_range = range;
            }
            self.loaded.insert(key, load_test_set(&m, depth)?);
        }
        Ok(&self.loaded[&key])
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    if args.checkpoint.is_empty() && !args.identity_baseline {
        return Err(Error::config("--checkpoint", "give at least one checkpoint or --identity-baseline"));
    }
    let manifest = eval_manifest(&args)?;
    let extractor: Box<dyn FeatureExtractor> = match &args.extractor_weights {
        Some(p) => Box::new(ConvTrunk::load(p, args.extractor_input_size)?),
        None => Box::new(RandomProjection::default()),
    };
    let mut sets = TestSets {
        manifest,
        loaded: HashMap::new(),
    };
    let mut report = MetricsReport::new(extractor.name());
    let mut subsets: Option<Vec<Subset>> = None;
    let mut subsets_for = |test: &[TestExample]| -> Result<Vec<Subset>> {
        if subsets.is_none() {
            let parsed = if args.subset.is_empty() {
                vec![Subset::all("full", test)]
            } else {
                args.subset.iter().map(|s| parse_subset(s, test)).collect::<Result<_>>()?
            };
            subsets = Some(parsed);
        }
        Ok(subsets.clone().unwrap_or_default())
    };
    let subset_names = |args: &EvaluateArgs| -> Vec<String> {
        if args.subset.is_empty() {
            vec!["full".into()]
        } else {
            args.subset.iter().map(|s| s.split('=').next().unwrap_or(s).trim().to_string()).collect()
        }
    };

    let mut baseline_size = args.image_size;
    for ckpt in &args.checkpoint {
        let label = checkpoint_label(ckpt);
        let method = CheckpointDescriptor::read(ckpt)
            .ok()
            .and_then(|d| d.method().ok())
            .map(|m| m.display_name().to_string())
            .unwrap_or_else(|| "?".into());
        let scored = (|| -> Result<Vec<ReportRow>> {
            let state = load_checkpoint(ckpt, None)?;
            let size = state.config.image_size;
            baseline_size.get_or_insert(size);
            let depth = state.config.in_channels() == 4;
            let test = sets.get(size, depth, state.depth_range)?;
            let subs = subsets_for(test)?;
            evaluate_translator(state.translator(), &method, &label, test, &subs, extractor.as_ref())
        })();
        match scored {
            Ok(rows) => report.rows.extend(rows),
            Err(e @ Error::Config { .. }) => return Err(e),
            Err(e) => {
                log::error!("{}: {e}", ckpt.display());
                for s in subset_names(&args) {
                    report.rows.push(ReportRow::failure(&method, &label, &s, &e.to_string()));
                }
            }
        }
    }
    if args.identity_baseline {
        let size = baseline_size
            .or(sets.manifest.image_size)
            .ok_or_else(|| Error::config("--image-size", "needed for an identity baseline without checkpoints"))?;
        let test = sets.get(size, false, None)?;
        let subs = subsets_for(test)?;
        let rows = evaluate_translator(&Identity as &dyn Translator, "Identity", "", test, &subs, extractor.as_ref())?;
        report.rows.extend(rows);
    }

    let table = report.to_table();
    print!("{table}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        for (name, text) in [("report.csv", report.to_csv()), ("report.txt", table)] {
            let p = out.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
    }
    if report.any_failed() {
        eprintln!(
            "error: {} of {} rows failed",
            report.rows.iter().filter(|r| r.failed).count(),
            report.rows.len()
        );
        return Ok(1);
    }
    Ok(0)
}

/// Parses a comma-separated list of layer ids.
pub fn parse_layers(spec: &str) -> Result<Vec<usize>> {
    let ids: Vec<usize> = spec
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::config("--layers", format!("`{s}` is not a layer id"))))
        .collect::<Result<_>>()?;
    if ids.is_empty() {
        return Err(Error::config("--layers", "no layer ids given"));
    }
    Ok(ids)
}

fn cmd_visualize(args: VisualizeArgs) -> Result<()> {
    let layers = parse_layers(&args.layers)?;
    let state = load_checkpoint(&args.checkpoint, None)?;
    let Models::Autoencoder(ae) = &state.models else {
        return Err(Error::Checkpoint(format!(
            "visualize needs an autoencoder checkpoint; {} holds `{}`",
            args.checkpoint.display(),
            state.config.method
        )));
    };
    let count = ae.layer_count();
    if let Some(bad) = layers.iter().find(|&&l| l >= count) {
        return Err(Error::config(
            "--layers",
            format!("layer {bad} does not exist; valid ids are 0..={}", count - 1),
        ));
    }
    let x = load_rgb(&args.image, Some(state.config.image_size))?.to_tensor(&Device::Cpu)?.unsqueeze(0)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    for layer in ae.capture_layer_activations(&x, &layers)? {
        let (act, weights) = visualize::render(&layer)?;
        let (a, w) = visualize::file_names(layer.id);
        save_png(&args.out.join(a), &act)?;
        save_png(&args.out.join(w), &weights)?;
        log::info!("layer {} ({}): {} channels", layer.id, layer.name, layer.activation.dim(0)?);
    }
    println!("wrote {} layer mosaics to {}", 2 * layers.len(), args.out.display());
    Ok(())
}
