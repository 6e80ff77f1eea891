use std::collections::BTreeMap;

use candle_core::{Device, Tensor, Var};
use uwt::config::{GanMode, Method, TrainConfig};
use uwt::data::{iterate_batches, DatasetRef, PairedExample, UnpairedDataset};
use uwt::fixtures::{paired_set, toy_config, unpaired_set};
use uwt::objectives::{gan_loss, l1_loss, GanRole};
use uwt::train::steps::{discriminator_update, generator_update};
use uwt::train::{
    load_checkpoint, resume, run, save_checkpoint, train_cut, train_cyclegan, train_pix2pix, MetricRecord, MetricsLogger, Models,
    TrainOptions, TrainerState,
};
use uwt::Error;

fn train_logged(state: &mut TrainerState, data: DatasetRef<'_>, opts: &TrainOptions) -> Vec<MetricRecord> {
    let (mut logger, buf) = MetricsLogger::null().with_memory();
    run(state, data, &mut logger, opts).unwrap();
    let out = buf.lock().unwrap().clone();
    out
}

fn unpaired(depth: bool) -> UnpairedDataset {
    unpaired_set(8, 8, 16, 3, depth).unwrap()
}

fn paired() -> Vec<PairedExample> {
    paired_set(8, 16, 3, false).unwrap()
}

fn config(method: Method, steps: usize) -> TrainConfig {
    let mut c = toy_config(method, 16);
    c.max_steps = steps;
    c.epochs = 100;
    c
}

fn dataset<'a>(method: Method, p: &'a [PairedExample], u: &'a UnpairedDataset, ud: &'a UnpairedDataset) -> DatasetRef<'a> {
    match method {
        Method::Autoencoder | Method::Pix2Pix => DatasetRef::Paired(p),
        Method::CutDepth => DatasetRef::Unpaired(ud),
        _ => DatasetRef::Unpaired(u),
    }
}

const ALL: [Method; 5] = [Method::Autoencoder, Method::Pix2Pix, Method::CycleGan, Method::Cut, Method::CutDepth];

fn translate_all(state: &TrainerState, inputs: &[Tensor]) -> Tensor {
    let x = Tensor::cat(inputs, 0).unwrap();
    state.translator().translate(&x).unwrap()
}

#[test]
fn logged_components_sum_to_total() {
    let (p, u, ud) = (paired(), unpaired(false), unpaired(true));
    for method in ALL {
        let mut state = TrainerState::new(config(method, 4)).unwrap();
        let recs = train_logged(&mut state, dataset(method, &p, &u, &ud), &TrainOptions::default());
        for step in 1..=4u64 {
            let at: BTreeMap<&str, f64> = recs
                .iter()
                .filter(|r| r.step == step)
                .map(|r| (r.name.as_str(), r.value))
                .collect();
            assert!(at.values().all(|v| v.is_finite()), "{method}: {at:?}");
            let gen: f64 = at
                .iter()
                .filter(|(k, _)| !k.starts_with("d_") && **k != "total")
                .map(|(_, v)| v)
                .sum();
            assert!((gen - at["total"]).abs() < 1e-6, "{method} step {step}: {at:?}");
            if method != Method::Autoencoder {
                assert!((at["d_real"] + at["d_fake"] - at["d_total"]).abs() < 1e-6);
            }
            assert!(recs.iter().all(|r| r.epoch == (r.step - 1) / 2));
        }
    }
}

#[test]
fn alternating_updates_touch_only_their_side() {
    let (p, u, ud) = (paired(), unpaired(false), unpaired(true));
    for method in [Method::Pix2Pix, Method::CycleGan, Method::Cut, Method::CutDepth] {
        let mut state = TrainerState::new(config(method, 1)).unwrap();
        let (gen, disc) = Models::groups(method);
        let prints = |s: &TrainerState, prefixes: &[&str]| -> Vec<String> {
            prefixes.iter().map(|p| s.store.fingerprint(p).unwrap()).collect()
        };
        let batch = iterate_batches(dataset(method, &p, &u, &ud), 4, 0, 0, &Device::Cpu)
            .unwrap()
            .next()
            .unwrap()
            .unwrap();
        let (g0, d0) = (prints(&state, gen), prints(&state, disc));
        let (_, fakes) = discriminator_update(&mut state, &batch).unwrap();
        let (g1, d1) = (prints(&state, gen), prints(&state, disc));
        assert_eq!(g0, g1, "{method}: discriminator step moved generator weights");
        assert_ne!(d0, d1);
        generator_update(&mut state, &batch, fakes, 7).unwrap();
        let (g2, d2) = (prints(&state, gen), prints(&state, disc));
        assert_eq!(d1, d2, "{method}: generator step moved discriminator weights");
        assert_ne!(g1, g2);
    }
}

#[test]
fn cut_traces_are_reproducible() {
    let u = unpaired(false);
    let trace = || {
        let mut state = TrainerState::new(config(Method::Cut, 20)).unwrap();
        train_logged(&mut state, DatasetRef::Unpaired(&u), &TrainOptions::default())
    };
    let (a, b) = (trace(), trace());
    assert_eq!(a.len(), 20 * 8);
    assert_eq!(a, b);
}

fn resume_matches(method: Method, split: usize, total: usize) {
    let (p, u, ud) = (paired(), unpaired(false), unpaired(true));
    let data = dataset(method, &p, &u, &ud);
    let mut straight = TrainerState::new(config(method, total)).unwrap();
    let reference = train_logged(&mut straight, data, &TrainOptions::default());

    let dir = tempfile::tempdir().unwrap();
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        keep_best: false,
    };
    let mut first = TrainerState::new(config(method, split)).unwrap();
    train_logged(&mut first, data, &opts);
    let (mut logger, buf) = MetricsLogger::null().with_memory();
    let resumed = resume(&dir.path().join("last"), &config(method, total), data, &mut logger, &TrainOptions::default()).unwrap();
    assert_eq!(resumed.global_step, total as u64);
    let tail: Vec<MetricRecord> = reference.into_iter().filter(|r| r.step > split as u64).collect();
    assert_eq!(*buf.lock().unwrap(), tail, "{method}");
    for name in straight.store.names() {
        let a = straight.store.get(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = resumed.store.get(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b, "{method}: {name}");
    }
}

#[test]
fn resume_continues_bit_identically() {
    // Splits land mid-epoch (2 batches per epoch) and cross an epoch boundary.
    resume_matches(Method::Autoencoder, 3, 5);
    resume_matches(Method::Cut, 3, 5);
    resume_matches(Method::CycleGan, 2, 3);
}

#[test]
fn checkpoints_round_trip_bit_identically() {
    let u = unpaired(true);
    let mut state = TrainerState::new(config(Method::CutDepth, 2)).unwrap();
    train_logged(&mut state, DatasetRef::Unpaired(&u), &TrainOptions::default());
    let dir = tempfile::tempdir().unwrap();
    save_checkpoint(&state, dir.path()).unwrap();
    let back = load_checkpoint(dir.path(), None).unwrap();
    assert_eq!(back.config, state.config);
    assert_eq!(back.global_step, 2);
    assert_eq!(back.gen_opt.steps_taken(), 2);
    for name in state.store.names() {
        let a = state.store.get(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = back.store.get(name).unwrap().as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b, "{name}");
    }
    let moments = |s: &TrainerState| {
        let mut m: Vec<(String, Vec<f32>)> = s
            .gen_opt
            .state_tensors("g")
            .into_iter()
            .map(|(k, t)| (k, t.flatten_all().unwrap().to_vec1::<f32>().unwrap()))
            .collect();
        m.sort_by(|a, b| a.0.cmp(&b.0));
        m
    };
    assert_eq!(moments(&state), moments(&back));
}

fn saved_cut() -> (tempfile::TempDir, TrainerState) {
    let dir = tempfile::tempdir().unwrap();
    let state = TrainerState::new(config(Method::Cut, 1)).unwrap();
    save_checkpoint(&state, dir.path()).unwrap();
    (dir, state)
}

#[test]
fn edited_config_hash_is_rejected() {
    let (dir, _) = saved_cut();
    let path = dir.path().join("descriptor.toml");
    let text = std::fs::read_to_string(&path).unwrap();
    let edited: String = text
        .lines()
        .map(|l| if l.starts_with("config_hash") { "config_hash = \"0000\"".to_string() } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&path, edited).unwrap();
    let err = load_checkpoint(dir.path(), None).unwrap_err();
    assert!(matches!(err, Error::Checkpoint(_)));
    assert!(err.to_string().contains("hash"), "{err}");
}

#[test]
fn architecture_change_is_rejected() {
    let (dir, _) = saved_cut();
    let mut wider = config(Method::Cut, 1);
    wider.ngf = 16;
    let err = load_checkpoint(dir.path(), Some(&wider)).unwrap_err();
    assert!(err.to_string().contains("hash"), "{err}");
    let mut longer = config(Method::Cut, 1);
    longer.epochs = 7;
    longer.learning_rate = 1e-4;
    assert_eq!(load_checkpoint(dir.path(), Some(&longer)).unwrap().config.epochs, 7);
}

#[test]
fn cut_checkpoint_does_not_load_into_cut_depth() {
    let (dir, _) = saved_cut();
    let err = load_checkpoint(dir.path(), Some(&config(Method::CutDepth, 1))).unwrap_err();
    assert!(err.to_string().contains("channel mismatch"), "{err}");
}

#[test]
fn corrupt_archive_names_the_entry() {
    let (dir, state) = saved_cut();
    let path = dir.path().join("params.safetensors");
    let mut tensors = candle_core::safetensors::load(&path, &Device::Cpu).unwrap();
    let victim = format!("param.{}", state.store.names().next().unwrap());
    tensors.remove(&victim);
    candle_core::safetensors::save(&tensors, &path).unwrap();
    let err = load_checkpoint(dir.path(), None).unwrap_err();
    assert!(err.to_string().contains(&victim["param.".len()..]), "{err}");

    std::fs::write(&path, b"not an archive").unwrap();
    let err = load_checkpoint(dir.path(), None).unwrap_err();
    assert!(err.to_string().contains("params.safetensors"), "{err}");
}

#[test]
fn checkpoint_schedule() {
    let u = unpaired(false);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Method::Cut, 0);
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;
    let opts = TrainOptions {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        keep_best: true,
    };
    let state = train_cut(cfg, &u, false, &mut MetricsLogger::null(), &opts).unwrap();
    assert_eq!(state.global_step, 8);
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["best", "epoch_0002", "last"]);
    let best = load_checkpoint(&dir.path().join("best"), None).unwrap();
    assert_eq!(best.best.as_ref().unwrap().epoch, state.best.as_ref().unwrap().epoch);
}

#[test]
fn csv_metrics_carry_step_and_epoch() {
    let p = paired();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    {
        let mut logger = MetricsLogger::new(3).with_csv(&path).unwrap();
        let mut state = TrainerState::new(config(Method::Autoencoder, 3)).unwrap();
        run(&mut state, DatasetRef::Paired(&p), &mut logger, &TrainOptions::default()).unwrap();
    }
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,epoch,name,value");
    assert_eq!(lines.len(), 1 + 3 * 2);
    assert!(lines[1].starts_with("1,0,mse,"));
    assert!(lines[6].starts_with("3,1,total,"));
}

#[test]
fn recipes_reject_the_wrong_data() {
    let (p, u) = (paired(), unpaired(false));
    let mut state = TrainerState::new(config(Method::Autoencoder, 1)).unwrap();
    let err = run(&mut state, DatasetRef::Unpaired(&u), &mut MetricsLogger::null(), &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");
    let mut state = TrainerState::new(config(Method::Cut, 1)).unwrap();
    let err = run(&mut state, DatasetRef::Paired(&p), &mut MetricsLogger::null(), &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)), "{err}");

    let err = train_cyclegan(config(Method::CycleGan, 1), &unpaired(true), &mut MetricsLogger::null(), &TrainOptions::default())
        .unwrap_err();
    assert!(err.to_string().contains("3-channel"), "{err}");
    let err = train_cut(config(Method::Cut, 1), &u, true, &mut MetricsLogger::null(), &TrainOptions::default()).unwrap_err();
    assert!(err.to_string().contains("4-channel"), "{err}");
    let err = train_pix2pix(config(Method::Cut, 1), &p, &mut MetricsLogger::null(), &TrainOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Config { .. }), "{err}");
}

#[test]
fn cut_depth_refiner_takes_four_channels() {
    let state = train_cut(config(Method::Cut, 1), &unpaired(true), true, &mut MetricsLogger::null(), &TrainOptions::default()).unwrap();
    assert_eq!(state.config.method, Method::CutDepth);
    assert_eq!(state.translator().in_channels(), 4);
}

#[test]
fn cut_has_one_generator_and_one_discriminator() {
    let cut = TrainerState::new(config(Method::Cut, 1)).unwrap();
    let cyc = TrainerState::new(config(Method::CycleGan, 1)).unwrap();
    let Models::Cut { .. } = cut.models else { panic!("not a CUT model") };
    let tops = |s: &TrainerState| {
        let mut t: Vec<String> = s.store.names().map(|n| n.split('.').next().unwrap().to_string()).collect();
        t.dedup();
        t
    };
    assert_eq!(tops(&cut), ["disc", "heads", "refiner"]);
    assert_eq!(tops(&cyc), ["d_x", "d_y", "g_xy", "g_yx"]);
    let cut_gd = cut.store.count("refiner.") + cut.store.count("disc.");
    let cyc_gd: usize = ["g_xy.", "g_yx.", "d_x.", "d_y."].iter().map(|p| cyc.store.count(p)).sum();
    assert_eq!(cyc_gd, 2 * cut_gd);
}

#[test]
fn pix2pix_discriminator_is_conditional() {
    let state = TrainerState::new(config(Method::Pix2Pix, 1)).unwrap();
    let Models::Pix2Pix { discriminator, .. } = &state.models else { panic!() };
    assert_eq!(discriminator.in_channels(), 6);
    let pair = Tensor::zeros((1, 6, 16, 16), candle_core::DType::F32, &Device::Cpu).unwrap();
    assert!(discriminator.forward(&pair).is_ok());
    let rgb = Tensor::zeros((1, 3, 16, 16), candle_core::DType::F32, &Device::Cpu).unwrap();
    assert!(discriminator.forward(&rgb).is_err());
}

#[test]
fn least_squares_generator_is_stationary_at_one() {
    let logits = Var::from_tensor(&Tensor::ones((2, 1, 4, 4), candle_core::DType::F32, &Device::Cpu).unwrap()).unwrap();
    let loss = gan_loss(None, logits.as_tensor(), GanRole::Generator, GanMode::LeastSquares).unwrap();
    assert_eq!(loss.value(), 0.0);
    let grad = loss.tensor().backward().unwrap();
    let g = grad.get(logits.as_tensor()).unwrap().abs().unwrap().max_all().unwrap();
    assert_eq!(g.to_scalar::<f32>().unwrap(), 0.0);
}

#[test]
fn pix2pix_toy_overfit_halves_l1() {
    let pairs = paired_set(5, 32, 11, false).unwrap();
    let xs: Vec<Tensor> = pairs.iter().map(|p| p.x.to_tensor(&Device::Cpu).unwrap().unsqueeze(0).unwrap()).collect();
    let ys: Vec<Tensor> = pairs.iter().map(|p| p.y.to_tensor(&Device::Cpu).unwrap().unsqueeze(0).unwrap()).collect();
    let target = Tensor::cat(&ys, 0).unwrap();
    let mut cfg = toy_config(Method::Pix2Pix, 32);
    cfg.batch_size = 5;
    cfg.epochs = 500;
    let fresh = TrainerState::new(cfg.clone()).unwrap();
    let before = l1_loss(&translate_all(&fresh, &xs), &target).unwrap().to_scalar::<f32>().unwrap();
    let trained = train_pix2pix(cfg, &pairs, &mut MetricsLogger::null(), &TrainOptions::default()).unwrap();
    assert_eq!(trained.global_step, 500);
    let after = l1_loss(&translate_all(&trained, &xs), &target).unwrap().to_scalar::<f32>().unwrap();
    assert!(after <= 0.5 * before, "L1 {before} -> {after}");
}
