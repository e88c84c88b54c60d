use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subaru_core::synth::{bone_conduction, utterance, BoneModel, Speaker};
use subaru_core::audio::active_range;
use subaru_model::checkpoint::{load, read_meta, restore_model};
use subaru_model::data::{noise_pool, Batches, Example, Triple};
use subaru_model::optim::{clip_global_norm, Adam, Grads};
use subaru_model::trainer::{overfit, train_loop, Trainer, METRICS_HEADER};
use subaru_model::{DataConfig, Error, NetworkConfig, TrainConfig};

fn tiny() -> NetworkConfig {
    NetworkConfig {
        sen_channels: vec![2, 2, 2, 2, 4],
        ups_channels: 16,
        ten_channels: vec![2, 2, 2, 4],
        apen_channels: 8,
        ..Default::default()
    }
}

fn examples(n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let spk = Speaker::random(format!("s{i}"), &mut rng);
            let clean = utterance(&spk, 1.0, 16000, &mut rng);
            let bcm = bone_conduction(&clean, BoneModel::Measured, &mut rng);
            let (lo, _) = active_range(&clean).unwrap();
            let lo = lo.min(16000 - 8192);
            Example {
                id: format!("e{i}"),
                clean: clean.samples[lo..lo + 8192].to_vec(),
                bcm: Some(bcm.samples[lo..lo + 8192].to_vec()),
            }
        })
        .collect()
}

fn source(n: usize, cfg: &TrainConfig) -> Batches {
    let noises = noise_pool(None, 16000, 1).unwrap();
    Batches::new(examples(n, 3), noises, DataConfig::default(), cfg.clone(), 16000).unwrap()
}

fn short(cfg: TrainConfig) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        lr: 1e-3,
        ..cfg
    }
}

fn same_bits(a: &Trainer, b: &Trainer) -> bool {
    a.store.iter().zip(b.store.iter()).all(|((_, p), (_, q))| {
        p.name == q.name && p.value.iter().zip(q.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

#[test]
fn accumulation_averages_clipped_batch_gradients() {
    let cfg = short(TrainConfig {
        grad_accum_batches: 2,
        grad_clip_norm: 0.5,
        ..Default::default()
    });
    let src = source(4, &cfg);
    let order = src.order(0);
    let b0 = src.batch(0, 0, &order[0]).unwrap();
    let b1 = src.batch(0, 1, &order[1]).unwrap();

    let mut tr = Trainer::new(tiny(), cfg.clone()).unwrap();
    tr.set_batches_per_epoch(2);
    let r0 = tr.train_batch(&b0).unwrap();
    assert_eq!(r0.step, 0);
    let r1 = tr.train_batch(&b1).unwrap();
    assert_eq!(r1.step, 1);

    let mut manual = Trainer::new(tiny(), cfg.clone()).unwrap();
    manual.set_batches_per_epoch(2);
    let (mut g0, _) = manual.gradients(&b0).unwrap();
    let (mut g1, _) = manual.gradients(&b1).unwrap();
    clip_global_norm(&mut g0, 0.5);
    clip_global_norm(&mut g1, 0.5);
    let mean: Grads<f32> = g0
        .into_iter()
        .zip(g1)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => Some((a + b).mapv(|v| v * 0.5)),
            _ => None,
        })
        .collect();
    let mut adam = Adam::new(cfg.adam(), manual.store.len());
    let lr = manual.schedule().lr(0);
    adam.step(&mut manual.store, &mean, lr);
    assert!(same_bits(&tr, &manual));
}

#[test]
fn flush_applies_partial_accumulation() {
    let cfg = short(TrainConfig {
        grad_accum_batches: 4,
        ..Default::default()
    });
    let src = source(2, &cfg);
    let mut tr = Trainer::new(tiny(), cfg).unwrap();
    let b = src.batch(0, 0, &src.order(0)[0]).unwrap();
    tr.train_batch(&b).unwrap();
    assert_eq!(tr.step, 0);
    assert!(tr.flush());
    assert_eq!(tr.step, 1);
    assert!(!tr.flush());
}

#[test]
fn restart_period_follows_epochs() {
    let cfg = short(TrainConfig {
        t0_epochs: 10,
        grad_accum_batches: 2,
        ..Default::default()
    });
    let mut tr = Trainer::new(tiny(), cfg).unwrap();
    tr.set_batches_per_epoch(5);
    assert_eq!(tr.steps_per_epoch, 3);
    let s = tr.schedule();
    assert_eq!(s.period, 30);
    assert_eq!(s.lr(30), 1e-3);
    assert!(s.lr(29) < 1e-5);
}

#[test]
fn non_finite_loss_is_reported_without_update() {
    let cfg = short(TrainConfig::default());
    let mut tr = Trainer::new(tiny(), cfg.clone()).unwrap();
    let before = Trainer::new(tiny(), cfg).unwrap();
    let mut t = Triple {
        id: "nan".into(),
        acm: vec![0.1; 2048],
        bcm: None,
        clean: (0..8192).map(|i| (i as f64 * 0.01).sin() * 0.3).collect(),
        synthetic: false,
    };
    t.acm[100] = f64::NAN;
    assert!(matches!(tr.train_batch(&[t]), Err(Error::NonFinite { .. })));
    assert!(same_bits(&tr, &before));
}

#[test]
fn mismatched_batch_rejected() {
    let mut tr = Trainer::new(tiny(), short(TrainConfig::default())).unwrap();
    let t = Triple {
        id: "x".into(),
        acm: vec![0.1; 2048],
        bcm: None,
        clean: vec![0.1; 4000],
        synthetic: false,
    };
    assert!(matches!(tr.train_batch(&[t]), Err(Error::Shape(_))));
    assert!(matches!(tr.train_batch(&[]), Err(Error::Empty(_))));
}

#[test]
fn zero_epochs_writes_only_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(TrainConfig {
        epochs: 0,
        ..Default::default()
    });
    let src = source(2, &cfg);
    let mut tr = Trainer::new(tiny(), cfg).unwrap();
    let s = train_loop(&mut tr, &src, &[], dir.path()).unwrap();
    assert_eq!(s.checkpoints, vec![dir.path().join("init.ckpt")]);
    assert!(s.epochs.is_empty());
    assert_eq!(read_meta(&s.checkpoints[0]).unwrap().step, 0);
}

#[test]
fn loop_logs_checkpoints_and_resumes_bit_exactly() {
    let cfg = short(TrainConfig {
        epochs: 2,
        grad_accum_batches: 2,
        ..Default::default()
    });
    let src = source(3, &cfg);
    let val = source(2, &cfg).fixed().unwrap();

    let full_dir = tempfile::tempdir().unwrap();
    let mut full = Trainer::new(tiny(), cfg.clone()).unwrap();
    let s = train_loop(&mut full, &src, &val, full_dir.path()).unwrap();
    assert_eq!(s.epochs.len(), 2);
    assert_eq!(full.step, 2);
    assert!(s.best_val_lsd.is_some());
    let v = s.epochs[0].val.as_ref().unwrap();
    assert!(v.enhanced.lsd.is_finite() && v.baseline.lsd.is_finite());
    let names: Vec<_> = s.checkpoints.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["init.ckpt", "epoch001.ckpt", "epoch002.ckpt"]);
    assert!(full_dir.path().join("best.ckpt").is_file());

    let csv = std::fs::read_to_string(full_dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + 4);
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 12));

    let (ck, _) = load::<f32>(&full_dir.path().join("epoch001.ckpt")).unwrap();
    assert_eq!(ck.meta.epoch, 1);
    assert_eq!(ck.meta.step, 1);

    let part_dir = tempfile::tempdir().unwrap();
    let mut resumed = Trainer::new(tiny(), cfg).unwrap();
    resumed.resume(&full_dir.path().join("epoch001.ckpt")).unwrap();
    train_loop(&mut resumed, &src, &val, part_dir.path()).unwrap();
    assert_eq!(resumed.step, full.step);
    assert!(same_bits(&full, &resumed));
}

#[test]
fn resume_rejects_other_network() {
    let dir = tempfile::tempdir().unwrap();
    let tr = Trainer::new(tiny(), short(TrainConfig::default())).unwrap();
    let p = dir.path().join("a.ckpt");
    tr.save(&p).unwrap();
    let other = NetworkConfig {
        apen_channels: 12,
        ..tiny()
    };
    let mut t2 = Trainer::new(other, short(TrainConfig::default())).unwrap();
    assert!(t2.resume(&p).is_err());
    assert!(t2.resume(&dir.path().join("missing.ckpt")).is_err());
}

#[test]
fn step_limit_stops_early() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(TrainConfig {
        epochs: 5,
        grad_accum_batches: 1,
        max_steps: Some(1),
        ..Default::default()
    });
    let src = source(4, &cfg);
    let mut tr = Trainer::new(tiny(), cfg).unwrap();
    let s = train_loop(&mut tr, &src, &[], dir.path()).unwrap();
    assert!(s.stopped_early);
    assert_eq!(tr.step, 1);
    assert_eq!(s.epochs.len(), 1);
}

#[test]
fn repeated_pair_loss_decreases() {
    let cfg = short(TrainConfig::default());
    let src = source(1, &cfg);
    let pair = src.fixed().unwrap().remove(0);
    let r = overfit(tiny(), TrainConfig { lr: 3e-3, ..cfg }, &pair, 15).unwrap();
    assert_eq!(r.losses.len(), 16);
    assert!(r.ratio > 1.0, "{:?}", r.losses);
}

#[test]
fn restored_model_matches_trained_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(TrainConfig {
        epochs: 1,
        grad_accum_batches: 1,
        ..Default::default()
    });
    let src = source(2, &cfg);
    let mut tr = Trainer::new(tiny(), cfg).unwrap();
    train_loop(&mut tr, &src, &[], dir.path()).unwrap();
    let (model, store, meta) = restore_model::<f32>(&dir.path().join("epoch001.ckpt")).unwrap();
    assert_eq!(model.config, tr.model.config);
    assert_eq!(meta.step, tr.step);
    assert_eq!(store.iter().count(), tr.store.iter().count());
    assert!(store.iter().zip(tr.store.iter()).all(|((_, p), (_, q))| {
        p.name == q.name && p.value.iter().zip(q.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
    }));
    assert!(restore_model::<f32>(&dir.path().join("missing.ckpt")).is_err());
}
