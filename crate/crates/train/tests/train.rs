mod support;

use std::fs;

use cloudvol_core::coloc::Sample;
use cloudvol_core::manifest::SceneKind;
use cloudvol_core::norm::{Variable, PROFILE_VARS};
use cloudvol_models::swin::ENCODER_PREFIX;
use cloudvol_models::{Architecture, VolumeSpec};
use cloudvol_tensor::{Tape, Tensor};
use cloudvol_train::data::center_crop;
use cloudvol_train::*;
use proptest::prelude::*;
use support::{fixture, tiny_swin, tiny_volume};

fn loss_of(pred: &[f64], mt: &MaskedTarget<f64>) -> f64 {
    let mut tape = Tape::new();
    let p = tape.input(Tensor::new(mt.shape().to_vec(), pred.to_vec()).unwrap());
    let l = masked_mse_loss(&mut tape, p, mt).unwrap();
    tape.value(l).item()
}

fn general(n: usize) -> Vec<&'static Sample> {
    fixture()
        .samples
        .iter()
        .filter(|s| s.meta.kind == SceneKind::General)
        .take(n)
        .collect()
}

fn set(samples: &[&Sample]) -> SampleSet {
    SampleSet {
        samples: samples.iter().map(|&s| s.clone()).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn off_track_predictions_do_not_change_the_loss(seed in any::<u64>(), scale in -50.0f64..50.0) {
        use rand::{Rng, SeedableRng};
        let samples = general(2);
        let batch = volume_batch::<f64>(&samples, &PROFILE_VARS).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pred: Vec<f64> = (0..batch.target.target.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let base = loss_of(&pred, &batch.target);
        let hw = samples[0].size * samples[0].size;
        let masks: Vec<Vec<bool>> = samples.iter().map(|s| s.mask()).collect();
        let c = batch.target.shape()[1];
        let perturbed: Vec<f64> = pred
            .iter()
            .enumerate()
            .map(|(k, &p)| if masks[k / (c * hw)][k % hw] { p } else { p + scale * rng.random::<f64>() })
            .collect();
        prop_assert_eq!(loss_of(&perturbed, &batch.target), base);
    }
}

#[test]
fn multi_variable_loss_is_the_sum_of_single_losses() {
    let samples = general(3);
    let all = volume_batch::<f64>(&samples, &PROFILE_VARS).unwrap();
    let n = all.target.target.numel();
    let pred: Vec<f64> = (0..n).map(|k| ((k * 7919) % 1000) as f64 / 500.0 - 1.0).collect();
    let hw = samples[0].size * samples[0].size;
    let per = 80 * hw;
    let mut sum = 0.0;
    for (v, var) in PROFILE_VARS.iter().enumerate() {
        let single = volume_batch::<f64>(&samples, &[*var]).unwrap();
        let part: Vec<f64> = (0..samples.len())
            .flat_map(|b| pred[(b * 3 + v) * per..(b * 3 + v + 1) * per].iter().copied())
            .collect();
        sum += loss_of(&part, &single.target);
    }
    let total = loss_of(&pred, &all.target);
    assert!((total - sum).abs() <= 1e-12 * total.abs(), "{total} vs {sum}");
}

#[test]
fn mixed_satellite_batches_are_single_satellite() {
    let f = fixture();
    let keys: Vec<_> = f.samples.iter().map(|s| s.meta.satellite).collect();
    let distinct: std::collections::BTreeSet<_> = keys.iter().collect();
    assert!(distinct.len() > 1, "fixture should mix satellites");
    for seed in 0..20 {
        for b in make_batches(&keys, 3, seed).unwrap() {
            assert!(b.iter().all(|&i| keys[i] == keys[b[0]]));
        }
    }
    assert_eq!(make_batches(&keys, 3, 4).unwrap(), make_batches(&keys, 3, 4).unwrap());
    assert!(make_batches::<u8>(&[], 3, 4).is_err());
}

fn quick_config(seed: u64, dir: &std::path::Path, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 2,
        checkpoint_dir: Some(dir.join("ckpt")),
        log_path: Some(dir.join("train.csv")),
        ..TrainConfig::finetune(seed, true)
    }
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let samples = general(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(3, dir.path(), 2);
    let arch = Architecture::Swinsatmae;
    let mut t = FineTuner::new(arch, tiny_volume(true, 3), PROFILE_VARS.to_vec(), &cfg).unwrap();
    let report = t.fit(&set(&samples[..3]), &set(&samples[3..]), &cfg).unwrap();
    assert_eq!(report.epochs.len(), 2);
    let best = report.best.epoch.unwrap();

    let ckpt = cfg.checkpoint_dir.clone().unwrap();
    let loaded = FineTuner::load(&ckpt).unwrap();
    let index = read_checkpoint_index(&ckpt);
    assert_eq!(index.epoch, best);
    assert_eq!(index.best_val_loss, report.best.best);
    // the in-memory model holds the best epoch's parameters
    for ((_, a), (_, b)) in t.store.iter().zip(loaded.store.iter()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
    if best == 2 {
        assert_eq!(loaded.adam.t, t.adam.t);
        for (id, _) in t.store.iter() {
            assert_eq!(loaded.adam.moments(id), t.adam.moments(id));
        }
    }
    let eval_a = t.evaluate(&set(&samples[3..]).samples, 2).unwrap();
    let eval_b = loaded.evaluate(&set(&samples[3..]).samples, 2).unwrap();
    assert_eq!(eval_a, eval_b);

    let log = fs::read_to_string(cfg.log_path.as_ref().unwrap()).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,phase,train_loss,val_loss,rmse,psnr,wall_seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,finetune,"));

    // flip one byte of one parameter file
    let file = ckpt.join(&index.params[5].value.file);
    let mut bytes = fs::read(&file).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x10;
    fs::write(&file, bytes).unwrap();
    assert!(matches!(FineTuner::load(&ckpt), Err(TrainError::Checkpoint { .. })));
    fs::remove_file(&file).unwrap();
    assert!(FineTuner::load(&ckpt).is_err());
}

fn read_checkpoint_index(dir: &std::path::Path) -> CheckpointIndex {
    checkpoint::read_index(dir).unwrap()
}

#[test]
fn best_val_loss_never_increases_across_saves() {
    let samples = general(4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_config(8, dir.path(), 4);
    let mut t = FineTuner::new(
        Architecture::Unet,
        VolumeSpec::desk(Architecture::Unet, 1),
        vec![Variable::Z],
        &cfg,
    )
    .unwrap();
    let report = t.fit(&set(&samples[..3]), &set(&samples[3..]), &cfg).unwrap();
    let mut best = f64::INFINITY;
    for e in &report.epochs {
        assert_eq!(e.improved, e.val.loss < best);
        best = best.min(e.val.loss);
    }
    assert_eq!(report.best.best, best);
    assert_eq!(read_checkpoint_index(&dir.path().join("ckpt")).best_val_loss, best);
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let samples = general(3);
    let mut files = Vec::new();
    let dirs: Vec<_> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for d in &dirs {
        let cfg = quick_config(11, d.path(), 2);
        let mut t = FineTuner::new(Architecture::Swinmae, tiny_volume(false, 1), vec![Variable::Re], &cfg).unwrap();
        let r = t.fit(&set(&samples[..2]), &set(&samples[2..]), &cfg).unwrap();
        let ckpt = d.path().join("ckpt");
        let index = fs::read(ckpt.join("index.json")).unwrap();
        let losses: Vec<f64> = r.epochs.iter().map(|e| e.train_loss).collect();
        files.push((index, losses));
    }
    assert_eq!(files[0], files[1]);
    let a = dirs[0].path().join("ckpt/params");
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(dirs[1].path().join("ckpt/params").join(&name)).unwrap()
        );
    }
}

#[test]
fn fine_tuning_restores_the_pretrained_encoder() {
    let f = fixture();
    let scenes = SceneSet::load(f.root(), &f.manifest, cloudvol_core::manifest::Split::Train).unwrap();
    assert!(scenes.len() >= 2);
    let dir = tempfile::tempdir().unwrap();
    let mut pcfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        checkpoint_dir: Some(dir.path().join("pre")),
        ..TrainConfig::pretrain(4)
    };
    let mut pre = PreTrainer::new(tiny_swin(true), &pcfg).unwrap();
    pre.fit(&scenes, &scenes, &pcfg).unwrap();
    let pre_dir = pcfg.checkpoint_dir.take().unwrap();

    let fcfg = TrainConfig::finetune(99, false);
    let arch = Architecture::Swinsatmae;
    let tuned = FineTuner::from_pretrained(arch, tiny_volume(true, 3), PROFILE_VARS.to_vec(), &fcfg, &pre_dir).unwrap();
    let scratch = FineTuner::new(arch, tiny_volume(true, 3), PROFILE_VARS.to_vec(), &fcfg).unwrap();
    let mut restored = 0;
    for (_, p) in tuned.store.iter() {
        if p.name.starts_with(ENCODER_PREFIX) {
            let id = pre.store.id(&p.name).unwrap();
            assert_eq!(p.value, *pre.store.value(id));
            restored += 1;
        } else {
            let id = scratch.store.id(&p.name).unwrap();
            assert_eq!(
                p.value,
                *scratch.store.value(id),
                "{} should be freshly initialised",
                p.name
            );
        }
    }
    assert_eq!(
        restored,
        pre.store
            .iter()
            .filter(|(_, p)| p.name.starts_with(ENCODER_PREFIX))
            .count()
    );

    // encoder features agree on the same input
    let crop = center_crop(&scenes.scenes[0], 64).unwrap();
    let run = |store: &cloudvol_tensor::ParamStore<f32>, enc: &cloudvol_models::swin::SwinEncoder| {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![1, 11, 64, 64], crop.image.clone()).unwrap());
        let out = enc.forward(&mut tape, store, x, Some(&[crop.meta]), None).unwrap();
        tape.value(out.last()).clone()
    };
    let cloudvol_models::VolumeModel::Swin(m) = &tuned.model else {
        panic!()
    };
    assert_eq!(run(&tuned.store, &m.encoder), run(&pre.store, &pre.model.encoder));

    // another encoder config is refused
    let mut other = tiny_swin(true);
    other.mask_ratio = 0.75;
    let spec = VolumeSpec::Swin {
        encoder: other,
        decoder: match tiny_volume(true, 3) {
            VolumeSpec::Swin { decoder, .. } => decoder,
            _ => unreachable!(),
        },
    };
    let err = FineTuner::from_pretrained(arch, spec, PROFILE_VARS.to_vec(), &fcfg, &pre_dir).unwrap_err();
    assert!(matches!(err, TrainError::ConfigHash { .. }));
    // a U-Net cannot take a pre-trained encoder
    let unet = VolumeSpec::desk(Architecture::Unet, 3);
    assert!(FineTuner::from_pretrained(Architecture::Unet, unet, PROFILE_VARS.to_vec(), &fcfg, &pre_dir).is_err());
}

#[test]
fn non_finite_loss_aborts_with_a_batch_dump() {
    let samples = general(3);
    let mut bad: Vec<Sample> = samples.iter().map(|&s| s.clone()).collect();
    bad[0].image[17] = f32::NAN;
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        batch_size: 1,
        ..quick_config(2, dir.path(), 1)
    };
    let mut t = FineTuner::new(
        Architecture::Unet,
        VolumeSpec::desk(Architecture::Unet, 1),
        vec![Variable::Z],
        &cfg,
    )
    .unwrap();
    let train = SampleSet { samples: bad };
    let err = t.fit(&train, &set(&samples[2..]), &cfg).unwrap_err();
    let TrainError::NonFinite { batch, .. } = err else {
        panic!("{err}")
    };
    assert_eq!(batch, vec![samples[0].meta.sample_id.clone()]);
    let dump = fs::read_to_string(dir.path().join("nonfinite_batch.json")).unwrap();
    assert!(dump.contains(&samples[0].meta.sample_id));
}

#[test]
fn mismatched_variable_count_is_a_config_error() {
    let cfg = TrainConfig::finetune(0, true);
    let spec = VolumeSpec::desk(Architecture::Unet, 3);
    assert!(FineTuner::new(Architecture::Unet, spec.clone(), vec![Variable::Z], &cfg).is_err());
    assert!(FineTuner::new(Architecture::Swinmae, spec, PROFILE_VARS.to_vec(), &cfg).is_err());
    assert!(FineTuner::new(Architecture::Swinmae, tiny_volume(true, 1), vec![Variable::Z], &cfg).is_err());
}

#[test]
fn climatology_predicts_the_training_mean() {
    let samples: Vec<Sample> = general(3).into_iter().cloned().collect();
    let clim = climatology(&samples, &PROFILE_VARS).unwrap();
    assert_eq!(clim.len(), 3 * 80);
    let evals = climatology_eval(&samples, &clim);
    let r = pooled_rmse(&evals, &PROFILE_VARS).unwrap();
    assert!(r.iter().all(|v| v.is_finite() && *v > 0.0));
    let z = 0;
    let mean_z = clim[z * 80 + 40];
    let manual: Vec<f32> = samples
        .iter()
        .flat_map(|s| (0..s.n_track()).map(move |p| s.target_column(p, 0)[40]))
        .collect();
    let expect = manual.iter().map(|&v| v as f64).sum::<f64>() / manual.len() as f64;
    assert!((mean_z as f64 - expect).abs() < 1e-6);
}
