//! Fine-tuning of image-to-volume models on colocated track samples.

use std::path::Path;
use std::time::Instant;

use cloudvol_core::coloc::Sample;
use cloudvol_core::norm::Variable;
use cloudvol_models::swin::ENCODER_PREFIX;
use cloudvol_models::{Architecture, MetadataVector, VolumeModel, VolumeSpec};
use cloudvol_tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{epoch_seed, make_batches, ordered_batches};
use crate::checkpoint::{config_hash, load_checkpoint, save_checkpoint, CheckpointIndex, Phase};
use crate::config::{append_log, non_finite, BestTracker, EpochLog, EvalStats, FitReport, TrainConfig};
use crate::data::{volume_batch, Batch, SampleSet};
use crate::loss::masked_mse_loss;
use crate::{Result, TrainError};

/// A volume model with its parameters and optimizer state.
#[derive(Clone, Debug)]
pub struct FineTuner {
    pub architecture: Architecture,
    pub spec: VolumeSpec,
    pub vars: Vec<Variable>,
    pub model: VolumeModel,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub seed: u64,
    pub steps: u64,
}

fn adam_config(config: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    }
}

fn check_spec(arch: Architecture, spec: &VolumeSpec, vars: &[Variable]) -> Result<()> {
    if spec.n_vars() != vars.len() {
        return Err(TrainError::Config(format!(
            "model predicts {} variables but {} were requested",
            spec.n_vars(),
            vars.len()
        )));
    }
    if vars.iter().any(|v| v.profile_index().is_none()) {
        return Err(TrainError::Config("only profile variables can be predicted".into()));
    }
    let consistent = match spec {
        VolumeSpec::Unet(_) => arch == Architecture::Unet,
        VolumeSpec::Swin { encoder, .. } => arch.is_swin() && encoder.metadata == arch.uses_metadata(),
    };
    if !consistent {
        return Err(TrainError::Config(format!(
            "model config does not describe a {}",
            arch.name()
        )));
    }
    Ok(())
}

impl FineTuner {
    /// Fresh initialisation from `config.seed`.
    pub fn new(arch: Architecture, spec: VolumeSpec, vars: Vec<Variable>, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        check_spec(arch, &spec, &vars)?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = spec.build(&mut store, &mut rng)?;
        Ok(Self {
            architecture: arch,
            spec,
            vars,
            model,
            store,
            adam: Adam::new(adam_config(config)),
            seed: config.seed,
            steps: 0,
        })
    }

    /// Fresh decoder and heads on top of a pre-trained encoder. The
    /// pre-training checkpoint must have been made for the same encoder
    /// config.
    pub fn from_pretrained(
        arch: Architecture,
        spec: VolumeSpec,
        vars: Vec<Variable>,
        config: &TrainConfig,
        pretrained: &Path,
    ) -> Result<Self> {
        let mut tuner = Self::new(arch, spec, vars, config)?;
        let VolumeSpec::Swin { encoder, .. } = &tuner.spec else {
            return Err(TrainError::Config("only Swin models use a pre-trained encoder".into()));
        };
        let expected = config_hash(encoder)?;
        let ckpt = load_checkpoint(pretrained)?;
        if ckpt.index.phase != Phase::Pretrain {
            return Err(TrainError::Checkpoint {
                path: pretrained.to_path_buf(),
                detail: "not a pre-training checkpoint".into(),
            });
        }
        if ckpt.index.config_hash != expected {
            return Err(TrainError::ConfigHash {
                expected,
                found: ckpt.index.config_hash,
            });
        }
        let n = ckpt.restore(&mut tuner.store, ENCODER_PREFIX)?;
        log::info!("restored {n} encoder tensors from {}", pretrained.display());
        Ok(tuner)
    }

    /// Model saved by [`FineTuner::save`], with its optimizer state.
    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(dir)?;
        let idx = &ckpt.index;
        if idx.phase != Phase::Finetune {
            return Err(TrainError::Checkpoint {
                path: dir.to_path_buf(),
                detail: "not a fine-tuning checkpoint".into(),
            });
        }
        let spec: VolumeSpec = serde_json::from_value(idx.model.clone())?;
        let found = config_hash(&spec)?;
        if found != idx.config_hash {
            return Err(TrainError::ConfigHash {
                expected: idx.config_hash.clone(),
                found,
            });
        }
        let config = TrainConfig {
            seed: idx.seed,
            ..TrainConfig::finetune(idx.seed, idx.architecture == Architecture::Unet)
        };
        let mut tuner = Self::new(idx.architecture, spec, idx.variables.clone(), &config)?;
        ckpt.restore(&mut tuner.store, "")?;
        ckpt.restore_adam(&tuner.store, &mut tuner.adam)?;
        tuner.steps = idx.adam_step;
        Ok(tuner)
    }

    pub fn save(&self, dir: &Path, epoch: usize, best_val_loss: f64) -> Result<CheckpointIndex> {
        let encoder_hash = match &self.spec {
            VolumeSpec::Swin { encoder, .. } => Some(config_hash(encoder)?),
            VolumeSpec::Unet(_) => None,
        };
        let index = CheckpointIndex {
            format: 0,
            phase: Phase::Finetune,
            architecture: self.architecture,
            variables: self.vars.clone(),
            model: serde_json::to_value(&self.spec)?,
            config_hash: config_hash(&self.spec)?,
            encoder_hash,
            seed: self.seed,
            epoch,
            best_val_loss,
            adam_step: 0,
            params: Vec::new(),
        };
        save_checkpoint(dir, index, &self.store, Some(&self.adam))
    }

    fn meta<'a>(&self, meta: &'a [MetadataVector]) -> Option<&'a [MetadataVector]> {
        self.spec.uses_metadata().then_some(meta)
    }

    /// One optimizer step; returns the loss before the update.
    pub fn train_step(&mut self, batch: &Batch<f32>) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.input(batch.images.clone());
        let pred = self.model.forward(&mut tape, &self.store, x, self.meta(&batch.meta))?;
        let loss = masked_mse_loss(&mut tape, pred, &batch.target)?;
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            return Ok(value);
        }
        let grads = tape.backward(loss)?;
        self.store.zero_grad();
        grads.accumulate_into(&mut self.store)?;
        self.adam.step(&mut self.store)?;
        self.steps += 1;
        Ok(value)
    }

    /// Forward pass only: `[B, V * 80, S, S]`.
    pub fn forward(&self, images: Tensor<f32>, meta: &[MetadataVector]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let x = tape.input(images);
        let pred = self.model.forward(&mut tape, &self.store, x, self.meta(meta))?;
        Ok(tape.value(pred).clone())
    }

    /// Masked loss, RMSE and PSNR over `samples`, in normalised units.
    pub fn evaluate(&self, samples: &[Sample], batch_size: usize) -> Result<EvalStats> {
        if samples.is_empty() {
            return Err(TrainError::EmptySplit("evaluation".into()));
        }
        let mut groups = vec![(0.0, 0); self.vars.len()];
        let keys: Vec<_> = samples.iter().map(|s| s.meta.satellite).collect();
        for idx in ordered_batches(&keys, batch_size) {
            let members: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let batch = volume_batch::<f32>(&members, &self.vars)?;
            let pred = self.forward(batch.images.clone(), &batch.meta)?;
            let (_, g) = batch.target.evaluate(pred.data());
            for (acc, (sse, n)) in groups.iter_mut().zip(g) {
                acc.0 += sse;
                acc.1 += n;
            }
        }
        Ok(EvalStats::from_groups(&groups))
    }

    /// Trains for `config.epochs` epochs, validating after each one and
    /// keeping the checkpoint with the lowest validation loss. The
    /// parameters of that epoch are also left in `self.store`.
    pub fn fit(&mut self, train: &SampleSet, val: &SampleSet, config: &TrainConfig) -> Result<FitReport> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptySplit("training".into()));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("validation".into()));
        }
        self.adam.config = adam_config(config);
        let keys = train.satellites();
        let mut best = BestTracker::default();
        let mut epochs = Vec::with_capacity(config.epochs);
        let mut best_store = None;
        for epoch in 1..=config.epochs {
            let start = Instant::now();
            let mut total = 0.0;
            let batches = make_batches(&keys, config.batch_size, epoch_seed(config.seed, epoch))?;
            for idx in &batches {
                let members: Vec<&Sample> = idx.iter().map(|&i| &train.samples[i]).collect();
                let batch = volume_batch(&members, &self.vars)?;
                let loss = self.train_step(&batch)?;
                if !loss.is_finite() {
                    return Err(non_finite(config, self.steps + 1, epoch, loss, &batch.ids));
                }
                total += loss;
            }
            let val_stats = self.evaluate(&val.samples, config.batch_size)?;
            let improved = best.offer(epoch, val_stats.loss);
            if improved {
                if let Some(dir) = &config.checkpoint_dir {
                    self.save(dir, epoch, val_stats.loss)?;
                }
                best_store = (epoch < config.epochs).then(|| self.store.clone());
            }
            let row = EpochLog {
                epoch,
                phase: Phase::Finetune,
                train_loss: total / batches.len() as f64,
                val: val_stats,
                wall_seconds: start.elapsed().as_secs_f64(),
                improved,
            };
            log::info!(
                "finetune epoch {epoch}: train {:.5} val {:.5} rmse {:.4} psnr {:.2}",
                row.train_loss,
                row.val.loss,
                row.val.rmse,
                row.val.psnr
            );
            if let Some(path) = &config.log_path {
                append_log(path, &row)?;
            }
            epochs.push(row);
        }
        if let Some(store) = best_store {
            self.store = store;
        }
        Ok(FitReport {
            epochs,
            best,
            steps: self.steps,
        })
    }
}
