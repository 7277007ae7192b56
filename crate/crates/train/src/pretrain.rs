//! Masked-image pre-training of the Swin encoder.

use std::path::Path;
use std::time::Instant;

use cloudvol_models::{Architecture, SwinConfig, SwinMae, TokenMask};
use cloudvol_tensor::{Adam, AdamConfig, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::batch::{epoch_seed, make_batches, ordered_batches};
use crate::checkpoint::{config_hash, load_checkpoint, save_checkpoint, CheckpointIndex, Phase};
use crate::config::{append_log, non_finite, BestTracker, EpochLog, EvalStats, FitReport, TrainConfig};
use crate::data::{center_crop, masked_image_batch, random_crop, Batch, Crop, SceneSet};
use crate::loss::masked_mse_loss;
use crate::{Result, TrainError};

const VAL_MASK_SALT: u64 = 0x7661_6c5f_6d61_736b;

/// Seed of the mask of member `k` of training step `step`.
pub fn mask_seed(seed: u64, step: u64, k: usize) -> u64 {
    epoch_seed(seed ^ step.rotate_left(17), k)
}

#[derive(Clone, Debug)]
pub struct PreTrainer {
    pub config: SwinConfig,
    pub model: SwinMae,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub seed: u64,
    pub steps: u64,
}

/// Masked input, reconstruction and original of one crop, each
/// `[11, S, S]`, for rendering.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub id: String,
    pub masked: Vec<f32>,
    pub predicted: Vec<f32>,
    pub original: Vec<f32>,
}

impl PreTrainer {
    pub fn new(config: SwinConfig, train: &TrainConfig) -> Result<Self> {
        train.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
        let model = SwinMae::build(config.clone(), &mut store, &mut rng)?;
        Ok(Self {
            config,
            model,
            store,
            adam: Adam::new(AdamConfig {
                lr: train.lr,
                weight_decay: train.weight_decay,
                ..AdamConfig::default()
            }),
            seed: train.seed,
            steps: 0,
        })
    }

    pub fn architecture(&self) -> Architecture {
        if self.config.metadata {
            Architecture::Swinsatmae
        } else {
            Architecture::Swinmae
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let ckpt = load_checkpoint(dir)?;
        let idx = &ckpt.index;
        if idx.phase != Phase::Pretrain {
            return Err(TrainError::Checkpoint {
                path: dir.to_path_buf(),
                detail: "not a pre-training checkpoint".into(),
            });
        }
        let config: SwinConfig = serde_json::from_value(idx.model.clone())?;
        let found = config_hash(&config)?;
        if found != idx.config_hash {
            return Err(TrainError::ConfigHash {
                expected: idx.config_hash.clone(),
                found,
            });
        }
        let mut t = Self::new(config, &TrainConfig::pretrain(idx.seed))?;
        ckpt.restore(&mut t.store, "")?;
        ckpt.restore_adam(&t.store, &mut t.adam)?;
        t.steps = idx.adam_step;
        Ok(t)
    }

    pub fn save(&self, dir: &Path, epoch: usize, best_val_loss: f64) -> Result<CheckpointIndex> {
        let hash = config_hash(&self.config)?;
        let index = CheckpointIndex {
            format: 0,
            phase: Phase::Pretrain,
            architecture: self.architecture(),
            variables: Vec::new(),
            model: serde_json::to_value(&self.config)?,
            config_hash: hash.clone(),
            encoder_hash: Some(hash),
            seed: self.seed,
            epoch,
            best_val_loss,
            adam_step: 0,
            params: Vec::new(),
        };
        save_checkpoint(dir, index, &self.store, Some(&self.adam))
    }

    fn random_masks(&self, n: usize, seed: impl Fn(usize) -> u64) -> Vec<TokenMask> {
        let c = &self.config;
        (0..n)
            .map(|k| TokenMask::random(c.grid(), c.mask_unit_tokens, c.mask_ratio, seed(k)))
            .collect()
    }

    /// Masks of training step `step` for a batch of `n`.
    pub fn step_masks(&self, step: u64, n: usize) -> Vec<TokenMask> {
        self.random_masks(n, |k| mask_seed(self.seed, step, k))
    }

    /// Fixed validation masks, one per validation crop index.
    pub fn validation_masks(&self, indices: &[usize]) -> Vec<TokenMask> {
        self.random_masks(indices.len(), |k| epoch_seed(self.seed ^ VAL_MASK_SALT, indices[k]))
    }

    fn batch(&self, crops: &[Crop], masks: &[TokenMask]) -> Result<Batch<f32>> {
        masked_image_batch(crops, self.config.image_size, masks, self.config.token_px)
    }

    fn reconstruct_tensor(&self, batch: &Batch<f32>, masks: &[TokenMask]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let x = tape.input(batch.images.clone());
        let meta = self.config.metadata.then_some(batch.meta.as_slice());
        let y = self.model.forward(&mut tape, &self.store, x, meta, masks)?;
        Ok(tape.value(y).clone())
    }

    /// One optimizer step on `crops` with the masks of the next step.
    pub fn train_step(&mut self, crops: &[Crop]) -> Result<(f64, Vec<String>)> {
        let masks = self.step_masks(self.steps + 1, crops.len());
        self.train_step_with(crops, &masks)
    }

    /// One optimizer step with caller-chosen masks, one per crop.
    pub fn train_step_with(&mut self, crops: &[Crop], masks: &[TokenMask]) -> Result<(f64, Vec<String>)> {
        let batch = self.batch(crops, masks)?;
        let mut tape = Tape::new();
        let x = tape.input(batch.images.clone());
        let meta = self.config.metadata.then_some(batch.meta.as_slice());
        let y = self.model.forward(&mut tape, &self.store, x, meta, masks)?;
        let loss = masked_mse_loss(&mut tape, y, &batch.target)?;
        let value = tape.value(loss).item() as f64;
        if !value.is_finite() {
            return Ok((value, batch.ids));
        }
        let grads = tape.backward(loss)?;
        self.store.zero_grad();
        grads.accumulate_into(&mut self.store)?;
        self.adam.step(&mut self.store)?;
        self.steps += 1;
        Ok((value, batch.ids))
    }

    /// Masked-pixel loss over centre crops of `scenes` with fixed masks.
    pub fn evaluate(
        &self,
        crops: &[Crop],
        keys: &[cloudvol_core::channels::Satellite],
        batch_size: usize,
    ) -> Result<EvalStats> {
        if crops.is_empty() {
            return Err(TrainError::EmptySplit("validation".into()));
        }
        let mut groups = vec![(0.0, 0usize)];
        for idx in ordered_batches(keys, batch_size) {
            let members: Vec<Crop> = idx.iter().map(|&i| crops[i].clone()).collect();
            let masks = self.validation_masks(&idx);
            let batch = self.batch(&members, &masks)?;
            let y = self.reconstruct_tensor(&batch, &masks)?;
            let (_, g) = batch.target.evaluate(y.data());
            groups[0].0 += g[0].0;
            groups[0].1 += g[0].1;
        }
        Ok(EvalStats::from_groups(&groups))
    }

    /// Masked input, reconstruction and original for each crop.
    pub fn reconstruct(&self, crops: &[Crop]) -> Result<Vec<Reconstruction>> {
        let idx: Vec<usize> = (0..crops.len()).collect();
        let masks = self.validation_masks(&idx);
        let batch = self.batch(crops, &masks)?;
        let y = self.reconstruct_tensor(&batch, &masks)?;
        let plane = self.config.image_size * self.config.image_size;
        let n = y.numel() / crops.len();
        Ok(crops
            .iter()
            .zip(&masks)
            .enumerate()
            .map(|(k, (c, m))| {
                let px = m.pixels(self.config.token_px);
                let masked = c
                    .image
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if px[i % plane] { 0.0 } else { v })
                    .collect();
                Reconstruction {
                    id: c.id.clone(),
                    masked,
                    predicted: y.data()[k * n..(k + 1) * n].to_vec(),
                    original: c.image.clone(),
                }
            })
            .collect())
    }

    /// Pre-trains on one random crop per scene and epoch; validation uses
    /// centre crops and fixed masks.
    pub fn fit(&mut self, train: &SceneSet, val: &SceneSet, config: &TrainConfig) -> Result<FitReport> {
        config.validate()?;
        if train.is_empty() {
            return Err(TrainError::EmptySplit("training scenes".into()));
        }
        if val.is_empty() {
            return Err(TrainError::EmptySplit("validation scenes".into()));
        }
        self.adam.config.lr = config.lr;
        self.adam.config.weight_decay = config.weight_decay;
        let size = self.config.image_size;
        let val_crops = val
            .scenes
            .iter()
            .map(|s| center_crop(s, size))
            .collect::<Result<Vec<_>>>()?;
        let val_keys = val.satellites();
        let keys = train.satellites();
        let mut best = BestTracker::default();
        let mut best_store = None;
        let mut epochs = Vec::with_capacity(config.epochs);
        for epoch in 1..=config.epochs {
            let start = Instant::now();
            let seed = epoch_seed(config.seed, epoch);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let crops = train
                .scenes
                .iter()
                .map(|s| random_crop(s, size, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let batches = make_batches(&keys, config.batch_size, seed)?;
            let mut total = 0.0;
            for idx in &batches {
                let members: Vec<Crop> = idx.iter().map(|&i| crops[i].clone()).collect();
                let (loss, ids) = self.train_step(&members)?;
                if !loss.is_finite() {
                    return Err(non_finite(config, self.steps + 1, epoch, loss, &ids));
                }
                total += loss;
            }
            let val_stats = self.evaluate(&val_crops, &val_keys, config.batch_size)?;
            let improved = best.offer(epoch, val_stats.loss);
            if improved {
                if let Some(dir) = &config.checkpoint_dir {
                    self.save(dir, epoch, val_stats.loss)?;
                }
                best_store = (epoch < config.epochs).then(|| self.store.clone());
            }
            let row = EpochLog {
                epoch,
                phase: Phase::Pretrain,
                train_loss: total / batches.len() as f64,
                val: val_stats,
                wall_seconds: start.elapsed().as_secs_f64(),
                improved,
            };
            log::info!(
                "pretrain epoch {epoch}: train {:.5} val {:.5} psnr {:.2}",
                row.train_loss,
                row.val.loss,
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
