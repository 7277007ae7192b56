//! Run configuration, best-checkpoint tracking and the epoch log.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Phase;
use crate::error::io_err;
use crate::{Result, TrainError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Synchronous data loading. The loops here are always synchronous, so
    /// this only documents the run.
    pub deterministic: bool,
    /// Where the best checkpoint is kept; `None` trains without saving.
    pub checkpoint_dir: Option<PathBuf>,
    /// CSV epoch log, appended to.
    pub log_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn pretrain(seed: u64) -> Self {
        Self {
            phase: Phase::Pretrain,
            epochs: 50,
            batch_size: 32,
            lr: 1.5e-4,
            weight_decay: 0.0,
            seed,
            deterministic: true,
            checkpoint_dir: None,
            log_path: None,
        }
    }

    /// Fine-tuning defaults; weight decay is used for the U-Net only.
    pub fn finetune(seed: u64, unet: bool) -> Self {
        Self {
            phase: Phase::Finetune,
            epochs: 100,
            batch_size: 8,
            weight_decay: if unet { 1e-5 } else { 0.0 },
            ..Self::pretrain(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {} is not positive", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(TrainError::Config(format!(
                "weight decay {} is negative",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Keeps the lowest validation loss seen; only a strictly lower loss counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BestTracker {
    pub best: f64,
    pub epoch: Option<usize>,
}

impl Default for BestTracker {
    fn default() -> Self {
        Self {
            best: f64::INFINITY,
            epoch: None,
        }
    }
}

impl BestTracker {
    /// True when `loss` beats the best so far (and becomes the new best).
    pub fn offer(&mut self, epoch: usize, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.epoch = Some(epoch);
            true
        } else {
            false
        }
    }
}

/// Validation numbers in normalised units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalStats {
    /// Sum over groups of the per-group masked MSE.
    pub loss: f64,
    /// Pooled RMSE over all valid cells.
    pub rmse: f64,
    /// PSNR for a value range of 2.
    pub psnr: f64,
}

impl EvalStats {
    /// From per-group squared-error sums and cell counts.
    pub fn from_groups(groups: &[(f64, usize)]) -> Self {
        let loss = groups.iter().filter(|g| g.1 > 0).map(|&(sse, n)| sse / n as f64).sum();
        let sse: f64 = groups.iter().map(|g| g.0).sum();
        let n: usize = groups.iter().map(|g| g.1).sum();
        let mse = if n == 0 { 0.0 } else { sse / n as f64 };
        Self {
            loss,
            rmse: mse.sqrt(),
            psnr: 10.0 * (4.0 / mse).log10(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    pub val: EvalStats,
    pub wall_seconds: f64,
    pub improved: bool,
}

pub const LOG_HEADER: &str = "epoch,phase,train_loss,val_loss,rmse,psnr,wall_seconds";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch,
            self.phase.name(),
            self.train_loss,
            self.val.loss,
            self.val.rmse,
            self.val.psnr,
            self.wall_seconds
        )
    }
}

/// Appends one row, writing the header first if the file is new.
pub fn append_log(path: &Path, row: &EpochLog) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    if fresh {
        writeln!(f, "{LOG_HEADER}").map_err(io_err(path))?;
    }
    writeln!(f, "{}", row.csv_row()).map_err(io_err(path))
}

/// Record of a finished run.
#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub epochs: Vec<EpochLog>,
    pub best: BestTracker,
    pub steps: u64,
}

#[derive(Serialize)]
struct NonFiniteDump<'a> {
    step: u64,
    epoch: usize,
    loss: f64,
    batch: &'a [String],
}

/// Writes `nonfinite_batch.json` next to the checkpoint (or log) and
/// returns the matching error.
pub(crate) fn non_finite(config: &TrainConfig, step: u64, epoch: usize, loss: f64, batch: &[String]) -> TrainError {
    let dir = config
        .checkpoint_dir
        .as_deref()
        .and_then(Path::parent)
        .or_else(|| config.log_path.as_deref().and_then(Path::parent))
        .filter(|d| !d.as_os_str().is_empty());
    if let Some(dir) = dir {
        let path = dir.join("nonfinite_batch.json");
        let dump = NonFiniteDump {
            step,
            epoch,
            loss,
            batch,
        };
        match serde_json::to_string_pretty(&dump) {
            Ok(text) => {
                if let Err(e) = fs::create_dir_all(dir).and_then(|_| fs::write(&path, text)) {
                    log::error!("could not write {}: {e}", path.display());
                }
            }
            Err(e) => log::error!("could not encode the batch dump: {e}"),
        }
    }
    TrainError::NonFinite {
        step,
        epoch,
        batch: batch.to_vec(),
    }
}
