//! Checkpoints: one CVT1 file per parameter (and per Adam moment) plus a
//! JSON index holding the model config, its hash and the best validation loss.

use std::fs;
use std::path::{Path, PathBuf};

use cloudvol_core::cvt::CvtArray;
use cloudvol_core::norm::Variable;
use cloudvol_models::Architecture;
use cloudvol_tensor::{Adam, Moments, ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ckpt_err, io_err};
use crate::{Result, TrainError};

pub const INDEX_FILE: &str = "index.json";
pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Finetune,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pretrain => "pretrain",
            Self::Finetune => "finetune",
        }
    }
}

/// SHA-256 of the JSON form of a config.
pub fn config_hash<S: Serialize>(config: &S) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(config)?))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredFile {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: StoredFile,
    /// Adam first and second moments, when saved.
    pub moments: Option<(StoredFile, StoredFile)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: u32,
    pub phase: Phase,
    pub architecture: Architecture,
    /// Predicted variables; empty for pre-training.
    pub variables: Vec<Variable>,
    /// Model config as JSON (a `SwinConfig` for pre-training, a
    /// `VolumeSpec` for fine-tuning).
    pub model: serde_json::Value,
    pub config_hash: String,
    /// Hash of the Swin encoder config, used when a fine-tune loads it.
    pub encoder_hash: Option<String>,
    pub seed: u64,
    pub epoch: usize,
    pub best_val_loss: f64,
    pub adam_step: u64,
    pub params: Vec<ParamEntry>,
}

fn write_blob(dir: &Path, rel: String, array: &CvtArray) -> Result<StoredFile> {
    let bytes = array.to_bytes();
    let path = dir.join(&rel);
    fs::write(&path, &bytes).map_err(io_err(&path))?;
    Ok(StoredFile {
        file: rel,
        sha256: sha256_hex(&bytes),
    })
}

fn read_blob(dir: &Path, f: &StoredFile) -> Result<CvtArray> {
    let path = dir.join(&f.file);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    if sha256_hex(&bytes) != f.sha256 {
        return ckpt_err(&path, "content hash does not match the index");
    }
    Ok(CvtArray::from_bytes(&bytes, &path)?)
}

/// Writes `store` (and optionally the optimizer state) to `dir`, replacing
/// any previous checkpoint there. The `params` field of `index` is filled in.
pub fn save_checkpoint(
    dir: &Path,
    mut index: CheckpointIndex,
    store: &ParamStore<f32>,
    adam: Option<&Adam<f32>>,
) -> Result<CheckpointIndex> {
    let tmp = PathBuf::from(format!("{}.partial", dir.display()));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(&tmp))?;
    }
    for sub in ["params", "optim"] {
        fs::create_dir_all(tmp.join(sub)).map_err(io_err(&tmp))?;
    }
    index.params.clear();
    index.adam_step = adam.map_or(0, |a| a.t);
    for (k, (id, p)) in store.iter().enumerate() {
        let shape = p.value.shape().to_vec();
        let value = write_blob(
            &tmp,
            format!("params/{k:04}.cvt"),
            &CvtArray::f32(shape.clone(), p.value.data().to_vec())?,
        )?;
        let moments = match adam.and_then(|a| a.moments(id)) {
            Some(m) => Some((
                write_blob(
                    &tmp,
                    format!("optim/{k:04}.m.cvt"),
                    &CvtArray::f32(shape.clone(), m.m.clone())?,
                )?,
                write_blob(
                    &tmp,
                    format!("optim/{k:04}.v.cvt"),
                    &CvtArray::f32(shape.clone(), m.v.clone())?,
                )?,
            )),
            None => None,
        };
        index.params.push(ParamEntry {
            name: p.name.clone(),
            shape,
            value,
            moments,
        });
    }
    index.format = CHECKPOINT_FORMAT;
    let path = tmp.join(INDEX_FILE);
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(io_err(&path))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::rename(&tmp, dir).map_err(io_err(dir))?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<CheckpointIndex> {
    let path = dir.join(INDEX_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let index: CheckpointIndex = serde_json::from_str(&text).map_err(|e| TrainError::Checkpoint {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    if index.format != CHECKPOINT_FORMAT {
        return ckpt_err(&path, format!("unsupported format {}", index.format));
    }
    Ok(index)
}

/// Parameter values (and moments) read back from disk, verified against
/// the index hashes.
#[derive(Clone, Debug)]
pub struct LoadedCheckpoint {
    pub dir: PathBuf,
    pub index: CheckpointIndex,
    pub values: Vec<(String, Tensor<f32>, Option<Moments<f32>>)>,
}

pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint> {
    let index = read_index(dir)?;
    let mut values = Vec::with_capacity(index.params.len());
    for e in &index.params {
        let (shape, data) = read_blob(dir, &e.value)?.into_f32()?;
        if shape != e.shape {
            return ckpt_err(
                dir.join(&e.value.file),
                format!("shape {shape:?}, index says {:?}", e.shape),
            );
        }
        let moments = match &e.moments {
            Some((m, v)) => Some(Moments {
                m: read_blob(dir, m)?.into_f32()?.1,
                v: read_blob(dir, v)?.into_f32()?.1,
            }),
            None => None,
        };
        if moments
            .as_ref()
            .is_some_and(|m| m.m.len() != data.len() || m.v.len() != data.len())
        {
            return ckpt_err(dir, format!("moments of {} have the wrong size", e.name));
        }
        values.push((e.name.clone(), Tensor::new(shape, data)?, moments));
    }
    Ok(LoadedCheckpoint {
        dir: dir.to_path_buf(),
        index,
        values,
    })
}

impl LoadedCheckpoint {
    /// Copies every stored parameter whose name starts with `prefix` into
    /// `store`. Returns how many were restored. A stored parameter the
    /// store lacks, or one with a different shape, is an error.
    pub fn restore(&self, store: &mut ParamStore<f32>, prefix: &str) -> Result<usize> {
        let mut n = 0;
        for (name, value, _) in self.values.iter().filter(|(n, _, _)| n.starts_with(prefix)) {
            let Some(id) = store.id(name) else {
                return ckpt_err(&self.dir, format!("model has no parameter {name}"));
            };
            if store.value(id).shape() != value.shape() {
                return ckpt_err(
                    &self.dir,
                    format!(
                        "{name}: stored {:?}, model {:?}",
                        value.shape(),
                        store.value(id).shape()
                    ),
                );
            }
            store.set_value(name, value.clone())?;
            n += 1;
        }
        let expected = store.iter().filter(|(_, p)| p.name.starts_with(prefix)).count();
        if n != expected {
            return ckpt_err(
                &self.dir,
                format!("restored {n} of {expected} parameters under '{prefix}'"),
            );
        }
        Ok(n)
    }

    /// Restores the optimizer moments and step count for every parameter.
    pub fn restore_adam(&self, store: &ParamStore<f32>, adam: &mut Adam<f32>) -> Result<()> {
        for (name, _, m) in &self.values {
            if let (Some(id), Some(m)) = (store.id(name), m) {
                adam.set_moments(id, m.clone());
            }
        }
        adam.t = self.index.adam_step;
        Ok(())
    }
}
