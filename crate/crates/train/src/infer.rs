//! Batched prediction, track extraction and the climatology baseline.

use cloudvol_core::channels::N_CHANNELS;
use cloudvol_core::coloc::{Sample, N_VARS};
use cloudvol_core::geo::Geometry;
use cloudvol_core::heights::LEVELS;
use cloudvol_core::metrics::{Curtain2D, EvalSample};
use cloudvol_core::norm::{is_valid, Variable};
use cloudvol_models::MetadataVector;
use cloudvol_tensor::Tensor;

use crate::batch::ordered_batches;
use crate::finetune::FineTuner;
use crate::{Result, TrainError};

/// Full `[V * 80, S, S]` volume for one normalised `[11, S, S]` patch,
/// with or without a track.
pub fn predict_volume(tuner: &FineTuner, image: &[f32], size: usize, geometry: &Geometry) -> Result<Tensor<f32>> {
    if image.len() != N_CHANNELS * size * size {
        return Err(TrainError::Config(format!(
            "patch of {} values is not {N_CHANNELS}x{size}x{size}",
            image.len()
        )));
    }
    let x = Tensor::new(vec![1, N_CHANNELS, size, size], image.to_vec())?;
    let y = tuner.forward(x, &[MetadataVector::from_geometry(geometry)])?;
    let shape = y.shape()[1..].to_vec();
    Ok(y.reshape(shape)?)
}

/// Track columns `[n_track, V, 80]` of a dense `[V * 80, S, S]` prediction.
pub fn track_columns(pred: &[f32], sample: &Sample, n_vars: usize) -> Vec<f32> {
    let hw = sample.size * sample.size;
    let mut out = Vec::with_capacity(sample.n_track() * n_vars * LEVELS);
    for &(i, j) in &sample.track {
        let p = i * sample.size + j;
        for ch in 0..n_vars * LEVELS {
            out.push(pred[ch * hw + p]);
        }
    }
    out
}

/// Predictions of `tuner` paired with the targets of every sample.
pub fn predict_eval(tuner: &FineTuner, samples: &[Sample], batch_size: usize) -> Result<Vec<EvalSample>> {
    let keys: Vec<_> = samples.iter().map(|s| s.meta.satellite).collect();
    let mut out: Vec<Option<EvalSample>> = vec![None; samples.len()];
    let v = tuner.vars.len();
    for idx in ordered_batches(&keys, batch_size) {
        let size = samples[idx[0]].size;
        let mut data = Vec::with_capacity(idx.len() * N_CHANNELS * size * size);
        let mut meta = Vec::with_capacity(idx.len());
        for &i in &idx {
            if samples[i].size != size {
                return Err(TrainError::Config("mixed patch sizes".into()));
            }
            data.extend_from_slice(&samples[i].image);
            meta.push(MetadataVector::from_geometry(&samples[i].meta.geometry));
        }
        let y = tuner.forward(Tensor::new(vec![idx.len(), N_CHANNELS, size, size], data)?, &meta)?;
        let per = v * LEVELS * size * size;
        for (k, &i) in idx.iter().enumerate() {
            let cols = track_columns(&y.data()[k * per..(k + 1) * per], &samples[i], v);
            out[i] = Some(samples[i].to_eval(cols));
        }
    }
    Ok(out.into_iter().flatten().collect())
}

/// Mean normalised target per variable and level over the track columns
/// of `samples`, `[V, 80]`.
pub fn climatology(samples: &[Sample], vars: &[Variable]) -> Result<Vec<f32>> {
    let mut sum = vec![0.0f64; vars.len() * LEVELS];
    let mut n = vec![0usize; vars.len() * LEVELS];
    for (slot, var) in vars.iter().enumerate() {
        let vi = var
            .profile_index()
            .ok_or_else(|| TrainError::Config(format!("{} is not a profile variable", var.name())))?;
        for s in samples {
            for p in 0..s.n_track() {
                for (l, &x) in s.target_column(p, vi).iter().enumerate() {
                    if is_valid(x) {
                        sum[slot * LEVELS + l] += x as f64;
                        n[slot * LEVELS + l] += 1;
                    }
                }
            }
        }
    }
    if n.iter().all(|&c| c == 0) {
        return Err(TrainError::EmptySplit("climatology".into()));
    }
    Ok(sum
        .iter()
        .zip(&n)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { (s / c as f64) as f32 })
        .collect())
}

/// The climatology profile repeated on every track column.
pub fn climatology_eval(samples: &[Sample], clim: &[f32]) -> Vec<EvalSample> {
    samples
        .iter()
        .map(|s| s.to_eval(clim.iter().copied().cycle().take(s.n_track() * clim.len()).collect()))
        .collect()
}

/// RMSE in physical units pooled over every valid track cell, one value
/// per variable of the prediction.
pub fn pooled_rmse(samples: &[EvalSample], vars: &[Variable]) -> Result<Vec<f64>> {
    vars.iter()
        .enumerate()
        .map(|(slot, &var)| {
            let vi = var
                .profile_index()
                .ok_or_else(|| TrainError::Config(format!("{} is not a profile variable", var.name())))?;
            let (mut sse, mut n) = (0.0, 0usize);
            for s in samples {
                let t = Curtain2D::from_normalized(&s.target, N_VARS, vi, var, &s.cloud_type);
                let p = Curtain2D::from_normalized(&s.pred, vars.len(), slot, var, &s.cloud_type);
                for k in 0..t.values.len() {
                    if t.valid[k] && p.valid[k] {
                        sse += (p.values[k] - t.values[k]).powi(2);
                        n += 1;
                    }
                }
            }
            if n == 0 {
                return Err(TrainError::EmptySplit(format!("{} track cells", var.name())));
            }
            Ok((sse / n as f64).sqrt())
        })
        .collect()
}
