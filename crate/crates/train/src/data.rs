//! In-memory training sets and batch assembly.

use std::path::Path;

use cloudvol_core::channels::{Satellite, N_CHANNELS};
use cloudvol_core::coloc::Sample;
use cloudvol_core::dataset::{load_sample, load_scene_image, load_scene_meta};
use cloudvol_core::geo::{GeoGrid, Geometry};
use cloudvol_core::manifest::{Manifest, SceneKind, Split};
use cloudvol_core::norm::Variable;
use cloudvol_models::{MetadataVector, TokenMask};
use cloudvol_tensor::{Real, Tensor};
use rand::Rng;

use crate::loss::MaskedTarget;
use crate::{Result, TrainError};

/// Colocated patches of one split.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub samples: Vec<Sample>,
}

impl SampleSet {
    /// Samples of `split`, optionally restricted to one scene kind.
    pub fn load(root: &Path, manifest: &Manifest, split: Split, kind: Option<SceneKind>) -> Result<Self> {
        let samples = manifest
            .samples
            .iter()
            .filter(|r| r.split == split && kind.is_none_or(|k| r.kind == k))
            .map(|r| load_sample(root, r))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn satellites(&self) -> Vec<Satellite> {
        self.samples.iter().map(|s| s.meta.satellite).collect()
    }

    pub fn patch_size(&self) -> Option<usize> {
        self.samples.first().map(|s| s.size)
    }
}

/// One training or evaluation batch.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    pub ids: Vec<String>,
    /// `[B, 11, S, S]`.
    pub images: Tensor<T>,
    pub meta: Vec<MetadataVector>,
    pub target: MaskedTarget<T>,
}

fn stack_images<T: Real>(images: &[&[f32]], size: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(images.len() * N_CHANNELS * size * size);
    for img in images {
        if img.len() != N_CHANNELS * size * size {
            return Err(TrainError::Config(format!(
                "image of {} values is not {N_CHANNELS}x{size}x{size}",
                img.len()
            )));
        }
        data.extend(img.iter().map(|&v| T::of(v as f64)));
    }
    Ok(Tensor::new(vec![images.len(), N_CHANNELS, size, size], data)?)
}

/// Images, metadata and track-masked targets `[B, V * 80, S, S]`.
pub fn volume_batch<T: Real>(samples: &[&Sample], vars: &[Variable]) -> Result<Batch<T>> {
    let Some(first) = samples.first() else {
        return Err(TrainError::EmptySplit("batch".into()));
    };
    let size = first.size;
    if samples.iter().any(|s| s.size != size) {
        return Err(TrainError::Config("mixed patch sizes in one batch".into()));
    }
    let images: Vec<&[f32]> = samples.iter().map(|s| s.image.as_slice()).collect();
    let mut target = Vec::new();
    for s in samples {
        target.extend(s.dense_targets(vars)?);
    }
    let masks: Vec<Vec<bool>> = samples.iter().map(|s| s.mask()).collect();
    let c = vars.len() * cloudvol_core::heights::LEVELS;
    let target = MaskedTarget::new(&target, [samples.len(), c, size, size], vars.len(), |b, _, p| {
        masks[b][p]
    })?;
    Ok(Batch {
        ids: samples.iter().map(|s| s.meta.sample_id.clone()).collect(),
        images: stack_images(&images, size)?,
        meta: samples
            .iter()
            .map(|s| MetadataVector::from_geometry(&s.meta.geometry))
            .collect(),
        target,
    })
}

/// Stored scene imagery used for pre-training crops.
#[derive(Clone, Debug)]
pub struct SceneImage {
    pub id: String,
    pub satellite: Satellite,
    pub timestamp: i64,
    pub grid: GeoGrid,
    /// Normalised `[11, side, side]`.
    pub image: Vec<f32>,
}

impl SceneImage {
    pub fn side(&self) -> usize {
        self.grid.rows
    }
}

#[derive(Clone, Debug, Default)]
pub struct SceneSet {
    pub scenes: Vec<SceneImage>,
}

impl SceneSet {
    /// General (non-storm) scenes of `split`.
    pub fn load(root: &Path, manifest: &Manifest, split: Split) -> Result<Self> {
        let mut scenes = Vec::new();
        for rec in manifest
            .scenes
            .iter()
            .filter(|r| r.split == split && r.kind == SceneKind::General)
        {
            let (rows, cols, image) = load_scene_image(root, rec)?;
            let (grid, _) = load_scene_meta(root, rec)?;
            if rows != cols || grid.rows != rows || grid.cols != cols {
                return Err(TrainError::Config(format!("scene {} is not square", rec.scene_id)));
            }
            scenes.push(SceneImage {
                id: rec.scene_id.clone(),
                satellite: rec.satellite,
                timestamp: rec.timestamp,
                grid,
                image,
            });
        }
        Ok(Self { scenes })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn satellites(&self) -> Vec<Satellite> {
        self.scenes.iter().map(|s| s.satellite).collect()
    }
}

/// A square window of a scene with the metadata of its centre.
#[derive(Clone, Debug)]
pub struct Crop {
    pub id: String,
    pub image: Vec<f32>,
    pub meta: MetadataVector,
}

pub fn crop(scene: &SceneImage, top: usize, left: usize, size: usize) -> Result<Crop> {
    let side = scene.side();
    if size == 0 || top + size > side || left + size > side {
        return Err(TrainError::Config(format!(
            "crop {size} at ({top}, {left}) outside a {side} px scene"
        )));
    }
    let mut image = Vec::with_capacity(N_CHANNELS * size * size);
    for c in 0..N_CHANNELS {
        for i in top..top + size {
            let row = (c * side + i) * side;
            image.extend_from_slice(&scene.image[row + left..row + left + size]);
        }
    }
    let (lat, lon) = scene.grid.center(top + size / 2, left + size / 2);
    let geometry = Geometry::compute(scene.timestamp, lat, lon, scene.satellite);
    Ok(Crop {
        id: format!("{}@{top},{left}", scene.id),
        image,
        meta: MetadataVector::from_geometry(&geometry),
    })
}

pub fn random_crop<R: Rng + ?Sized>(scene: &SceneImage, size: usize, rng: &mut R) -> Result<Crop> {
    let span = scene
        .side()
        .checked_sub(size)
        .ok_or_else(|| TrainError::Config(format!("crop {size} larger than scene {}", scene.side())))?;
    let top = rng.random_range(0..=span);
    let left = rng.random_range(0..=span);
    crop(scene, top, left, size)
}

pub fn center_crop(scene: &SceneImage, size: usize) -> Result<Crop> {
    let span = scene.side().saturating_sub(size);
    crop(scene, span / 2, span / 2, size)
}

/// Images of `crops` with the reconstruction target restricted to the
/// masked pixels of each crop.
pub fn masked_image_batch<T: Real>(
    crops: &[Crop],
    size: usize,
    masks: &[TokenMask],
    token_px: usize,
) -> Result<Batch<T>> {
    if crops.is_empty() || crops.len() != masks.len() {
        return Err(TrainError::Config(format!(
            "{} crops with {} masks",
            crops.len(),
            masks.len()
        )));
    }
    let images: Vec<&[f32]> = crops.iter().map(|c| c.image.as_slice()).collect();
    let px: Vec<Vec<bool>> = masks.iter().map(|m| m.pixels(token_px)).collect();
    if px.iter().any(|p| p.len() != size * size) {
        return Err(TrainError::Config("mask does not cover the crop".into()));
    }
    let flat: Vec<f32> = images.iter().flat_map(|i| i.iter().copied()).collect();
    let target = MaskedTarget::new(&flat, [crops.len(), N_CHANNELS, size, size], 1, |b, _, p| px[b][p])?;
    Ok(Batch {
        ids: crops.iter().map(|c| c.id.clone()).collect(),
        images: stack_images(&images, size)?,
        meta: crops.iter().map(|c| c.meta).collect(),
        target,
    })
}
