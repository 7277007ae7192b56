use std::path::Path;
use std::sync::OnceLock;

use cloudvol_core::coloc::Sample;
use cloudvol_core::dataset::{generate_dataset, load_sample, GenerateConfig};
use cloudvol_core::manifest::Manifest;
use cloudvol_models::{SwinConfig, SwinConvConfig, VolumeSpec};

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub manifest: Manifest,
    pub samples: Vec<Sample>,
}

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }
}

/// A small generated dataset shared by the tests of one binary.
pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = GenerateConfig::desk(12, 21);
        cfg.storm_fraction = 0.25;
        let manifest = generate_dataset(dir.path(), &cfg).unwrap();
        let samples = manifest
            .samples
            .iter()
            .map(|r| load_sample(dir.path(), r).unwrap())
            .collect();
        Fixture { dir, manifest, samples }
    })
}

/// A Swin encoder small enough for quick end-to-end runs on 64 px patches.
pub fn tiny_swin(metadata: bool) -> SwinConfig {
    SwinConfig {
        image_size: 64,
        in_channels: 11,
        token_px: 4,
        window_tokens: 8,
        mask_unit_tokens: 2,
        mask_ratio: 0.5,
        depths: vec![1, 1],
        dims: vec![16, 32],
        heads: vec![2, 4],
        mlp_ratio: 2,
        metadata,
    }
}

pub fn tiny_volume(metadata: bool, n_vars: usize) -> VolumeSpec {
    VolumeSpec::Swin {
        encoder: tiny_swin(metadata),
        decoder: SwinConvConfig {
            depths: vec![1],
            volume_channels: 8,
            n_vars,
            levels: 80,
        },
    }
}
