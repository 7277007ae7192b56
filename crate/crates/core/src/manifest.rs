//! Dataset manifest: one JSON file listing every scene and sample on disk.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Datelike};
use serde::{Deserialize, Serialize};

use crate::channels::Satellite;
use crate::error::{invalid, io_err, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    General,
    Storm,
}

/// Assigns a split from the UTC day of month: 2-22 train, 24-26 val,
/// 28-31 test; days 1, 23 and 27 are gap days and excluded.
pub fn split_for_day(day: u32) -> Split {
    match day {
        2..=22 => Split::Train,
        24..=26 => Split::Val,
        28..=31 => Split::Test,
        _ => Split::Excluded,
    }
}

pub fn assign_split(timestamp: i64) -> Split {
    match DateTime::from_timestamp(timestamp, 0) {
        Some(t) => split_for_day(t.day()),
        None => Split::Excluded,
    }
}

/// A colocated training/evaluation sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sample_id: String,
    /// Directory relative to the manifest.
    pub path: String,
    pub satellite: Satellite,
    pub timestamp: i64,
    pub split: Split,
    pub kind: SceneKind,
    pub cloudy_fraction: f64,
    pub track_pixels: usize,
}

/// A full scene image, used for pre-training crops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub path: String,
    pub satellite: Satellite,
    pub timestamp: i64,
    pub split: Split,
    pub kind: SceneKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    /// Side of a sample patch in pixels.
    pub patch_size: usize,
    /// Side of a scene image in pixels.
    pub scene_size: usize,
    /// Native channel positions chosen for each imager, per reference channel.
    pub channel_mapping: BTreeMap<Satellite, Vec<usize>>,
    pub scenes: Vec<SceneRecord>,
    pub samples: Vec<SampleRecord>,
}

impl Manifest {
    pub fn new(patch_size: usize, scene_size: usize) -> Self {
        let channel_mapping = Satellite::GEOSTATIONARY
            .iter()
            .map(|&s| (s, crate::channels::satellite_mapping(s)))
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            patch_size,
            scene_size,
            channel_mapping,
            scenes: Vec::new(),
            samples: Vec::new(),
        }
    }

    /// Unique ids and day-rule consistent splits.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return invalid(format!("unsupported manifest version {}", self.format_version));
        }
        let mut ids = HashSet::new();
        for s in &self.samples {
            if !ids.insert(&s.sample_id) {
                return invalid(format!("duplicate sample id {}", s.sample_id));
            }
            if s.split != assign_split(s.timestamp) {
                return invalid(format!(
                    "sample {} tagged {:?} but its day maps to {:?}",
                    s.sample_id,
                    s.split,
                    assign_split(s.timestamp)
                ));
            }
        }
        let mut sids = HashSet::new();
        for s in &self.scenes {
            if !sids.insert(&s.scene_id) {
                return invalid(format!("duplicate scene id {}", s.scene_id));
            }
            if s.split != assign_split(s.timestamp) {
                return invalid(format!("scene {} has an inconsistent split", s.scene_id));
            }
        }
        Ok(())
    }

    pub fn samples_where<'a>(
        &'a self,
        split: Option<Split>,
        kind: Option<SceneKind>,
    ) -> impl Iterator<Item = &'a SampleRecord> + 'a {
        self.samples
            .iter()
            .filter(move |s| split.is_none_or(|sp| s.split == sp) && kind.is_none_or(|k| s.kind == k))
    }

    pub fn scenes_where<'a>(
        &'a self,
        split: Option<Split>,
        kind: Option<SceneKind>,
    ) -> impl Iterator<Item = &'a SceneRecord> + 'a {
        self.scenes
            .iter()
            .filter(move |s| split.is_none_or(|sp| s.split == sp) && kind.is_none_or(|k| s.kind == k))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_rule() {
        assert_eq!(split_for_day(15), Split::Train);
        assert_eq!(split_for_day(25), Split::Val);
        assert_eq!(split_for_day(23), Split::Excluded);
        assert_eq!(split_for_day(1), Split::Excluded);
        assert_eq!(split_for_day(27), Split::Excluded);
        assert_eq!(split_for_day(31), Split::Test);
    }

    #[test]
    fn timestamp_split() {
        // 2020-07-25 06:00 UTC
        assert_eq!(assign_split(1_595_656_800), Split::Val);
    }
}
