//! Vertical grid. Index 0 is the top of the atmosphere.

use crate::error::{invalid, Result};

/// Levels of a raw profile before cropping.
pub const RAW_LEVELS: usize = 125;
/// Levels kept for training and evaluation.
pub const LEVELS: usize = 80;
/// Raw levels dropped above the kept band.
pub const TOP_CROP: usize = 25;
/// Raw levels dropped below the kept band (below ground).
pub const BOTTOM_CROP: usize = RAW_LEVELS - TOP_CROP - LEVELS;

/// Vertical spacing of the profiling radar bins, km.
pub const LEVEL_SPACING_KM: f64 = 0.24;

/// Keeps raw levels `TOP_CROP..TOP_CROP + LEVELS`.
pub fn crop_heights<T: Copy>(profile: &[T]) -> Result<Vec<T>> {
    if profile.len() != RAW_LEVELS {
        return invalid(format!(
            "crop_heights expects {RAW_LEVELS} levels, got {}",
            profile.len()
        ));
    }
    Ok(profile[TOP_CROP..TOP_CROP + LEVELS].to_vec())
}

/// Height above ground of kept level `k`, km (level 79 is the lowest bin).
pub fn level_height_km(k: usize) -> f64 {
    (LEVELS - k) as f64 * LEVEL_SPACING_KM
}
