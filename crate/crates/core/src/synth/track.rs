//! Narrow profiling tracks across a scene.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::scene::Scene;
use crate::cloudtype::CloudType;
use crate::error::{invalid, Result};
use crate::heights::LEVELS;
use crate::norm::{normalize, Variable};

/// Straight track between two points in continuous pixel coordinates
/// `(row, col)`; pixel centres sit at integer coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackSpec {
    pub entry: (f64, f64),
    pub exit: (f64, f64),
    /// Along-track footprint spacing, pixels.
    pub interval: f64,
}

/// Seconds between consecutive footprints.
pub const FOOTPRINT_SECONDS: f64 = 0.16;

/// Default spacing: about 1.1 km footprints on 3 km pixels.
pub const DEFAULT_INTERVAL: f64 = 0.37;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Footprint {
    pub lat: f64,
    pub lon: f64,
    /// UTC seconds.
    pub time: f64,
}

/// Profiles along a track. Variables are `[footprint, level]`, normalised.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileCurtain {
    pub footprints: Vec<Footprint>,
    pub z: Vec<f32>,
    pub iwc: Vec<f32>,
    pub re: Vec<f32>,
    pub cloud_type: Vec<CloudType>,
}

impl ProfileCurtain {
    pub fn len(&self) -> usize {
        self.footprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.footprints.is_empty()
    }

    /// Column `l` of variable `v` (0 = Z, 1 = IWC, 2 = r_e).
    pub fn column(&self, v: usize, l: usize) -> &[f32] {
        let data = match v {
            0 => &self.z,
            1 => &self.iwc,
            _ => &self.re,
        };
        &data[l * LEVELS..(l + 1) * LEVELS]
    }
}

/// Near-vertical track from the top edge to the bottom edge, mimicking a
/// sun-synchronous overpass.
pub fn random_track<R: Rng + ?Sized>(size: usize, rng: &mut R) -> TrackSpec {
    let s = size as f64;
    let c0 = rng.random_range(0.35 * s..0.65 * s);
    let drift = rng.random_range(-0.1 * s..0.1 * s);
    TrackSpec {
        entry: (-0.5, c0),
        exit: (s - 0.5, (c0 + drift).clamp(0.0, s - 1.0)),
        interval: DEFAULT_INTERVAL,
    }
}

fn inside(p: (f64, f64), size: usize) -> bool {
    let hi = size as f64 - 0.5;
    (-0.5..=hi).contains(&p.0) && (-0.5..=hi).contains(&p.1)
}

/// Samples the scene volume at the pixel under each footprint.
pub fn sample_track(scene: &Scene, track: &TrackSpec) -> Result<ProfileCurtain> {
    let (dr, dc) = (track.exit.0 - track.entry.0, track.exit.1 - track.entry.1);
    let len = (dr * dr + dc * dc).sqrt();
    if len == 0.0 {
        return invalid("track has zero length");
    }
    if !(track.interval > 0.0) {
        return invalid("track interval must be positive");
    }
    if !inside(track.entry, scene.size) || !inside(track.exit, scene.size) {
        return invalid(format!(
            "track {:?} -> {:?} leaves the {}x{} scene",
            track.entry, track.exit, scene.size, scene.size
        ));
    }
    let n = (len / track.interval).floor() as usize + 1;
    let mut c = ProfileCurtain {
        footprints: Vec::with_capacity(n),
        z: Vec::with_capacity(n * LEVELS),
        iwc: Vec::with_capacity(n * LEVELS),
        re: Vec::with_capacity(n * LEVELS),
        cloud_type: Vec::with_capacity(n),
    };
    for k in 0..n {
        let t = (k as f64 * track.interval / len).min(1.0);
        let (row, col) = (track.entry.0 + t * dr, track.entry.1 + t * dc);
        let (lat, lon) = scene.grid.from_pixel(row, col);
        let Some((i, j)) = scene.grid.nearest(lat, lon) else {
            continue;
        };
        c.footprints.push(Footprint {
            lat,
            lon,
            time: scene.timestamp as f64 + k as f64 * FOOTPRINT_SECONDS,
        });
        for (dst, src, var) in [
            (&mut c.z, scene.z_column(i, j), Variable::Z),
            (&mut c.iwc, scene.iwc_column(i, j), Variable::Iwc),
            (&mut c.re, scene.re_column(i, j), Variable::Re),
        ] {
            dst.extend(
                src.iter()
                    .map(|&v| normalize(v as f64, var).expect("finite volume") as f32),
            );
        }
        c.cloud_type.push(scene.column_type[i * scene.size + j]);
    }
    if c.is_empty() {
        return invalid("track does not cross any pixel");
    }
    Ok(c)
}
