//! Procedural 3D cloud scenes.

use chrono::{NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::noise::{fbm_field, hash3};
use crate::channels::Satellite;
use crate::cloudtype::{column_cloud_type, CloudType};
use crate::geo::GeoGrid;
use crate::heights::{level_height_km, LEVELS};
use crate::manifest::SceneKind;

/// Values written to clear voxels.
pub const CLEAR_Z: f32 = -30.0;
pub const CLEAR_IWC: f32 = 1e-5;
pub const CLEAR_RE: f32 = 0.0;

/// Below this IWC a voxel counts as clear.
const MIN_CLOUD_IWC: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Side of the square scene in pixels.
    pub size: usize,
    /// Pixel spacing, degrees.
    pub resolution_deg: f64,
}

impl SceneConfig {
    pub fn desk() -> Self {
        Self {
            size: 128,
            resolution_deg: 0.03,
        }
    }

    pub fn full() -> Self {
        Self {
            size: 1024,
            resolution_deg: 0.03,
        }
    }
}

/// Tropical-cyclone-like vortex of a storm scene, pixel units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vortex {
    pub row: f64,
    pub col: f64,
    pub radius: f64,
}

/// A generated scene. Volumes are `[row, col, level]` in physical units.
#[derive(Clone, Debug)]
pub struct Scene {
    pub seed: u64,
    pub kind: SceneKind,
    pub satellite: Satellite,
    pub timestamp: i64,
    pub grid: GeoGrid,
    pub size: usize,
    pub z: Vec<f32>,
    pub iwc: Vec<f32>,
    pub re: Vec<f32>,
    pub column_type: Vec<CloudType>,
    /// Surface skin temperature, K.
    pub surface_temp: f64,
    /// Surface reflectance of the three solar channels, %.
    pub albedo: [f64; 3],
    pub vortex: Option<Vortex>,
}

impl Scene {
    pub fn index(&self, i: usize, j: usize) -> usize {
        (i * self.size + j) * LEVELS
    }

    pub fn z_column(&self, i: usize, j: usize) -> &[f32] {
        let o = self.index(i, j);
        &self.z[o..o + LEVELS]
    }

    pub fn iwc_column(&self, i: usize, j: usize) -> &[f32] {
        let o = self.index(i, j);
        &self.iwc[o..o + LEVELS]
    }

    pub fn re_column(&self, i: usize, j: usize) -> &[f32] {
        let o = self.index(i, j);
        &self.re[o..o + LEVELS]
    }

    /// Column contains a voxel at or above the reflectivity cloud threshold.
    pub fn column_is_cloudy(&self, i: usize, j: usize) -> bool {
        self.z_column(i, j)
            .iter()
            .any(|&z| z as f64 >= crate::metrics::Z_CLOUD_DBZ)
    }

    /// Fraction of cloudy columns within `radius` pixels of `(row, col)`.
    pub fn cloud_fraction_within(&self, row: f64, col: f64, radius: f64) -> f64 {
        let (mut n, mut cloudy) = (0usize, 0usize);
        for i in 0..self.size {
            for j in 0..self.size {
                let (dr, dc) = (i as f64 - row, j as f64 - col);
                if dr * dr + dc * dc <= radius * radius {
                    n += 1;
                    cloudy += usize::from(self.column_is_cloudy(i, j));
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            cloudy as f64 / n as f64
        }
    }

    /// Order-dependent checksum of every volume value.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.z.iter().chain(&self.iwc).chain(&self.re) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    kind: CloudType,
    base: f64,
    top: f64,
    iwc_peak: f64,
    re_top: f64,
    re_base: f64,
    /// Exponent on the vertical coordinate; below 1 moves the IWC peak up.
    skew: f64,
}

impl Layer {
    fn at(&self, h: f64) -> Option<(f64, f64)> {
        if h < self.base || h > self.top || self.top - self.base < 1e-6 {
            return None;
        }
        let u = (h - self.base) / (self.top - self.base);
        let s = libm::pow(libm::sin(std::f64::consts::PI * libm::pow(u, self.skew)), 0.6);
        let re = self.re_base + (self.re_top - self.re_base) * u;
        Some((self.iwc_peak * (0.15 + 0.85 * s), re))
    }
}

/// Per-scene random regime controlling cloud cover and type mix.
#[derive(Clone, Copy, Debug)]
struct Regime {
    thr_high: f64,
    thr_mid: f64,
    thr_low: f64,
    thr_conv: f64,
    convective: bool,
    stratiform_low: bool,
    tropopause_km: f64,
}

struct Fields {
    high: Vec<f64>,
    high_top: Vec<f64>,
    mid: Vec<f64>,
    mid_tex: Vec<f64>,
    low: Vec<f64>,
    low_tex: Vec<f64>,
    conv: Vec<f64>,
    density: Vec<f64>,
    thick: Vec<f64>,
}

impl Fields {
    fn new(rng: &mut ChaCha8Rng, s: usize) -> Self {
        let mut f = |scale: f64, oct: u32| fbm_field(rng.random(), s, s, scale, oct);
        Fields {
            high: f(28.0, 4),
            high_top: f(40.0, 2),
            mid: f(24.0, 4),
            mid_tex: f(5.0, 2),
            low: f(20.0, 4),
            low_tex: f(4.0, 2),
            conv: f(7.0, 3),
            density: f(10.0, 3),
            thick: f(16.0, 2),
        }
    }
}

fn unit(v: f64) -> f64 {
    (0.5 + 0.5 * v).clamp(0.0, 1.0)
}

/// Random UTC timestamp within 2020 with local solar time between 09 and 15 h.
fn daytime_timestamp(rng: &mut ChaCha8Rng, lon: f64) -> i64 {
    let month = rng.random_range(1..=12u32);
    let days = match month {
        2 => 29,
        4 | 6 | 9 | 11 => 30,
        _ => 31,
    };
    let day = rng.random_range(1..=days);
    let local_hour: f64 = rng.random_range(9.0..15.0);
    let date = NaiveDate::from_ymd_opt(2020, month, day).expect("valid date");
    let midnight = Utc
        .from_utc_datetime(&date.and_hms_opt(0, 0, 0).expect("midnight"))
        .timestamp();
    midnight + ((local_hour - lon / 15.0) * 3600.0).round() as i64
}

/// Builds a deterministic scene from `seed`.
pub fn generate_scene(seed: u64, kind: SceneKind, cfg: &SceneConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5ce0_e5ee_d000_0000);
    let s = cfg.size;
    let satellite = Satellite::GEOSTATIONARY[rng.random_range(0..3)];
    let lat_c: f64 = match kind {
        SceneKind::General => rng.random_range(-55.0..55.0),
        SceneKind::Storm => {
            let l: f64 = rng.random_range(10.0..28.0);
            if rng.random_bool(0.5) {
                l
            } else {
                -l
            }
        }
    };
    let lon_c = satellite.sub_longitude() + rng.random_range(-50.0..50.0);
    let timestamp = daytime_timestamp(&mut rng, lon_c);
    let half = s as f64 / 2.0;
    let grid = GeoGrid {
        lat0: lat_c + half * cfg.resolution_deg,
        lon0: lon_c - half * cfg.resolution_deg,
        dlat: -cfg.resolution_deg,
        dlon: cfg.resolution_deg,
        rows: s,
        cols: s,
    };
    let surface_temp = 302.0 - 0.45 * lat_c.abs() + rng.random_range(-3.0..3.0);
    let land = rng.random_bool(0.3);
    let albedo = if land { [12.0, 24.0, 20.0] } else { [5.0, 4.0, 3.0] };
    let tropopause_km = 16.5 - 0.08 * lat_c.abs();

    let regime = Regime {
        thr_high: rng.random_range(-0.3..0.35),
        thr_mid: rng.random_range(-0.3..0.35),
        thr_low: rng.random_range(-0.35..0.3),
        thr_conv: rng.random_range(0.05..0.4),
        convective: rng.random_bool(if lat_c.abs() < 25.0 { 0.6 } else { 0.3 }),
        stratiform_low: rng.random_bool(0.45),
        tropopause_km,
    };
    let fields = Fields::new(&mut rng, s);
    let vortex = match kind {
        SceneKind::Storm => Some(Vortex {
            row: half + rng.random_range(-0.08..0.08) * s as f64,
            col: half + rng.random_range(-0.08..0.08) * s as f64,
            radius: 0.4 * s as f64,
        }),
        SceneKind::General => None,
    };
    let spiral_twist: f64 = rng.random_range(2.0..3.5);
    let vox_seed: u64 = rng.random();

    let n = s * s * LEVELS;
    let mut scene = Scene {
        seed,
        kind,
        satellite,
        timestamp,
        grid,
        size: s,
        z: vec![CLEAR_Z; n],
        iwc: vec![CLEAR_IWC; n],
        re: vec![CLEAR_RE; n],
        column_type: vec![CloudType::NoCloud; s * s],
        surface_temp,
        albedo,
        vortex,
    };

    let mut layers = Vec::with_capacity(6);
    let mut labels = [CloudType::NoCloud; LEVELS];
    for i in 0..s {
        for j in 0..s {
            let p = i * s + j;
            layers.clear();
            general_layers(&fields, &regime, p, &mut layers);
            if let Some(v) = vortex {
                storm_layers(&fields, &regime, &v, spiral_twist, i, j, p, &mut layers);
            }
            let o = scene.index(i, j);
            for k in 0..LEVELS {
                let h = level_height_km(k);
                let mut best: Option<(f64, f64, CloudType)> = None;
                for l in &layers {
                    if let Some((iwc, re)) = l.at(h) {
                        if best.is_none_or(|b| iwc > b.0) {
                            best = Some((iwc, re, l.kind));
                        }
                    }
                }
                labels[k] = CloudType::NoCloud;
                let Some((iwc, re, kind)) = best else {
                    continue;
                };
                let jitter = 1.0 + 0.25 * hash3(vox_seed, p as u64, k as u64, 1);
                let iwc = (iwc * jitter).min(10.0);
                if iwc < MIN_CLOUD_IWC {
                    continue;
                }
                let re = (re * (1.0 + 0.1 * hash3(vox_seed, p as u64, k as u64, 2))).clamp(2.0, 160.0);
                let z = 10.0 * libm::log10(iwc)
                    + 30.0 * libm::log10(re / 50.0)
                    + 5.0
                    + hash3(vox_seed, p as u64, k as u64, 3);
                scene.iwc[o + k] = iwc as f32;
                scene.re[o + k] = re as f32;
                scene.z[o + k] = z.clamp(-30.0, 20.0) as f32;
                labels[k] = kind;
            }
            scene.column_type[p] = column_cloud_type(&labels);
        }
    }
    scene
}

fn general_layers(f: &Fields, r: &Regime, p: usize, out: &mut Vec<Layer>) {
    let dens = 0.5 + unit(f.density[p]);
    let thick = unit(f.thick[p]);

    let conv = f.conv[p] + 0.3 * f.low[p];
    let deep = r.convective && conv > r.thr_conv + 0.3;
    if conv > r.thr_conv {
        let strength = ((conv - r.thr_conv) / 0.3).min(1.0);
        if deep {
            let top = (9.0 + 6.0 * ((conv - r.thr_conv - 0.3) / 0.3).min(1.0)).min(r.tropopause_km);
            out.push(Layer {
                kind: CloudType::DeepConvection,
                base: 0.5,
                top,
                iwc_peak: 0.6 + 1.8 * dens * strength,
                re_top: 60.0,
                re_base: 110.0,
                skew: 0.7,
            });
            // anvil spreading at the top
            out.push(Layer {
                kind: CloudType::Cirrus,
                base: top - 2.5,
                top,
                iwc_peak: 0.08 * dens,
                re_top: 35.0,
                re_base: 55.0,
                skew: 1.0,
            });
        } else {
            out.push(Layer {
                kind: CloudType::Cumulus,
                base: 0.8,
                top: 1.6 + 3.5 * strength,
                iwc_peak: 0.15 + 0.4 * dens * strength,
                re_top: 12.0,
                re_base: 22.0,
                skew: 0.8,
            });
        }
    }

    let nimbo = f.mid[p] > r.thr_mid + 0.3 && f.low[p] > r.thr_low;
    if nimbo {
        out.push(Layer {
            kind: CloudType::Nimbostratus,
            base: 0.6 + 0.6 * thick,
            top: 6.0 + 1.5 * thick,
            iwc_peak: 0.15 + 0.3 * dens,
            re_top: 45.0,
            re_base: 85.0,
            skew: 1.0,
        });
    } else {
        if f.mid[p] > r.thr_mid {
            if f.mid_tex[p] > 0.05 {
                let top = 4.0 + 2.5 * unit(f.high_top[p]);
                out.push(Layer {
                    kind: CloudType::Altocumulus,
                    base: top - 0.5 - 0.7 * thick,
                    top,
                    iwc_peak: 0.03 + 0.08 * dens,
                    re_top: 15.0,
                    re_base: 28.0,
                    skew: 1.0,
                });
            } else {
                let top = 5.5 + 2.5 * unit(f.high_top[p]);
                out.push(Layer {
                    kind: CloudType::Altostratus,
                    base: top - 1.5 - 2.0 * thick,
                    top,
                    iwc_peak: 0.04 + 0.12 * dens,
                    re_top: 30.0,
                    re_base: 60.0,
                    skew: 1.0,
                });
            }
        }
        if f.low[p] > r.thr_low {
            if r.stratiform_low {
                let top = 0.8 + 1.0 * thick;
                out.push(Layer {
                    kind: CloudType::Stratus,
                    base: top - 0.4 - 0.5 * thick,
                    top,
                    iwc_peak: 0.05 + 0.2 * dens,
                    re_top: 10.0,
                    re_base: 14.0,
                    skew: 1.0,
                });
            } else if f.low_tex[p] > -0.15 {
                let top = 1.3 + 1.2 * thick;
                out.push(Layer {
                    kind: CloudType::Stratocumulus,
                    base: top - 0.5 - 0.6 * thick,
                    top,
                    iwc_peak: 0.06 + 0.25 * dens,
                    re_top: 12.0,
                    re_base: 20.0,
                    skew: 1.0,
                });
            }
        }
    }

    if f.high[p] > r.thr_high {
        let top = (9.5 + 4.5 * unit(f.high_top[p])).min(r.tropopause_km);
        out.push(Layer {
            kind: CloudType::Cirrus,
            base: top - 0.8 - 1.8 * thick,
            top,
            iwc_peak: 0.01 + 0.05 * dens,
            re_top: 22.0,
            re_base: 48.0,
            skew: 1.0,
        });
    }
}

#[allow(clippy::too_many_arguments)]
fn storm_layers(f: &Fields, reg: &Regime, v: &Vortex, twist: f64, i: usize, j: usize, p: usize, out: &mut Vec<Layer>) {
    let (dy, dx) = (i as f64 - v.row, j as f64 - v.col);
    let r = (dx * dx + dy * dy).sqrt() / v.radius;
    if r > 1.3 {
        return;
    }
    let dens = 0.5 + unit(f.density[p]);
    let top_max = reg.tropopause_km;
    if r < 0.08 {
        // eye: clear aloft, occasional low cloud
        out.retain(|l| l.top < 3.0);
        return;
    }
    if r < 1.0 {
        out.retain(|l| l.top < 3.0);
    }
    if r < 0.2 {
        out.push(Layer {
            kind: CloudType::DeepConvection,
            base: 0.5,
            top: top_max - 0.5 * unit(f.thick[p]),
            iwc_peak: 1.5 + 1.5 * dens,
            re_top: 70.0,
            re_base: 120.0,
            skew: 0.7,
        });
        return;
    }
    let theta = libm::atan2(dy, dx);
    let phase = 2.0 * theta + twist * libm::log(r / 0.2) + 0.6 * f.mid[p];
    let band = libm::cos(phase);
    if r < 1.0 && band > 0.35 {
        let strength = (band - 0.35) / 0.65 * (1.1 - r);
        if r < 0.6 {
            out.push(Layer {
                kind: CloudType::DeepConvection,
                base: 0.5,
                top: (8.0 + 8.0 * strength).min(top_max),
                iwc_peak: 0.5 + 1.5 * dens * strength,
                re_top: 60.0,
                re_base: 100.0,
                skew: 0.7,
            });
        } else {
            out.push(Layer {
                kind: CloudType::Cumulus,
                base: 0.8,
                top: 2.0 + 4.0 * strength,
                iwc_peak: 0.2 + 0.4 * dens,
                re_top: 14.0,
                re_base: 25.0,
                skew: 0.8,
            });
        }
    }
    if r < 0.95 {
        let depth = 2.0 + 3.0 * (1.0 - r);
        let top = top_max - 1.0 - 2.0 * r;
        out.push(Layer {
            kind: if r < 0.5 {
                CloudType::Altostratus
            } else {
                CloudType::Cirrus
            },
            base: top - depth,
            top,
            iwc_peak: (0.06 + 0.25 * (1.0 - r)) * dens,
            re_top: 35.0,
            re_base: 65.0,
            skew: 1.0,
        });
    } else if f.high[p] > reg.thr_high - 0.3 {
        let top = top_max - 3.0;
        out.push(Layer {
            kind: CloudType::Cirrus,
            base: top - 1.5,
            top,
            iwc_peak: 0.03 * dens,
            re_top: 25.0,
            re_base: 45.0,
            skew: 1.0,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clear_voxels_are_consistent() {
        let sc = generate_scene(
            4,
            SceneKind::General,
            &SceneConfig {
                size: 32,
                resolution_deg: 0.03,
            },
        );
        for idx in 0..sc.z.len() {
            if sc.re[idx] == 0.0 {
                assert_eq!(sc.iwc[idx], CLEAR_IWC);
                assert_eq!(sc.z[idx], CLEAR_Z);
            } else {
                assert!(sc.iwc[idx] as f64 >= MIN_CLOUD_IWC * 0.99);
            }
        }
    }
}
