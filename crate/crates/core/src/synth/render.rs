//! Simple forward model from cloud volumes to multi-spectral imagery.
//!
//! Each channel sees the column through a Gaussian-in-height weighting
//! kernel. Optical depth follows from weighted ice water path and
//! effective radius; solar channels brighten with optical depth, thermal
//! channels emit layer by layer with a constant lapse rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::scene::Scene;
use crate::channels::{input_kind, satellite_mapping, ChannelKind, ChannelSpec, N_CHANNELS, SEVIRI_UM};
use crate::geo::Geometry;
use crate::heights::{level_height_km, LEVELS, LEVEL_SPACING_KM};
use crate::norm::normalize;

/// Weighting kernel of one channel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelResponse {
    pub center_km: f64,
    pub width_km: f64,
    /// Scale of the optical depth seen by the channel.
    pub kappa: f64,
}

/// Kernels at the reference wavelengths; other wavelengths interpolate.
pub const REFERENCE_RESPONSES: [ChannelResponse; 11] = [
    ChannelResponse {
        center_km: 8.0,
        width_km: 8.0,
        kappa: 1.0,
    },
    ChannelResponse {
        center_km: 8.0,
        width_km: 8.0,
        kappa: 0.9,
    },
    ChannelResponse {
        center_km: 7.0,
        width_km: 6.0,
        kappa: 0.8,
    },
    ChannelResponse {
        center_km: 6.0,
        width_km: 5.0,
        kappa: 0.9,
    },
    ChannelResponse {
        center_km: 11.0,
        width_km: 2.5,
        kappa: 1.2,
    },
    ChannelResponse {
        center_km: 7.5,
        width_km: 2.5,
        kappa: 1.1,
    },
    ChannelResponse {
        center_km: 3.0,
        width_km: 4.0,
        kappa: 0.9,
    },
    ChannelResponse {
        center_km: 13.0,
        width_km: 3.0,
        kappa: 0.8,
    },
    ChannelResponse {
        center_km: 2.0,
        width_km: 6.0,
        kappa: 1.0,
    },
    ChannelResponse {
        center_km: 2.5,
        width_km: 6.0,
        kappa: 1.1,
    },
    ChannelResponse {
        center_km: 5.5,
        width_km: 3.0,
        kappa: 1.0,
    },
];

/// Fraction of the column every channel sees regardless of its kernel.
const KERNEL_FLOOR: f64 = 0.15;
/// Saturation optical depth of the solar reflectance curve.
const TAU_HALF: f64 = 6.0;
const MAX_REFLECTANCE: f64 = 90.0;
const LAPSE_K_PER_KM: f64 = 6.5;
const MIN_TEMPERATURE: f64 = 195.0;

pub fn response(wavelength_um: f64) -> ChannelResponse {
    let w = &SEVIRI_UM;
    if wavelength_um <= w[0] {
        return REFERENCE_RESPONSES[0];
    }
    if wavelength_um >= w[w.len() - 1] {
        return REFERENCE_RESPONSES[w.len() - 1];
    }
    let k = w.iter().position(|&x| x >= wavelength_um).expect("inside table");
    let (a, b) = (REFERENCE_RESPONSES[k - 1], REFERENCE_RESPONSES[k]);
    let t = (wavelength_um - w[k - 1]) / (w[k] - w[k - 1]);
    ChannelResponse {
        center_km: a.center_km + t * (b.center_km - a.center_km),
        width_km: a.width_km + t * (b.width_km - a.width_km),
        kappa: a.kappa + t * (b.kappa - a.kappa),
    }
}

impl ChannelResponse {
    pub fn weight(&self, h_km: f64) -> f64 {
        let d = (h_km - self.center_km) / self.width_km;
        KERNEL_FLOOR + (1.0 - KERNEL_FLOOR) * libm::exp(-0.5 * d * d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    /// Gaussian noise on reflectance channels, %.
    pub sigma_reflectance: f64,
    /// Gaussian noise on brightness temperatures, K.
    pub sigma_bt: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            sigma_reflectance: 0.5,
            sigma_bt: 0.3,
        }
    }
}

impl RenderConfig {
    pub fn noiseless() -> Self {
        Self {
            sigma_reflectance: 0.0,
            sigma_bt: 0.0,
        }
    }
}

/// Rendered scene imagery, `[channel, row, col]`.
#[derive(Clone, Debug)]
pub struct Imagery {
    pub channels: Vec<ChannelSpec>,
    pub rows: usize,
    pub cols: usize,
    pub physical: Vec<f32>,
    pub normalized: Vec<f32>,
    /// Geometry at the scene centre.
    pub geometry: Geometry,
}

/// One column as seen by one channel (physical units).
pub fn column_radiance(
    resp: &ChannelResponse,
    kind: ChannelKind,
    albedo: f64,
    surface_temp: f64,
    mu0: f64,
    re_absorption: f64,
    iwc: &[f32],
    re: &[f32],
) -> f64 {
    // layer optical depths, top-down
    let mut dtau = [0.0f64; LEVELS];
    let (mut tau, mut re_num, mut re_den) = (0.0, 0.0, 0.0);
    for k in 0..LEVELS {
        if re[k] <= 0.0 {
            continue;
        }
        let w = resp.weight(level_height_km(k));
        let path = w * iwc[k] as f64 * LEVEL_SPACING_KM * 1000.0;
        dtau[k] = resp.kappa * 1.5 * path / (re[k] as f64).max(5.0);
        tau += dtau[k];
        re_num += path * re[k] as f64;
        re_den += path;
    }
    match kind {
        ChannelKind::Reflectance => {
            if tau <= 0.0 {
                return albedo;
            }
            // large particles absorb more at the longer solar wavelengths
            let re_eff = re_num / re_den;
            let absorb = re_absorption * (re_eff / 100.0).min(1.0);
            let top = MAX_REFLECTANCE * (1.0 - absorb);
            let gain = 0.4 + 0.6 * mu0;
            albedo + (top - albedo).max(0.0) * gain * tau / (tau + TAU_HALF)
        }
        ChannelKind::BrightnessTemp => {
            let mut above = 0.0;
            let mut bt = 0.0;
            for k in 0..LEVELS {
                if dtau[k] == 0.0 {
                    continue;
                }
                let t_layer = (surface_temp - LAPSE_K_PER_KM * level_height_km(k)).max(MIN_TEMPERATURE);
                bt += t_layer * libm::exp(-above) * (1.0 - libm::exp(-dtau[k]));
                above += dtau[k];
            }
            bt + surface_temp * libm::exp(-above)
        }
    }
}

/// Renders the 11 model channels of a scene using its imager's channel table.
pub fn render_imagery(scene: &Scene, cfg: &RenderConfig) -> Imagery {
    let native = scene.satellite.native_channels();
    let mapping = satellite_mapping(scene.satellite);
    let channels: Vec<ChannelSpec> = mapping.iter().map(|&i| native[i]).collect();
    let (s, half) = (scene.size, scene.size / 2);
    let (lat, lon) = scene.grid.center(half, half);
    let geometry = Geometry::compute(scene.timestamp, lat, lon, scene.satellite);
    let mu0 = libm::cos(geometry.solar_zenith.to_radians()).max(0.05);

    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0x0bad_cafe_1234_5678);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut physical = vec![0.0f32; N_CHANNELS * s * s];
    let mut normalized = vec![0.0f32; N_CHANNELS * s * s];
    for (c, spec) in channels.iter().enumerate() {
        // the model input kind follows the reference channel
        let kind = input_kind(c);
        let resp = response(spec.wavelength_um);
        let albedo = if c < 3 { scene.albedo[c] } else { 0.0 };
        let re_absorption = if spec.wavelength_um > 1.2 { 0.4 } else { 0.0 };
        let sigma = match kind {
            ChannelKind::Reflectance => cfg.sigma_reflectance,
            ChannelKind::BrightnessTemp => cfg.sigma_bt,
        };
        for i in 0..s {
            for j in 0..s {
                let mut v = column_radiance(
                    &resp,
                    kind,
                    albedo,
                    scene.surface_temp,
                    mu0,
                    re_absorption,
                    scene.iwc_column(i, j),
                    scene.re_column(i, j),
                );
                if sigma > 0.0 {
                    v += sigma * unit.sample(&mut rng);
                }
                let idx = (c * s + i) * s + j;
                physical[idx] = v as f32;
                normalized[idx] = normalize(v, kind.variable()).expect("finite radiance") as f32;
            }
        }
    }
    Imagery {
        channels,
        rows: s,
        cols: s,
        physical,
        normalized,
        geometry,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolated_response_between_neighbours() {
        let r = response(11.4);
        assert!(r.center_km > 2.0 && r.center_km < 2.5);
        assert_eq!(response(0.47), REFERENCE_RESPONSES[0]);
    }

    #[test]
    fn clear_column_gives_surface_values() {
        let iwc = [1e-5f32; LEVELS];
        let re = [0.0f32; LEVELS];
        let r = &REFERENCE_RESPONSES;
        assert_eq!(
            column_radiance(&r[0], ChannelKind::Reflectance, 5.0, 290.0, 0.8, 0.0, &iwc, &re),
            5.0
        );
        assert_eq!(
            column_radiance(&r[8], ChannelKind::BrightnessTemp, 5.0, 290.0, 0.8, 0.0, &iwc, &re),
            290.0
        );
    }
}
