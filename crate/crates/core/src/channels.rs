//! Imager channel tables and nearest-wavelength channel matching.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::norm::Variable;

/// Number of channels fed to the models.
pub const N_CHANNELS: usize = 11;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Satellite {
    Msg,
    Goes,
    Himawari,
    Synth,
}

impl Satellite {
    pub const GEOSTATIONARY: [Satellite; 3] = [Satellite::Msg, Satellite::Goes, Satellite::Himawari];

    /// Longitude of the sub-satellite point, degrees east.
    pub fn sub_longitude(self) -> f64 {
        match self {
            Satellite::Msg | Satellite::Synth => 0.0,
            Satellite::Goes => -75.2,
            Satellite::Himawari => 140.7,
        }
    }

    /// Native channel table of the imager.
    pub fn native_channels(self) -> Vec<ChannelSpec> {
        let table: &[f64] = match self {
            Satellite::Msg | Satellite::Synth => &SEVIRI_UM,
            Satellite::Goes => &ABI_UM,
            Satellite::Himawari => &AHI_UM,
        };
        table
            .iter()
            .enumerate()
            .map(|(i, &w)| ChannelSpec::new(self, i, w))
            .collect()
    }
}

impl fmt::Display for Satellite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Satellite::Msg => "MSG",
            Satellite::Goes => "GOES",
            Satellite::Himawari => "HIMAWARI",
            Satellite::Synth => "SYNTH",
        })
    }
}

impl FromStr for Satellite {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MSG" | "SEVIRI" => Ok(Satellite::Msg),
            "GOES" | "ABI" => Ok(Satellite::Goes),
            "HIMAWARI" | "AHI" => Ok(Satellite::Himawari),
            "SYNTH" => Ok(Satellite::Synth),
            _ => invalid(format!("unknown satellite {s}")),
        }
    }
}

/// SEVIRI central wavelengths (µm) without the HRV channel.
pub const SEVIRI_UM: [f64; 11] = [0.635, 0.81, 1.64, 3.92, 6.25, 7.35, 8.70, 9.66, 10.80, 12.00, 13.40];

/// GOES-R ABI central wavelengths (µm).
pub const ABI_UM: [f64; 16] = [
    0.47, 0.64, 0.865, 1.378, 1.61, 2.25, 3.90, 6.19, 6.93, 7.34, 8.44, 9.61, 10.33, 11.21, 12.29, 13.28,
];

/// Himawari AHI central wavelengths (µm).
pub const AHI_UM: [f64; 16] = [
    0.47, 0.51, 0.64, 0.86, 1.6, 2.3, 3.9, 6.2, 6.9, 7.3, 8.6, 9.6, 10.4, 11.2, 12.4, 13.3,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    Reflectance,
    BrightnessTemp,
}

impl ChannelKind {
    /// Solar channels below 3 µm are reflectances, the rest thermal.
    pub fn for_wavelength(um: f64) -> Self {
        if um < 3.0 {
            ChannelKind::Reflectance
        } else {
            ChannelKind::BrightnessTemp
        }
    }

    pub fn variable(self) -> Variable {
        match self {
            ChannelKind::Reflectance => Variable::Reflectance,
            ChannelKind::BrightnessTemp => Variable::BrightnessTemp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub satellite: Satellite,
    pub index: usize,
    pub wavelength_um: f64,
    pub kind: ChannelKind,
}

impl ChannelSpec {
    pub fn new(satellite: Satellite, index: usize, wavelength_um: f64) -> Self {
        Self {
            satellite,
            index,
            wavelength_um,
            kind: ChannelKind::for_wavelength(wavelength_um),
        }
    }
}

/// The reference channel set every imager is mapped onto.
pub fn reference_channels() -> Vec<ChannelSpec> {
    Satellite::Msg.native_channels()
}

/// Kind of model input channel `c` (follows the reference table).
pub fn input_kind(c: usize) -> ChannelKind {
    ChannelKind::for_wavelength(SEVIRI_UM[c])
}

// Distances in units of 0.1 nm so that equal gaps compare equal.
fn distance_key(a: f64, b: f64) -> i64 {
    ((a - b).abs() * 1e4).round() as i64
}

/// For every reference channel, the position in `source` of the channel
/// with the nearest wavelength; ties go to the lower source position.
///
/// Repeated picks are allowed and logged.
pub fn match_wavelengths(source: &[f64], reference: &[f64]) -> Result<Vec<usize>> {
    if source.len() < reference.len() {
        return invalid(format!(
            "source has {} channels, fewer than the {} reference channels",
            source.len(),
            reference.len()
        ));
    }
    if source.iter().chain(reference).any(|w| !(*w > 0.0)) {
        return invalid("wavelengths must be positive");
    }
    let mapping: Vec<usize> = reference
        .iter()
        .map(|&r| {
            let mut best = 0;
            for (i, &s) in source.iter().enumerate() {
                if distance_key(s, r) < distance_key(source[best], r) {
                    best = i;
                }
            }
            best
        })
        .collect();
    let mut seen = mapping.clone();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != mapping.len() {
        log::warn!("channel matching selected a source channel more than once: {mapping:?}");
    }
    Ok(mapping)
}

/// Maps an imager onto the 11 reference channels.
///
/// Returns indices into `source` (not channel numbers).
pub fn match_channels(source: &[ChannelSpec], reference: &[ChannelSpec]) -> Result<Vec<usize>> {
    if reference.len() != N_CHANNELS {
        return invalid(format!(
            "reference must have {N_CHANNELS} channels, got {}",
            reference.len()
        ));
    }
    let src: Vec<f64> = source.iter().map(|c| c.wavelength_um).collect();
    let rf: Vec<f64> = reference.iter().map(|c| c.wavelength_um).collect();
    match_wavelengths(&src, &rf)
}

/// Mapping of a satellite's native channels onto the reference set.
pub fn satellite_mapping(sat: Satellite) -> Vec<usize> {
    match_channels(&sat.native_channels(), &reference_channels()).expect("built-in channel tables are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_single_channel() {
        assert_eq!(match_wavelengths(&[10.3, 11.2], &[10.8]).unwrap(), vec![1]);
    }

    #[test]
    fn tie_goes_to_lower_index() {
        assert_eq!(match_wavelengths(&[10.4, 11.2], &[10.8]).unwrap(), vec![0]);
        assert_eq!(match_wavelengths(&[11.2, 10.4], &[10.8]).unwrap(), vec![0]);
    }

    #[test]
    fn identity_on_reference() {
        let m = satellite_mapping(Satellite::Msg);
        assert_eq!(m, (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_source_channels() {
        assert!(match_wavelengths(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn first_three_inputs_are_reflectances() {
        let kinds: Vec<_> = (0..N_CHANNELS).map(input_kind).collect();
        assert!(kinds[..3].iter().all(|k| *k == ChannelKind::Reflectance));
        assert!(kinds[3..].iter().all(|k| *k == ChannelKind::BrightnessTemp));
    }
}
