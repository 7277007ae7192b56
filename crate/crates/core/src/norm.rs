//! Min-max normalisation of physical quantities onto [-1, 1].

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Marks a missing value in normalised space. Lies outside [-1, 1].
pub const SENTINEL: f32 = -2.0;

pub fn is_valid(v: f32) -> bool {
    v != SENTINEL && v.is_finite()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Reflectance,
    BrightnessTemp,
    /// Radar reflectivity, dBZ.
    Z,
    /// Ice water content, g/m^3.
    Iwc,
    /// Effective radius, micrometres.
    Re,
}

/// The three profile variables in storage order.
pub const PROFILE_VARS: [Variable; 3] = [Variable::Z, Variable::Iwc, Variable::Re];

impl Variable {
    pub fn spec(self) -> NormSpec {
        match self {
            Variable::Reflectance => NormSpec::linear(0.0, 100.0),
            Variable::BrightnessTemp => NormSpec::linear(180.0, 350.0),
            Variable::Z => NormSpec::linear(-30.0, 20.0),
            Variable::Iwc => NormSpec {
                min: 1e-5,
                max: 10.0,
                log10: true,
            },
            Variable::Re => NormSpec::linear(0.0, 160.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variable::Reflectance => "reflectance",
            Variable::BrightnessTemp => "bt",
            Variable::Z => "z",
            Variable::Iwc => "iwc",
            Variable::Re => "re",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Variable::Reflectance => "%",
            Variable::BrightnessTemp => "K",
            Variable::Z => "dBZ",
            Variable::Iwc => "g/m3",
            Variable::Re => "um",
        }
    }

    /// Position among [`PROFILE_VARS`], if this is a profile variable.
    pub fn profile_index(self) -> Option<usize> {
        PROFILE_VARS.iter().position(|&v| v == self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub min: f64,
    pub max: f64,
    /// Normalise log10(value) between log10(min) and log10(max).
    pub log10: bool,
}

impl NormSpec {
    pub const fn linear(min: f64, max: f64) -> Self {
        Self { min, max, log10: false }
    }

    /// Width of the physical range, used as the data range of PSNR/SSIM.
    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    fn bounds(&self) -> (f64, f64) {
        if self.log10 {
            (self.min.log10(), self.max.log10())
        } else {
            (self.min, self.max)
        }
    }

    /// Clamps into `[min, max]`, then maps linearly (or in log10) onto [-1, 1].
    pub fn normalize(&self, value: f64) -> Result<f64> {
        if !value.is_finite() {
            return invalid(format!("cannot normalise non-finite value {value}"));
        }
        let v = value.clamp(self.min, self.max);
        let v = if self.log10 { v.log10() } else { v };
        let (lo, hi) = self.bounds();
        Ok((2.0 * (v - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0))
    }

    pub fn denormalize(&self, n: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let v = lo + (n + 1.0) * 0.5 * (hi - lo);
        let v = if self.log10 { 10f64.powf(v) } else { v };
        v.clamp(self.min, self.max)
    }
}

pub fn normalize(value: f64, var: Variable) -> Result<f64> {
    var.spec().normalize(value)
}

pub fn denormalize(n: f64, var: Variable) -> f64 {
    var.spec().denormalize(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_midpoints() {
        assert_eq!(normalize(-30.0, Variable::Z).unwrap(), -1.0);
        assert_eq!(normalize(20.0, Variable::Z).unwrap(), 1.0);
        assert_eq!(normalize(80.0, Variable::Re).unwrap(), 0.0);
        assert!(normalize(1e-2, Variable::Iwc).unwrap().abs() < 1e-12);
        assert_eq!(normalize(350.0, Variable::BrightnessTemp).unwrap(), 1.0);
    }

    #[test]
    fn out_of_range_is_clamped() {
        assert_eq!(normalize(500.0, Variable::Re).unwrap(), 1.0);
        assert_eq!(normalize(0.0, Variable::Iwc).unwrap(), -1.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(normalize(f64::NAN, Variable::Z).is_err());
        assert!(normalize(f64::INFINITY, Variable::Z).is_err());
    }
}
