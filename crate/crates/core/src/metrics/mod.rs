//! Curtain metrics in physical units.

mod report;

pub use report::{
    bin_index, spatial_rmse_grid, stratify, EvalSample, GridCell, MetricReport, SpatialGrid, Stat, Stratum,
    StratumReport, VariableReport,
};

use crate::cloudtype::CloudType;
use crate::error::{invalid, Result};
use crate::heights::LEVELS;
use crate::norm::{denormalize, is_valid, Variable};

/// Reflectivity at or above which a voxel is cloudy.
pub const Z_CLOUD_DBZ: f64 = -25.0;
/// IWC cloud threshold, g/m³ (the smallest value the generator calls cloud).
pub const IWC_CLOUD: f64 = 1e-4;
/// Effective radius cloud threshold, µm.
pub const RE_CLOUD: f64 = 2.0;

pub fn cloud_threshold(var: Variable) -> f64 {
    match var {
        Variable::Iwc => IWC_CLOUD,
        Variable::Re => RE_CLOUD,
        _ => Z_CLOUD_DBZ,
    }
}

/// `L x 80` curtain of one variable in physical units.
#[derive(Clone, Debug, PartialEq)]
pub struct Curtain2D {
    pub var: Variable,
    pub columns: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    pub cloud_type: Vec<CloudType>,
}

impl Curtain2D {
    /// Builds from `[column, variable, level]` normalised profiles. Values
    /// are clamped into the normalised range before conversion.
    pub fn from_normalized(
        profiles: &[f32],
        n_vars: usize,
        slot: usize,
        var: Variable,
        cloud_type: &[CloudType],
    ) -> Self {
        let columns = profiles.len() / (n_vars * LEVELS);
        let mut values = Vec::with_capacity(columns * LEVELS);
        let mut valid = Vec::with_capacity(columns * LEVELS);
        for c in 0..columns {
            let o = (c * n_vars + slot) * LEVELS;
            for &x in &profiles[o..o + LEVELS] {
                let ok = is_valid(x);
                valid.push(ok);
                values.push(if ok {
                    denormalize((x as f64).clamp(-1.0, 1.0), var)
                } else {
                    f64::NAN
                });
            }
        }
        Self {
            var,
            columns,
            values,
            valid,
            cloud_type: cloud_type.to_vec(),
        }
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c * LEVELS..(c + 1) * LEVELS]
    }
}

/// Voxel cloud mask; invalid voxels are never cloudy.
pub fn cloud_mask(values: &[f64], valid: &[bool], var: Variable) -> Vec<bool> {
    let t = cloud_threshold(var);
    values.iter().zip(valid).map(|(&v, &ok)| ok && v >= t).collect()
}

/// A column is cloudy when any valid reflectivity reaches the threshold.
pub fn column_is_cloudy(z_dbz: &[f64], valid: &[bool]) -> bool {
    cloud_mask(z_dbz, valid, Variable::Z).into_iter().any(|c| c)
}

/// Same test on a normalised reflectivity profile.
pub fn column_is_cloudy_normalized(z: &[f32]) -> bool {
    z.iter()
        .any(|&x| is_valid(x) && denormalize(x as f64, Variable::Z) >= Z_CLOUD_DBZ)
}

pub fn mse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for ((&p, &t), &m) in pred.iter().zip(target).zip(mask) {
        if m {
            s += (p - t) * (p - t);
            n += 1;
        }
    }
    if n == 0 {
        return invalid("metric over an empty mask");
    }
    Ok(s / n as f64)
}

pub fn rmse(pred: &[f64], target: &[f64], mask: &[bool]) -> Result<f64> {
    mse(pred, target, mask).map(f64::sqrt)
}

pub const PSNR_CAP_DB: f64 = 100.0;

pub fn psnr_from_mse(mse: f64, data_range: f64) -> f64 {
    let r2 = data_range * data_range;
    if mse < r2 * 1e-10 {
        return PSNR_CAP_DB;
    }
    10.0 * (r2 / mse).log10()
}

pub fn psnr(pred: &[f64], target: &[f64], mask: &[bool], data_range: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(pred, target, mask)?, data_range))
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Normalised 11x11 Gaussian window, row-major.
pub fn gaussian_window() -> Vec<f64> {
    let h = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - h;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

fn ssim_stats(x: &[f64], y: &[f64], w: &[f64], data_range: f64) -> f64 {
    let (mut mx, mut my) = (0.0, 0.0);
    for k in 0..w.len() {
        mx += w[k] * x[k];
        my += w[k] * y[k];
    }
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for k in 0..w.len() {
        let (dx, dy) = (x[k] - mx, y[k] - my);
        vx += w[k] * dx * dx;
        vy += w[k] * dy * dy;
        cxy += w[k] * dx * dy;
    }
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM over all fully contained 11x11 Gaussian windows of a
/// `rows x cols` image. Images smaller than the window use one uniform
/// window over the whole image.
pub fn ssim(pred: &[f64], target: &[f64], rows: usize, cols: usize, data_range: f64) -> f64 {
    assert_eq!(pred.len(), rows * cols);
    assert_eq!(target.len(), rows * cols);
    if rows < SSIM_WINDOW || cols < SSIM_WINDOW {
        let w = vec![1.0 / (rows * cols) as f64; rows * cols];
        return ssim_stats(pred, target, &w, data_range);
    }
    let w = gaussian_window();
    let n = SSIM_WINDOW;
    let (mut xs, mut ys) = (vec![0.0; n * n], vec![0.0; n * n]);
    let mut total = 0.0;
    for r in 0..=rows - n {
        for c in 0..=cols - n {
            for a in 0..n {
                let o = (r + a) * cols + c;
                xs[a * n..(a + 1) * n].copy_from_slice(&pred[o..o + n]);
                ys[a * n..(a + 1) * n].copy_from_slice(&target[o..o + n]);
            }
            total += ssim_stats(&xs, &ys, &w, data_range);
        }
    }
    total / ((rows - n + 1) * (cols - n + 1)) as f64
}

/// `2|A∩B| / (|A|+|B|)`; two empty masks agree perfectly.
pub fn dice(a: &[bool], b: &[bool]) -> f64 {
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        na += usize::from(x);
        nb += usize::from(y);
        inter += usize::from(x && y);
    }
    if na + nb == 0 {
        return 1.0;
    }
    2.0 * inter as f64 / (na + nb) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_mask_rules() {
        assert!(!column_is_cloudy(&[f64::NAN; 3], &[false; 3]));
        assert!(column_is_cloudy(&[-30.0, -20.0, -30.0], &[true; 3]));
        assert!(column_is_cloudy(&[-25.0], &[true]));
        assert!(!column_is_cloudy(&[-25.1], &[true]));
    }

    #[test]
    fn rmse_examples() {
        let m = [true; 2];
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0], &m).unwrap(), 0.0);
        assert_eq!(rmse(&[3.0, 4.0], &[1.0, 2.0], &m).unwrap(), 2.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0], &m).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(rmse(&[0.0], &[0.0], &[false]).is_err());
    }

    #[test]
    fn psnr_examples() {
        assert_eq!(psnr_from_mse(2500.0, 50.0), 0.0);
        assert!((psnr_from_mse(25.0, 50.0) - 20.0).abs() < 1e-12);
        assert_eq!(psnr_from_mse(0.0, 50.0), PSNR_CAP_DB);
    }

    #[test]
    fn dice_examples() {
        assert_eq!(dice(&[true, true], &[true, true]), 1.0);
        assert_eq!(dice(&[true, false], &[false, true]), 0.0);
        let a = [true, true, true, true, false, false];
        let b = [true, true, false, false, true, true];
        assert_eq!(dice(&a, &b), 0.5);
        assert_eq!(dice(&[false; 3], &[false; 3]), 1.0);
    }

    #[test]
    fn ssim_identity_and_sign() {
        let x: Vec<f64> = (0..20 * 16).map(|k| ((k * 37 % 23) as f64) - 11.0).collect();
        assert_eq!(ssim(&x, &x, 20, 16, 50.0), 1.0);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!(ssim(&neg, &x, 20, 16, 50.0) < 0.0);
    }

    #[test]
    fn window_sums_to_one() {
        let s: f64 = gaussian_window().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
