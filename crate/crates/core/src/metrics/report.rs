//! Stratified metric reports and spatial RMSE grids.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{cloud_mask, column_is_cloudy_normalized, dice, mse, psnr_from_mse, ssim, Curtain2D};
use crate::cloudtype::CloudType;
use crate::coloc::N_VARS;
use crate::error::{invalid, Result};
use crate::heights::LEVELS;
use crate::norm::Variable;

/// Predictions and targets along one sample's track.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalSample {
    pub sample_id: String,
    pub lat: Vec<f64>,
    pub lon: Vec<f64>,
    pub cloud_type: Vec<CloudType>,
    /// `[column, 3, level]`, normalised.
    pub target: Vec<f32>,
    /// `[column, variables, level]`, normalised, variables in report order.
    pub pred: Vec<f32>,
}

impl EvalSample {
    pub fn columns(&self) -> usize {
        self.cloud_type.len()
    }

    fn cloudy_columns(&self) -> Vec<bool> {
        (0..self.columns())
            .map(|c| column_is_cloudy_normalized(&self.target[c * N_VARS * LEVELS..][..LEVELS]))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stratum {
    All,
    Cloudy,
    Type(CloudType),
}

impl Stratum {
    pub fn name(&self) -> String {
        match self {
            Stratum::All => "all".into(),
            Stratum::Cloudy => "cloudy".into(),
            Stratum::Type(t) => t.name().to_lowercase().replace(' ', "_"),
        }
    }
}

/// Mean and population standard deviation over samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std: f64::NAN,
                n,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumReport {
    pub stratum: String,
    /// Track columns in the stratum over all samples.
    pub columns: usize,
    pub rmse: Stat,
    pub psnr: Stat,
    pub ssim: Stat,
    pub dice: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariableReport {
    pub variable: String,
    pub unit: String,
    pub strata: Vec<StratumReport>,
    pub spatial: SpatialGrid,
}

impl VariableReport {
    pub fn stratum(&self, name: &str) -> Option<&StratumReport> {
        self.strata.iter().find(|s| s.stratum == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Free-form tag of the evaluated subset, e.g. "test" or "storm".
    pub subset: String,
    pub samples: usize,
    pub columns: usize,
    pub variables: Vec<VariableReport>,
}

#[derive(Default)]
struct Acc {
    columns: usize,
    rmse: Vec<f64>,
    psnr: Vec<f64>,
    ssim: Vec<f64>,
    dice: Vec<f64>,
}

// Metrics of one sample restricted to the chosen columns.
fn sample_metrics(pred: &Curtain2D, target: &Curtain2D, cols: &[usize]) -> Option<[f64; 4]> {
    let var = target.var;
    let mut p = Vec::with_capacity(cols.len() * LEVELS);
    let mut t = Vec::with_capacity(cols.len() * LEVELS);
    let mut valid = Vec::with_capacity(cols.len() * LEVELS);
    let fill = var.spec().min;
    for &c in cols {
        for l in 0..LEVELS {
            let k = c * LEVELS + l;
            let ok = pred.valid[k] && target.valid[k];
            valid.push(ok);
            // invalid cells carry the same value on both sides
            p.push(if ok { pred.values[k] } else { fill });
            t.push(if ok { target.values[k] } else { fill });
        }
    }
    let m = mse(&p, &t, &valid).ok()?;
    let range = var.spec().range();
    Some([
        m.sqrt(),
        psnr_from_mse(m, range),
        ssim(&p, &t, cols.len(), LEVELS, range),
        dice(&cloud_mask(&p, &valid, var), &cloud_mask(&t, &valid, var)),
    ])
}

/// Per-variable metrics over all columns, cloudy columns and each cloud
/// type present. Each stratum aggregates per-sample values as mean ± std.
pub fn stratify(samples: &[EvalSample], vars: &[Variable], subset: &str, bin_deg: f64) -> Result<MetricReport> {
    if vars.is_empty() {
        return invalid("no variables to evaluate");
    }
    let nv = vars.len();
    for s in samples {
        let n = s.columns();
        if s.target.len() != n * N_VARS * LEVELS
            || s.pred.len() != n * nv * LEVELS
            || s.lat.len() != n
            || s.lon.len() != n
        {
            return invalid(format!("sample {} has inconsistent array sizes", s.sample_id));
        }
    }
    let mut variables = Vec::with_capacity(nv);
    for (slot, &var) in vars.iter().enumerate() {
        let Some(vi) = var.profile_index() else {
            return invalid(format!("{} is not a profile variable", var.name()));
        };
        let mut acc: BTreeMap<Stratum, Acc> = BTreeMap::new();
        for s in samples {
            let target = Curtain2D::from_normalized(&s.target, N_VARS, vi, var, &s.cloud_type);
            let pred = Curtain2D::from_normalized(&s.pred, nv, slot, var, &s.cloud_type);
            let cloudy = s.cloudy_columns();
            let mut groups: BTreeMap<Stratum, Vec<usize>> = BTreeMap::new();
            for c in 0..s.columns() {
                groups.entry(Stratum::All).or_default().push(c);
                if cloudy[c] {
                    groups.entry(Stratum::Cloudy).or_default().push(c);
                }
                groups.entry(Stratum::Type(s.cloud_type[c])).or_default().push(c);
            }
            for (stratum, cols) in groups {
                let a = acc.entry(stratum).or_default();
                a.columns += cols.len();
                if let Some([r, p, ss, d]) = sample_metrics(&pred, &target, &cols) {
                    a.rmse.push(r);
                    a.psnr.push(p);
                    a.ssim.push(ss);
                    a.dice.push(d);
                }
            }
        }
        let strata = acc
            .into_iter()
            .map(|(st, a)| StratumReport {
                stratum: st.name(),
                columns: a.columns,
                rmse: Stat::of(&a.rmse),
                psnr: Stat::of(&a.psnr),
                ssim: Stat::of(&a.ssim),
                dice: Stat::of(&a.dice),
            })
            .collect();
        variables.push(VariableReport {
            variable: var.name().to_string(),
            unit: var.unit().to_string(),
            strata,
            spatial: spatial_rmse_grid(samples, vars, slot, bin_deg)?,
        });
    }
    Ok(MetricReport {
        subset: subset.to_string(),
        samples: samples.len(),
        columns: samples.iter().map(EvalSample::columns).sum(),
        variables,
    })
}

/// Bin of a coordinate under the `(lo, hi]` convention, so points on an
/// edge fall into the lower (south or west) bin.
pub fn bin_index(x: f64, bin_deg: f64) -> i64 {
    (x / bin_deg).ceil() as i64 - 1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lat_bin: i64,
    pub lon_bin: i64,
    /// South-west corner of the bin, degrees.
    pub lat_lo: f64,
    pub lon_lo: f64,
    pub rmse: f64,
    /// Valid cells (column levels) that went into the bin.
    pub n: usize,
}

/// RMSE per lat/lon bin; only populated bins are listed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialGrid {
    pub bin_deg: f64,
    pub cells: Vec<GridCell>,
}

pub fn spatial_rmse_grid(samples: &[EvalSample], vars: &[Variable], slot: usize, bin_deg: f64) -> Result<SpatialGrid> {
    if !(bin_deg > 0.0) {
        return invalid("bin size must be positive");
    }
    let Some(&var) = vars.get(slot) else {
        return invalid(format!("variable slot {slot} out of range"));
    };
    let Some(vi) = var.profile_index() else {
        return invalid(format!("{} is not a profile variable", var.name()));
    };
    let mut bins: BTreeMap<(i64, i64), (f64, usize)> = BTreeMap::new();
    for s in samples {
        if s.pred.len() != s.columns() * vars.len() * LEVELS || s.target.len() != s.columns() * N_VARS * LEVELS {
            return invalid(format!("sample {} has inconsistent array sizes", s.sample_id));
        }
        let target = Curtain2D::from_normalized(&s.target, N_VARS, vi, var, &s.cloud_type);
        let pred = Curtain2D::from_normalized(&s.pred, vars.len(), slot, var, &s.cloud_type);
        for c in 0..s.columns() {
            let key = (bin_index(s.lat[c], bin_deg), bin_index(s.lon[c], bin_deg));
            for l in 0..LEVELS {
                let k = c * LEVELS + l;
                if pred.valid[k] && target.valid[k] {
                    let e = bins.entry(key).or_insert((0.0, 0));
                    let d = pred.values[k] - target.values[k];
                    e.0 += d * d;
                    e.1 += 1;
                }
            }
        }
    }
    Ok(SpatialGrid {
        bin_deg,
        cells: bins
            .into_iter()
            .map(|((a, b), (s, n))| GridCell {
                lat_bin: a,
                lon_bin: b,
                lat_lo: a as f64 * bin_deg,
                lon_lo: b as f64 * bin_deg,
                rmse: (s / n as f64).sqrt(),
                n,
            })
            .collect(),
    })
}

impl SpatialGrid {
    /// Dense north-up raster `(rows, cols, values)` spanning the populated
    /// bins; absent bins are NaN.
    pub fn to_dense(&self) -> (usize, usize, Vec<f32>) {
        if self.cells.is_empty() {
            return (0, 0, Vec::new());
        }
        let lat_min = self.cells.iter().map(|c| c.lat_bin).min().unwrap();
        let lat_max = self.cells.iter().map(|c| c.lat_bin).max().unwrap();
        let lon_min = self.cells.iter().map(|c| c.lon_bin).min().unwrap();
        let lon_max = self.cells.iter().map(|c| c.lon_bin).max().unwrap();
        let rows = (lat_max - lat_min + 1) as usize;
        let cols = (lon_max - lon_min + 1) as usize;
        let mut out = vec![f32::NAN; rows * cols];
        for c in &self.cells {
            let r = (lat_max - c.lat_bin) as usize;
            let k = (c.lon_bin - lon_min) as usize;
            out[r * cols + k] = c.rmse as f32;
        }
        (rows, cols, out)
    }

    /// Binary PGM (P5); RMSE scaled to 1..=255 by the maximum, absent bins 0.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (rows, cols, v) = self.to_dense();
        let max = v.iter().filter(|x| x.is_finite()).fold(0.0f32, |a, &b| a.max(b));
        let mut out = format!("P5\n{} {}\n255\n", cols, rows).into_bytes();
        out.extend(v.iter().map(|&x| {
            if !x.is_finite() {
                0
            } else if max <= 0.0 {
                1
            } else {
                (1.0 + 254.0 * x / max).round() as u8
            }
        }));
        out
    }
}

impl MetricReport {
    pub fn variable(&self, name: &str) -> Option<&VariableReport> {
        self.variables.iter().find(|v| v.variable == name)
    }

    /// One row per variable, stratum and metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("variable,stratum,metric,mean,std,n\n");
        for v in &self.variables {
            for s in &v.strata {
                for (name, st) in [("rmse", s.rmse), ("psnr", s.psnr), ("ssim", s.ssim), ("dice", s.dice)] {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        v.variable, s.stratum, name, st.mean, st.std, st.n
                    ));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edge_goes_to_lower_bin() {
        assert_eq!(bin_index(5.0, 5.0), 0);
        assert_eq!(bin_index(5.0001, 5.0), 1);
        assert_eq!(bin_index(-5.0, 5.0), -2);
        assert_eq!(bin_index(0.1, 5.0), 0);
    }

    #[test]
    fn stat_of_values() {
        let s = Stat::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 2));
    }
}
