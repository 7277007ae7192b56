//! Colocation of profile curtains with imager pixels and construction of
//! fine-tuning samples.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channels::{Satellite, N_CHANNELS};
use crate::cloudtype::CloudType;
use crate::cvt::{read_tensor, write_tensor, CvtArray, CvtData};
use crate::error::{invalid, io_err, CoreError, Result};
use crate::geo::{GeoGrid, Geometry};
use crate::heights::LEVELS;
use crate::manifest::{SceneKind, Split};
use crate::metrics::{column_is_cloudy_normalized, EvalSample};
use crate::norm::{is_valid, Variable, SENTINEL};
use crate::synth::ProfileCurtain;

/// Number of profile variables carried by targets (Z, IWC, r_e).
pub const N_VARS: usize = 3;

/// Default minimum fraction of cloudy track columns.
pub const CLOUDY_THRESHOLD: f64 = 0.25;

/// Curtain values averaged onto imager pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMap {
    pub rows: usize,
    pub cols: usize,
    /// Pixels in order of their first footprint.
    pub pixels: Vec<(usize, usize)>,
    /// `[pixel, variable, level]`, normalised; sentinel where no footprint was valid.
    pub values: Vec<f32>,
    pub cloud_type: Vec<CloudType>,
    pub footprints: Vec<usize>,
    /// Footprints that fell outside the grid.
    pub skipped: usize,
}

impl TargetMap {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn column(&self, p: usize, v: usize) -> &[f32] {
        let o = (p * N_VARS + v) * LEVELS;
        &self.values[o..o + LEVELS]
    }

    /// Track pixel closest to the middle of the track.
    pub fn midpoint(&self) -> Option<(usize, usize)> {
        self.pixels.get(self.pixels.len() / 2).copied()
    }
}

// majority vote; ties go to the class seen most recently
fn vote(types: &[(CloudType, usize)]) -> CloudType {
    let mut count = [0usize; 9];
    let mut last = [0usize; 9];
    for &(t, k) in types {
        count[t.code() as usize] += 1;
        last[t.code() as usize] = last[t.code() as usize].max(k);
    }
    let best = (0..9)
        .filter(|&c| count[c] > 0)
        .max_by_key(|&c| (count[c], last[c]))
        .expect("at least one footprint");
    CloudType::from_code(best as u8).expect("valid code")
}

/// Maps every footprint to its nearest pixel centre and averages the
/// profiles of footprints sharing a pixel, level by level over valid values.
pub fn colocate(curtain: &ProfileCurtain, grid: &GeoGrid) -> TargetMap {
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut pixels = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut skipped = 0;
    for (k, fp) in curtain.footprints.iter().enumerate() {
        let Some(px) = grid.nearest(fp.lat, fp.lon) else {
            skipped += 1;
            continue;
        };
        let p = *index.entry(px).or_insert_with(|| {
            pixels.push(px);
            members.push(Vec::new());
            pixels.len() - 1
        });
        members[p].push(k);
    }
    if skipped > 0 {
        log::debug!("colocation skipped {skipped} footprints outside the grid");
    }

    let mut values = vec![SENTINEL; pixels.len() * N_VARS * LEVELS];
    let mut cloud_type = Vec::with_capacity(pixels.len());
    for (p, ks) in members.iter().enumerate() {
        for v in 0..N_VARS {
            for l in 0..LEVELS {
                let (mut sum, mut n) = (0.0f64, 0usize);
                for &k in ks {
                    let x = curtain.column(v, k)[l];
                    if is_valid(x) {
                        sum += x as f64;
                        n += 1;
                    }
                }
                if n > 0 {
                    values[(p * N_VARS + v) * LEVELS + l] = (sum / n as f64) as f32;
                }
            }
        }
        let types: Vec<(CloudType, usize)> = ks.iter().map(|&k| (curtain.cloud_type[k], k)).collect();
        cloud_type.push(vote(&types));
    }
    TargetMap {
        rows: grid.rows,
        cols: grid.cols,
        footprints: members.iter().map(Vec::len).collect(),
        pixels,
        values,
        cloud_type,
        skipped,
    }
}

/// Descriptive fields of a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub sample_id: String,
    pub satellite: Satellite,
    pub kind: SceneKind,
    pub split: Split,
    /// Acquisition time and geometry at the patch centre.
    pub geometry: Geometry,
    pub scene_seed: u64,
}

/// Imagery patch with the colocated track inside it.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub meta: SampleMeta,
    pub size: usize,
    /// `[channel, row, col]`, normalised.
    pub image: Vec<f32>,
    /// Geolocation of the patch pixels.
    pub grid: GeoGrid,
    /// Track pixels in patch coordinates.
    pub track: Vec<(usize, usize)>,
    /// `[track pixel, variable, level]`, normalised.
    pub targets: Vec<f32>,
    pub cloud_type: Vec<CloudType>,
}

/// Cuts a `size x size` window centred on `center` out of a
/// `[channel, rows, cols]` image, keeping the track pixels inside it.
pub fn extract_patch(
    image: &[f32],
    grid: &GeoGrid,
    map: &TargetMap,
    center: (usize, usize),
    size: usize,
    meta: SampleMeta,
) -> Result<Sample> {
    let (rows, cols) = (grid.rows, grid.cols);
    if image.len() != N_CHANNELS * rows * cols {
        return invalid(format!(
            "image has {} values, expected {N_CHANNELS}x{rows}x{cols}",
            image.len()
        ));
    }
    if size == 0 {
        return invalid("patch size must be positive");
    }
    let half = size / 2;
    if center.0 < half || center.1 < half || center.0 - half + size > rows || center.1 - half + size > cols {
        return invalid(format!(
            "{size}x{size} window around {center:?} leaves the {rows}x{cols} image"
        ));
    }
    let (top, left) = (center.0 - half, center.1 - half);

    let mut patch = Vec::with_capacity(N_CHANNELS * size * size);
    for c in 0..N_CHANNELS {
        for i in top..top + size {
            let o = (c * rows + i) * cols + left;
            patch.extend_from_slice(&image[o..o + size]);
        }
    }

    let mut track = Vec::new();
    let mut targets = Vec::new();
    let mut cloud_type = Vec::new();
    for (p, &(i, j)) in map.pixels.iter().enumerate() {
        if (top..top + size).contains(&i) && (left..left + size).contains(&j) {
            track.push((i - top, j - left));
            let o = p * N_VARS * LEVELS;
            targets.extend_from_slice(&map.values[o..o + N_VARS * LEVELS]);
            cloud_type.push(map.cloud_type[p]);
        }
    }
    if track.is_empty() {
        return invalid("patch contains no track pixels");
    }
    Ok(Sample {
        meta,
        size,
        image: patch,
        grid: grid.window(top, left, size, size),
        track,
        targets,
        cloud_type,
    })
}

/// Keep iff at least `threshold` of the columns are cloudy.
pub fn passes_cloudy_filter(cloudy_fraction: f64, threshold: f64) -> bool {
    cloudy_fraction >= threshold
}

pub fn cloudy_fraction_filter(sample: &Sample, threshold: f64) -> bool {
    passes_cloudy_filter(sample.cloudy_fraction(), threshold)
}

const META_FILE: &str = "meta.json";

#[derive(Serialize, Deserialize)]
struct SampleSidecar {
    meta: SampleMeta,
    size: usize,
    grid: GeoGrid,
}

impl Sample {
    pub fn n_track(&self) -> usize {
        self.track.len()
    }

    /// Normalised profile of variable `v` at track pixel `p`.
    pub fn target_column(&self, p: usize, v: usize) -> &[f32] {
        let o = (p * N_VARS + v) * LEVELS;
        &self.targets[o..o + LEVELS]
    }

    /// Row-major `size x size` track mask.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.size * self.size];
        for &(i, j) in &self.track {
            m[i * self.size + j] = true;
        }
        m
    }

    pub fn cloudy_columns(&self) -> Vec<bool> {
        (0..self.n_track())
            .map(|p| column_is_cloudy_normalized(self.target_column(p, 0)))
            .collect()
    }

    pub fn cloudy_fraction(&self) -> f64 {
        let c = self.cloudy_columns();
        c.iter().filter(|&&x| x).count() as f64 / c.len().max(1) as f64
    }

    /// Dense targets `[variable * LEVELS + level, row, col]` for the chosen
    /// variables; sentinel off the track.
    pub fn dense_targets(&self, vars: &[Variable]) -> Result<Vec<f32>> {
        let idx: Vec<usize> = vars
            .iter()
            .map(|v| {
                v.profile_index()
                    .ok_or_else(|| CoreError::Invalid(format!("{} is not a profile variable", v.name())))
            })
            .collect::<Result<_>>()?;
        let hw = self.size * self.size;
        let mut out = vec![SENTINEL; idx.len() * LEVELS * hw];
        for (p, &(i, j)) in self.track.iter().enumerate() {
            for (slot, &v) in idx.iter().enumerate() {
                for (l, &x) in self.target_column(p, v).iter().enumerate() {
                    out[(slot * LEVELS + l) * hw + i * self.size + j] = x;
                }
            }
        }
        Ok(out)
    }

    /// Pairs the targets with predictions `[track pixel, variables, level]`.
    pub fn to_eval(&self, pred: Vec<f32>) -> EvalSample {
        let (lat, lon) = self.track.iter().map(|&(i, j)| self.grid.center(i, j)).unzip();
        EvalSample {
            sample_id: self.meta.sample_id.clone(),
            lat,
            lon,
            cloud_type: self.cloud_type.clone(),
            target: self.targets.clone(),
            pred,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let s = self.size;
        write_tensor(
            &dir.join("image.cvt"),
            &CvtArray::f32(vec![N_CHANNELS, s, s], self.image.clone())?,
        )?;
        let track: Vec<i32> = self.track.iter().flat_map(|&(i, j)| [i as i32, j as i32]).collect();
        write_tensor(
            &dir.join("track.cvt"),
            &CvtArray::new(vec![self.n_track(), 2], CvtData::I32(track))?,
        )?;
        write_tensor(
            &dir.join("targets.cvt"),
            &CvtArray::f32(vec![self.n_track(), N_VARS, LEVELS], self.targets.clone())?,
        )?;
        let types: Vec<u8> = self.cloud_type.iter().map(|t| t.code()).collect();
        write_tensor(
            &dir.join("cloud_type.cvt"),
            &CvtArray::new(vec![self.n_track()], CvtData::U8(types))?,
        )?;
        let side = SampleSidecar {
            meta: self.meta.clone(),
            size: s,
            grid: self.grid,
        };
        let path = dir.join(META_FILE);
        fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(META_FILE);
        let side: SampleSidecar = serde_json::from_str(&fs::read_to_string(&path).map_err(io_err(&path))?)?;
        let s = side.size;
        let bad = |what: &str| CoreError::Format {
            path: dir.to_path_buf(),
            detail: format!("{what} has an unexpected shape"),
        };

        let image = read_tensor(&dir.join("image.cvt"))?;
        if image.shape != [N_CHANNELS, s, s] {
            return Err(bad("image"));
        }
        let track = read_tensor(&dir.join("track.cvt"))?;
        let n = *track.shape.first().ok_or_else(|| bad("track"))?;
        if track.shape != [n, 2] || n == 0 {
            return Err(bad("track"));
        }
        let targets = read_tensor(&dir.join("targets.cvt"))?;
        if targets.shape != [n, N_VARS, LEVELS] {
            return Err(bad("targets"));
        }
        let types = read_tensor(&dir.join("cloud_type.cvt"))?;
        if types.shape != [n] {
            return Err(bad("cloud_type"));
        }

        let track: Vec<(usize, usize)> = track
            .into_i32()?
            .1
            .chunks(2)
            .map(|p| (p[0] as usize, p[1] as usize))
            .collect();
        if track.iter().any(|&(i, j)| i >= s || j >= s) {
            return Err(bad("track"));
        }
        let cloud_type = types
            .into_u8()?
            .1
            .into_iter()
            .map(|c| CloudType::from_code(c).ok_or_else(|| bad("cloud_type")))
            .collect::<Result<_>>()?;
        Ok(Sample {
            meta: side.meta,
            size: s,
            image: image.into_f32()?.1,
            grid: side.grid,
            track,
            targets: targets.into_f32()?.1,
            cloud_type,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Footprint;

    fn grid(n: usize) -> GeoGrid {
        GeoGrid {
            lat0: 0.0,
            lon0: 0.0,
            dlat: 1.0,
            dlon: 1.0,
            rows: n,
            cols: n,
        }
    }

    fn curtain(points: &[(f64, f64)], z: &[f32], types: &[CloudType]) -> ProfileCurtain {
        let n = points.len();
        let mut c = ProfileCurtain {
            footprints: points
                .iter()
                .enumerate()
                .map(|(k, &(lat, lon))| Footprint {
                    lat,
                    lon,
                    time: k as f64,
                })
                .collect(),
            z: Vec::new(),
            iwc: vec![0.0; n * LEVELS],
            re: vec![0.0; n * LEVELS],
            cloud_type: types.to_vec(),
        };
        for &v in z {
            c.z.extend(std::iter::repeat_n(v, LEVELS));
        }
        c
    }

    #[test]
    fn nearest_pixel() {
        let c = curtain(&[(0.4, 0.6)], &[0.1], &[CloudType::Cirrus]);
        let m = colocate(&c, &grid(4));
        assert_eq!(m.pixels, vec![(0, 1)]);
    }

    #[test]
    fn shared_pixel_is_averaged() {
        let c = curtain(&[(1.1, 1.0), (0.9, 1.2)], &[0.2, 0.6], &[CloudType::Cirrus; 2]);
        let m = colocate(&c, &grid(4));
        assert_eq!(m.len(), 1);
        assert_eq!(m.footprints, vec![2]);
        assert!(m.column(0, 0).iter().all(|&v| (v - 0.4).abs() < 1e-7));
    }

    #[test]
    fn sentinel_levels_are_ignored() {
        let mut c = curtain(&[(1.0, 1.0), (1.0, 1.1)], &[0.2, 0.6], &[CloudType::Cirrus; 2]);
        c.z[3] = SENTINEL;
        let m = colocate(&c, &grid(4));
        assert_eq!(m.column(0, 0)[3], 0.6);
        assert!((m.column(0, 0)[4] - 0.4).abs() < 1e-7);
    }

    #[test]
    fn outside_footprints_are_counted() {
        let c = curtain(&[(-3.0, 1.0), (1.0, 1.0)], &[0.0, 0.0], &[CloudType::Cirrus; 2]);
        let m = colocate(&c, &grid(4));
        assert_eq!(m.skipped, 1);
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn tie_goes_to_latest_footprint() {
        use CloudType::*;
        assert_eq!(vote(&[(Cirrus, 0), (Cumulus, 1)]), Cumulus);
        assert_eq!(vote(&[(Cumulus, 0), (Cirrus, 1)]), Cirrus);
        assert_eq!(vote(&[(Cirrus, 0), (Cirrus, 1), (Cumulus, 2)]), Cirrus);
    }

    #[test]
    fn filter_boundary() {
        assert!(!passes_cloudy_filter(0.20, CLOUDY_THRESHOLD));
        assert!(passes_cloudy_filter(0.30, CLOUDY_THRESHOLD));
        assert!(passes_cloudy_filter(0.25, CLOUDY_THRESHOLD));
    }
}
