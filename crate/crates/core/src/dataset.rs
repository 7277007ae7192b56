//! Dataset generation: scenes, imagery, curtains and colocated samples on disk.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channels::N_CHANNELS;
use crate::coloc::{colocate, extract_patch, passes_cloudy_filter, Sample, SampleMeta, CLOUDY_THRESHOLD, N_VARS};
use crate::cvt::{read_f32, write_tensor, CvtArray, CvtData};
use crate::error::{io_err, CoreError, Result};
use crate::geo::{GeoGrid, Geometry};
use crate::heights::LEVELS;
use crate::manifest::{assign_split, Manifest, SampleRecord, SceneKind, SceneRecord};
use crate::synth::{
    generate_scene, random_track, render_imagery, sample_track, ProfileCurtain, RenderConfig, SceneConfig, TrackSpec,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateConfig {
    pub n_scenes: usize,
    /// Probability that a scene is a storm; 0 gives general scenes only.
    pub storm_fraction: f64,
    pub seed: u64,
    pub scene: SceneConfig,
    pub patch_size: usize,
    pub sigma_reflectance: f64,
    pub sigma_bt: f64,
    pub cloudy_threshold: f64,
    pub workers: usize,
}

impl GenerateConfig {
    pub fn desk(n_scenes: usize, seed: u64) -> Self {
        Self {
            n_scenes,
            storm_fraction: 0.0,
            seed,
            scene: SceneConfig::desk(),
            patch_size: 64,
            sigma_reflectance: RenderConfig::default().sigma_reflectance,
            sigma_bt: RenderConfig::default().sigma_bt,
            cloudy_threshold: CLOUDY_THRESHOLD,
            workers: 1,
        }
    }

    pub fn full(n_scenes: usize, seed: u64) -> Self {
        Self {
            scene: SceneConfig::full(),
            patch_size: 256,
            ..Self::desk(n_scenes, seed)
        }
    }

    fn render(&self) -> RenderConfig {
        RenderConfig {
            sigma_reflectance: self.sigma_reflectance,
            sigma_bt: self.sigma_bt,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn scene_seed(seed: u64, k: usize) -> u64 {
    splitmix(splitmix(seed) ^ k as u64)
}

pub fn scene_kind(seed: u64, k: usize, storm_fraction: f64) -> SceneKind {
    let u = (splitmix(scene_seed(seed, k) ^ 0x57_0e3) >> 11) as f64 / (1u64 << 53) as f64;
    if u < storm_fraction {
        SceneKind::Storm
    } else {
        SceneKind::General
    }
}

pub fn scene_id(k: usize) -> String {
    format!("scene_{k:05}")
}

pub fn sample_id(k: usize) -> String {
    format!("sample_{k:05}")
}

/// Everything derived from one scene, in memory.
pub struct SceneProducts {
    pub record: SceneRecord,
    pub track: TrackSpec,
    pub image: Vec<f32>,
    pub grid: GeoGrid,
    pub geometry: Geometry,
    pub curtain: ProfileCurtain,
    /// `None` when the track patch could not be cut.
    pub sample: Option<Sample>,
}

/// Generates scene `k`: volume, imagery, one track, its curtain and the
/// patch centred on the track midpoint.
pub fn build_scene(cfg: &GenerateConfig, k: usize) -> Result<SceneProducts> {
    let seed = scene_seed(cfg.seed, k);
    let kind = scene_kind(cfg.seed, k, cfg.storm_fraction);
    let scene = generate_scene(seed, kind, &cfg.scene);
    let imagery = render_imagery(&scene, &cfg.render());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x07ac_c0de);
    let track = random_track(scene.size, &mut rng);
    let curtain = sample_track(&scene, &track)?;
    let map = colocate(&curtain, &scene.grid);
    let split = assign_split(scene.timestamp);
    let sample = match map.midpoint() {
        Some(center) => {
            let (lat, lon) = scene.grid.center(center.0, center.1);
            let meta = SampleMeta {
                sample_id: sample_id(k),
                satellite: scene.satellite,
                kind,
                split,
                geometry: Geometry::compute(scene.timestamp, lat, lon, scene.satellite),
                scene_seed: seed,
            };
            match extract_patch(&imagery.normalized, &scene.grid, &map, center, cfg.patch_size, meta) {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!("scene {k}: {e}");
                    None
                }
            }
        }
        None => None,
    };
    Ok(SceneProducts {
        record: SceneRecord {
            scene_id: scene_id(k),
            path: format!("scenes/{}", scene_id(k)),
            satellite: scene.satellite,
            timestamp: scene.timestamp,
            split,
            kind,
            seed,
        },
        track,
        image: imagery.normalized,
        grid: scene.grid,
        geometry: imagery.geometry,
        curtain,
        sample,
    })
}

#[derive(Serialize, Deserialize)]
struct SceneSidecar {
    record: SceneRecord,
    track: TrackSpec,
    grid: GeoGrid,
    geometry: Geometry,
}

fn write_scene(root: &Path, p: &SceneProducts) -> Result<()> {
    let dir = root.join(&p.record.path);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let (r, c) = (p.grid.rows, p.grid.cols);
    write_tensor(
        &dir.join("image.cvt"),
        &CvtArray::f32(vec![N_CHANNELS, r, c], p.image.clone())?,
    )?;
    let n = p.curtain.len();
    let mut prof = Vec::with_capacity(n * N_VARS * LEVELS);
    for l in 0..n {
        for v in 0..N_VARS {
            prof.extend_from_slice(p.curtain.column(v, l));
        }
    }
    write_tensor(&dir.join("curtain.cvt"), &CvtArray::f32(vec![n, N_VARS, LEVELS], prof)?)?;
    let fps: Vec<f64> = p
        .curtain
        .footprints
        .iter()
        .flat_map(|f| [f.lat, f.lon, f.time])
        .collect();
    write_tensor(
        &dir.join("footprints.cvt"),
        &CvtArray::new(vec![n, 3], CvtData::F64(fps))?,
    )?;
    let types: Vec<u8> = p.curtain.cloud_type.iter().map(|t| t.code()).collect();
    write_tensor(
        &dir.join("curtain_type.cvt"),
        &CvtArray::new(vec![n], CvtData::U8(types))?,
    )?;
    let side = SceneSidecar {
        record: p.record.clone(),
        track: p.track,
        grid: p.grid,
        geometry: p.geometry,
    };
    let path = dir.join("meta.json");
    fs::write(&path, serde_json::to_string_pretty(&side)?).map_err(io_err(&path))
}

type Outcome = (SceneRecord, Option<SampleRecord>);

fn process(root: &Path, cfg: &GenerateConfig, k: usize) -> Result<Outcome> {
    let p = build_scene(cfg, k)?;
    write_scene(root, &p)?;
    let mut rec = None;
    if let Some(s) = &p.sample {
        let frac = s.cloudy_fraction();
        // storm samples are evaluation-only and skip the filter
        let keep = p.record.kind == SceneKind::Storm || passes_cloudy_filter(frac, cfg.cloudy_threshold);
        if keep {
            let path = format!("samples/{}", s.meta.sample_id);
            s.save(&root.join(&path))?;
            rec = Some(SampleRecord {
                sample_id: s.meta.sample_id.clone(),
                path,
                satellite: s.meta.satellite,
                timestamp: s.meta.geometry.timestamp,
                split: s.meta.split,
                kind: s.meta.kind,
                cloudy_fraction: frac,
                track_pixels: s.n_track(),
            });
        } else {
            log::debug!("{}: cloudy fraction {frac:.2} below threshold", s.meta.sample_id);
        }
    }
    Ok((p.record, rec))
}

/// Writes `n_scenes` scenes and their samples under `root` and returns the
/// saved manifest. Output is identical for any worker count.
pub fn generate_dataset(root: &Path, cfg: &GenerateConfig) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut manifest = Manifest::new(cfg.patch_size, cfg.scene.size);
    if cfg.n_scenes == 0 {
        log::warn!("no scenes requested; writing an empty manifest");
        manifest.save(root)?;
        return Ok(manifest);
    }
    let workers = cfg.workers.clamp(1, cfg.n_scenes);
    let mut results: Vec<Option<Result<Outcome>>> = (0..cfg.n_scenes).map(|_| None).collect();
    if workers == 1 {
        for (k, slot) in results.iter_mut().enumerate() {
            *slot = Some(process(root, cfg, k));
        }
    } else {
        let chunks: Vec<Vec<(usize, Result<Outcome>)>> = std::thread::scope(|sc| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    sc.spawn(move || {
                        (w..cfg.n_scenes)
                            .step_by(workers)
                            .map(|k| (k, process(root, cfg, k)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        });
        for (k, r) in chunks.into_iter().flatten() {
            results[k] = Some(r);
        }
    }
    for r in results {
        let (scene, sample) = r.expect("every scene processed")?;
        manifest.scenes.push(scene);
        manifest.samples.extend(sample);
    }
    log::info!(
        "generated {} scenes, {} samples kept",
        manifest.scenes.len(),
        manifest.samples.len()
    );
    manifest.validate()?;
    manifest.save(root)?;
    Ok(manifest)
}

/// Normalised `[channel, row, col]` imagery of a stored scene.
pub fn load_scene_image(root: &Path, record: &SceneRecord) -> Result<(usize, usize, Vec<f32>)> {
    let path: PathBuf = root.join(&record.path).join("image.cvt");
    let (shape, data) = read_f32(&path)?;
    match shape[..] {
        [c, r, w] if c == N_CHANNELS => Ok((r, w, data)),
        _ => Err(CoreError::Format {
            path,
            detail: format!("scene image has shape {shape:?}"),
        }),
    }
}

/// Pixel grid and centre geometry of a stored scene.
pub fn load_scene_meta(root: &Path, record: &SceneRecord) -> Result<(GeoGrid, Geometry)> {
    let path = root.join(&record.path).join("meta.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let side: SceneSidecar = serde_json::from_str(&text)?;
    Ok((side.grid, side.geometry))
}

pub fn load_sample(root: &Path, record: &SampleRecord) -> Result<Sample> {
    Sample::load(&root.join(&record.path))
}
