//! The subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use cloudvol_core::channels::{Satellite, N_CHANNELS};
use cloudvol_core::coloc::Sample;
use cloudvol_core::cvt::{read_f32, write_f32};
use cloudvol_core::dataset::{generate_dataset, load_sample, GenerateConfig};
use cloudvol_core::geo::Geometry;
use cloudvol_core::heights::LEVELS;
use cloudvol_core::manifest::{Manifest, SceneKind, Split};
use cloudvol_core::metrics::{stratify, EvalSample, MetricReport};
use cloudvol_core::norm::denormalize;
use cloudvol_models::{SwinConfig, VolumeSpec};
use cloudvol_train::data::center_crop;
use cloudvol_train::{predict_eval, predict_volume, FineTuner, PreTrainer, SampleSet, SceneSet, TrainConfig};
use serde::Serialize;

use crate::config::{KindArg, RunConfig, Scale};
use crate::error::{io_at, CliError, Result};
use crate::render;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    fs::write(path, bytes).map_err(io_at(path))
}

fn load_manifest(run: &RunConfig) -> Result<(PathBuf, Manifest)> {
    let root = run.data_dir();
    if !root.join("manifest.json").exists() {
        return Err(CliError::Missing(format!(
            "no manifest.json in {} (run `cloudvol generate` first)",
            root.display()
        )));
    }
    let m = Manifest::load(&root)?;
    Ok((root, m))
}

fn require_checkpoint(dir: &Path) -> Result<()> {
    if dir.join("index.json").exists() {
        Ok(())
    } else {
        Err(CliError::Missing(format!("no checkpoint in {}", dir.display())))
    }
}

pub fn generate(run: &RunConfig) -> Result<Manifest> {
    let n = run.scenes.unwrap_or(100);
    let mut cfg = match run.scale() {
        Scale::Desk => GenerateConfig::desk(n, run.seed()),
        Scale::Full => GenerateConfig::full(n, run.seed()),
    };
    cfg.storm_fraction = run.storm_fraction.unwrap_or(0.1);
    cfg.workers = run.workers();
    if n == 0 {
        log::warn!("generating an empty dataset");
    }
    let root = run.data_dir();
    let m = generate_dataset(&root, &cfg)?;
    log::info!(
        "{} scenes, {} samples written to {}",
        m.scenes.len(),
        m.samples.len(),
        root.display()
    );
    Ok(m)
}

/// Default learning rate of the desk-scale models, which are small enough
/// to train stably at a higher rate than the full-size ones.
pub const DESK_LR: f64 = 1e-3;

fn train_config(run: &RunConfig, mut cfg: TrainConfig, checkpoint: PathBuf, log: PathBuf) -> TrainConfig {
    if run.scale() == Scale::Desk {
        cfg.lr = DESK_LR;
    }
    if let Some(e) = run.epochs {
        cfg.epochs = e;
    }
    if let Some(b) = run.batch_size {
        cfg.batch_size = b;
    }
    if let Some(lr) = run.lr {
        cfg.lr = lr;
    }
    cfg.deterministic = run.deterministic();
    cfg.checkpoint_dir = Some(checkpoint);
    cfg.log_path = Some(log);
    cfg
}

fn swin_config(run: &RunConfig) -> Result<SwinConfig> {
    let arch = run.architecture();
    if !arch.is_swin() {
        return Err(CliError::Config(format!("{} has no encoder to pre-train", arch.name())));
    }
    Ok(match run.scale() {
        Scale::Desk => SwinConfig::desk(arch.uses_metadata()),
        Scale::Full => SwinConfig::full(arch.uses_metadata()),
    })
}

pub fn pretrain(run: &RunConfig) -> Result<PathBuf> {
    let config = swin_config(run)?;
    let (root, m) = load_manifest(run)?;
    let train = SceneSet::load(&root, &m, Split::Train)?;
    let val = SceneSet::load(&root, &m, Split::Val)?;
    let report = run.report_dir();
    let ckpt = run.checkpoint_dir("pretrain");
    let cfg = train_config(
        run,
        TrainConfig::pretrain(run.seed()),
        ckpt.clone(),
        report.join("pretrain_log.csv"),
    );
    let mut trainer = PreTrainer::new(config, &cfg)?;
    let fit = trainer.fit(&train, &val, &cfg)?;
    log::info!(
        "best validation loss {:.5} at epoch {:?}",
        fit.best.best,
        fit.best.epoch
    );
    let size = trainer.config.image_size;
    let crops = val
        .scenes
        .iter()
        .take(4)
        .map(|s| center_crop(s, size))
        .collect::<cloudvol_train::Result<Vec<_>>>()?;
    for (k, r) in trainer.reconstruct(&crops)?.iter().enumerate() {
        let (w, h, img) = render::triptych(&r.masked, &r.predicted, &r.original, size);
        write(&report.join(format!("triptych_{k}.ppm")), render::ppm(w, h, &img))?;
    }
    Ok(ckpt)
}

fn volume_spec(run: &RunConfig) -> VolumeSpec {
    let (arch, n) = (run.architecture(), run.variables().len());
    match run.scale() {
        Scale::Desk => VolumeSpec::desk(arch, n),
        Scale::Full => VolumeSpec::full(arch, n),
    }
}

pub fn finetune(run: &RunConfig) -> Result<PathBuf> {
    let arch = run.architecture();
    let (root, m) = load_manifest(run)?;
    let train = SampleSet::load(&root, &m, Split::Train, Some(SceneKind::General))?;
    let val = SampleSet::load(&root, &m, Split::Val, Some(SceneKind::General))?;
    let report = run.report_dir();
    let ckpt = run.checkpoint_dir("finetune");
    let base = TrainConfig::finetune(run.seed(), arch == cloudvol_models::Architecture::Unet);
    let cfg = train_config(run, base, ckpt.clone(), report.join("finetune_log.csv"));
    let spec = volume_spec(run);
    let mut tuner = match &run.pretrained {
        Some(_) if !arch.is_swin() => {
            return Err(CliError::Config(format!(
                "{} takes no pre-trained encoder",
                arch.name()
            )));
        }
        Some(p) => {
            require_checkpoint(p)?;
            FineTuner::from_pretrained(arch, spec, run.variables(), &cfg, p)?
        }
        None => {
            if arch.is_swin() {
                log::info!("no pre-trained encoder given; training {} from scratch", arch.name());
            }
            FineTuner::new(arch, spec, run.variables(), &cfg)?
        }
    };
    let fit = tuner.fit(&train, &val, &cfg)?;
    log::info!(
        "best validation loss {:.5} at epoch {:?}",
        fit.best.best,
        fit.best.epoch
    );
    Ok(ckpt)
}

/// Samples of the configured split and kind.
fn eval_samples(run: &RunConfig, root: &Path, m: &Manifest) -> Result<Vec<Sample>> {
    let set = SampleSet::load(root, m, run.split(), run.kind().kind())?;
    if set.is_empty() {
        return Err(CliError::Missing(format!(
            "no {:?} samples of kind {:?} in the manifest",
            run.split(),
            run.kind()
        )));
    }
    Ok(set.samples)
}

/// Predictions for `samples` spread over `workers` threads. Results come
/// back in sample order whatever the worker count.
pub fn predict_parallel(
    tuner: &FineTuner,
    samples: &[Sample],
    batch: usize,
    workers: usize,
) -> Result<Vec<EvalSample>> {
    let chunk = samples.len().div_ceil(workers.max(1)).max(1);
    let parts: Vec<cloudvol_train::Result<Vec<EvalSample>>> = std::thread::scope(|s| {
        let handles: Vec<_> = samples
            .chunks(chunk)
            .map(|part| s.spawn(move || predict_eval(tuner, part, batch)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(samples.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Subset tag of a report. Storm-only evaluations are the cyclone analogue.
pub fn subset_tag(split: Split, samples: &[Sample]) -> String {
    let split = format!("{split:?}").to_lowercase();
    if samples.iter().all(|s| s.meta.kind == SceneKind::Storm) {
        format!("{split}/storm (tc-analog)")
    } else if samples.iter().all(|s| s.meta.kind == SceneKind::General) {
        format!("{split}/general")
    } else {
        format!("{split}/all")
    }
}

pub fn evaluate(run: &RunConfig) -> Result<MetricReport> {
    let ckpt = run.checkpoint_dir("finetune");
    require_checkpoint(&ckpt)?;
    let tuner = FineTuner::load(&ckpt)?;
    let (root, m) = load_manifest(run)?;
    let samples = eval_samples(run, &root, &m)?;
    let evals = predict_parallel(&tuner, &samples, 8, run.workers())?;
    let report = stratify(&evals, &tuner.vars, &subset_tag(run.split(), &samples), run.bin_deg())?;
    let dir = run.report_dir();
    write(&dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    write(&dir.join("report.csv"), report.to_csv())?;
    for v in &report.variables {
        let (rows, cols, data) = v.spatial.to_dense();
        let path = dir.join(format!("spatial_{}.cvt", v.variable));
        write_f32(&path, &[rows, cols], &data)?;
        write(&dir.join(format!("spatial_{}.pgm", v.variable)), v.spatial.to_pgm())?;
    }
    if run.kind() == KindArg::Storm {
        log::info!("storm-only report written to {}", dir.display());
    }
    Ok(report)
}

#[derive(Serialize)]
struct VolumeSidecar {
    variables: Vec<String>,
    units: Vec<String>,
    levels: usize,
    size: usize,
    source: String,
}

/// Writes `[V, 80, S, S]` in physical units and returns its path.
pub fn predict(run: &RunConfig, input: &crate::config::PredictInput) -> Result<PathBuf> {
    let ckpt = run.checkpoint_dir("finetune");
    require_checkpoint(&ckpt)?;
    let tuner = FineTuner::load(&ckpt)?;
    let (id, image, size, geometry) = if let Some(path) = &input.image {
        let (shape, data) = read_f32(path)?;
        if shape.len() != 3 || shape[0] != N_CHANNELS || shape[1] != shape[2] {
            return Err(CliError::Config(format!(
                "{}: expected [11, S, S], got {shape:?}",
                path.display()
            )));
        }
        let time = input.time.as_deref().unwrap_or_default();
        let ts = chrono::DateTime::parse_from_rfc3339(time)
            .map_err(|e| CliError::Config(format!("bad --time {time}: {e}")))?
            .timestamp();
        let sat: Satellite = input.satellite.parse()?;
        let (lat, lon) = (input.lat.unwrap_or(0.0), input.lon.unwrap_or(0.0));
        let stem = path
            .file_stem()
            .map_or("patch".into(), |s| s.to_string_lossy().into_owned());
        (stem, data, shape[1], Geometry::compute(ts, lat, lon, sat))
    } else {
        let (root, m) = load_manifest(run)?;
        let rec = match &input.sample {
            Some(id) => m.samples.iter().find(|r| &r.sample_id == id),
            None => m.samples.iter().find(|r| r.split == run.split()),
        }
        .ok_or_else(|| CliError::Missing("requested sample is not in the manifest".into()))?;
        let s = load_sample(&root, rec)?;
        (s.meta.sample_id.clone(), s.image, s.size, s.meta.geometry)
    };
    let vol = predict_volume(&tuner, &image, size, &geometry)?;
    let hw = size * size;
    let mut physical = Vec::with_capacity(vol.numel());
    for (slot, &var) in tuner.vars.iter().enumerate() {
        let block = &vol.data()[slot * LEVELS * hw..(slot + 1) * LEVELS * hw];
        physical.extend(
            block
                .iter()
                .map(|&x| denormalize((x as f64).clamp(-1.0, 1.0), var) as f32),
        );
    }
    if physical.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric(format!("non-finite prediction for {id}")));
    }
    let out = input
        .out
        .clone()
        .unwrap_or_else(|| run.report_dir().join(format!("volume_{id}.cvt")));
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    write_f32(&out, &[tuner.vars.len(), LEVELS, size, size], &physical)?;
    let side = VolumeSidecar {
        variables: tuner.vars.iter().map(|v| v.name().to_string()).collect(),
        units: tuner.vars.iter().map(|v| v.unit().to_string()).collect(),
        levels: LEVELS,
        size,
        source: id,
    };
    write(&out.with_extension("json"), serde_json::to_string_pretty(&side)?)?;
    Ok(out)
}

/// Curtain strips per variable and a max-column image per sample.
pub fn render_samples(run: &RunConfig, ids: &[String]) -> Result<Vec<PathBuf>> {
    let ckpt = run.checkpoint_dir("finetune");
    require_checkpoint(&ckpt)?;
    let tuner = FineTuner::load(&ckpt)?;
    let (root, m) = load_manifest(run)?;
    let records: Vec<_> = if ids.is_empty() {
        m.samples.iter().filter(|r| r.split == run.split()).take(3).collect()
    } else {
        ids.iter()
            .map(|id| {
                m.samples
                    .iter()
                    .find(|r| &r.sample_id == id)
                    .ok_or_else(|| CliError::Missing(format!("sample {id} is not in the manifest")))
            })
            .collect::<Result<_>>()?
    };
    let dir = run.report_dir();
    let mut written = Vec::new();
    for rec in records {
        let s = load_sample(&root, rec)?;
        let vol = predict_volume(&tuner, &s.image, s.size, &s.meta.geometry)?;
        let cols = cloudvol_train::track_columns(vol.data(), &s, tuner.vars.len());
        let nv = tuner.vars.len();
        for (slot, var) in tuner.vars.iter().enumerate() {
            let vi = var.profile_index().expect("profile variable");
            let target: Vec<f32> = (0..s.n_track()).flat_map(|p| s.target_column(p, vi).to_vec()).collect();
            let pred: Vec<f32> = (0..s.n_track())
                .flat_map(|p| cols[(p * nv + slot) * LEVELS..(p * nv + slot + 1) * LEVELS].to_vec())
                .collect();
            let (w, h, img) = render::curtain_strip(&target, &pred);
            let path = dir.join(format!("curtain_{}_{}.pgm", s.meta.sample_id, var.name()));
            write(&path, render::pgm(w, h, &img))?;
            written.push(path);
        }
        let hw = s.size * s.size;
        let img = render::max_column(&vol.data()[..LEVELS * hw], s.size);
        let path = dir.join(format!("maxcol_{}_{}.pgm", s.meta.sample_id, tuner.vars[0].name()));
        write(&path, render::pgm(s.size, s.size, &img))?;
        written.push(path);
    }
    Ok(written)
}
