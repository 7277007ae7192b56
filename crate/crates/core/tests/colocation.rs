use chrono::{Datelike, TimeZone, Utc};
use cloudvol_core::channels::N_CHANNELS;
use cloudvol_core::coloc::{colocate, extract_patch, Sample, SampleMeta, N_VARS};
use cloudvol_core::dataset::{build_scene, generate_dataset, load_sample, GenerateConfig};
use cloudvol_core::geo::Geometry;
use cloudvol_core::heights::LEVELS;
use cloudvol_core::manifest::{assign_split, split_for_day, Manifest, SceneKind, Split};
use cloudvol_core::norm::{normalize, Variable, PROFILE_VARS};
use cloudvol_core::synth::{generate_scene, render_imagery, sample_track, RenderConfig, SceneConfig, TrackSpec};

fn small() -> SceneConfig {
    SceneConfig {
        size: 48,
        resolution_deg: 0.03,
    }
}

fn meta() -> SampleMeta {
    SampleMeta {
        sample_id: "t".into(),
        satellite: cloudvol_core::channels::Satellite::Msg,
        kind: SceneKind::General,
        split: Split::Train,
        geometry: Geometry::compute(1_595_656_800, 0.0, 0.0, cloudvol_core::channels::Satellite::Msg),
        scene_seed: 0,
    }
}

#[test]
fn single_footprint_pixels_round_trip_the_volume() {
    let s = generate_scene(8, SceneKind::General, &small());
    for track in [
        TrackSpec {
            entry: (20.0, 0.0),
            exit: (20.0, 47.0),
            interval: 1.0,
        },
        TrackSpec {
            entry: (0.0, 0.0),
            exit: (47.0, 47.0),
            interval: std::f64::consts::SQRT_2,
        },
    ] {
        let c = sample_track(&s, &track).unwrap();
        let m = colocate(&c, &s.grid);
        assert_eq!(m.skipped, 0);
        assert!(m.footprints.iter().all(|&n| n == 1));
        for (p, &(i, j)) in m.pixels.iter().enumerate() {
            for (v, var) in PROFILE_VARS.iter().enumerate() {
                let col = match var {
                    Variable::Z => s.z_column(i, j),
                    Variable::Iwc => s.iwc_column(i, j),
                    _ => s.re_column(i, j),
                };
                let expect: Vec<f32> = col.iter().map(|&x| normalize(x as f64, *var).unwrap() as f32).collect();
                assert_eq!(m.column(p, v), &expect[..]);
            }
            assert_eq!(m.cloud_type[p], s.column_type[i * s.size + j]);
        }
    }
}

#[test]
fn dense_tracks_average_repeated_columns_exactly() {
    let s = generate_scene(3, SceneKind::Storm, &small());
    let track = TrackSpec {
        entry: (-0.5, 10.0),
        exit: (47.5, 30.0),
        interval: 0.37,
    };
    let c = sample_track(&s, &track).unwrap();
    let m = colocate(&c, &s.grid);
    assert!(m.footprints.iter().any(|&n| n > 1));
    for (p, &(i, j)) in m.pixels.iter().enumerate() {
        let expect: Vec<f32> = s
            .z_column(i, j)
            .iter()
            .map(|&x| normalize(x as f64, Variable::Z).unwrap() as f32)
            .collect();
        assert_eq!(m.column(p, 0), &expect[..]);
    }
    assert_eq!(colocate(&c, &s.grid), m);
}

#[test]
fn patch_mask_covers_exactly_the_track() {
    let s = generate_scene(4, SceneKind::General, &small());
    let img = render_imagery(&s, &RenderConfig::noiseless());
    let track = TrackSpec {
        entry: (0.0, 0.0),
        exit: (47.0, 47.0),
        interval: std::f64::consts::SQRT_2,
    };
    let m = colocate(&sample_track(&s, &track).unwrap(), &s.grid);
    let sample = extract_patch(&img.normalized, &s.grid, &m, (24, 24), 32, meta()).unwrap();
    let mask = sample.mask();
    for i in 0..32 {
        for j in 0..32 {
            assert_eq!(mask[i * 32 + j], i == j, "({i},{j})");
        }
    }
    assert_eq!(sample.n_track(), 32);
    // patch pixels match the source image
    for c in 0..N_CHANNELS {
        assert_eq!(
            sample.image[(c * 32 + 5) * 32 + 7],
            img.normalized[(c * 48 + 13) * 48 + 15]
        );
    }
    let dense = sample.dense_targets(&PROFILE_VARS).unwrap();
    let hw = 32 * 32;
    for ch in 0..N_VARS * LEVELS {
        for k in 0..hw {
            assert_eq!(dense[ch * hw + k] == cloudvol_core::norm::SENTINEL, !mask[k]);
        }
    }
}

#[test]
fn patch_errors() {
    let s = generate_scene(4, SceneKind::General, &small());
    let img = render_imagery(&s, &RenderConfig::noiseless());
    let track = TrackSpec {
        entry: (0.0, 2.0),
        exit: (47.0, 2.0),
        interval: 1.0,
    };
    let m = colocate(&sample_track(&s, &track).unwrap(), &s.grid);
    assert!(extract_patch(&img.normalized, &s.grid, &m, (10, 24), 32, meta()).is_err());
    assert!(extract_patch(&img.normalized, &s.grid, &m, (24, 40), 32, meta()).is_err());
    // window far from the track column
    assert!(extract_patch(&img.normalized, &s.grid, &m, (24, 30), 16, meta()).is_err());
}

#[test]
fn split_rule_day_sweep() {
    for day in 1..=31u32 {
        let expect = match day {
            2..=22 => Split::Train,
            24..=26 => Split::Val,
            28..=31 => Split::Test,
            _ => Split::Excluded,
        };
        assert_eq!(split_for_day(day), expect, "day {day}");
        let ts = Utc.with_ymd_and_hms(2020, 1, day, 12, 0, 0).unwrap().timestamp();
        assert_eq!(assign_split(ts), expect);
    }
}

#[test]
fn generated_dataset_is_consistent_and_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut cfg = GenerateConfig::desk(10, 7);
    cfg.storm_fraction = 0.3;
    let m = generate_dataset(a.path(), &cfg).unwrap();
    cfg.workers = 3;
    generate_dataset(b.path(), &cfg).unwrap();
    let text_a = std::fs::read(a.path().join("manifest.json")).unwrap();
    assert_eq!(text_a, std::fs::read(b.path().join("manifest.json")).unwrap());

    assert_eq!(m.scenes.len(), 10);
    let loaded = Manifest::load(a.path()).unwrap();
    assert_eq!(loaded, m);
    for rec in &m.samples {
        let day = Utc.timestamp_opt(rec.timestamp, 0).unwrap().day();
        assert_eq!(rec.split, split_for_day(day));
        let s: Sample = load_sample(a.path(), rec).unwrap();
        assert_eq!(s.n_track(), rec.track_pixels);
        assert_eq!(s.meta.sample_id, rec.sample_id);
        assert!(s.track.len() >= 1);
        if rec.kind == SceneKind::General {
            assert!(rec.cloudy_fraction >= 0.25);
        }
        // bundle round trip
        let k: usize = rec.sample_id[7..].parse().unwrap();
        let fresh = build_scene(&cfg, k).unwrap().sample.unwrap();
        assert_eq!(fresh, s);
    }
}

#[test]
fn storm_only_and_empty_generation() {
    let d = tempfile::tempdir().unwrap();
    let mut cfg = GenerateConfig::desk(3, 1);
    cfg.storm_fraction = 1.0;
    let m = generate_dataset(d.path(), &cfg).unwrap();
    assert!(!m.samples.is_empty());
    assert!(m.samples.iter().all(|s| s.kind == SceneKind::Storm));

    let e = tempfile::tempdir().unwrap();
    let m = generate_dataset(e.path(), &GenerateConfig::desk(0, 1)).unwrap();
    assert!(m.scenes.is_empty() && m.samples.is_empty());
    assert!(e.path().join("manifest.json").exists());
}
