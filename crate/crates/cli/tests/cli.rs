use std::path::Path;
use std::process::Command;

use clap::Parser;
use cloudvol::config::Cli;
use cloudvol::CliError;
use cloudvol_core::cvt::{read_f32, write_f32};
use cloudvol_core::manifest::{Manifest, SceneKind, Split};
use cloudvol_core::metrics::MetricReport;

fn run(args: &[&str]) -> Result<(), CliError> {
    let mut full = vec!["cloudvol"];
    full.extend_from_slice(args);
    cloudvol::run(Cli::try_parse_from(full).expect("arguments parse"))
}

fn exit_code(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_cloudvol"))
        .args(args)
        .env("RUST_LOG", "off")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn args<'a>(cmd: &'a str, common: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(common);
    v.extend_from_slice(extra);
    v
}

fn generate(root: &Path) -> Manifest {
    run(&[
        "generate",
        "--data-dir",
        s(root),
        "--scenes",
        "12",
        "--seed",
        "21",
        "--storm-fraction",
        "0.25",
    ])
    .unwrap();
    Manifest::load(root).unwrap()
}

#[test]
fn unet_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ckpt = tmp.path().join("ckpt");
    let reports = tmp.path().join("reports");
    let m = generate(&data);
    assert!(m.samples.iter().any(|r| r.split == Split::Train));
    assert!(m.samples.iter().any(|r| r.split == Split::Test));

    let common = [
        "--data-dir",
        s(&data),
        "--checkpoint-dir",
        s(&ckpt),
        "--report-dir",
        s(&reports),
        "--model",
        "unet",
    ];
    let a = args("finetune", &common, &["--epochs", "1", "--deterministic"]);
    run(&a).unwrap();
    assert!(ckpt.join("index.json").exists());
    let log = std::fs::read_to_string(reports.join("finetune_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let a = args("evaluate", &common, &["--split", "test", "--bin-deg", "2"]);
    run(&a).unwrap();
    let report: MetricReport = serde_json::from_slice(&std::fs::read(reports.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.variables.len(), 3);
    assert!(std::fs::read_to_string(reports.join("report.csv"))
        .unwrap()
        .starts_with("variable,"));
    for v in ["z", "iwc", "re"] {
        let (shape, _) = read_f32(&reports.join(format!("spatial_{v}.cvt"))).unwrap();
        assert_eq!(shape.len(), 2);
        assert!(reports.join(format!("spatial_{v}.pgm")).exists());
    }

    let id = m
        .samples
        .iter()
        .find(|r| r.split == Split::Test)
        .unwrap()
        .sample_id
        .clone();
    let out = tmp.path().join("vol.cvt");
    let a = args("predict", &common, &["--sample", &id, "--out", s(&out)]);
    run(&a).unwrap();
    let (shape, data_out) = read_f32(&out).unwrap();
    assert_eq!(shape, vec![3, 80, 64, 64]);
    assert!(data_out.iter().all(|v| v.is_finite()));
    assert!(out.with_extension("json").exists());
    // the Z block lies in dBZ
    assert!(data_out[..80 * 64 * 64].iter().all(|&z| (-30.0..=20.0).contains(&z)));

    // the same patch as a bare image with explicit geometry
    let sample =
        cloudvol_core::dataset::load_sample(&data, m.samples.iter().find(|r| r.sample_id == id).unwrap()).unwrap();
    let img = tmp.path().join("patch.cvt");
    write_f32(&img, &[11, 64, 64], &sample.image).unwrap();
    let out2 = tmp.path().join("vol2.cvt");
    let a = args(
        "predict",
        &common,
        &[
            "--image",
            s(&img),
            "--lat",
            "-12.5",
            "--lon",
            "40",
            "--time",
            "2020-03-28T12:00:00Z",
            "--out",
            s(&out2),
        ],
    );
    run(&a).unwrap();
    assert_eq!(read_f32(&out2).unwrap().0, vec![3, 80, 64, 64]);

    let a = args("render", &common, &["--sample", &id]);
    run(&a).unwrap();
    for v in ["z", "iwc", "re"] {
        let pgm = std::fs::read(reports.join(format!("curtain_{id}_{v}.pgm"))).unwrap();
        assert!(pgm.starts_with(b"P5\n"));
    }
    assert!(reports.join(format!("maxcol_{id}_z.pgm")).exists());

    // a NaN input patch is a numerical failure
    let mut bad = sample.image.clone();
    bad[100] = f32::NAN;
    write_f32(&img, &[11, 64, 64], &bad).unwrap();
    let a = args(
        "predict",
        &common,
        &[
            "--image",
            s(&img),
            "--lat",
            "0",
            "--lon",
            "0",
            "--time",
            "2020-03-28T12:00:00Z",
        ],
    );
    assert_eq!(exit_code(&a), 4);
}

#[test]
fn swin_pretrain_then_finetune_and_storm_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let pre = tmp.path().join("pre");
    let fine = tmp.path().join("fine");
    let reports = tmp.path().join("reports");
    let m = generate(&data);
    run(&[
        "pretrain",
        "--data-dir",
        s(&data),
        "--checkpoint-dir",
        s(&pre),
        "--report-dir",
        s(&reports),
        "--epochs",
        "1",
    ])
    .unwrap();
    let ppm = std::fs::read(reports.join("triptych_0.ppm")).unwrap();
    assert!(ppm.starts_with(b"P6\n194 64\n255\n"));
    run(&[
        "finetune",
        "--data-dir",
        s(&data),
        "--checkpoint-dir",
        s(&fine),
        "--report-dir",
        s(&reports),
        "--epochs",
        "1",
        "--pretrained",
        s(&pre),
    ])
    .unwrap();

    // storm scenes never enter training, so any split with one will do
    let split = [(Split::Test, "test"), (Split::Val, "val"), (Split::Train, "train")]
        .into_iter()
        .find(|(sp, _)| m.samples.iter().any(|r| r.kind == SceneKind::Storm && r.split == *sp))
        .expect("a storm sample")
        .1;
    run(&[
        "evaluate",
        "--data-dir",
        s(&data),
        "--checkpoint-dir",
        s(&fine),
        "--report-dir",
        s(&reports),
        "--kind",
        "storm",
        "--split",
        split,
    ])
    .unwrap();
    let report: MetricReport = serde_json::from_slice(&std::fs::read(reports.join("report.json")).unwrap()).unwrap();
    assert!(report.subset.contains("tc-analog"), "{}", report.subset);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let nowhere = tmp.path().join("nowhere");
    // no dataset yet
    assert_eq!(
        exit_code(&["finetune", "--data-dir", s(&nowhere), "--model", "unet"]),
        3
    );
    assert_eq!(exit_code(&["evaluate", "--checkpoint-dir", s(&nowhere)]), 3);
    // bad values
    assert_eq!(
        exit_code(&["generate", "--data-dir", s(&data), "--storm-fraction", "2"]),
        2
    );
    assert_eq!(exit_code(&["finetune", "--data-dir", s(&data), "--epochs", "0"]), 2);

    generate(&data);
    assert_eq!(exit_code(&["pretrain", "--data-dir", s(&data), "--model", "unet"]), 2);
    let pre = tmp.path().join("pre");
    std::fs::create_dir_all(&pre).unwrap();
    assert_eq!(
        exit_code(&[
            "finetune",
            "--data-dir",
            s(&data),
            "--model",
            "unet",
            "--pretrained",
            s(&pre)
        ]),
        2
    );

    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "epochs = 1\nmystery = 3\n").unwrap();
    assert_eq!(exit_code(&["--config", s(&cfg), "generate", "--data-dir", s(&data)]), 2);
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("from_file");
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, format!("data_dir = {:?}\nscenes = 2\nseed = 4\n", s(&data))).unwrap();
    run(&["--config", s(&cfg), "generate"]).unwrap();
    assert_eq!(Manifest::load(&data).unwrap().scenes.len(), 2);
    // flags override the file
    run(&["--config", s(&cfg), "generate", "--scenes", "3"]).unwrap();
    assert_eq!(Manifest::load(&data).unwrap().scenes.len(), 3);
    run(&["generate", "--data-dir", s(&tmp.path().join("empty")), "--scenes", "0"]).unwrap();
}
