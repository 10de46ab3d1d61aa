use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[data]
n = 120
meta_pool = 40
min_side = 8
max_side = 10
corruption_fraction = 0.3

[model]
stem_channels = 4
stage_channels = 6
head_channels = 4
input_side = 8
aab_pool = 4

[train]
lr = 0.01
epochs_binary = 2
epochs_class = 2
epochs_reg = 2
batch_scale = 0.25

[meta]
meta_batch = 4
quota = 2
hidden = 8

[ablation]
variants = r
mrn = off, on
seeds = 1
";

fn amcr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amcr"))
        .args(["--config", dir.join("tiny.ini").to_str().unwrap(), "--out", dir.join("out").to_str().unwrap()])
        .args(args)
        .env_remove("AMCR_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = amcr(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tiny.ini"), TINY).unwrap();
    dir
}

#[test]
fn evaluate_perfect_prediction_fixture() {
    let dir = setup();
    let fixture = dir.path().join("pred.csv");
    let mut text = String::from("id,prediction,ground_truth\n");
    for (i, s) in [1.5, 7.25, 3.0, 9.0, 5.5, 0.5].iter().enumerate() {
        text += &format!("{i},{s},{s}\n");
    }
    fs::write(&fixture, text).unwrap();
    let stdout = ok(dir.path(), &["evaluate", "--predictions", fixture.to_str().unwrap()]);
    assert!(stdout.contains("srocc      1.000000"), "{stdout}");
    assert!(stdout.contains("mse        0.000000"));
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("n,mse,mae,srocc,accuracy,accuracy_err_le_1"));
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    assert_eq!(row, vec![6.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
}

#[test]
fn staged_pcr_run() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data"]);
    let manifest = d.join("out/data/manifest.csv");
    let before = fs::read(&manifest).unwrap();

    ok(d, &["train-binary"]);
    let c2 = fs::read(d.join("out/c2.ckpt")).unwrap();
    assert_eq!(&c2[..4], b"AMCR");
    ok(d, &["train-binary"]);
    assert_eq!(fs::read(d.join("out/c2.ckpt")).unwrap(), c2, "retraining is byte-identical");

    ok(d, &["pseudo-split"]);
    let split = fs::read_to_string(d.join("out/split.csv")).unwrap();
    assert!(split.starts_with("id,pseudo_label,split\n"));
    ok(d, &["--variant", "pcr", "train"]);
    assert!(d.join("out/pcr_all.ckpt").exists());

    ok(d, &["--variant", "pcr", "evaluate"]);
    let scatter = fs::read_to_string(d.join("out/scatter.csv")).unwrap();
    assert_eq!(scatter.lines().count(), 1 + 12);

    let image = d.join("out/data/images/000000.ppm");
    let score: f64 = ok(d, &["--variant", "pcr", "predict", "--image", image.to_str().unwrap()]).trim().parse().unwrap();
    assert!((0.0..=10.0).contains(&score));

    let seg = ok(d, &["report-segments"]);
    assert!(seg.contains("4.0-5.0"));
    let csv = fs::read_to_string(d.join("out/segments.csv")).unwrap();
    assert!(csv.starts_with("segment,n,correctness,error_rate\n"));
    assert_eq!(csv.lines().count(), 11);

    assert_eq!(fs::read(&manifest).unwrap(), before, "manifest untouched");
}

#[test]
fn ablation_csv_columns() {
    let dir = setup();
    ok(dir.path(), &["gen-data"]);
    ok(dir.path(), &["ablate"]);
    let csv = fs::read_to_string(dir.path().join("out/ablation.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("variant,prep,eca,mrn,seed,n,mse,mae,srocc,accuracy,accuracy_err_le_1"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("r,aab,on,off,1,"));
    assert!(rows[1].starts_with("r,aab,on,on,1,"));
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = setup();
    let d = dir.path();
    let code = |args: &[&str]| amcr(d, args).status.code();

    assert_eq!(code(&["pseudo-split"]), Some(7), "missing checkpoint");
    assert_eq!(code(&["--variant", "cr", "evaluate"]), Some(7));
    assert_eq!(code(&["train"]), Some(7), "missing manifest");

    fs::write(d.join("tiny.ini"), "[model]\nwidth = 3\n").unwrap();
    assert_eq!(code(&["gen-data"]), Some(3), "unknown key");
    fs::write(d.join("tiny.ini"), "[train]\nlr = fast\n").unwrap();
    assert_eq!(code(&["gen-data"]), Some(3));

    fs::write(d.join("tiny.ini"), TINY).unwrap();
    let bad = d.join("bad.csv");
    fs::write(&bad, "id,prediction\n1,2\n").unwrap();
    assert_eq!(code(&["evaluate", "--predictions", bad.to_str().unwrap()]), Some(5));

    let out = amcr(d, &["--variant", "q", "train"]);
    assert_eq!(out.status.code(), Some(2), "usage error");
}

#[test]
fn changed_architecture_rejects_checkpoint() {
    let dir = setup();
    let d = dir.path();
    ok(d, &["gen-data"]);
    ok(d, &["--variant", "r", "train"]);
    ok(d, &["--variant", "r", "evaluate"]);
    assert_eq!(amcr(d, &["--variant", "r", "--eca", "off", "evaluate"]).status.code(), Some(3));
}
