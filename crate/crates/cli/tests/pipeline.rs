//! End-to-end runs of the `slc` binary over a small synthetic corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use slc_core::models::CLASS_NAMES;
use slc_core::synthetic::write_lesion_corpus;
use tempfile::TempDir;

fn slc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slc"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn failed(out: &Output) -> String {
    assert!(!out.status.success(), "command unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Small, fast settings: tiny color model, two folds, augmentation ranges
/// gentle enough that every synthesized lesion still segments.
const FAST_CONFIG: &str = "\
model = m2-dual
seed = 11
folds = 2
epochs = 2
batch_size = 8
m2_size = 16
seg_threshold = 60
balance_target = 4
brightness_min = -10
brightness_max = 10
contrast_min = 0.85
contrast_max = 1.15
cutout_frac_max = 0.15
";

struct Workspace {
    _tmp: TempDir,
    corpus: PathBuf,
    labels: PathBuf,
    config: PathBuf,
    out: PathBuf,
}

fn workspace(config: &str) -> Workspace {
    let tmp = TempDir::new().unwrap();
    let corpus = tmp.path().join("corpus");
    fs::create_dir_all(&corpus).unwrap();
    let labels = write_lesion_corpus(&corpus, 3, 24, 5).unwrap();
    let config_path = tmp.path().join("run.conf");
    fs::write(&config_path, config).unwrap();
    let out = tmp.path().join("runs");
    Workspace { corpus, labels, config: config_path, out, _tmp: tmp }
}

fn run_dir(out: &Path) -> PathBuf {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    assert_eq!(dirs.len(), 1, "expected exactly one run directory in {}", out.display());
    dirs.pop().unwrap()
}

fn stage_args<'a>(ws: &'a Workspace, stage: &'a str) -> Vec<String> {
    vec![
        stage.to_string(),
        "--config".into(),
        ws.config.display().to_string(),
        "--out".into(),
        ws.out.display().to_string(),
    ]
}

fn run_stage(ws: &Workspace, stage: &str, extra: &[&str]) -> String {
    let mut args = stage_args(ws, stage);
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    ok(&slc(&refs))
}

#[test]
fn full_pipeline_produces_artifacts_and_deterministic_metrics() {
    let ws = workspace(FAST_CONFIG);
    let labels = ws.labels.display().to_string();
    let images = ws.corpus.display().to_string();

    let stdout = run_stage(&ws, "ingest", &["--labels", &labels, "--images", &images]);
    assert!(stdout.contains("total: 24"), "ingest output: {stdout}");

    let rd = run_dir(&ws.out);
    assert!(rd.join("config.txt").is_file());
    assert!(rd.join("ingest/manifest.csv").is_file());
    assert!(!rd.join(".lock").exists(), "lock must be released");

    run_stage(&ws, "preprocess", &[]);
    assert!(rd.join("preprocess/manifest.csv").is_file());
    assert!(rd.join("preprocess/images/les_0_0000.png").is_file());

    run_stage(&ws, "segment", &[]);
    assert!(rd.join("segment/masks/les_7_0002.png").is_file());

    let stdout = run_stage(&ws, "augment", &[]);
    // 8 classes x target 4 = 32 rows, 3 kept + 1 synthesized each.
    assert!(stdout.contains("total: 32"), "augment output: {stdout}");
    assert!(rd.join("augment/manifest.csv").is_file());
    assert!(rd.join("augment/images/manifest.csv").is_file());

    run_stage(&ws, "train", &[]);
    assert!(rd.join("train/weights.slcw").is_file());

    run_stage(&ws, "crossval", &[]);
    let metrics_path = rd.join("crossval/metrics.json");
    let first = fs::read(&metrics_path).unwrap();
    assert!(rd.join("crossval/best.slcw").is_file());

    // Same inputs, same seed: the rerun must reproduce the metrics exactly.
    run_stage(&ws, "crossval", &[]);
    let second = fs::read(&metrics_path).unwrap();
    assert_eq!(first, second, "crossval rerun changed metrics.json");

    let stdout = run_stage(&ws, "evaluate", &[]);
    assert!(rd.join("evaluate/report.json").is_file());
    assert!(stdout.contains("accuracy"), "evaluate output: {stdout}");

    let sample = ws.corpus.join("les_2_0001.png").display().to_string();
    let stdout = run_stage(&ws, "predict", &["--image", &sample]);
    let line = stdout.trim();
    let fields: Vec<&str> = line.split(',').collect();
    assert_eq!(fields.len(), 1 + CLASS_NAMES.len(), "predict line: {line}");
    assert!(CLASS_NAMES.contains(&fields[0]), "predict class: {line}");
    let sum: f32 = fields[1..].iter().map(|p| p.parse::<f32>().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-3, "probabilities sum to {sum}");
}

#[test]
fn stages_demand_their_upstream_manifest() {
    let ws = workspace(FAST_CONFIG);
    let stderr = {
        let args = stage_args(&ws, "preprocess");
        let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        failed(&slc(&refs))
    };
    assert!(
        stderr.contains("ingest") && stderr.contains("manifest.csv"),
        "stderr should name the missing upstream artifact: {stderr}"
    );
}

#[test]
fn leftover_lock_blocks_mutating_stages() {
    let ws = workspace(FAST_CONFIG);
    let labels = ws.labels.display().to_string();
    let images = ws.corpus.display().to_string();
    run_stage(&ws, "ingest", &["--labels", &labels, "--images", &images]);

    let rd = run_dir(&ws.out);
    fs::write(rd.join(".lock"), b"").unwrap();
    let args = stage_args(&ws, "preprocess");
    let refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    let stderr = failed(&slc(&refs));
    assert!(stderr.contains(".lock"), "stderr should mention the lock: {stderr}");

    fs::remove_file(rd.join(".lock")).unwrap();
    run_stage(&ws, "preprocess", &[]);
}

#[test]
fn grayscale_model_runs_through_train_and_predict() {
    let config = "\
model = m1
seed = 7
epochs = 2
batch_size = 8
m1_size = 32
seg_threshold = 60
balance_target = 4
brightness_min = -10
brightness_max = 10
contrast_min = 0.85
contrast_max = 1.15
cutout_frac_max = 0.15
";
    let ws = workspace(config);
    let labels = ws.labels.display().to_string();
    let images = ws.corpus.display().to_string();
    run_stage(&ws, "ingest", &["--labels", &labels, "--images", &images]);
    run_stage(&ws, "preprocess", &[]);
    run_stage(&ws, "segment", &[]);
    run_stage(&ws, "augment", &[]);
    run_stage(&ws, "train", &[]);

    let sample = ws.corpus.join("les_5_0000.png").display().to_string();
    let stdout = run_stage(&ws, "predict", &["--image", &sample]);
    assert_eq!(stdout.trim().split(',').count(), 1 + CLASS_NAMES.len());
}
