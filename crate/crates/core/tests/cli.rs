use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use histo_reid::models::Checkpoint;

const TINY: &str = r#"
seed = 3
[dataset.synthetic]
n_patients = 3
slides_per_patient = 3
resections_per_patient = 1
image_size_px = 512
[tiling]
size_px = 64
max_patches_per_slide = 12
[model]
bag_size = 6
[model.training]
learning_rate = 3e-3
max_epochs = 2
batch_size = 8
patches_per_slide_per_epoch = 6
[model.mil_training]
learning_rate = 3e-3
max_epochs = 1
[experiment]
folds = 1
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_histo-reid"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap()
}

fn tiny_config(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.toml");
    std::fs::write(&p, TINY).unwrap();
    p
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, format!("{TINY}\n[stain]\nlamda = 0.1\n")).unwrap();
    let out = run(&["synth"], &cfg, dir.path());
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("lamda") && err.contains("lambda"), "{err}");
}

#[test]
fn bad_override_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = bin().args(["synth", "--config"]).arg(&cfg).args(["--set", "nonsense"]).output().unwrap();
    assert_eq!(out.status.code(), Some(3));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_manifest_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("m.toml");
    std::fs::write(&cfg, "[dataset]\nmanifest = \"does/not/exist.csv\"\n").unwrap();
    let out = run(&["tile"], &cfg, dir.path());
    assert!(matches!(out.status.code(), Some(4) | Some(5)), "{:?}", out);
}

#[test]
fn synth_tile_and_augment_demo_write_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("o");
    for cmd in ["synth", "tile", "augment-demo"] {
        let out = run(&[cmd], &cfg, &out_dir);
        assert!(out.status.success(), "{cmd}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert!(out_dir.join("cohort/manifest.csv").exists());
    let summary = std::fs::read_to_string(out_dir.join("tiles/summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 9);
    let demo = image::open(out_dir.join("augment_demo.png")).unwrap();
    assert_eq!(demo.width(), 7 * 64 + 6 * 2);
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(out_dir.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "augment-demo");
    assert_eq!(manifest["root_seed"], 3);
}

#[test]
fn train_patch_checkpoint_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out_dir = dir.path().join("o");
    let out = run(&["train-patch"], &cfg, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = Checkpoint::load(&out_dir.join("patch_checkpoint.json")).unwrap();
    let model = ck.patch_model().unwrap();
    assert_eq!(model.n_classes(), 3);
    assert_eq!(ck.patient_index.len(), 3);
    assert!(out_dir.join("patch_history.csv").exists());
    assert!(out_dir.join("split.json").exists());
}

#[test]
fn risk_over_stdin_and_answers_file() {
    let mut child = bin()
        .arg("risk")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"y\nyes\nmaybe\ny\nn\ny\nn\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("please answer y or n"));
    assert!(text.contains("Risk level: high"), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let answers = dir.path().join("a.toml");
    std::fs::write(&answers, "phi_removed = true\npreviously_published = true\n").unwrap();
    let out = bin().arg("risk").arg("--answers").arg(&answers).output().unwrap();
    assert_eq!(out.status.code(), Some(8));
    assert!(String::from_utf8_lossy(&out.stderr).contains("same_tumor_as_published"));

    let out = bin().arg("risk").stdin(Stdio::null()).output().unwrap();
    assert_eq!(out.status.code(), Some(8));
}
