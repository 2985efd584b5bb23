use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
[data]
train_pairs = 8
test_pairs = 2
scale = 2
hr_size = 12

[diffusion]
timesteps = 50

[diffusion.net]
width1 = 4
width2 = 8
emb_dim = 8
hidden = 8

[diffusion.train]
steps = 4
batch = 4

[daware.net]
scale = 2
rep_dim = 2
width = 4

[daware.train]
steps = 4
batch = 4

[estimator.net]
hidden = 8

[estimator.train]
steps = 4
batch = 4

[sampling]
steps = 5
batch = 2

[evaluate]
presets = ["perturbation", "design", "baselines"]
"#;

fn dadiff(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dadiff")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    let text = format!("{}{}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
    assert!(out.status.success(), "command failed: {text}");
    text
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&dadiff(dir.path(), &["selftest", "--seed", "1"]));
    assert!(!text.contains("FAIL"));
}

#[test]
fn seed_is_required() {
    let dir = tempfile::tempdir().unwrap();
    let out = dadiff(dir.path(), &["synth", "--out", "d.dgta"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
}

#[test]
fn missing_checkpoint_names_its_path() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    let out = dadiff(dir.path(), &["evaluate", "-c", "tiny.toml", "--seed", "3", "--eps", "nowhere/eps.dgta"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/eps.dgta"));
}

#[test]
fn full_pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("tiny.toml"), TINY).unwrap();
    let base = ["-c", "tiny.toml", "--seed", "11", "--dataset", "data.dgta"];
    ok(&dadiff(d, &["synth", "-c", "tiny.toml", "--seed", "11", "--out", "data.dgta"]));
    ok(&dadiff(d, &[&["train-diffusion"][..], &base, &["--out", "eps.dgta"]].concat()));
    ok(&dadiff(d, &[&["train-daware"][..], &base, &["--out", "daware.dgta"]].concat()));
    ok(&dadiff(d, &[&["train-kernel"][..], &base, &["--out", "est.dgta"]].concat()));
    let ckpt = ["--eps", "eps.dgta", "--daware", "daware.dgta", "--estimator", "est.dgta"];
    for run in ["a", "b"] {
        ok(&dadiff(d, &[&["evaluate"][..], &base, &ckpt, &["--out-dir", run, "--save-images"]].concat()));
    }
    let a = std::fs::read(d.join("a/report.csv")).unwrap();
    let b = std::fs::read(d.join("b/report.csv")).unwrap();
    assert_eq!(a, b);
    let csv = String::from_utf8(a).unwrap();
    assert!(csv.starts_with("id,mode,alpha,perturb,psnr_db,ssim,seed,ms\n"));
    // 2 test images × (4 perturbation + 2 new design + 1 baseline) cells.
    assert_eq!(csv.lines().count(), 1 + 2 * 7);
    assert!(d.join("a/report.json").exists());
    assert!(std::fs::read_dir(d.join("a/images")).unwrap().count() == 14);

    let text = ok(&dadiff(d, &[&["sample"][..], &base, &ckpt, &["--mode", "implicit", "--alpha", "0.3", "--perturb", "false", "--index", "1", "--out", "one.pgm"]].concat()));
    assert!(text.contains("psnr"));
    let pgm = std::fs::read(d.join("one.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n12 12\n255\n"));
}
