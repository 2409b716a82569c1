//! End-to-end exercise of the command-line surface on a micro scene:
//! subcommand chain, prerequisite errors, exit codes, and artifact
//! determinism across identical reruns.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nerf-stylize"))
}

fn micro_config(dir: &Path) -> std::path::PathBuf {
    let text = r#"
seed = 7
depth_tolerance_frac = 0.05

[scene]
train_views = 5
test_views = 1
width = 24
height = 24
focal = 30.0
arc_degrees = 60.0
radius = 4.0
sphere_count = 2

[styles]
count = 2
size = 24

[model]
l_pos = 4
l_dir = 1
nerf_depth = 2
nerf_width = 24
nerf_skip = 0
style_depth = 2
style_width = 16
latent_dim = 8
vae_hidden = 16
k_train = 8
k_eval = 8

[schedule]
nerf_steps = 12
vae_steps = 12
decoder_pretrain_steps = 4
mutual_steps = 6
decoder_freeze_steps = 3
nerf_batch_rays = 64
mutual_batch_rays = 16
augment_views = 5

[eval]
gaps = [1, 3]
densify = 1
"#;
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().unwrap();
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn pipeline_chain_prerequisites_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = micro_config(tmp.path());
    let cfg = cfg.to_str().unwrap();
    let out_a = tmp.path().join("a");
    let a = out_a.to_str().unwrap();

    // render before anything exists: prerequisite error naming train-nerf
    let style = out_a.join("styles/style_00.png");
    let out = bin()
        .args([
            "--config", cfg, "--out", a,
            "render", "--style", style.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("train-nerf"), "unhelpful error: {stderr}");

    // the full chain in order
    run_ok(&["--config", cfg, "--out", a, "make-scene"]);
    // evaluate before render: names the render prerequisite
    let out = bin()
        .args([
            "--config", cfg, "--out", a,
            "evaluate", "--frames", out_a.join("renders/x").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("render"));

    // mutual-train before its prerequisites names them
    let out = bin()
        .args(["--config", cfg, "--out", a, "mutual-train"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train-nerf"));

    run_ok(&["--config", cfg, "--out", a, "train-nerf"]);
    run_ok(&["--config", cfg, "--out", a, "train-vae"]);
    run_ok(&["--config", cfg, "--out", a, "pretrain-decoder"]);
    run_ok(&["--config", cfg, "--out", a, "mutual-train"]);
    run_ok(&[
        "--config", cfg, "--out", a,
        "render",
        "--style", style.to_str().unwrap(),
        "--densify", "1",
        "--name", "demo",
    ]);
    run_ok(&[
        "--config", cfg, "--out", a,
        "evaluate",
        "--frames", out_a.join("renders/demo").to_str().unwrap(),
    ]);
    assert!(out_a.join("eval/demo.csv").exists());
    assert!(out_a.join("hashes.json").exists());

    // repeating every stage with identical config and seed reproduces the
    // checkpoint hashes exactly
    let names = [
        "checkpoints/nerf.ckpt",
        "checkpoints/vae.ckpt",
        "checkpoints/decoder_pretrained.ckpt",
        "checkpoints/training_state.ckpt",
        "checkpoints/encoder.ckpt",
        "scene/manifest.json",
    ];
    let before: Vec<String> = names.iter().map(|n| sha256(&out_a.join(n))).collect();
    run_ok(&["--config", cfg, "--out", a, "make-scene"]);
    run_ok(&["--config", cfg, "--out", a, "train-nerf"]);
    run_ok(&["--config", cfg, "--out", a, "train-vae"]);
    run_ok(&["--config", cfg, "--out", a, "pretrain-decoder"]);
    run_ok(&["--config", cfg, "--out", a, "mutual-train"]);
    for (name, old) in names.iter().zip(&before) {
        let new = sha256(&out_a.join(name));
        assert_eq!(&new, old, "artifact {name} differs between identical runs");
    }

    // invalid config exits 1 with the offending field named
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[model]\nbanana = true\n").unwrap();
    let out = bin()
        .args(["--config", bad.to_str().unwrap(), "--out", a, "make-scene"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("banana"));

    // bad usage exits 1
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

fn sha256(path: &Path) -> String {
    use sha2::{Digest, Sha256};
    let bytes = std::fs::read(path).unwrap_or_else(|_| panic!("missing {}", path.display()));
    hex::encode(Sha256::digest(bytes))
}
