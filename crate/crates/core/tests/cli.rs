//! End-to-end runs of every subcommand on a small phantom.

use std::path::Path;
use std::process::Command;

use acoustic_splat::cli::run;
use acoustic_splat::ingest::{load_dataset, write_json, PhantomSpec};
use acoustic_splat::scene::load_checkpoint;
use acoustic_splat::Image;

fn small_spec() -> PhantomSpec {
    PhantomSpec {
        n_views: 9,
        width: 24,
        height: 24,
        n_layers: 3,
        n_speckle_splats: 20,
        ..Default::default()
    }
}

fn synth(dir: &Path) {
    write_json(&dir.join("spec.json"), &small_spec()).unwrap();
    let spec = dir.join("spec.json");
    let data = dir.join("data");
    assert_eq!(run(["acoustic-splat", "synth", "--spec", p(&spec), "--out", p(&data)]), 0);
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn synth_train_eval_render_gradcheck_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let data = dir.join("data");
    let ds = load_dataset(&data).unwrap();
    assert_eq!(ds.frames.len(), 9);
    assert_eq!(ds.test, vec![0, 8]);
    assert!(data.join("ground_truth.ckpt").exists());

    // The ground truth reproduces its own float frames.
    let gt = data.join("ground_truth.ckpt");
    assert_eq!(run(["acoustic-splat", "eval", "--ckpt", p(&gt), "--data", p(&data)]), 0);

    let out = dir.join("run");
    let code = run([
        "acoustic-splat", "train", "--data", p(&data), "--out", p(&out), "--preset", "low-res", "--iterations", "30", "--seed", "3",
    ]);
    assert_eq!(code, 0);
    let ckpt = out.join("ckpt_30");
    load_checkpoint(&ckpt).unwrap();
    assert!(out.join("train_log.jsonl").exists());
    assert!(out.join("config.json").exists());
    assert_eq!(run(["acoustic-splat", "eval", "--ckpt", p(&ckpt), "--data", p(&data), "--json", "--all"]), 0);

    let img = dir.join("render.png");
    assert_eq!(run(["acoustic-splat", "render", "--ckpt", p(&ckpt), "--pose", "3", "--data", p(&data), "--out", p(&img)]), 0);
    let rendered = Image::read_png(&img).unwrap();
    assert_eq!(rendered.dims(), (24, 24));
    assert!(dir.join("render_depth.ugsi").exists());

    // A pose file: camera at the origin looking down +z.
    let pose = dir.join("pose.json");
    std::fs::write(
        &pose,
        r#"{"width": 16, "height": 12, "c2w": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}"#,
    )
    .unwrap();
    let img2 = dir.join("posed.png");
    assert_eq!(run(["acoustic-splat", "render", "--ckpt", p(&ckpt), "--pose", p(&pose), "--out", p(&img2), "--exact"]), 0);
    assert_eq!(Image::read_png(&img2).unwrap().dims(), (16, 12));

    let code = run([
        "acoustic-splat", "gradcheck", "--ckpt", p(&ckpt), "--data", p(&data), "--group", "theta_x",
    ]);
    assert_eq!(code, 0);
    let code = run(["acoustic-splat", "gradcheck", "--ckpt", p(&ckpt), "--data", p(&data), "--per-group", "3"]);
    assert_eq!(code, 0);

    assert_eq!(run(["acoustic-splat", "bench", "--ckpt", p(&ckpt), "--frames", "2", "--width", "32", "--height", "32"]), 0);
    assert_eq!(run(["acoustic-splat", "bench", "--ckpt", p(&ckpt), "--frames", "1", "--data", p(&data), "--json"]), 0);
}

#[test]
fn ablate_runs_named_variant_and_all() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let data = dir.join("data");
    let out = dir.join("abl");
    let code = run([
        "acoustic-splat", "ablate", "w/o", "DAR", "--data", p(&data), "--out", p(&out), "--preset", "low-res", "--iterations", "10",
    ]);
    assert_eq!(code, 0);
    assert!(out.join("no-dar").join("ckpt_10").exists());
    let code = run(["acoustic-splat", "ablate", "--data", p(&data), "--out", p(&out), "--preset", "low-res", "--iterations", "5", "--json"]);
    assert_eq!(code, 0);
    for slug in ["full", "no-att", "no-refl-scat", "no-dar", "no-pd"] {
        assert!(out.join(slug).join("ckpt_5").exists(), "{slug}");
    }
}

#[test]
fn failures_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let missing = dir.join("nope.ckpt");
    assert_eq!(run(["acoustic-splat", "bench", "--ckpt", p(&missing)]), 1);
    assert_eq!(run(["acoustic-splat", "train"]), 2);
    assert_eq!(run(["acoustic-splat", "ablate", "w/o", "everything", "--data", p(dir), "--out", p(dir)]), 1);
    assert_eq!(run(["acoustic-splat", "--help"]), 0);

    // A corrupted checkpoint fails the header check.
    let bad = dir.join("bad.ckpt");
    std::fs::write(&bad, b"NOPE and some bytes").unwrap();
    assert_eq!(run(["acoustic-splat", "bench", "--ckpt", p(&bad)]), 1);
}

#[test]
fn gradcheck_flags_a_wrong_step_as_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir);
    let data = dir.join("data");
    let gt = data.join("ground_truth.ckpt");
    // A step this coarse leaves the linear regime, and with refinement off
    // nothing rescues it; the check must fail with 1.
    let code = run([
        "acoustic-splat", "gradcheck", "--ckpt", p(&gt), "--data", p(&data), "--group", "centers", "--step", "0.5", "--refine", "0",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn binary_exit_codes() {
    let exe = env!("CARGO_BIN_EXE_acoustic-splat");
    let status = Command::new(exe).arg("--version").status().unwrap();
    assert_eq!(status.code(), Some(0));
    let status = Command::new(exe).arg("frobnicate").output().unwrap().status;
    assert_eq!(status.code(), Some(2));
    let status = Command::new(exe).args(["eval", "--ckpt", "/nonexistent", "--data", "/nonexistent"]).output().unwrap().status;
    assert_eq!(status.code(), Some(1));
}
