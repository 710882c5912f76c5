//! Command-line front end. [`run`] parses arguments and returns the process
//! exit code: 0 on success, 1 when a command fails or a check does not pass,
//! 2 on usage errors.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use crate::autodiff::{finite_diff_check_refined, ParamGroup, ParamLayout, ParamSelector};
use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::ingest::{self, init_scene_from_anchors, load_dataset, make_phantom, write_dataset, ImageFormat, PhantomSpec};
use crate::raster::{bench, render, write_render, TileConfig};
use crate::scene::{load_checkpoint, save_checkpoint, SceneModel};
use crate::trainer::{self, evaluate_frames, run_ablation, AblationVariant, TrainConfig};

/// Gradient-check failure threshold on the relative error.
pub const GRADCHECK_TOL: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "acoustic-splat", version, about = "Differentiable Gaussian disk splatting for ultrasound-style view synthesis")]
struct Cli {
    /// Worker threads for rendering and gradients (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Ordered reductions. Always on; accepted for explicitness.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset and its ground-truth checkpoint.
    Synth(SynthArgs),
    /// Train a scene on a dataset.
    Train(TrainArgs),
    /// Train ablation variants and print their held-out metrics.
    Ablate(AblateArgs),
    /// Render a checkpoint from a pose (intensity and depth).
    Render(RenderArgs),
    /// Score a checkpoint on a dataset's held-out frames.
    Eval(EvalArgs),
    /// Compare analytic gradients against central differences.
    Gradcheck(GradcheckArgs),
    /// Measure rendering throughput.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Phantom specification (JSON); omitted fields take defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Store frames as 8-bit PNG instead of float images.
    #[arg(long)]
    png: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config preset when `--config` is absent: `default`, or `low-res` for
    /// images of about 100x100 pixels or fewer.
    #[arg(long, default_value = "default")]
    preset: Preset,
    /// Ablation variant, e.g. "w/o DAR" or "no-dar".
    #[arg(long)]
    ablate: Option<String>,
    /// Starting checkpoint; by default disks are seeded from the anchors.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Variant name; words are joined, so `w/o DAR` works unquoted. All
    /// variants run when omitted.
    variant: Vec<String>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Config preset when `--config` is absent: `default`, or `low-res` for
    /// images of about 100x100 pixels or fewer.
    #[arg(long, default_value = "default")]
    preset: Preset,
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Frame index into `--data`, or a JSON pose file.
    #[arg(long)]
    pose: String,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output image; depth is written next to it with a `_depth` suffix.
    #[arg(long)]
    out: PathBuf,
    /// Disable cutoff truncation and early termination.
    #[arg(long)]
    exact: bool,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Print one JSON record per frame instead of a table.
    #[arg(long)]
    json: bool,
    /// Score every frame, not only the held-out split.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Restrict to one parameter group (centers, tangents, scales, opacity,
    /// sh, beta, gamma, weights, theta_x, theta_y).
    #[arg(long)]
    group: Option<String>,
    /// Frame used as the target; defaults to the first training frame.
    #[arg(long)]
    frame: Option<usize>,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-4)]
    step: f64,
    /// Parameters sampled per group.
    #[arg(long, default_value_t = 24)]
    per_group: usize,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    /// Rounds of retrying rough or failing entries at a tenth of the step.
    #[arg(long, default_value_t = 2)]
    refine: usize,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 10)]
    frames: usize,
    /// Take the camera from this dataset (see `--pose`).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pose: usize,
    /// Image size when no dataset is given; the camera sits at the origin
    /// looking down +z.
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 256)]
    height: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Preset {
    Default,
    LowRes,
}

/// Pose file accepted by `render --pose`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    pub width: usize,
    pub height: usize,
    /// Row-major camera-to-world matrix.
    pub c2w: Vec<f64>,
}

/// Parses `args` (including the program name) and executes the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return 2;
        }
        // Fails only if a pool already exists, in which case it is reused.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let _ = cli.deterministic;
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Ablate(a) => ablate(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<i32> {
    let spec: PhantomSpec = match &a.spec {
        Some(p) => ingest::read_json(p)?,
        None => PhantomSpec::default(),
    };
    let (gt, ds) = make_phantom(&spec)?;
    let format = if a.png { ImageFormat::Png } else { ImageFormat::Ugsi };
    write_dataset(&ds, &a.out, format)?;
    save_checkpoint(&gt, a.out.join("ground_truth.ckpt"))?;
    ingest::write_json(&a.out.join("phantom_spec.json"), &spec)?;
    println!(
        "wrote {} frames ({} train / {} test) and {} ground-truth disks to {}",
        ds.frames.len(),
        ds.train.len(),
        ds.test.len(),
        gt.primitives.len(),
        a.out.display()
    );
    Ok(0)
}

fn load_config(path: Option<&Path>, preset: Preset, iterations: Option<usize>, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = match (path, preset) {
        (Some(p), _) => TrainConfig::from_json_file(p)?,
        (None, Preset::Default) => TrainConfig::default(),
        (None, Preset::LowRes) => TrainConfig::low_resolution(iterations.unwrap_or(TrainConfig::default().iterations)),
    };
    if let Some(n) = iterations {
        cfg.iterations = n;
        cfg.densify_until = cfg.densify_until.min(n);
        cfg.densify_from = cfg.densify_from.min(cfg.densify_until);
    }
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn initial_scene(ds: &ingest::Dataset, init: Option<&Path>) -> Result<SceneModel> {
    match init {
        Some(p) => load_checkpoint(p),
        None => init_scene_from_anchors(ds, 1),
    }
}

fn print_final(variant: &str, log: &trainer::TrainLog) {
    if let Some(r) = log.last() {
        let fmt = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |x| format!("{x:.p$}"));
        println!(
            "{:<22} iter {:>6}  loss {:.5}  psnr {:>8}  ssim {:>7}  mse {:>10}  disks {}",
            variant,
            r.iteration,
            r.train_loss,
            fmt(r.test_psnr, 3),
            fmt(r.test_ssim, 4),
            fmt(r.test_mse, 7),
            r.primitives
        );
    }
}

fn train(a: TrainArgs) -> Result<i32> {
    let ds = load_dataset(&a.data)?;
    let cfg = load_config(a.config.as_deref(), a.preset, a.iterations, a.seed)?;
    let init = initial_scene(&ds, a.init.as_deref())?;
    let variant = match &a.ablate {
        Some(v) => v.parse()?,
        None => AblationVariant::Full,
    };
    let (_, log) = run_ablation(&ds, &init, &cfg, variant, Some(&a.out))?;
    print_final(variant.name(), &log);
    Ok(0)
}

fn ablate(a: AblateArgs) -> Result<i32> {
    let ds = load_dataset(&a.data)?;
    let cfg = load_config(a.config.as_deref(), a.preset, a.iterations, None)?;
    let init = initial_scene(&ds, a.init.as_deref())?;
    let variants: Vec<AblationVariant> = if a.variant.is_empty() {
        AblationVariant::ALL.to_vec()
    } else {
        vec![a.variant.join(" ").parse()?]
    };
    for v in variants {
        let dir = a.out.join(v.slug());
        let (_, log) = run_ablation(&ds, &init, &cfg, v, Some(&dir))?;
        if a.json {
            let rec = serde_json::json!({ "variant": v.name(), "final": log.last() });
            println!("{rec}");
        } else {
            print_final(v.name(), &log);
        }
    }
    Ok(0)
}

fn parse_pose(pose: &str, data: Option<&Path>) -> Result<CameraView> {
    if let Ok(idx) = pose.parse::<usize>() {
        let dir = data.ok_or_else(|| Error::InvalidConfig("a frame index pose needs --data".into()))?;
        let ds = load_dataset(dir)?;
        return ds
            .frames
            .get(idx)
            .map(|f| f.view.clone())
            .ok_or_else(|| Error::InvalidConfig(format!("frame {idx} out of range ({} frames)", ds.frames.len())));
    }
    let p: PoseFile = ingest::read_json(Path::new(pose))?;
    if p.c2w.len() != 16 {
        return Err(Error::NonRigidPose {
            frame: 0,
            reason: format!("c2w must have 16 entries, got {}", p.c2w.len()),
        });
    }
    CameraView::from_camera_to_world(&Matrix4::from_row_slice(&p.c2w), p.width, p.height, ingest::RIGIDITY_TOL)
}

fn render_cmd(a: RenderArgs) -> Result<i32> {
    let scene = load_checkpoint(&a.ckpt)?;
    let view = parse_pose(&a.pose, a.data.as_deref())?;
    let cfg = if a.exact { TileConfig::exact() } else { TileConfig::default() };
    let out = render(&scene, &view, &cfg)?;
    let stem = a.out.with_extension("");
    write_render(&out, &stem)?;
    println!("wrote {}.png, {0}.ugsi, {0}_depth.ugsi, {0}_depth.png", stem.display());
    Ok(0)
}

fn eval(a: EvalArgs) -> Result<i32> {
    let scene = load_checkpoint(&a.ckpt)?;
    let ds = load_dataset(&a.data)?;
    let frames: Vec<usize> = if a.all { (0..ds.frames.len()).collect() } else { ds.test.clone() };
    if frames.is_empty() {
        return Err(Error::Precondition("dataset has no held-out frames".into()));
    }
    let per = evaluate_frames(&scene, &ds, &frames, &TileConfig::exact())?;
    let n = per.len() as f64;
    let mean = |f: fn(&trainer::FrameMetrics) -> f64| per.iter().map(f).sum::<f64>() / n;
    if a.json {
        for m in &per {
            println!("{}", serde_json::to_string(m).expect("metrics serialize"));
        }
        let summary = serde_json::json!({
            "frame": "mean", "psnr": mean(|m| m.psnr), "ssim": mean(|m| m.ssim), "mse": mean(|m| m.mse)
        });
        println!("{summary}");
    } else {
        println!("{:>6}  {:>9}  {:>7}  {:>11}", "frame", "psnr_db", "ssim", "mse");
        for m in &per {
            println!("{:>6}  {:>9.3}  {:>7.4}  {:>11.4e}", m.frame, m.psnr, m.ssim, m.mse);
        }
        println!("{:>6}  {:>9.3}  {:>7.4}  {:>11.4e}", "mean", mean(|m| m.psnr), mean(|m| m.ssim), mean(|m| m.mse));
    }
    Ok(0)
}

/// Up to `k` indices spread evenly over `items`.
fn spread(items: &[usize], k: usize) -> Vec<usize> {
    if items.len() <= k {
        return items.to_vec();
    }
    (0..k).map(|j| items[j * items.len() / k]).collect()
}

fn gradcheck(a: GradcheckArgs) -> Result<i32> {
    let scene = load_checkpoint(&a.ckpt)?;
    let ds = load_dataset(&a.data)?;
    let frame = a.frame.unwrap_or_else(|| ds.train.first().copied().unwrap_or(0));
    let f = ds
        .frames
        .get(frame)
        .ok_or_else(|| Error::InvalidConfig(format!("frame {frame} out of range")))?;
    let groups: Vec<ParamGroup> = match &a.group {
        Some(g) => vec![g.parse()?],
        None => ParamGroup::ALL.to_vec(),
    };
    let layout = ParamLayout::of(&scene);
    let mut indices = Vec::new();
    for g in &groups {
        let all: Vec<usize> = (0..layout.len()).filter(|&i| layout.group(i) == *g).collect();
        indices.extend(spread(&all, a.per_group));
    }
    let report = finite_diff_check_refined(
        &scene,
        &f.view,
        &TileConfig::exact(),
        &f.image,
        a.lambda,
        &ParamSelector::Indices(indices),
        a.step,
        GRADCHECK_TOL,
        a.refine,
    )?;
    println!("{:<10}  {:>12}", "group", "max_rel_err");
    let by_group = report.max_error_by_group();
    for g in &groups {
        match by_group.get(g) {
            Some(e) => println!("{:<10}  {:>12.3e}", g.name(), e),
            None => println!("{:<10}  {:>12}", g.name(), "-"),
        }
    }
    let skipped = report.non_smooth();
    if skipped > 0 {
        println!("{skipped} of {} entries straddle a kink or depth-order swap and are not compared", report.entries.len());
    }
    // A few rough entries are expected in dense scenes; many mean the step is
    // too coarse for anything to be verified.
    if skipped * 4 > report.entries.len() {
        eprintln!("gradient check failed: too many non-smooth entries for step {:e}", a.step);
        return Ok(1);
    }
    let worst = report.max_error();
    if worst > GRADCHECK_TOL {
        if let Some(w) = report.worst() {
            eprintln!(
                "gradient check failed: index {} ({}) analytic {:e} numeric {:e} at step {:e}",
                w.index, w.group, w.analytic, w.numeric, w.step
            );
        }
        return Ok(1);
    }
    println!("ok (max {worst:.3e} <= {GRADCHECK_TOL:e})");
    Ok(0)
}

fn bench_cmd(a: BenchArgs) -> Result<i32> {
    let scene = load_checkpoint(&a.ckpt)?;
    let view = match &a.data {
        Some(d) => {
            let ds = load_dataset(d)?;
            ds.frames
                .get(a.pose)
                .map(|f| f.view.clone())
                .ok_or_else(|| Error::InvalidConfig(format!("frame {} out of range", a.pose)))?
        }
        None => CameraView::look_at(Vector3::zeros(), Vector3::z(), -Vector3::y(), a.width, a.height)?,
    };
    let report = bench(&scene, &view, &TileConfig::default(), a.frames)?;
    if a.json {
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    } else {
        println!("{report}");
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["acoustic-splat"]), 2);
        assert_eq!(run(["acoustic-splat", "frobnicate"]), 2);
        assert_eq!(run(["acoustic-splat", "eval", "--ckpt", "x"]), 2);
        assert_eq!(run(["acoustic-splat", "bench", "--ckpt", "x", "--bogus"]), 2);
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(run(["acoustic-splat", "--help"]), 0);
    }

    #[test]
    fn missing_files_exit_one() {
        assert_eq!(run(["acoustic-splat", "eval", "--ckpt", "/nonexistent/ckpt", "--data", "/nonexistent"]), 1);
    }

    #[test]
    fn spread_is_even() {
        assert_eq!(spread(&[1, 2, 3], 5), vec![1, 2, 3]);
        assert_eq!(spread(&(0..10).collect::<Vec<_>>(), 5), vec![0, 2, 4, 6, 8]);
    }
}
