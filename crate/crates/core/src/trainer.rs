//! The optimisation loop: view sampling, loss and gradients, Adam with
//! per-group rates, adaptive densification, held-out evaluation, logging and
//! checkpoints.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{adam_step, backward, AdamConfig, AdamState, LrTable, ParamLayout};
use crate::error::{Error, Result};
use crate::ingest::metrics::{mse, psnr_from_mse, ssim};
use crate::ingest::{Dataset, PreprocessConfig};
use crate::raster::{render, TileConfig};
use crate::scene::{save_checkpoint, AblationFlags, SceneModel};

/// Densify threshold of [`TrainConfig::low_resolution`].
pub const LOW_RES_GRAD_THRESHOLD: f64 = 5e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub eval_every: usize,
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
    pub densify_from: usize,
    pub densify_until: usize,
    pub densify_every: usize,
    /// Threshold on the mean world-space positional gradient norm.
    pub grad_threshold: f64,
    pub opacity_prune_threshold: f64,
    /// Disks whose larger scale exceeds this fraction of the scene extent
    /// are split; smaller ones are cloned.
    pub percent_dense: f64,
    pub max_primitives: usize,
    pub ablation_flags: AblationFlags,
    pub lambda_dssim: f64,
    pub lr_table: LrTable,
    pub adam: AdamConfig,
    pub rng_seed: u64,
    /// Seeded per-epoch shuffle instead of round-robin.
    pub shuffle_views: bool,
    pub tile: TileConfig,
    /// Renderer settings for held-out evaluation.
    pub eval_tile: TileConfig,
    pub preprocess: PreprocessConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 5000,
            eval_every: 500,
            checkpoint_every: 0,
            densify_from: 500,
            densify_until: 4000,
            densify_every: 100,
            grad_threshold: 2e-4,
            opacity_prune_threshold: 0.005,
            percent_dense: 0.05,
            max_primitives: 50_000,
            ablation_flags: AblationFlags::default(),
            lambda_dssim: 0.2,
            lr_table: LrTable::default(),
            adam: AdamConfig::default(),
            rng_seed: 0,
            shuffle_views: false,
            tile: TileConfig::default(),
            eval_tile: TileConfig::exact(),
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Preset for images of roughly 100x100 pixels or fewer. Each disk then
    /// covers a large share of the image and mean-loss gradients are an
    /// order of magnitude larger than at megapixel scale, so the densify
    /// threshold is raised accordingly and the window scales with the run.
    pub fn low_resolution(iterations: usize) -> Self {
        TrainConfig {
            iterations,
            eval_every: (iterations / 6).max(1),
            densify_from: iterations / 10,
            densify_until: iterations * 4 / 5,
            grad_threshold: LOW_RES_GRAD_THRESHOLD,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if self.densify_every == 0 {
            return bad("densify_every must be >= 1");
        }
        if self.densify_from > self.densify_until {
            return bad("densify_from must not exceed densify_until");
        }
        if self.densify_until > self.iterations {
            return bad("densify window must end within the run (densify_until <= iterations)");
        }
        if !(0.0..=1.0).contains(&self.lambda_dssim) {
            return bad("lambda_dssim must be in [0, 1]");
        }
        if !(self.grad_threshold >= 0.0) || !(self.opacity_prune_threshold >= 0.0) {
            return bad("densification thresholds must be >= 0");
        }
        if self.max_primitives == 0 {
            return bad("max_primitives must be >= 1");
        }
        self.lr_table.validate()?;
        self.tile.validate()?;
        self.eval_tile.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: TrainConfig = crate::ingest::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One held-out evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    /// Mean training loss since the previous record.
    pub train_loss: f64,
    pub test_psnr: Option<f64>,
    pub test_ssim: Option<f64>,
    pub test_mse: Option<f64>,
    pub primitives: usize,
    /// Largest |d loss / d theta| seen since the previous record.
    pub max_theta_grad: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensifyStats {
    pub iteration: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// Pruning would have emptied the scene; one disk was kept.
    pub floor_kept: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub variant: String,
    pub preprocess: PreprocessConfig,
    pub records: Vec<EvalRecord>,
    pub densify: Vec<DensifyStats>,
    /// Training loss of every iteration.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Equality ignoring wall-clock fields.
    pub fn same_run(&self, other: &TrainLog) -> bool {
        let strip = |l: &TrainLog| {
            let mut l = l.clone();
            l.records.iter_mut().for_each(|r| r.seconds = 0.0);
            l
        };
        strip(self) == strip(other)
    }

    pub fn last(&self) -> Option<&EvalRecord> {
        self.records.last()
    }

    /// Appends one JSON line per eval record to `path`.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Held-out metrics, averaged over the given frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// Renders each listed frame (clamped to `[0, 1]`) and scores it.
pub fn evaluate_frames(scene: &SceneModel, ds: &Dataset, frames: &[usize], cfg: &TileConfig) -> Result<Vec<FrameMetrics>> {
    frames
        .iter()
        .map(|&i| {
            let f = &ds.frames[i];
            let img = render(scene, &f.view, cfg)?.intensity.clamped();
            let m = mse(&img, &f.image)?;
            Ok(FrameMetrics {
                frame: i,
                psnr: psnr_from_mse(m),
                ssim: ssim(&img, &f.image)?,
                mse: m,
            })
        })
        .collect()
}

pub fn evaluate(scene: &SceneModel, ds: &Dataset, frames: &[usize], cfg: &TileConfig) -> Result<Option<EvalMetrics>> {
    if frames.is_empty() {
        return Ok(None);
    }
    let per = evaluate_frames(scene, ds, frames, cfg)?;
    let n = per.len() as f64;
    Ok(Some(EvalMetrics {
        psnr: per.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: per.iter().map(|m| m.ssim).sum::<f64>() / n,
        mse: per.iter().map(|m| m.mse).sum::<f64>() / n,
    }))
}

/// Largest distance of a disk center from the centroid.
fn scene_extent(scene: &SceneModel) -> f64 {
    let n = scene.primitives.len().max(1) as f64;
    let c = scene.primitives.iter().map(|p| p.center).sum::<Vector3<f64>>() / n;
    scene.primitives.iter().map(|p| (p.center - c).norm()).fold(0.0, f64::max)
}

/// Clones or splits disks whose mean positional gradient exceeds the
/// threshold, then prunes nearly transparent ones.
///
/// Returns, for every disk of the new scene, the index of the disk it was
/// kept from (`None` for newly created ones), so optimizer state can follow.
pub fn densify_and_prune(
    scene: &mut SceneModel,
    mean_grad: &[f64],
    cfg: &TrainConfig,
    extent: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Option<usize>>, DensifyStats) {
    let mut stats = DensifyStats::default();
    let old = std::mem::take(&mut scene.primitives);
    let mut prims = Vec::with_capacity(old.len());
    let mut sources = Vec::with_capacity(old.len());
    let mut budget = cfg.max_primitives.saturating_sub(old.len());
    let big = cfg.percent_dense * extent;
    let mut children = Vec::new();
    for (i, p) in old.iter().enumerate() {
        let hot = mean_grad.get(i).is_some_and(|&g| g > cfg.grad_threshold);
        if !hot || budget == 0 {
            prims.push(p.clone());
            sources.push(Some(i));
            continue;
        }
        let (su, sv) = p.scales();
        if su.max(sv) <= big {
            prims.push(p.clone());
            sources.push(Some(i));
            children.push(p.clone());
            stats.cloned += 1;
        } else {
            for _ in 0..2 {
                let mut c = p.clone();
                let du: f64 = StandardNormal.sample(rng);
                let dv: f64 = StandardNormal.sample(rng);
                c.center = p.center + p.tangent_u * (du * su) + p.tangent_v * (dv * sv);
                c.log_scale_u -= 1.6f64.ln();
                c.log_scale_v -= 1.6f64.ln();
                children.push(c);
            }
            stats.split += 1;
        }
        budget -= 1;
    }
    for c in children {
        prims.push(c);
        sources.push(None);
    }

    let keep: Vec<bool> = prims.iter().map(|p| p.opacity() >= cfg.opacity_prune_threshold).collect();
    if keep.iter().any(|&k| k) {
        let mut kept = Vec::with_capacity(prims.len());
        let mut kept_src = Vec::with_capacity(prims.len());
        for ((p, s), k) in prims.into_iter().zip(sources).zip(&keep) {
            if *k {
                kept.push(p);
                kept_src.push(s);
            } else {
                stats.pruned += 1;
            }
        }
        prims = kept;
        sources = kept_src;
    } else {
        // Never empty the scene: keep the most opaque disk.
        let best = (0..prims.len())
            .max_by(|&a, &b| prims[a].opacity_logit.total_cmp(&prims[b].opacity_logit).then(b.cmp(&a)))
            .expect("scene is non-empty");
        stats.pruned = prims.len() - 1;
        stats.floor_kept = true;
        eprintln!("densify: pruning would remove every primitive; keeping the most opaque one");
        prims = vec![prims.swap_remove(best)];
        sources = vec![sources[best]];
    }
    scene.primitives = prims;
    (sources, stats)
}

/// Trains without writing files.
pub fn train(ds: &Dataset, init: &SceneModel, cfg: &TrainConfig) -> Result<(SceneModel, TrainLog)> {
    run(ds, init, cfg, None, "custom")
}

/// Trains, writing `ckpt_{iteration}` checkpoints, `train_log.jsonl` and the
/// effective `config.json` into `out_dir`.
pub fn train_to_dir(ds: &Dataset, init: &SceneModel, cfg: &TrainConfig, out_dir: &Path) -> Result<(SceneModel, TrainLog)> {
    run(ds, init, cfg, Some(out_dir), "custom")
}

pub fn checkpoint_path(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join(format!("ckpt_{iteration}"))
}

fn run(
    ds: &Dataset,
    init: &SceneModel,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    variant: &str,
) -> Result<(SceneModel, TrainLog)> {
    cfg.validate()?;
    if ds.train.is_empty() {
        return Err(Error::Precondition("dataset has no training views".into()));
    }
    let mut data = ds.clone();
    if !cfg.preprocess.is_noop() {
        data.preprocess(&cfg.preprocess)?;
    }
    let ds = &data;
    if ds.dims() != (ds.frames[0].view.image_width, ds.frames[0].view.image_height) {
        return Err(Error::Invariant("dataset views and images disagree in size".into()));
    }
    let mut scene = init.clone();
    scene.flags = cfg.ablation_flags;
    scene.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        crate::ingest::write_json(&dir.join("config.json"), cfg)?;
    }

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order = ds.train.clone();
    let mut state = AdamState::new(&scene);
    let mut grad_sum = vec![0.0; scene.primitives.len()];
    let mut grad_count = vec![0usize; scene.primitives.len()];
    let extent = scene_extent(&scene);
    let mut log = TrainLog {
        variant: variant.to_string(),
        preprocess: cfg.preprocess,
        ..Default::default()
    };
    let (mut loss_acc, mut loss_n, mut theta_max) = (0.0, 0usize, 0.0f64);

    for it in 1..=cfg.iterations {
        let slot = (it - 1) % order.len();
        if cfg.shuffle_views && slot == 0 {
            order.shuffle(&mut rng);
        }
        let frame = &ds.frames[order[slot]];
        let (report, grads) = backward(&scene, &frame.view, &cfg.tile, &frame.image, cfg.lambda_dssim)?;
        if !report.total.is_finite() || !grads.is_finite() {
            if let Some(dir) = out_dir {
                save_checkpoint(&scene, dir.join(format!("ckpt_diverged_{it}")))?;
            }
            return Err(Error::Diverged { iteration: it });
        }
        log.losses.push(report.total);
        loss_acc += report.total;
        loss_n += 1;
        theta_max = theta_max.max(grads.theta_x.abs()).max(grads.theta_y.abs());
        for (k, g) in grads.primitives.iter().enumerate() {
            let n = g.center.norm();
            if n > 0.0 {
                grad_sum[k] += n;
                grad_count[k] += 1;
            }
        }
        adam_step(&mut scene, &grads, &mut state, &cfg.lr_table, &cfg.adam)?;

        if it >= cfg.densify_from && it <= cfg.densify_until && it % cfg.densify_every == 0 && it < cfg.iterations {
            let mean: Vec<f64> = grad_sum
                .iter()
                .zip(&grad_count)
                .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
                .collect();
            let layout = ParamLayout::of(&scene);
            let (sources, mut stats) = densify_and_prune(&mut scene, &mean, cfg, extent, &mut rng);
            stats.iteration = it;
            state = state.remap(layout, &sources);
            grad_sum = vec![0.0; scene.primitives.len()];
            grad_count = vec![0; scene.primitives.len()];
            if stats.cloned + stats.split + stats.pruned > 0 {
                log.densify.push(stats);
            }
        }

        let checkpoint_due = it == cfg.iterations || (cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0);
        if let (Some(dir), true) = (out_dir, checkpoint_due) {
            scene.validate()?;
            save_checkpoint(&scene, checkpoint_path(dir, it))?;
        }
        if it % cfg.eval_every == 0 || it == cfg.iterations {
            let m = evaluate(&scene, ds, &ds.test, &cfg.eval_tile)?;
            log.records.push(EvalRecord {
                iteration: it,
                train_loss: loss_acc / loss_n as f64,
                test_psnr: m.map(|m| m.psnr),
                test_ssim: m.map(|m| m.ssim),
                test_mse: m.map(|m| m.mse),
                primitives: scene.primitives.len(),
                max_theta_grad: theta_max,
                seconds: start.elapsed().as_secs_f64(),
            });
            if let Some(dir) = out_dir {
                log.write_jsonl(&dir.join("train_log.jsonl"))?;
            }
            loss_acc = 0.0;
            loss_n = 0;
            theta_max = 0.0;
        }
    }
    scene.validate()?;
    Ok((scene, log))
}

/// Module-removal variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AblationVariant {
    Full,
    NoAttenuation,
    NoReflectionScattering,
    NoDar,
    NoPd,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 5] = [
        AblationVariant::Full,
        AblationVariant::NoAttenuation,
        AblationVariant::NoReflectionScattering,
        AblationVariant::NoDar,
        AblationVariant::NoPd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoAttenuation => "w/o I_att",
            AblationVariant::NoReflectionScattering => "w/o I_refl & I_scat",
            AblationVariant::NoDar => "w/o DAR",
            AblationVariant::NoPd => "w/o PD Rendering",
        }
    }

    /// Filesystem-safe short name.
    pub fn slug(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoAttenuation => "no-att",
            AblationVariant::NoReflectionScattering => "no-refl-scat",
            AblationVariant::NoDar => "no-dar",
            AblationVariant::NoPd => "no-pd",
        }
    }

    pub fn flags(self) -> AblationFlags {
        let mut f = AblationFlags::default();
        match self {
            AblationVariant::Full => {}
            AblationVariant::NoAttenuation => f.disable_att = true,
            AblationVariant::NoReflectionScattering => f.disable_refl_scat = true,
            AblationVariant::NoDar => f.disable_dar = true,
            AblationVariant::NoPd => f.disable_pd = true,
        }
        f
    }

    /// SH degree the variant trains with, if it overrides the scene's.
    pub fn sh_degree(self) -> Option<u32> {
        (self == AblationVariant::NoPd).then_some(3)
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(t) || v.slug() == t)
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

/// Trains one ablation variant: its flags are set and, for the variant
/// without the acoustic operator, the SH degree is raised to 3.
pub fn run_ablation(
    ds: &Dataset,
    init: &SceneModel,
    cfg: &TrainConfig,
    variant: AblationVariant,
    out_dir: Option<&Path>,
) -> Result<(SceneModel, TrainLog)> {
    let mut scene = init.clone();
    if let Some(d) = variant.sh_degree() {
        scene.set_sh_degree(d)?;
    }
    let cfg = TrainConfig {
        ablation_flags: variant.flags(),
        ..cfg.clone()
    };
    run(ds, &scene, &cfg, out_dir, variant.name())
}
