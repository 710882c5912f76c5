//! Tile-binned forward renderer.
//!
//! Each primitive is binned to the screen tiles overlapped by the projected
//! bounding box of its cutoff ellipse. Within a tile, every pixel intersects
//! its candidate disks, sorts the hits by camera depth (ties broken by
//! primitive index), and composites them front to back:
//!
//! ```text
//! C = sum_i r_i a_i prod_{j<i} (1 - a_j),   a_i = opacity_i G(u_i, v_i)
//! ```
//!
//! where `r_i` is channel 0 of the acoustically shaded SH response. Tiles are
//! independent and write disjoint pixels, so the result is bit-identical for
//! any worker count.

mod bench;
mod reference;

use std::time::{Duration, Instant};

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bench::{bench, BenchReport};
pub use reference::reference_render;

use crate::acoustics::{ComposeStage, Shading};
use crate::error::{Error, Result};
use crate::geometry::{intersect_normalized, intrinsics_from_dar, CameraSplat, CameraView, Intrinsics, NEAR_PLANE};
use crate::image::Image;
use crate::scene::{sh, SceneModel};

/// Floor on accumulated opacity when normalizing the expected depth.
pub const DEPTH_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    pub tile_size: usize,
    /// Binning and per-pixel cutoff, in standard deviations.
    pub gaussian_cutoff: f64,
    pub max_splats_per_pixel: Option<usize>,
    /// Compositing stops once transmittance drops below this; 0 disables.
    pub early_stop_transmittance: f64,
    pub compose_stage: ComposeStage,
}

impl Default for TileConfig {
    fn default() -> Self {
        TileConfig {
            tile_size: 16,
            gaussian_cutoff: 3.0,
            max_splats_per_pixel: None,
            early_stop_transmittance: 1e-4,
            compose_stage: ComposeStage::PerSplat,
        }
    }
}

impl TileConfig {
    /// Settings under which the tiled renderer reproduces
    /// [`reference_render`]: wide cutoff and no early termination.
    pub fn exact() -> Self {
        TileConfig {
            gaussian_cutoff: 12.0,
            early_stop_transmittance: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size < 4 {
            return Err(Error::InvalidConfig(format!("tile_size must be >= 4, got {}", self.tile_size)));
        }
        if !(self.gaussian_cutoff > 0.0) {
            return Err(Error::InvalidConfig("gaussian_cutoff must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.early_stop_transmittance) {
            return Err(Error::InvalidConfig("early_stop_transmittance must be in [0, 1)".into()));
        }
        if self.max_splats_per_pixel == Some(0) {
            return Err(Error::InvalidConfig("max_splats_per_pixel must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    /// Channel 0 of the composited response, unclamped.
    pub intensity: Image,
    /// Opacity-weighted mean hit depth; 0 where nothing was hit.
    pub depth: Image,
    pub alpha_acc: Image,
}

/// Wall-clock split of one render.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimes {
    pub binning: Duration,
    /// Summed across tiles: ray/disk intersection and depth sorting.
    pub intersect: Duration,
    /// Summed across tiles: alpha compositing and shading.
    pub composite: Duration,
    pub total: Duration,
}

/// Per-view data shared by every tile.
pub(crate) struct Prepared<'a> {
    pub scene: &'a SceneModel,
    pub view: &'a CameraView,
    pub intr: Intrinsics,
    pub shading: Shading,
    pub splats: Vec<CameraSplat>,
    /// `exp(-2 log_scale)` per axis.
    pub inv_var: Vec<(f64, f64)>,
    pub opacity: Vec<f64>,
    /// Pixel-space culling box per primitive.
    pub bounds: Vec<PixelBox>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile_lists: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Hit {
    pub z: f64,
    pub global: u32,
    pub local: u32,
    pub u: f64,
    pub v: f64,
    pub g: f64,
}

pub(crate) struct TileHits {
    pub rays: Vec<PixelRay>,
    pub hits: Vec<Hit>,
    pub offsets: Vec<usize>,
}

/// Normalized coordinates and SH basis for one pixel's ray.
pub(crate) struct PixelRay {
    pub a: f64,
    pub b: f64,
    pub dir: Vector3<f64>,
    pub basis: [f64; sh::MAX_BASIS],
}

impl PixelRay {
    pub fn new(prep: &Prepared, x: usize, y: usize) -> Self {
        let (a, b) = prep.intr.normalize(x as f64, y as f64);
        let dir = (prep.view.rotation.transpose() * Vector3::new(a, b, 1.0)).normalize();
        PixelRay {
            a,
            b,
            dir,
            basis: sh::basis(&dir, prep.scene.sh_degree),
        }
    }
}

impl<'a> Prepared<'a> {
    pub fn new(scene: &'a SceneModel, view: &'a CameraView, cfg: &TileConfig) -> Result<Self> {
        scene.validate()?;
        Self::new_unchecked_frames(scene, view, cfg)
    }

    /// Skips the tangent orthonormality check only; everything else is still
    /// validated.
    pub fn new_unchecked_frames(scene: &'a SceneModel, view: &'a CameraView, cfg: &TileConfig) -> Result<Self> {
        cfg.validate()?;
        scene.validate_with_frame_tol(f64::INFINITY)?;
        let (w, h) = (view.image_width, view.image_height);
        let intr = intrinsics_from_dar(&scene.dar, w, h);
        let ts = cfg.tile_size;
        let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));

        struct PerPrim {
            cs: CameraSplat,
            inv_var: (f64, f64),
            opacity: f64,
            bounds: Option<PixelBox>,
        }
        let per: Vec<PerPrim> = scene
            .primitives
            .par_iter()
            .map(|p| {
                let cs = CameraSplat::new(p, view);
                let (su, sv) = p.scales();
                let bounds = pixel_bounds(&cs, su, sv, cfg.gaussian_cutoff, &intr);
                PerPrim {
                    cs,
                    inv_var: ((-2.0 * p.log_scale_u).exp(), (-2.0 * p.log_scale_v).exp()),
                    opacity: p.opacity(),
                    bounds,
                }
            })
            .collect();

        let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
        for (i, pp) in per.iter().enumerate() {
            if let Some((x0, x1, y0, y1)) = pp.bounds.and_then(|b| tile_rect(&b, w, h, ts)) {
                for ty in y0..=y1 {
                    for tx in x0..=x1 {
                        tile_lists[ty * tiles_x + tx].push(i as u32);
                    }
                }
            }
        }
        // Pre-order by center depth so the per-pixel sorts see nearly sorted
        // input. Correctness does not depend on this order.
        tile_lists.par_iter_mut().for_each(|list| {
            list.sort_by(|&i, &j| {
                per[i as usize].cs.center.z.total_cmp(&per[j as usize].cs.center.z).then(i.cmp(&j))
            });
        });

        let mut splats = Vec::with_capacity(per.len());
        let mut inv_var = Vec::with_capacity(per.len());
        let mut opacity = Vec::with_capacity(per.len());
        let mut bounds = Vec::with_capacity(per.len());
        for pp in per {
            splats.push(pp.cs);
            inv_var.push(pp.inv_var);
            opacity.push(pp.opacity);
            bounds.push(pp.bounds.unwrap_or(PixelBox::EMPTY));
        }
        Ok(Prepared {
            scene,
            view,
            intr,
            shading: Shading::new(&scene.acoustics, scene.flags),
            splats,
            inv_var,
            opacity,
            bounds,
            tiles_x,
            tiles_y,
            tile_lists,
        })
    }

    /// Pixel bounds `(x0, x1, y0, y1)` (exclusive ends) of a tile.
    pub fn tile_bounds(&self, tile: usize, ts: usize) -> (usize, usize, usize, usize) {
        let (tx, ty) = (tile % self.tiles_x, tile / self.tiles_x);
        let x0 = tx * ts;
        let y0 = ty * ts;
        (
            x0,
            (x0 + ts).min(self.view.image_width),
            y0,
            (y0 + ts).min(self.view.image_height),
        )
    }

    /// Sorted, truncated hit lists of every pixel in a tile, row-major:
    /// pixel `p` owns `hits[offsets[p]..offsets[p + 1]]`.
    ///
    /// Each candidate is intersected only with the pixels inside its culling
    /// box, so the work scales with coverage rather than with the number of
    /// candidates times the tile area.
    pub fn gather_tile(&self, tile: usize, candidates: &[u32], cfg: &TileConfig) -> TileHits {
        let (x0, x1, y0, y1) = self.tile_bounds(tile, cfg.tile_size);
        let tw = x1 - x0;
        let n = tw * (y1 - y0);
        let mut rays = Vec::with_capacity(n);
        for y in y0..y1 {
            for x in x0..x1 {
                rays.push(PixelRay::new(self, x, y));
            }
        }
        let cutoff_sq = cfg.gaussian_cutoff * cfg.gaussian_cutoff;
        let mut lists: Vec<Vec<Hit>> = vec![Vec::new(); n];
        // Pixel index range of `[lo, hi]` clipped to `[first, end)`.
        let span = |lo: f64, hi: f64, first: usize, end: usize| -> (usize, usize) {
            let a = lo.ceil().max(first as f64);
            let b = (hi.floor() + 1.0).min(end as f64);
            if a < b {
                (a as usize, b as usize)
            } else {
                (0, 0)
            }
        };
        for (local, &gi) in candidates.iter().enumerate() {
            let i = gi as usize;
            let bx = &self.bounds[i];
            let (px0, px1) = span(bx.x0, bx.x1, x0, x1);
            let (py0, py1) = span(bx.y0, bx.y1, y0, y1);
            let (iu, iv) = self.inv_var[i];
            for y in py0..py1 {
                for x in px0..px1 {
                    let p = (y - y0) * tw + (x - x0);
                    let ray = &rays[p];
                    let hit = intersect_normalized(&self.splats[i], ray.a, ray.b);
                    if !hit.valid {
                        continue;
                    }
                    let q = hit.u * hit.u * iu + hit.v * hit.v * iv;
                    if q > cutoff_sq {
                        continue;
                    }
                    lists[p].push(Hit {
                        z: hit.depth_z,
                        global: gi,
                        local: local as u32,
                        u: hit.u,
                        v: hit.v,
                        g: (-0.5 * q).exp(),
                    });
                }
            }
        }
        let mut hits = Vec::with_capacity(lists.iter().map(Vec::len).sum());
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for mut list in lists {
            sort_hits(&mut list);
            if let Some(k) = cfg.max_splats_per_pixel {
                list.truncate(k);
            }
            hits.extend_from_slice(&list);
            offsets.push(hits.len());
        }
        TileHits { rays, hits, offsets }
    }

    /// Clamped and pre-clamp base responses of primitive `i` along `ray`.
    #[inline]
    pub fn base_response(&self, i: usize, ray: &PixelRay) -> ([f64; 3], [f64; 3]) {
        let raw = sh::response_raw(&ray.basis, &self.scene.primitives[i].sh_coeffs, self.scene.sh_degree);
        ([raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)], raw)
    }
}

/// Orders hits by depth, ties by primitive index. Candidates arrive sorted
/// by center depth, so the lists are usually nearly ordered and insertion
/// sort runs in close to linear time; it hands over to a general sort once
/// the input proves otherwise. Keys are unique, so the result is the same
/// either way.
fn sort_hits(list: &mut [Hit]) {
    let cmp = |p: &Hit, q: &Hit| p.z.total_cmp(&q.z).then(p.global.cmp(&q.global));
    let mut budget = 8 * list.len();
    for i in 1..list.len() {
        let mut j = i;
        while j > 0 && cmp(&list[j], &list[j - 1]).is_lt() {
            if budget == 0 {
                list.sort_unstable_by(cmp);
                return;
            }
            budget -= 1;
            list.swap(j, j - 1);
            j -= 1;
        }
    }
}

/// Pixel-space box containing every pixel whose ray can pass the cutoff.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PixelBox {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl PixelBox {
    const EMPTY: PixelBox = PixelBox {
        x0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y0: f64::INFINITY,
        y1: f64::NEG_INFINITY,
    };
    const ALL: PixelBox = PixelBox {
        x0: f64::NEG_INFINITY,
        x1: f64::INFINITY,
        y0: f64::NEG_INFINITY,
        y1: f64::INFINITY,
    };

}

/// Projected bounding box of the cutoff rectangle `|u| <= k s_u, |v| <= k s_v`,
/// which contains the cutoff ellipse. With all four corners in front of the
/// camera the projection of the rectangle is convex, so its box is
/// conservative; otherwise every pixel is a candidate. `None` when the disk is
/// entirely behind the camera.
fn pixel_bounds(cs: &CameraSplat, su: f64, sv: f64, cutoff: f64, intr: &Intrinsics) -> Option<PixelBox> {
    let eu = cs.u_axis * (cutoff * su);
    let ev = cs.v_axis * (cutoff * sv);
    let corners = [
        cs.center + eu + ev,
        cs.center + eu - ev,
        cs.center - eu + ev,
        cs.center - eu - ev,
    ];
    let in_front = corners.iter().filter(|c| c.z > NEAR_PLANE).count();
    if in_front == 0 {
        return None;
    }
    if in_front < 4 {
        return Some(PixelBox::ALL);
    }
    let mut b = PixelBox::EMPTY;
    for c in &corners {
        let (px, py) = intr.project(c);
        b.x0 = b.x0.min(px);
        b.x1 = b.x1.max(px);
        b.y0 = b.y0.min(py);
        b.y1 = b.y1.max(py);
    }
    if !(b.x0.is_finite() && b.x1.is_finite() && b.y0.is_finite() && b.y1.is_finite()) {
        return Some(PixelBox::ALL);
    }
    // Slack for rounding in the projection.
    const MARGIN: f64 = 1e-3;
    Some(PixelBox {
        x0: b.x0 - MARGIN,
        x1: b.x1 + MARGIN,
        y0: b.y0 - MARGIN,
        y1: b.y1 + MARGIN,
    })
}

/// Tiles holding at least one pixel centre inside `b`.
fn tile_rect(b: &PixelBox, w: usize, h: usize, ts: usize) -> Option<(usize, usize, usize, usize)> {
    let (tiles_x, tiles_y) = (w.div_ceil(ts), h.div_ceil(ts));
    let span = |lo: f64, hi: f64, dim: usize, tiles: usize| -> Option<(usize, usize)> {
        let first = lo.ceil();
        let last = hi.floor();
        if last < 0.0 || first > (dim - 1) as f64 || first > last {
            return None;
        }
        let first = first.max(0.0) as usize / ts;
        let last = (last.min((dim - 1) as f64) as usize / ts).min(tiles - 1);
        Some((first, last))
    };
    let (tx0, tx1) = span(b.x0, b.x1, w, tiles_x)?;
    let (ty0, ty1) = span(b.y0, b.y1, h, tiles_y)?;
    Some((tx0, tx1, ty0, ty1))
}

struct TileResult {
    intensity: Vec<f64>,
    depth: Vec<f64>,
    alpha: Vec<f64>,
    intersect: Duration,
    composite: Duration,
}

fn render_tile(prep: &Prepared, cfg: &TileConfig, tile: usize) -> TileResult {
    let (x0, x1, y0, y1) = prep.tile_bounds(tile, cfg.tile_size);
    let n = (x1 - x0) * (y1 - y0);
    let cands = &prep.tile_lists[tile];
    let mut out = TileResult {
        intensity: vec![0.0; n],
        depth: vec![0.0; n],
        alpha: vec![0.0; n],
        intersect: Duration::ZERO,
        composite: Duration::ZERO,
    };
    if cands.is_empty() {
        return out;
    }

    let t0 = Instant::now();
    let TileHits { rays, hits, offsets } = prep.gather_tile(tile, cands, cfg);
    let t1 = Instant::now();

    let per_pixel = cfg.compose_stage == ComposeStage::PerPixel;
    for p in 0..n {
        let ray = &rays[p];
        let mut t = 1.0;
        let mut acc_r = 0.0;
        let mut acc_c = [0.0; 3];
        let mut acc_z = 0.0;
        for hit in &hits[offsets[p]..offsets[p + 1]] {
            let i = hit.global as usize;
            let a = prep.opacity[i] * hit.g;
            let (c, _) = prep.base_response(i, ray);
            let w = a * t;
            if per_pixel {
                for k in 0..3 {
                    acc_c[k] += c[k] * w;
                }
            } else {
                acc_r += prep.shading.apply_channel0(&c, hit.z) * w;
            }
            acc_z += hit.z * w;
            t *= 1.0 - a;
            if t < cfg.early_stop_transmittance {
                break;
            }
        }
        let alpha = 1.0 - t;
        let depth = if alpha > 0.0 { acc_z / alpha.max(DEPTH_EPS) } else { 0.0 };
        out.intensity[p] = if per_pixel {
            prep.shading.apply_channel0(&acc_c, depth)
        } else {
            acc_r
        };
        out.depth[p] = depth;
        out.alpha[p] = alpha;
    }
    out.intersect = t1 - t0;
    out.composite = t1.elapsed();
    out
}

/// Renders `scene` from `view` and reports per-stage timings.
pub fn render_timed(scene: &SceneModel, view: &CameraView, cfg: &TileConfig) -> Result<(RenderOutput, StageTimes)> {
    let start = Instant::now();
    scene.validate()?;
    render_prepared(Prepared::new_unchecked_frames(scene, view, cfg)?, cfg, start)
}

/// Renders a scene whose tangent frames may be slightly off the orthonormal
/// manifold. The image formation only uses the frame linearly, so this is a
/// smooth extension used by finite differences.
pub(crate) fn render_unchecked_frames(scene: &SceneModel, view: &CameraView, cfg: &TileConfig) -> Result<RenderOutput> {
    let prep = Prepared::new_unchecked_frames(scene, view, cfg)?;
    render_prepared(prep, cfg, Instant::now()).map(|(o, _)| o)
}

fn render_prepared(prep: Prepared, cfg: &TileConfig, start: Instant) -> Result<(RenderOutput, StageTimes)> {
    let view = prep.view;
    let binning = start.elapsed();
    let tiles: Vec<TileResult> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|t| render_tile(&prep, cfg, t))
        .collect();
    let (w, h) = (view.image_width, view.image_height);
    let mut out = RenderOutput {
        intensity: Image::new(w, h),
        depth: Image::new(w, h),
        alpha_acc: Image::new(w, h),
    };
    let mut times = StageTimes {
        binning,
        ..Default::default()
    };
    for (tile, r) in tiles.iter().enumerate() {
        let (x0, x1, y0, y1) = prep.tile_bounds(tile, cfg.tile_size);
        let tw = x1 - x0;
        for y in y0..y1 {
            for x in x0..x1 {
                let p = (y - y0) * tw + (x - x0);
                out.intensity.set(x, y, r.intensity[p]);
                out.depth.set(x, y, r.depth[p]);
                out.alpha_acc.set(x, y, r.alpha[p]);
            }
        }
        times.intersect += r.intersect;
        times.composite += r.composite;
    }
    times.total = start.elapsed();
    Ok((out, times))
}

pub fn render(scene: &SceneModel, view: &CameraView, cfg: &TileConfig) -> Result<RenderOutput> {
    render_timed(scene, view, cfg).map(|(o, _)| o)
}

/// Writes `<stem>.png` and `<stem>.ugsi` for intensity plus
/// `<stem>_depth.ugsi` and a normalized `<stem>_depth.png` preview.
pub fn write_render(out: &RenderOutput, stem: &std::path::Path) -> Result<()> {
    let with = |suffix: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(suffix);
        std::path::PathBuf::from(s)
    };
    out.intensity.write_png(with(".png"))?;
    out.intensity.write_ugsi(with(".ugsi"))?;
    out.depth.write_ugsi(with("_depth.ugsi"))?;
    out.depth.normalized().write_png(with("_depth.png"))
}
