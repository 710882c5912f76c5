//! Central-difference verification of [`super::backward`].

use std::collections::BTreeMap;

use serde::Serialize;

use super::{apply_params, backward, flatten_params, loss, project_frame_grad, ParamGroup, ParamLayout};
use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::image::Image;
use crate::raster::{render_unchecked_frames, TileConfig};
use crate::scene::SceneModel;

/// Which flat parameters to check.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSelector {
    All,
    Groups(Vec<ParamGroup>),
    Indices(Vec<usize>),
}

impl ParamSelector {
    fn indices(&self, layout: &ParamLayout) -> Vec<usize> {
        match self {
            ParamSelector::All => (0..layout.len()).collect(),
            ParamSelector::Groups(gs) => (0..layout.len()).filter(|&i| gs.contains(&layout.group(i))).collect(),
            ParamSelector::Indices(ix) => ix.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub group: ParamGroup,
    pub analytic: f64,
    pub numeric: f64,
    /// Central difference with step `2h`.
    pub numeric_wide: f64,
    pub rel_error: f64,
    /// Step `h` the entry was differenced with.
    pub step: f64,
    /// The two step sizes agree, so the loss is smooth around this entry.
    /// Where they disagree the difference straddles a kink or a depth-order
    /// swap and says nothing about the derivative.
    pub smooth: bool,
}

/// Largest relative disagreement between the `h` and `2h` differences for an
/// entry to count as smooth.
pub const SMOOTHNESS_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    /// Largest relative error over the smooth entries.
    pub fn max_error(&self) -> f64 {
        self.smooth_entries().fold(0.0, |m, e| m.max(e.rel_error))
    }

    pub fn smooth_entries(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.smooth)
    }

    pub fn non_smooth(&self) -> usize {
        self.entries.iter().filter(|e| !e.smooth).count()
    }

    /// Largest relative error per group over the smooth entries.
    pub fn max_error_by_group(&self) -> BTreeMap<ParamGroup, f64> {
        let mut out = BTreeMap::new();
        for e in self.smooth_entries() {
            let m = out.entry(e.group).or_insert(0.0f64);
            *m = m.max(e.rel_error);
        }
        out
    }

    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.smooth_entries().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(a: f64, f: f64) -> f64 {
    (a - f).abs() / a.abs().max(f.abs()).max(1e-8)
}

/// Loss of `scene` rendered from `view` against `target`.
pub fn loss_at(scene: &SceneModel, view: &CameraView, cfg: &TileConfig, target: &Image, lambda: f64) -> Result<f64> {
    let out = render_unchecked_frames(scene, view, cfg)?;
    Ok(loss(&out.intensity, target, lambda)?.total)
}

/// Compares analytic gradients against central differences with step `h`.
/// Each entry is also differenced with step `2h` to flag non-smooth points.
///
/// Tangent entries are compared after projection: all six raw differences of
/// the primitive's frame are taken and projected the same way the analytic
/// gradient is.
pub fn finite_diff_check(
    scene: &SceneModel,
    view: &CameraView,
    cfg: &TileConfig,
    target: &Image,
    lambda: f64,
    selector: &ParamSelector,
    h: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Precondition(format!("finite-difference step must be > 0, got {h}")));
    }
    let layout = ParamLayout::of(scene);
    let indices = selector.indices(&layout);
    if let Some(&bad) = indices.iter().find(|&&i| i >= layout.len()) {
        return Err(Error::Precondition(format!("parameter index {bad} out of range {}", layout.len())));
    }
    let (_, grads) = backward(scene, view, cfg, target, lambda)?;
    let analytic = grads.flatten();
    let base = flatten_params(scene);
    let mut work = scene.clone();

    // Differences with steps h and 2h.
    let mut central = |idx: usize| -> Result<[f64; 2]> {
        let mut out = [0.0; 2];
        for (o, step) in out.iter_mut().zip([h, 2.0 * h]) {
            let mut p = base.clone();
            p[idx] = base[idx] + step;
            apply_params(&mut work, &p)?;
            let plus = loss_at(&work, view, cfg, target, lambda)?;
            p[idx] = base[idx] - step;
            apply_params(&mut work, &p)?;
            let minus = loss_at(&work, view, cfg, target, lambda)?;
            *o = (plus - minus) / (2.0 * step);
        }
        Ok(out)
    };

    let mut frames: BTreeMap<usize, [[f64; 2]; 6]> = BTreeMap::new();
    let mut entries = Vec::with_capacity(indices.len());
    for idx in indices {
        let group = layout.group(idx);
        let numeric = if group == ParamGroup::Tangents {
            let prim = layout.primitive(idx).expect("tangent index belongs to a primitive");
            let first = prim * layout.stride() + 3;
            let fd = match frames.get(&prim) {
                Some(fd) => *fd,
                None => {
                    let mut raw = [[0.0; 2]; 6];
                    for (k, r) in raw.iter_mut().enumerate() {
                        *r = central(first + k)?;
                    }
                    let p = &scene.primitives[prim];
                    let mut fd = [[0.0; 2]; 6];
                    for s in 0..2 {
                        let gu = nalgebra::Vector3::new(raw[0][s], raw[1][s], raw[2][s]);
                        let gv = nalgebra::Vector3::new(raw[3][s], raw[4][s], raw[5][s]);
                        let (pu, pv) = project_frame_grad(&p.tangent_u, &p.tangent_v, &gu, &gv);
                        for k in 0..3 {
                            fd[k][s] = pu[k];
                            fd[k + 3][s] = pv[k];
                        }
                    }
                    frames.insert(prim, fd);
                    fd
                }
            };
            fd[idx - first]
        } else {
            central(idx)?
        };
        let [numeric, numeric_wide] = numeric;
        entries.push(GradCheckEntry {
            index: idx,
            group,
            analytic: analytic[idx],
            numeric,
            numeric_wide,
            rel_error: relative_error(analytic[idx], numeric),
            step: h,
            smooth: relative_error(numeric, numeric_wide) <= SMOOTHNESS_TOL,
        });
    }
    Ok(GradCheckReport { entries })
}

/// [`finite_diff_check`] at step `h`, after which entries that are rough or
/// off by more than `tol` are redone at `h / 10`, `h / 100`, ... for up to
/// `refinements` rounds. Near a good fit many pixels sit at the L1 kink, and
/// each one biases a coarse difference slightly; a finer step sees fewer of
/// them. A wrong analytic gradient disagrees at every step.
#[allow(clippy::too_many_arguments)]
pub fn finite_diff_check_refined(
    scene: &SceneModel,
    view: &CameraView,
    cfg: &TileConfig,
    target: &Image,
    lambda: f64,
    selector: &ParamSelector,
    h: f64,
    tol: f64,
    refinements: usize,
) -> Result<GradCheckReport> {
    let mut report = finite_diff_check(scene, view, cfg, target, lambda, selector, h)?;
    let mut step = h;
    for _ in 0..refinements {
        let open: Vec<usize> = (0..report.entries.len())
            .filter(|&k| !(report.entries[k].smooth && report.entries[k].rel_error <= tol))
            .collect();
        if open.is_empty() {
            break;
        }
        step /= 10.0;
        let idx = open.iter().map(|&k| report.entries[k].index).collect();
        let finer = finite_diff_check(scene, view, cfg, target, lambda, &ParamSelector::Indices(idx), step)?;
        for (&k, new) in open.iter().zip(finer.entries) {
            let old = &report.entries[k];
            if new.smooth && (!old.smooth || new.rel_error < old.rel_error) {
                report.entries[k] = new;
            }
        }
    }
    Ok(report)
}
