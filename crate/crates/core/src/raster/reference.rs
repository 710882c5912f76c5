//! Brute-force renderer used as the correctness oracle for [`super::render`].
//!
//! Every primitive is tested against every pixel through the public
//! single-step operations, with an exact depth sort and no cutoff, tiling, or
//! early termination.

use nalgebra::Vector3;

use super::{RenderOutput, DEPTH_EPS};
use crate::acoustics::{compose, ComposeStage};
use crate::error::Result;
use crate::geometry::{disk_point, intersect, intrinsics_from_dar, pixel_ray_planes, CameraView};
use crate::image::Image;
use crate::scene::{covariance_2d, eval_sh, gaussian_weight, SceneModel};

pub fn reference_render(scene: &SceneModel, view: &CameraView) -> Result<RenderOutput> {
    reference_render_staged(scene, view, ComposeStage::PerSplat)
}

pub fn reference_render_staged(scene: &SceneModel, view: &CameraView, stage: ComposeStage) -> Result<RenderOutput> {
    scene.validate()?;
    let (w, h) = (view.image_width, view.image_height);
    let intr = intrinsics_from_dar(&scene.dar, w, h);
    let eye = view.center();
    let covs: Vec<_> = scene.primitives.iter().map(covariance_2d).collect();
    let mut out = RenderOutput {
        intensity: Image::new(w, h),
        depth: Image::new(w, h),
        alpha_acc: Image::new(w, h),
    };
    for y in 0..h {
        for x in 0..w {
            let (hx, hy) = pixel_ray_planes(x as f64, y as f64, &intr);
            let mut hits = Vec::new();
            for (i, prim) in scene.primitives.iter().enumerate() {
                let hit = intersect(prim, view, &hx, &hy);
                if hit.valid {
                    hits.push((hit.depth_z, i, hit.u, hit.v));
                }
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

            let mut transmittance = 1.0;
            let mut value = 0.0;
            let mut base = Vector3::zeros();
            let mut depth = 0.0;
            for &(z, i, u, v) in &hits {
                let prim = &scene.primitives[i];
                let alpha = prim.opacity() * gaussian_weight(u, v, &covs[i]);
                let dir = (disk_point(prim, u, v) - eye).normalize();
                let c = eval_sh(&dir, &prim.sh_coeffs, scene.sh_degree)?;
                let weight = alpha * transmittance;
                match stage {
                    ComposeStage::PerSplat => value += compose(&c, z, &scene.acoustics, scene.flags)?[0] * weight,
                    ComposeStage::PerPixel => base += c * weight,
                }
                depth += z * weight;
                transmittance *= 1.0 - alpha;
            }
            let acc = 1.0 - transmittance;
            let depth = if acc > 0.0 { depth / acc.max(DEPTH_EPS) } else { 0.0 };
            if stage == ComposeStage::PerPixel {
                value = compose(&base, depth, &scene.acoustics, scene.flags)?[0];
            }
            out.intensity.set(x, y, value);
            out.depth.set(x, y, depth);
            out.alpha_acc.set(x, y, acc);
        }
    }
    Ok(out)
}
