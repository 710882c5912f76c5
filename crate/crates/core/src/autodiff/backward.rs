//! Reverse pass through the tiled renderer.
//!
//! Each pixel re-gathers its hit list exactly as the forward pass did, then
//! sweeps it back to front. For front-to-back compositing of features `f_i`
//! with weights `a_i T_i`, the opacity gradient is
//!
//! ```text
//! dL/da_i = T_i sum_k g_k (f_ik - S_ik),   S_(i-1) = f_i a_i + (1 - a_i) S_i
//! ```
//!
//! where `S_i` is the colour composited behind hit `i`. This needs no division
//! by `1 - a_i`. Gradients are accumulated into per-tile buffers indexed by the
//! tile's candidate list and merged in tile order, so the result does not
//! depend on the worker count.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::loss::loss_with_grad;
use super::{GradientSet, LossReport};
use crate::acoustics::{ComposeStage, GlobalGrad, Shading};
use crate::error::{Error, Result};
use crate::geometry::{CameraSplat, CameraView};
use crate::image::Image;
use crate::raster::{render, Hit, Prepared, TileConfig, DEPTH_EPS};
use crate::scene::{sh, SceneModel};

/// Loss against `target` and its gradient with respect to every learnable
/// field. Tangent gradients are projected onto the orthonormal-frame
/// constraint.
pub fn backward(
    scene: &SceneModel,
    view: &CameraView,
    cfg: &TileConfig,
    target: &Image,
    lambda_dssim: f64,
) -> Result<(LossReport, GradientSet)> {
    if target.dims() != (view.image_width, view.image_height) {
        return Err(Error::DimensionMismatch {
            expected: (view.image_width, view.image_height),
            actual: target.dims(),
        });
    }
    if target.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("target image".into()));
    }
    let out = render(scene, view, cfg)?;
    let (report, g_img) = loss_with_grad(&out.intensity, target, lambda_dssim)?;
    let mut grads = backward_from_image(scene, view, cfg, &g_img)?;
    grads.project_tangents(scene);
    Ok((report, grads))
}

/// Raw (unprojected) gradient of `sum_p g_intensity[p] * intensity[p]`.
pub fn backward_from_image(
    scene: &SceneModel,
    view: &CameraView,
    cfg: &TileConfig,
    g_intensity: &[f64],
) -> Result<GradientSet> {
    let (w, h) = (view.image_width, view.image_height);
    if g_intensity.len() != w * h {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            actual: (g_intensity.len(), 1),
        });
    }
    let prep = Prepared::new(scene, view, cfg)?;
    let nb = sh::basis_count(scene.sh_degree);
    let stride = 12 + 3 * nb;
    let tiles: Vec<TileGrad> = (0..prep.tiles_x * prep.tiles_y)
        .into_par_iter()
        .map(|t| backward_tile(&prep, cfg, t, g_intensity, stride))
        .collect();

    // Ordered reduction. Positional rows are still in camera coordinates.
    let n = scene.primitives.len();
    let mut acc = vec![0.0; n * stride];
    let mut globals = GlobalGrad::default();
    let (mut theta_x, mut theta_y) = (0.0, 0.0);
    for (tile, tg) in tiles.iter().enumerate() {
        for (local, &gi) in prep.tile_lists[tile].iter().enumerate() {
            let src = &tg.buf[local * stride..(local + 1) * stride];
            let dst = &mut acc[gi as usize * stride..(gi as usize + 1) * stride];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        globals.add(&tg.globals);
        theta_x += tg.theta[0];
        theta_y += tg.theta[1];
    }

    let mut grads = GradientSet::zeros(scene);
    let rt = view.rotation.transpose();
    for (g, row) in grads.primitives.iter_mut().zip(acc.chunks_exact(stride)) {
        g.center = rt * Vector3::new(row[0], row[1], row[2]);
        g.tangent_u = rt * Vector3::new(row[3], row[4], row[5]);
        g.tangent_v = rt * Vector3::new(row[6], row[7], row[8]);
        g.log_scales = [row[9], row[10]];
        g.opacity_logit = row[11];
        g.sh_coeffs.copy_from_slice(&row[12..]);
    }
    let fin = Shading::finish_globals(&scene.acoustics, &globals);
    grads.beta_raw = fin.beta_raw;
    grads.gamma = fin.gamma;
    for i in 0..3 {
        grads.gamma[(i, i)] = 0.0;
    }
    grads.raw_w_att = fin.raw_w_att;
    grads.raw_w_refl = fin.raw_w_refl;
    grads.raw_w_scat = fin.raw_w_scat;
    if !scene.flags.disable_dar {
        grads.theta_x = theta_x;
        grads.theta_y = theta_y;
    }
    Ok(grads)
}

struct TileGrad {
    buf: Vec<f64>,
    globals: GlobalGrad,
    theta: [f64; 2],
}

/// Forward quantities of one composited hit.
struct Rec {
    t: f64,
    a: f64,
    c: [f64; 3],
    raw: [f64; 3],
    r: f64,
}

fn backward_tile(prep: &Prepared, cfg: &TileConfig, tile: usize, g_img: &[f64], stride: usize) -> TileGrad {
    let cands = &prep.tile_lists[tile];
    let mut out = TileGrad {
        buf: vec![0.0; cands.len() * stride],
        globals: GlobalGrad::default(),
        theta: [0.0; 2],
    };
    if cands.is_empty() {
        return out;
    }
    let scene = prep.scene;
    let degree = scene.sh_degree;
    let nb = sh::basis_count(degree);
    let per_pixel = cfg.compose_stage == ComposeStage::PerPixel;
    let width = prep.view.image_width;
    let (x0, x1, y0, y1) = prep.tile_bounds(tile, cfg.tile_size);
    let tile_hits = prep.gather_tile(tile, cands, cfg);
    let mut recs: Vec<Rec> = Vec::new();

    for y in y0..y1 {
        for x in x0..x1 {
            let g_out = g_img[y * width + x];
            if g_out == 0.0 {
                continue;
            }
            let p = (y - y0) * (x1 - x0) + (x - x0);
            let ray = &tile_hits.rays[p];
            let hits = &tile_hits.hits[tile_hits.offsets[p]..tile_hits.offsets[p + 1]];
            if hits.is_empty() {
                continue;
            }

            recs.clear();
            let mut t = 1.0;
            for hit in hits {
                let i = hit.global as usize;
                let a = prep.opacity[i] * hit.g;
                let (c, raw) = prep.base_response(i, &ray);
                let r = if per_pixel { 0.0 } else { prep.shading.apply_channel0(&c, hit.z) };
                recs.push(Rec { t, a, c, raw, r });
                t *= 1.0 - a;
                if t < cfg.early_stop_transmittance {
                    break;
                }
            }

            // Output gradient per composited feature. Per splat the single
            // feature is the shaded response; per pixel the features are the
            // base response, depth and unit coverage.
            let mut g_feat = [0.0; 5];
            if per_pixel {
                let (mut cbar, mut zsum) = ([0.0; 3], 0.0);
                for (rec, hit) in recs.iter().zip(hits) {
                    let w = rec.a * rec.t;
                    for k in 0..3 {
                        cbar[k] += rec.c[k] * w;
                    }
                    zsum += hit.z * w;
                }
                let acc = 1.0 - t;
                let depth = if acc > 0.0 { zsum / acc.max(DEPTH_EPS) } else { 0.0 };
                let (g_c, g_d) = prep.shading.backward(&cbar, depth, &[g_out, 0.0, 0.0], &mut out.globals);
                g_feat[..3].copy_from_slice(&g_c);
                if acc > 0.0 {
                    g_feat[3] = g_d / acc.max(DEPTH_EPS);
                }
                if acc > DEPTH_EPS {
                    g_feat[4] = -g_d * zsum / (acc * acc);
                }
            } else {
                g_feat[0] = g_out;
            }

            let mut behind = [0.0; 5];
            let mut g_basis = [0.0; sh::MAX_BASIS];
            let (mut g_apix, mut g_bpix) = (0.0, 0.0);
            for k in (0..recs.len()).rev() {
                let rec = &recs[k];
                let hit = &hits[k];
                let feat = if per_pixel {
                    [rec.c[0], rec.c[1], rec.c[2], hit.z, 1.0]
                } else {
                    [rec.r, 0.0, 0.0, 0.0, 0.0]
                };
                let w = rec.a * rec.t;
                let mut g_a = 0.0;
                for f in 0..5 {
                    g_a += g_feat[f] * (feat[f] - behind[f]);
                    behind[f] = feat[f] * rec.a + (1.0 - rec.a) * behind[f];
                }
                g_a *= rec.t;

                let (g_c, g_z) = if per_pixel {
                    ([g_feat[0] * w, g_feat[1] * w, g_feat[2] * w], g_feat[3] * w)
                } else {
                    prep.shading.backward(&rec.c, hit.z, &[g_out * w, 0.0, 0.0], &mut out.globals)
                };

                let i = hit.global as usize;
                let row = &mut out.buf[hit.local as usize * stride..(hit.local as usize + 1) * stride];
                let coeffs = &scene.primitives[i].sh_coeffs;
                for ch in 0..3 {
                    if rec.raw[ch] <= 0.0 || g_c[ch] == 0.0 {
                        continue;
                    }
                    for b in 0..nb {
                        row[12 + ch * nb + b] += g_c[ch] * ray.basis[b];
                        g_basis[b] += g_c[ch] * coeffs[ch * nb + b];
                    }
                }

                // a = opacity * exp(-q / 2), q = u^2 / s_u^2 + v^2 / s_v^2.
                let op = prep.opacity[i];
                let g = hit.g;
                row[11] += g_a * g * op * (1.0 - op);
                let g_gauss = g_a * op * g;
                let (iu, iv) = prep.inv_var[i];
                let g_u = -g_gauss * hit.u * iu;
                let g_v = -g_gauss * hit.v * iv;
                row[9] += g_gauss * hit.u * hit.u * iu;
                row[10] += g_gauss * hit.v * hit.v * iv;

                let (ga, gb) = intersect_backward(&prep.splats[i], ray.a, ray.b, hit, g_u, g_v, g_z, row);
                g_apix += ga;
                g_bpix += gb;
            }

            if degree > 0 {
                let bg = sh::basis_grad(&ray.dir, degree);
                let mut g_dir = Vector3::zeros();
                for b in 1..nb {
                    g_dir += bg[b] * g_basis[b];
                }
                // dir = R^T normalize((a, b, 1)).
                let v = Vector3::new(ray.a, ray.b, 1.0);
                let norm = v.norm();
                let nhat = v / norm;
                let g_n = prep.view.rotation * g_dir;
                let g_v = (g_n - nhat * nhat.dot(&g_n)) / norm;
                g_apix += g_v.x;
                g_bpix += g_v.y;
            }
            // a = 2 (x - c_x) e^theta_x / W, so da/dtheta_x = a.
            out.theta[0] += g_apix * ray.a;
            out.theta[1] += g_bpix * ray.b;
        }
    }
    out
}

/// Back-propagates through the 2x2 ray/disk solve and the hit depth into the
/// camera-frame rows `P = row[0..3]`, `U = row[3..6]`, `V = row[6..9]`.
/// Returns the gradients with respect to the pixel's normalized `(a, b)`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn intersect_backward(
    cs: &CameraSplat,
    a: f64,
    b: f64,
    hit: &Hit,
    mut g_u: f64,
    mut g_v: f64,
    g_z: f64,
    row: &mut [f64],
) -> (f64, f64) {
    let (uu, vv, pp) = (&cs.u_axis, &cs.v_axis, &cs.center);
    let (u, v) = (hit.u, hit.v);

    // z = P.z + u U.z + v V.z
    g_u += g_z * uu.z;
    g_v += g_z * vv.z;
    row[2] += g_z;
    row[5] += g_z * u;
    row[8] += g_z * v;

    let a00 = a * uu.z - uu.x;
    let a01 = a * vv.z - vv.x;
    let a10 = b * uu.z - uu.y;
    let a11 = b * vv.z - vv.y;
    let det = a00 * a11 - a01 * a10;

    // [u v]^T = -A^-1 r, so g_r = -A^-T g and g_A = -(A^-T g) [u v].
    let mu0 = (a11 * g_u - a10 * g_v) / det;
    let mu1 = (-a01 * g_u + a00 * g_v) / det;
    let (g_a00, g_a01, g_a10, g_a11) = (-mu0 * u, -mu0 * v, -mu1 * u, -mu1 * v);
    let (g_r0, g_r1) = (-mu0, -mu1);

    // a00 = a U.z - U.x, a01 = a V.z - V.x, r0 = a P.z - P.x, likewise for b.
    row[3] -= g_a00;
    row[5] += g_a00 * a;
    row[6] -= g_a01;
    row[8] += g_a01 * a;
    row[0] -= g_r0;
    row[2] += g_r0 * a;
    row[4] -= g_a10;
    row[5] += g_a10 * b;
    row[7] -= g_a11;
    row[8] += g_a11 * b;
    row[1] -= g_r1;
    row[2] += g_r1 * b;

    let g_apix = g_a00 * uu.z + g_a01 * vv.z + g_r0 * pp.z;
    let g_bpix = g_a10 * uu.z + g_a11 * vv.z + g_r1 * pp.z;
    (g_apix, g_bpix)
}
