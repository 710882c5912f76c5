//! Seeded synthetic phantom: a layered tissue-like scene plus the images a
//! swept probe would record of it.
//!
//! Bright interfaces are long, thin, nearly camera-facing disks with high
//! opacity; diffuse speckle is many small, faint disks scattered through the
//! volume. The probe sweeps along world `x` at varying stand-off distance
//! with a small random tilt, looking down `+z`, so each disk is seen at
//! several depths and the attenuation term is observable.

use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Dataset, Frame};
use crate::acoustics::softplus_inverse;
use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::image::Image;
use crate::raster::reference_render;
use crate::scene::{logit, sh, DarParams, SceneModel, SplatPrimitive};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub rng_seed: u64,
    pub n_layers: usize,
    pub n_speckle_splats: usize,
    /// World box `[min, max]` holding every disk center.
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
    pub n_views: usize,
    pub width: usize,
    pub height: usize,
    /// True field of view of every view, degrees.
    pub fov_deg: f64,
    /// Relative error of the fov hint written to the dataset.
    pub fov_hint_error: f64,
    /// Probe travel along `x`, centred on 0.
    pub sweep_length: f64,
    /// Maximum tilt away from `+z`, degrees.
    pub tilt_deg: f64,
    /// Probe height is drawn from `[-depth_jitter, depth_jitter]`.
    pub depth_jitter: f64,
    /// Multiplicative speckle amplitude; 0 disables.
    pub noise: f64,
    /// Standard deviation of the anchor-point perturbation.
    pub anchor_jitter: f64,
    /// Ground-truth operator weights and reflection coefficient (activated).
    pub w_att: f64,
    pub w_refl: f64,
    pub w_scat: f64,
    pub beta: f64,
    pub gamma_scale: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            rng_seed: 7,
            n_layers: 5,
            n_speckle_splats: 120,
            extent_min: [-1.2, -1.2, 2.5],
            extent_max: [1.2, 1.2, 4.0],
            n_views: 10,
            width: 64,
            height: 64,
            fov_deg: 50.0,
            fov_hint_error: 0.03,
            sweep_length: 0.6,
            tilt_deg: 3.0,
            depth_jitter: 0.3,
            noise: 0.0,
            anchor_jitter: 0.02,
            w_att: 0.05,
            w_refl: 0.15,
            w_scat: 0.1,
            beta: 0.5,
            gamma_scale: 0.3,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_views < 2 {
            return bad(format!("phantom needs at least 2 views, got {}", self.n_views));
        }
        if (0..3).any(|k| !(self.extent_max[k] > self.extent_min[k])) {
            return bad("phantom extent is degenerate".into());
        }
        if self.n_layers + self.n_speckle_splats == 0 {
            return bad("phantom has no disks".into());
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 179.0) {
            return bad(format!("fov_deg out of range: {}", self.fov_deg));
        }
        if !(self.noise >= 0.0) || !(self.anchor_jitter >= 0.0) || !(self.depth_jitter >= 0.0) {
            return bad("noise and jitter amplitudes must be >= 0".into());
        }
        for (name, v) in [("w_att", self.w_att), ("w_refl", self.w_refl), ("w_scat", self.w_scat), ("beta", self.beta)] {
            if !(v > 0.0) {
                return bad(format!("{name} must be > 0"));
            }
        }
        if self.extent_min[2] - self.depth_jitter <= 0.0 {
            return bad("phantom must lie in front of every probe position".into());
        }
        Ok(())
    }
}

fn tilted_frame(rng: &mut ChaCha8Rng, max_tilt: f64, max_spin: f64) -> (Vector3<f64>, Vector3<f64>) {
    let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(-max_spin..=max_spin));
    let tilt = Rotation3::from_euler_angles(
        rng.random_range(-max_tilt..=max_tilt),
        rng.random_range(-max_tilt..=max_tilt),
        0.0,
    );
    let r = tilt * spin;
    (r * Vector3::x(), r * Vector3::y())
}

/// Builds the ground-truth scene and its rendered dataset.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(SceneModel, Dataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (lo, hi) = (Vector3::from(spec.extent_min), Vector3::from(spec.extent_max));
    let degree = 1;
    let nb = sh::basis_count(degree);
    let mut prims = Vec::with_capacity(spec.n_layers + spec.n_speckle_splats);

    for k in 0..spec.n_layers {
        let t = (k as f64 + 0.5) / spec.n_layers as f64;
        let center = Vector3::new(
            rng.random_range(-0.3..=0.3) * (hi.x - lo.x) / 2.0 + (hi.x + lo.x) / 2.0,
            lo.y + t * (hi.y - lo.y) + rng.random_range(-0.05..=0.05),
            rng.random_range(lo.z..=hi.z),
        );
        let (tu, tv) = tilted_frame(&mut rng, 10f64.to_radians(), 10f64.to_radians());
        let mut p = SplatPrimitive::new(center, tu, tv, 1.0, 0.5, degree);
        p.log_scale_u = rng.random_range(0.6f64..1.0).ln();
        p.log_scale_v = rng.random_range(0.05f64..0.09).ln();
        p.opacity_logit = logit(rng.random_range(0.85..0.95));
        p.set_base_response(0, rng.random_range(0.75..0.95));
        p.set_base_response(1, rng.random_range(0.3..0.6));
        p.set_base_response(2, rng.random_range(0.3..0.6));
        prims.push(p);
    }
    for _ in 0..spec.n_speckle_splats {
        let center = Vector3::new(
            rng.random_range(lo.x..=hi.x),
            rng.random_range(lo.y..=hi.y),
            rng.random_range(lo.z..=hi.z),
        );
        let (tu, tv) = tilted_frame(&mut rng, 25f64.to_radians(), std::f64::consts::PI);
        let mut p = SplatPrimitive::new(center, tu, tv, 1.0, 0.5, degree);
        p.log_scale_u = rng.random_range(0.06f64..0.14).ln();
        p.log_scale_v = rng.random_range(0.06f64..0.14).ln();
        p.opacity_logit = logit(rng.random_range(0.25..0.55));
        for ch in 0..3 {
            p.set_base_response(ch, rng.random_range(0.25..0.6));
            for b in 1..nb {
                p.sh_coeffs[ch * nb + b] = rng.random_range(-0.05..=0.05);
            }
        }
        prims.push(p);
    }

    let fov = spec.fov_deg.to_radians();
    let mut scene = SceneModel::new(prims, DarParams::from_fov(fov, fov), degree);
    scene.acoustics.raw_w_att = softplus_inverse(spec.w_att);
    scene.acoustics.raw_w_refl = softplus_inverse(spec.w_refl);
    scene.acoustics.raw_w_scat = softplus_inverse(spec.w_scat);
    scene.acoustics.beta_raw = softplus_inverse(spec.beta);
    for i in 0..3 {
        for j in 0..3 {
            if i != j {
                scene.acoustics.gamma[(i, j)] = rng.random_range(-1.0..=1.0) * spec.gamma_scale;
            }
        }
    }

    let tilt = spec.tilt_deg.to_radians();
    let mut views = Vec::with_capacity(spec.n_views);
    for k in 0..spec.n_views {
        let s = k as f64 / (spec.n_views - 1) as f64 - 0.5;
        let eye = Vector3::new(
            s * spec.sweep_length,
            0.0,
            rng.random_range(-spec.depth_jitter..=spec.depth_jitter),
        );
        let dir = Vector3::new(
            rng.random_range(-tilt..=tilt).tan(),
            rng.random_range(-tilt..=tilt).tan(),
            1.0,
        );
        let mut view = CameraView::look_at(eye, eye + dir, -Vector3::y(), spec.width, spec.height)?;
        view.frame_id = k;
        views.push(view);
    }

    let rendered: Result<Vec<Image>> = views
        .par_iter()
        .map(|v| reference_render(&scene, v).map(|o| o.intensity.clamped()))
        .collect();
    let jitter = Normal::new(0.0, spec.anchor_jitter.max(f64::MIN_POSITIVE)).expect("finite std-dev");
    let anchors: Vec<Vector3<f64>> = scene
        .primitives
        .iter()
        .map(|p| {
            if spec.anchor_jitter == 0.0 {
                p.center
            } else {
                p.center + Vector3::from_fn(|_, _| jitter.sample(&mut rng))
            }
        })
        .collect();
    let mut images = rendered?;
    if spec.noise > 0.0 {
        let mean = (std::f64::consts::PI / 2.0).sqrt();
        for img in &mut images {
            for v in &mut img.data {
                let u: f64 = 1.0 - rng.random::<f64>();
                let rayleigh = (-2.0 * u.ln()).sqrt();
                *v = (*v * (1.0 + spec.noise * (rayleigh - mean))).clamp(0.0, 1.0);
            }
        }
    }

    let frames = images
        .into_iter()
        .zip(views)
        .enumerate()
        .map(|(k, (image, view))| Frame {
            image,
            view,
            file: format!("frames/{k:04}.ugsi"),
        })
        .collect();
    let hint = fov * (1.0 + spec.fov_hint_error);
    let ds = Dataset::new(frames, (hint, hint), anchors)?;
    Ok((scene, ds))
}
