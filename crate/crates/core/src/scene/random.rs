//! Seeded random scenes in front of the canonical camera (origin, looking
//! down `+z`). Used by benchmarks, oracle comparisons and gradient checks.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{logit, DarParams, SceneModel, SplatPrimitive};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSceneSpec {
    pub count: usize,
    pub sh_degree: u32,
    pub extent_min: [f64; 3],
    pub extent_max: [f64; 3],
    /// Per-axis standard deviation range, world units.
    pub scale_range: (f64, f64),
    pub opacity_range: (f64, f64),
    /// Base response range per channel.
    pub response_range: (f64, f64),
    /// Uniform half-width of the non-DC SH coefficients.
    pub sh_high: f64,
    /// Largest angle between a disk normal and the optical axis, degrees.
    pub max_tilt_deg: f64,
    /// Draws non-trivial acoustic parameters instead of the defaults.
    pub random_acoustics: bool,
    pub fov: (f64, f64),
}

impl Default for RandomSceneSpec {
    fn default() -> Self {
        RandomSceneSpec {
            count: 100,
            sh_degree: 1,
            extent_min: [-1.0, -1.0, 2.0],
            extent_max: [1.0, 1.0, 4.0],
            scale_range: (0.05, 0.3),
            opacity_range: (0.2, 0.9),
            response_range: (0.2, 0.8),
            sh_high: 0.1,
            max_tilt_deg: 60.0,
            random_acoustics: true,
            fov: (60f64.to_radians(), 60f64.to_radians()),
        }
    }
}

impl RandomSceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ordered = |r: (f64, f64)| r.0 <= r.1;
        let ok = self.count > 0
            && (0..3).all(|i| self.extent_min[i] <= self.extent_max[i])
            && ordered(self.scale_range)
            && self.scale_range.0 > 0.0
            && ordered(self.opacity_range)
            && self.opacity_range.0 > 0.0
            && self.opacity_range.1 < 1.0
            && ordered(self.response_range)
            && self.sh_high >= 0.0
            && (0.0..90.0).contains(&self.max_tilt_deg);
        if !ok {
            return Err(Error::InvalidConfig(format!("invalid random scene spec {self:?}")));
        }
        super::sh::check_degree(self.sh_degree)
    }
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.0 == r.1 {
        r.0
    } else {
        rng.random_range(r.0..r.1)
    }
}

pub fn random_scene(spec: &RandomSceneSpec, seed: u64) -> Result<SceneModel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_tilt = spec.max_tilt_deg.to_radians();
    let mut prims = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let center = Vector3::from_fn(|i, _| draw(&mut rng, (spec.extent_min[i], spec.extent_max[i])));
        // Spin about the optical axis, then tilt about a random in-plane axis.
        let spin = Rotation3::from_axis_angle(&Vector3::z_axis(), rng.random_range(0.0..std::f64::consts::TAU));
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let axis = Unit::new_normalize(Vector3::new(phi.cos(), phi.sin(), 0.0));
        let tilt = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..=max_tilt));
        let frame: Matrix3<f64> = (tilt * spin).into_inner();
        let mut p = SplatPrimitive::new(
            center,
            frame.column(0).into_owned(),
            frame.column(1).into_owned(),
            1.0,
            0.5,
            spec.sh_degree,
        );
        p.orthonormalize();
        p.log_scale_u = draw(&mut rng, spec.scale_range).ln();
        p.log_scale_v = draw(&mut rng, spec.scale_range).ln();
        p.opacity_logit = logit(draw(&mut rng, spec.opacity_range));
        let nb = p.sh_coeffs.len() / 3;
        for ch in 0..3 {
            p.set_base_response(ch, draw(&mut rng, spec.response_range));
            for b in 1..nb {
                p.sh_coeffs[ch * nb + b] = rng.random_range(-1.0..=1.0) * spec.sh_high;
            }
        }
        prims.push(p);
    }
    let mut scene = SceneModel::new(prims, DarParams::from_fov(spec.fov.0, spec.fov.1), spec.sh_degree);
    if spec.random_acoustics {
        let a = &mut scene.acoustics;
        a.beta_raw = rng.random_range(-1.5..0.0);
        for r in 0..3 {
            for c in 0..3 {
                if r != c {
                    a.gamma[(r, c)] = rng.random_range(-0.4..0.4);
                }
            }
        }
        a.raw_w_att = rng.random_range(-3.0..-1.0);
        a.raw_w_refl = rng.random_range(-3.0..-1.0);
        a.raw_w_scat = rng.random_range(-3.0..-1.0);
    }
    scene.validate()?;
    Ok(scene)
}
