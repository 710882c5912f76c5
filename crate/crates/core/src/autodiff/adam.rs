use serde::{Deserialize, Serialize};

use super::{apply_params, flatten_params, GradientSet, ParamGroup, ParamLayout};
use crate::error::{Error, Result};
use crate::scene::SceneModel;

/// Per-group learning rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrTable {
    pub centers: f64,
    pub tangents: f64,
    pub scales: f64,
    pub opacity: f64,
    pub sh: f64,
    /// beta, Gamma and the three operator weights.
    pub acoustics: f64,
    pub theta: f64,
}

impl Default for LrTable {
    fn default() -> Self {
        LrTable {
            centers: 1.6e-4,
            tangents: 1e-3,
            scales: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            acoustics: 1e-3,
            theta: 1e-3,
        }
    }
}

impl LrTable {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Centers => self.centers,
            ParamGroup::Tangents => self.tangents,
            ParamGroup::Scales => self.scales,
            ParamGroup::Opacity => self.opacity,
            ParamGroup::Sh => self.sh,
            ParamGroup::Beta | ParamGroup::Gamma | ParamGroup::Weights => self.acoustics,
            ParamGroup::ThetaX | ParamGroup::ThetaY => self.theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for g in ParamGroup::ALL {
            let lr = self.get(g);
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::InvalidConfig(format!("learning rate for {g} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments over the flat parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(scene: &SceneModel) -> Self {
        let n = ParamLayout::of(scene).len();
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// Rebuilds the state after the primitive set changed. `sources[k]` is
    /// the old index new primitive `k` inherits moments from; `None` starts
    /// from zero. Global moments are kept.
    pub fn remap(&self, old: ParamLayout, sources: &[Option<usize>]) -> AdamState {
        let new = ParamLayout {
            primitives: sources.len(),
            basis: old.basis,
        };
        let s = old.stride();
        let mut m = vec![0.0; new.len()];
        let mut v = vec![0.0; new.len()];
        for (k, src) in sources.iter().enumerate() {
            if let Some(j) = *src {
                m[k * s..(k + 1) * s].copy_from_slice(&self.m[j * s..(j + 1) * s]);
                v[k * s..(k + 1) * s].copy_from_slice(&self.v[j * s..(j + 1) * s]);
            }
        }
        let (go, gn) = (old.globals_offset(), new.globals_offset());
        m[gn..].copy_from_slice(&self.m[go..]);
        v[gn..].copy_from_slice(&self.v[go..]);
        AdamState { m, v, step: self.step }
    }
}

/// One Adam update of every unfrozen parameter, followed by the constraint
/// projections: Gram-Schmidt on each tangent frame, zero Gamma diagonal and
/// theta clamped to its bounds. Theta is frozen when the scene disables
/// aperture rectification.
pub fn adam_step(
    scene: &mut SceneModel,
    grads: &GradientSet,
    state: &mut AdamState,
    lr: &LrTable,
    cfg: &AdamConfig,
) -> Result<()> {
    let layout = ParamLayout::of(scene);
    let g = grads.flatten();
    if g.len() != layout.len() || state.m.len() != layout.len() || state.v.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: (layout.len(), 1),
            actual: (g.len().min(state.m.len()).min(state.v.len()), 1),
        });
    }
    let mut p = flatten_params(scene);
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let frozen_theta = scene.flags.disable_dar;
    for i in 0..p.len() {
        let group = layout.group(i);
        if frozen_theta && matches!(group, ParamGroup::ThetaX | ParamGroup::ThetaY) {
            continue;
        }
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        p[i] -= lr.get(group) * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    apply_params(scene, &p)?;
    for prim in &mut scene.primitives {
        prim.orthonormalize();
    }
    scene.acoustics.zero_gamma_diagonal();
    scene.dar.clamp();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::backward;
    use crate::geometry::CameraView;
    use crate::image::Image;
    use crate::raster::TileConfig;
    use crate::scene::{DarParams, SplatPrimitive};
    use nalgebra::Vector3;

    fn scene() -> SceneModel {
        let mut p = SplatPrimitive::new(Vector3::new(0.0, 0.0, 2.0), Vector3::x(), Vector3::y(), 0.6, 0.5, 1);
        p.set_base_response(0, 0.4);
        SceneModel::new(vec![p], DarParams::from_fov(0.9, 0.9), 1)
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scene();
        let mut g = GradientSet::zeros(&s);
        g.beta_raw = 1.0;
        let mut st = AdamState::new(&s);
        let before = s.acoustics.beta_raw;
        adam_step(&mut s, &g, &mut st, &LrTable::default(), &AdamConfig::default()).unwrap();
        assert!((before - s.acoustics.beta_raw - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scene();
        let g = GradientSet::zeros(&s);
        let mut st = AdamState::new(&s);
        st.m[0] = 0.0;
        let before = flatten_params(&s);
        adam_step(&mut s, &g, &mut st, &LrTable::default(), &AdamConfig::default()).unwrap();
        assert_eq!(flatten_params(&s), before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constraints_hold_after_steps() {
        let mut s = scene();
        let mut st = AdamState::new(&s);
        let mut g = GradientSet::zeros(&s);
        g.primitives[0].tangent_u = Vector3::new(3.0, -2.0, 1.0);
        g.primitives[0].tangent_v = Vector3::new(0.5, 1.0, -4.0);
        g.gamma[(0, 1)] = 1.0;
        g.theta_x = -1e6;
        let lr = LrTable {
            tangents: 0.3,
            theta: 10.0,
            ..Default::default()
        };
        for _ in 0..1000 {
            adam_step(&mut s, &g, &mut st, &lr, &AdamConfig::default()).unwrap();
        }
        let p = &s.primitives[0];
        assert!((p.tangent_u.norm() - 1.0).abs() < 1e-12);
        assert!((p.tangent_v.norm() - 1.0).abs() < 1e-12);
        assert!(p.tangent_u.dot(&p.tangent_v).abs() < 1e-12);
        for i in 0..3 {
            assert_eq!(s.acoustics.gamma[(i, i)], 0.0);
        }
        assert_eq!(s.dar.theta_x, s.dar.theta_max);
        s.validate().unwrap();
    }

    #[test]
    fn frozen_theta_stays_put() {
        let mut s = scene();
        s.flags.disable_dar = true;
        let mut g = GradientSet::zeros(&s);
        g.theta_x = 1.0;
        g.theta_y = -1.0;
        let before = s.dar.clone();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &g, &mut st, &LrTable::default(), &AdamConfig::default()).unwrap();
        assert_eq!(s.dar, before);
    }

    #[test]
    fn toy_problem_loss_decreases() {
        let mut s = scene();
        let view = CameraView::identity(8, 8).unwrap();
        let target = Image::filled(8, 8, 0.9);
        let cfg = TileConfig::default();
        let mut st = AdamState::new(&s);
        let lr = LrTable::default();
        let mut losses = Vec::new();
        for _ in 0..100 {
            let (rep, g) = backward(&s, &view, &cfg, &target, 0.2).unwrap();
            losses.push(rep.total);
            adam_step(&mut s, &g, &mut st, &lr, &AdamConfig::default()).unwrap();
        }
        for k in 6..losses.len() {
            assert!(losses[k] < losses[k - 1], "step {k}: {} -> {}", losses[k - 1], losses[k]);
        }
    }

    #[test]
    fn remap_copies_rows() {
        let mut s = scene();
        s.primitives.push(s.primitives[0].clone());
        let layout = ParamLayout::of(&s);
        let mut st = AdamState::new(&s);
        for (i, m) in st.m.iter_mut().enumerate() {
            *m = i as f64;
        }
        let r = st.remap(layout, &[Some(1), None, Some(1)]);
        let str = layout.stride();
        assert_eq!(r.m.len(), 3 * str + 12);
        assert_eq!(r.m[0], str as f64);
        assert_eq!(r.m[str], 0.0);
        assert_eq!(r.m[2 * str + 1], (str + 1) as f64);
        assert_eq!(r.m[3 * str], layout.globals_offset() as f64);
    }
}
