//! Reverse-mode gradients of the image loss, a finite-difference checker,
//! the loss itself, and the Adam optimizer.
//!
//! Parameters are addressed through a flat layout shared by the optimizer and
//! the checker. Per primitive, in order: center (3), tangent_u (3),
//! tangent_v (3), log scales (2), opacity logit (1), SH coefficients (3B,
//! channel-major). After all primitives come the globals: beta_raw, the six
//! off-diagonal Gamma entries in row-major order, raw_w_att, raw_w_refl,
//! raw_w_scat, theta_x, theta_y.

mod adam;
mod backward;
mod check;
mod loss;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState, LrTable};
pub use backward::{backward, backward_from_image};
pub use check::{finite_diff_check, finite_diff_check_refined, loss_at, GradCheckEntry, GradCheckReport, ParamSelector, SMOOTHNESS_TOL};
pub use loss::{loss, loss_with_grad, LossReport};

use crate::error::{Error, Result};
use crate::scene::{basis_count, SceneModel};

pub const GLOBAL_PARAMS: usize = 12;
/// Row/column of the off-diagonal Gamma entries in flat order.
pub const GAMMA_OFF_DIAGONAL: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Centers,
    Tangents,
    Scales,
    Opacity,
    Sh,
    Beta,
    Gamma,
    Weights,
    ThetaX,
    ThetaY,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 10] = [
        ParamGroup::Centers,
        ParamGroup::Tangents,
        ParamGroup::Scales,
        ParamGroup::Opacity,
        ParamGroup::Sh,
        ParamGroup::Beta,
        ParamGroup::Gamma,
        ParamGroup::Weights,
        ParamGroup::ThetaX,
        ParamGroup::ThetaY,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Centers => "centers",
            ParamGroup::Tangents => "tangents",
            ParamGroup::Scales => "scales",
            ParamGroup::Opacity => "opacity",
            ParamGroup::Sh => "sh",
            ParamGroup::Beta => "beta",
            ParamGroup::Gamma => "gamma",
            ParamGroup::Weights => "weights",
            ParamGroup::ThetaX => "theta_x",
            ParamGroup::ThetaY => "theta_y",
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ParamGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown parameter group {s:?}")))
    }
}

/// Index arithmetic for the flat parameter vector of one scene shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub primitives: usize,
    pub basis: usize,
}

impl ParamLayout {
    pub fn of(scene: &SceneModel) -> Self {
        ParamLayout {
            primitives: scene.primitives.len(),
            basis: basis_count(scene.sh_degree),
        }
    }

    pub fn stride(&self) -> usize {
        12 + 3 * self.basis
    }

    pub fn globals_offset(&self) -> usize {
        self.primitives * self.stride()
    }

    pub fn len(&self) -> usize {
        self.globals_offset() + GLOBAL_PARAMS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn group(&self, index: usize) -> ParamGroup {
        let g = self.globals_offset();
        if index >= g {
            return match index - g {
                0 => ParamGroup::Beta,
                1..=6 => ParamGroup::Gamma,
                7..=9 => ParamGroup::Weights,
                10 => ParamGroup::ThetaX,
                _ => ParamGroup::ThetaY,
            };
        }
        match index % self.stride() {
            0..=2 => ParamGroup::Centers,
            3..=8 => ParamGroup::Tangents,
            9 | 10 => ParamGroup::Scales,
            11 => ParamGroup::Opacity,
            _ => ParamGroup::Sh,
        }
    }

    /// Primitive owning a flat index, if any.
    pub fn primitive(&self, index: usize) -> Option<usize> {
        (index < self.globals_offset()).then(|| index / self.stride())
    }
}

/// Reads every learnable scalar of `scene` into a flat vector.
pub fn flatten_params(scene: &SceneModel) -> Vec<f64> {
    let layout = ParamLayout::of(scene);
    let mut out = Vec::with_capacity(layout.len());
    for p in &scene.primitives {
        out.extend(p.center.iter());
        out.extend(p.tangent_u.iter());
        out.extend(p.tangent_v.iter());
        out.extend([p.log_scale_u, p.log_scale_v, p.opacity_logit]);
        out.extend(p.sh_coeffs.iter());
    }
    let a = &scene.acoustics;
    out.push(a.beta_raw);
    out.extend(GAMMA_OFF_DIAGONAL.iter().map(|&(i, j)| a.gamma[(i, j)]));
    out.extend([a.raw_w_att, a.raw_w_refl, a.raw_w_scat, scene.dar.theta_x, scene.dar.theta_y]);
    out
}

/// Writes a flat vector back into `scene` without any projection.
pub fn apply_params(scene: &mut SceneModel, params: &[f64]) -> Result<()> {
    let layout = ParamLayout::of(scene);
    if params.len() != layout.len() {
        return Err(Error::DimensionMismatch {
            expected: (layout.len(), 1),
            actual: (params.len(), 1),
        });
    }
    let s = layout.stride();
    for (p, chunk) in scene.primitives.iter_mut().zip(params.chunks_exact(s)) {
        p.center = Vector3::new(chunk[0], chunk[1], chunk[2]);
        p.tangent_u = Vector3::new(chunk[3], chunk[4], chunk[5]);
        p.tangent_v = Vector3::new(chunk[6], chunk[7], chunk[8]);
        p.log_scale_u = chunk[9];
        p.log_scale_v = chunk[10];
        p.opacity_logit = chunk[11];
        p.sh_coeffs.copy_from_slice(&chunk[12..]);
    }
    let g = &params[layout.globals_offset()..];
    let a = &mut scene.acoustics;
    a.beta_raw = g[0];
    for (k, &(i, j)) in GAMMA_OFF_DIAGONAL.iter().enumerate() {
        a.gamma[(i, j)] = g[1 + k];
    }
    a.raw_w_att = g[7];
    a.raw_w_refl = g[8];
    a.raw_w_scat = g[9];
    scene.dar.theta_x = g[10];
    scene.dar.theta_y = g[11];
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveGrad {
    pub center: Vector3<f64>,
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
    pub log_scales: [f64; 2],
    pub opacity_logit: f64,
    pub sh_coeffs: Vec<f64>,
}

impl PrimitiveGrad {
    pub fn zeros(basis: usize) -> Self {
        PrimitiveGrad {
            center: Vector3::zeros(),
            tangent_u: Vector3::zeros(),
            tangent_v: Vector3::zeros(),
            log_scales: [0.0; 2],
            opacity_logit: 0.0,
            sh_coeffs: vec![0.0; 3 * basis],
        }
    }
}

/// Loss gradient, shaped like the learnable part of a [`SceneModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub primitives: Vec<PrimitiveGrad>,
    pub beta_raw: f64,
    /// Diagonal entries are always zero.
    pub gamma: Matrix3<f64>,
    pub raw_w_att: f64,
    pub raw_w_refl: f64,
    pub raw_w_scat: f64,
    pub theta_x: f64,
    pub theta_y: f64,
}

impl GradientSet {
    pub fn zeros(scene: &SceneModel) -> Self {
        let nb = basis_count(scene.sh_degree);
        GradientSet {
            primitives: vec![PrimitiveGrad::zeros(nb); scene.primitives.len()],
            beta_raw: 0.0,
            gamma: Matrix3::zeros(),
            raw_w_att: 0.0,
            raw_w_refl: 0.0,
            raw_w_scat: 0.0,
            theta_x: 0.0,
            theta_y: 0.0,
        }
    }

    /// Same order as [`flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.primitives {
            out.extend(p.center.iter());
            out.extend(p.tangent_u.iter());
            out.extend(p.tangent_v.iter());
            out.extend([p.log_scales[0], p.log_scales[1], p.opacity_logit]);
            out.extend(p.sh_coeffs.iter());
        }
        out.push(self.beta_raw);
        out.extend(GAMMA_OFF_DIAGONAL.iter().map(|&(i, j)| self.gamma[(i, j)]));
        out.extend([self.raw_w_att, self.raw_w_refl, self.raw_w_scat, self.theta_x, self.theta_y]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Projects each tangent-frame gradient onto the tangent space of the
    /// orthonormal-frame constraint: `G - Q sym(Q^T G)` with `Q = [t_u t_v]`.
    pub fn project_tangents(&mut self, scene: &SceneModel) {
        for (g, p) in self.primitives.iter_mut().zip(&scene.primitives) {
            let (gu, gv) = project_frame_grad(&p.tangent_u, &p.tangent_v, &g.tangent_u, &g.tangent_v);
            g.tangent_u = gu;
            g.tangent_v = gv;
        }
    }
}

pub(crate) fn project_frame_grad(
    tu: &Vector3<f64>,
    tv: &Vector3<f64>,
    gu: &Vector3<f64>,
    gv: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let q = Matrix3x2::from_columns(&[*tu, *tv]);
    let g = Matrix3x2::from_columns(&[*gu, *gv]);
    let qtg = q.transpose() * g;
    let sym = (qtg + qtg.transpose()) * 0.5;
    let out = g - q * sym;
    (out.column(0).into(), out.column(1).into())
}
