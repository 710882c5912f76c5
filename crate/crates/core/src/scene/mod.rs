//! Explicit scene representation: Gaussian disks plus scene-global acoustic
//! and aperture parameters.

mod checkpoint;
mod random;
pub mod sh;

use nalgebra::{Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    checkpoint_size, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION, HEADER_BYTES,
};
pub use random::{random_scene, RandomSceneSpec};
pub use sh::{basis_count, eval_sh};

use crate::acoustics::sigmoid;
use crate::error::{Error, Result};

const FRAME_TOL: f64 = 1e-9;

/// Fixed log-domain attenuation coefficient. Not learnable.
pub const ATTENUATION_ALPHA: f64 = 1.0;

/// One planar Gaussian disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatPrimitive {
    pub center: Vector3<f64>,
    pub tangent_u: Vector3<f64>,
    pub tangent_v: Vector3<f64>,
    /// Log of the standard deviation along `tangent_u`, world units.
    pub log_scale_u: f64,
    pub log_scale_v: f64,
    pub opacity_logit: f64,
    /// Channel-major `3 x B` coefficients, `B = (degree + 1)^2`.
    pub sh_coeffs: Vec<f64>,
}

impl SplatPrimitive {
    /// A disk with the given frame, isotropic scale and a DC-only response.
    pub fn new(
        center: Vector3<f64>,
        tangent_u: Vector3<f64>,
        tangent_v: Vector3<f64>,
        scale: f64,
        opacity: f64,
        sh_degree: u32,
    ) -> Self {
        SplatPrimitive {
            center,
            tangent_u,
            tangent_v,
            log_scale_u: scale.ln(),
            log_scale_v: scale.ln(),
            opacity_logit: logit(opacity),
            sh_coeffs: vec![0.0; 3 * basis_count(sh_degree)],
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.tangent_u.cross(&self.tangent_v)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scales(&self) -> (f64, f64) {
        (self.log_scale_u.exp(), self.log_scale_v.exp())
    }

    /// Sets the channel's DC term so that the base response equals `value`
    /// (before clamping), leaving higher bands untouched.
    pub fn set_base_response(&mut self, channel: usize, value: f64) {
        let nb = self.sh_coeffs.len() / 3;
        self.sh_coeffs[channel * nb] = (value - 0.5) / sh::SH_C0;
    }

    /// Gram-Schmidt on `(tangent_u, tangent_v)`.
    pub fn orthonormalize(&mut self) {
        self.tangent_u = self.tangent_u.normalize();
        let v = self.tangent_v - self.tangent_u * self.tangent_u.dot(&self.tangent_v);
        self.tangent_v = v.normalize();
    }

    /// Re-sizes the SH block to a new degree, keeping the overlapping bands.
    pub fn resize_sh(&mut self, from: u32, to: u32) {
        let (nf, nt) = (basis_count(from), basis_count(to));
        let mut out = vec![0.0; 3 * nt];
        for ch in 0..3 {
            for b in 0..nf.min(nt) {
                out[ch * nt + b] = self.sh_coeffs[ch * nf + b];
            }
        }
        self.sh_coeffs = out;
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Tangent-plane covariance `diag(exp(2 s_u), exp(2 s_v))`.
pub fn covariance_2d(prim: &SplatPrimitive) -> Matrix2<f64> {
    Matrix2::new(
        (2.0 * prim.log_scale_u).exp(),
        0.0,
        0.0,
        (2.0 * prim.log_scale_v).exp(),
    )
}

/// `exp(-q / 2)` with `q = [u v] cov^-1 [u v]^T`.
pub fn gaussian_weight(u: f64, v: f64, cov: &Matrix2<f64>) -> f64 {
    let det = cov.m11 * cov.m22 - cov.m12 * cov.m21;
    // Inverse of a symmetric 2x2 written out.
    let q = (cov.m22 * u * u - (cov.m12 + cov.m21) * u * v + cov.m11 * v * v) / det;
    (-0.5 * q).exp()
}

/// Scene-global parameters of the acoustic shading operator.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticParams {
    /// Pre-activation reflection coefficient; `beta = softplus(beta_raw)`.
    pub beta_raw: f64,
    /// Scattering matrix; its diagonal is structurally zero.
    pub gamma: Matrix3<f64>,
    pub raw_w_att: f64,
    pub raw_w_refl: f64,
    pub raw_w_scat: f64,
}

/// Starting operator weights. Small, so training begins close to the bare
/// SH response and grows the acoustic terms only where the data supports
/// them.
pub const INITIAL_WEIGHT: f64 = 0.01;

impl Default for AcousticParams {
    fn default() -> Self {
        // softplus^-1(INITIAL_WEIGHT)
        let raw = INITIAL_WEIGHT.exp_m1().ln();
        AcousticParams {
            beta_raw: 0.0,
            gamma: Matrix3::zeros(),
            raw_w_att: raw,
            raw_w_refl: raw,
            raw_w_scat: raw,
        }
    }
}

impl AcousticParams {
    pub fn alpha(&self) -> f64 {
        ATTENUATION_ALPHA
    }

    pub fn zero_gamma_diagonal(&mut self) {
        for i in 0..3 {
            self.gamma[(i, i)] = 0.0;
        }
    }
}

/// Learnable log-tangent half fields of view with clamp bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct DarParams {
    pub theta_x: f64,
    pub theta_y: f64,
    pub theta_min: f64,
    pub theta_max: f64,
}

impl DarParams {
    /// `theta = ln tan(fov / 2)` per axis, with default bounds that keep the
    /// field of view inside `(10 deg, 170 deg)`.
    pub fn from_fov(fov_x: f64, fov_y: f64) -> Self {
        DarParams {
            theta_x: (fov_x / 2.0).tan().ln(),
            theta_y: (fov_y / 2.0).tan().ln(),
            theta_min: 5f64.to_radians().tan().ln(),
            theta_max: 85f64.to_radians().tan().ln(),
        }
    }

    pub fn clamp(&mut self) {
        self.theta_x = self.theta_x.clamp(self.theta_min, self.theta_max);
        self.theta_y = self.theta_y.clamp(self.theta_min, self.theta_max);
    }
}

impl Default for DarParams {
    fn default() -> Self {
        DarParams::from_fov(std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2)
    }
}

/// Module-removal switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub disable_att: bool,
    pub disable_refl_scat: bool,
    /// Freezes the aperture parameters at their initial values.
    pub disable_dar: bool,
    /// Bypasses the acoustic operator entirely (pure SH response).
    pub disable_pd: bool,
}

impl AblationFlags {
    pub fn bits(&self) -> u32 {
        (self.disable_att as u32)
            | (self.disable_refl_scat as u32) << 1
            | (self.disable_dar as u32) << 2
            | (self.disable_pd as u32) << 3
    }

    pub fn from_bits(bits: u32) -> Option<Self> {
        if bits & !0b1111 != 0 {
            return None;
        }
        Some(AblationFlags {
            disable_att: bits & 1 != 0,
            disable_refl_scat: bits & 2 != 0,
            disable_dar: bits & 4 != 0,
            disable_pd: bits & 8 != 0,
        })
    }

    pub fn all() -> Self {
        AblationFlags {
            disable_att: true,
            disable_refl_scat: true,
            disable_dar: true,
            disable_pd: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneModel {
    pub primitives: Vec<SplatPrimitive>,
    pub acoustics: AcousticParams,
    pub dar: DarParams,
    pub sh_degree: u32,
    pub flags: AblationFlags,
}

impl SceneModel {
    pub fn new(primitives: Vec<SplatPrimitive>, dar: DarParams, sh_degree: u32) -> Self {
        SceneModel {
            primitives,
            acoustics: AcousticParams::default(),
            dar,
            sh_degree,
            flags: AblationFlags::default(),
        }
    }

    pub fn basis_count(&self) -> usize {
        basis_count(self.sh_degree)
    }

    /// Changes the SH degree of every primitive, keeping shared bands.
    pub fn set_sh_degree(&mut self, degree: u32) -> Result<()> {
        sh::check_degree(degree)?;
        for p in &mut self.primitives {
            p.resize_sh(self.sh_degree, degree);
        }
        self.sh_degree = degree;
        Ok(())
    }

    /// Checks every structural invariant; rendering requires a valid scene.
    pub fn validate(&self) -> Result<()> {
        self.validate_with_frame_tol(FRAME_TOL)
    }

    /// Like [`validate`](Self::validate) with a custom orthonormality
    /// tolerance. Finite-difference probes move single frame components and
    /// need this relaxed.
    pub(crate) fn validate_with_frame_tol(&self, frame_tol: f64) -> Result<()> {
        sh::check_degree(self.sh_degree)?;
        if self.primitives.is_empty() {
            return Err(Error::Precondition("scene has no primitives".into()));
        }
        let nb = 3 * self.basis_count();
        for (i, p) in self.primitives.iter().enumerate() {
            if p.sh_coeffs.len() != nb {
                return Err(Error::Invariant(format!(
                    "primitive {i} has {} sh coefficients, expected {nb}",
                    p.sh_coeffs.len()
                )));
            }
            let frame_err = (p.tangent_u.norm() - 1.0)
                .abs()
                .max((p.tangent_v.norm() - 1.0).abs())
                .max(p.tangent_u.dot(&p.tangent_v).abs());
            if !(frame_err <= frame_tol) {
                return Err(Error::Invariant(format!(
                    "primitive {i} tangent frame is not orthonormal (error {frame_err:e})"
                )));
            }
            let (su, sv) = p.scales();
            if !(su.is_finite() && sv.is_finite() && su > 0.0 && sv > 0.0) {
                return Err(Error::Invariant(format!("primitive {i} has degenerate scale")));
            }
            let finite = p.center.iter().all(|v| v.is_finite())
                && p.opacity_logit.is_finite()
                && p.sh_coeffs.iter().all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("primitive {i}")));
            }
        }
        for i in 0..3 {
            if self.acoustics.gamma[(i, i)] != 0.0 {
                return Err(Error::Invariant("gamma diagonal must be zero".into()));
            }
        }
        let d = &self.dar;
        if !(d.theta_min <= d.theta_x
            && d.theta_x <= d.theta_max
            && d.theta_min <= d.theta_y
            && d.theta_y <= d.theta_max)
        {
            return Err(Error::Invariant("aperture parameters outside bounds".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn covariance_examples() {
        let mut p = SplatPrimitive::new(
            Vector3::zeros(),
            Vector3::x(),
            Vector3::y(),
            1.0,
            0.5,
            1,
        );
        assert_eq!(covariance_2d(&p), Matrix2::identity());
        p.log_scale_u = 2f64.ln();
        let c = covariance_2d(&p);
        assert!((c.m11 - 4.0).abs() < 1e-15 && c.m22 == 1.0 && c.m12 == 0.0);
    }

    #[test]
    fn gaussian_weight_examples() {
        let cov = Matrix2::new(4.0, 0.0, 0.0, 1.0);
        assert_eq!(gaussian_weight(0.0, 0.0, &cov), 1.0);
        assert!((gaussian_weight(1.0, 1.0, &Matrix2::identity()) - (-1f64).exp()).abs() < 1e-15);
        assert!((gaussian_weight(2.0, 0.0, &cov) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((gaussian_weight(2.0, 0.0, &cov) - 0.606531).abs() < 1e-6);
    }

    #[test]
    fn flags_bits_roundtrip() {
        for bits in 0..16 {
            assert_eq!(AblationFlags::from_bits(bits).unwrap().bits(), bits);
        }
        assert!(AblationFlags::from_bits(16).is_none());
    }

    #[test]
    fn dar_default_bounds_cover_ten_to_170_degrees() {
        let d = DarParams::default();
        let fov = |t: f64| 2.0 * t.exp().atan();
        assert!((fov(d.theta_min).to_degrees() - 10.0).abs() < 1e-9);
        assert!((fov(d.theta_max).to_degrees() - 170.0).abs() < 1e-9);
        assert!(d.theta_x.abs() < 1e-15);
    }

    #[test]
    fn orthonormalize_fixes_skewed_frame() {
        let mut p = SplatPrimitive::new(
            Vector3::zeros(),
            Vector3::new(2.0, 0.1, 0.0),
            Vector3::new(0.5, 1.0, 0.3),
            1.0,
            0.5,
            0,
        );
        p.orthonormalize();
        assert!((p.tangent_u.norm() - 1.0).abs() < 1e-12);
        assert!((p.tangent_v.norm() - 1.0).abs() < 1e-12);
        assert!(p.tangent_u.dot(&p.tangent_v).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_empty_scene_and_gamma_diagonal() {
        let mut s = SceneModel::new(vec![], DarParams::default(), 1);
        assert!(matches!(s.validate(), Err(Error::Precondition(_))));
        s.primitives.push(SplatPrimitive::new(
            Vector3::z(),
            Vector3::x(),
            Vector3::y(),
            0.1,
            0.5,
            1,
        ));
        s.validate().unwrap();
        s.acoustics.gamma[(1, 1)] = 0.1;
        assert!(matches!(s.validate(), Err(Error::Invariant(_))));
    }

    proptest! {
        #[test]
        fn weight_monotone_along_rays(su in -2.0f64..2.0, sv in -2.0f64..2.0, ang in 0.0f64..6.3, t in 0.0f64..5.0, dt in 0.0f64..1.0) {
            let cov = Matrix2::new((2.0 * su).exp(), 0.0, 0.0, (2.0 * sv).exp());
            let (c, s) = (ang.cos(), ang.sin());
            let near = gaussian_weight(t * c, t * s, &cov);
            let far = gaussian_weight((t + dt) * c, (t + dt) * s, &cov);
            prop_assert!(far <= near);
            prop_assert!(near <= 1.0 && near >= 0.0);
        }

        #[test]
        fn covariance_eigenvalues_are_squared_scales(su in -3.0f64..3.0, sv in -3.0f64..3.0) {
            let mut p = SplatPrimitive::new(Vector3::zeros(), Vector3::x(), Vector3::y(), 1.0, 0.5, 0);
            p.log_scale_u = su;
            p.log_scale_v = sv;
            let c = covariance_2d(&p);
            let mut eig: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let mut want = vec![(2.0 * su).exp(), (2.0 * sv).exp()];
            want.sort_by(f64::total_cmp);
            prop_assert!((eig[0] - want[0]).abs() <= 1e-12 * want[0].max(1.0));
            prop_assert!((eig[1] - want[1]).abs() <= 1e-12 * want[1].max(1.0));
            prop_assert!(c.determinant() > 0.0);
        }
    }
}
