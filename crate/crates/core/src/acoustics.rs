//! Decoupled acoustic shading.
//!
//! A base response `c` is adjusted by three first-order terms:
//!
//! * attenuation `[-alpha z, 0, 0]` (Beer-Lambert decay after log compression),
//! * specular reflection `beta c * c`,
//! * scattering `(Gamma c) * c` with a zero-diagonal `Gamma`,
//!
//! mixed as `c + w_att I_att + w_refl I_refl + w_scat I_scat` where every
//! weight (and `beta`) passes through softplus.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{AblationFlags, AcousticParams};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, evaluated without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

/// Where the operator is applied relative to alpha compositing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeStage {
    /// Each disk's response is shaded at its own hit depth, then composited.
    #[default]
    PerSplat,
    /// Base responses and depths are composited first, then shaded once.
    PerPixel,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AcousticTerms {
    pub i_att: Vector3<f64>,
    pub i_refl: Vector3<f64>,
    pub i_scat: Vector3<f64>,
    pub i_final: Vector3<f64>,
}

pub fn attenuation(z: f64, alpha: f64) -> Result<Vector3<f64>> {
    if !(z >= 0.0) {
        return Err(Error::Precondition(format!("attenuation depth must be >= 0, got {z}")));
    }
    Ok(Vector3::new(-alpha * z, 0.0, 0.0))
}

pub fn reflection(c: &Vector3<f64>, beta: f64) -> Vector3<f64> {
    c.component_mul(c) * beta
}

pub fn scattering(c: &Vector3<f64>, gamma: &Matrix3<f64>) -> Result<Vector3<f64>> {
    if (0..3).any(|i| gamma[(i, i)] != 0.0) {
        return Err(Error::Invariant("scattering matrix diagonal must be zero".into()));
    }
    Ok((gamma * c).component_mul(c))
}

/// Activated, flag-aware operator parameters for one render.
#[derive(Debug, Clone, Copy)]
pub struct Shading {
    pub w_att: f64,
    pub w_refl: f64,
    pub w_scat: f64,
    pub beta: f64,
    pub alpha: f64,
    pub gamma: Matrix3<f64>,
    pub use_att: bool,
    pub use_refl_scat: bool,
    pub bypass: bool,
}

impl Shading {
    pub fn new(params: &AcousticParams, flags: AblationFlags) -> Self {
        let mut gamma = params.gamma;
        for i in 0..3 {
            gamma[(i, i)] = 0.0;
        }
        Shading {
            w_att: softplus(params.raw_w_att),
            w_refl: softplus(params.raw_w_refl),
            w_scat: softplus(params.raw_w_scat),
            beta: softplus(params.beta_raw),
            alpha: params.alpha(),
            gamma,
            use_att: !flags.disable_att && !flags.disable_pd,
            use_refl_scat: !flags.disable_refl_scat && !flags.disable_pd,
            bypass: flags.disable_pd,
        }
    }

    #[inline]
    pub fn apply(&self, c: &[f64; 3], z: f64) -> [f64; 3] {
        let mut r = *c;
        if self.bypass {
            return r;
        }
        if self.use_att {
            r[0] -= self.w_att * self.alpha * z;
        }
        if self.use_refl_scat {
            let g = &self.gamma;
            for i in 0..3 {
                let gc = g[(i, 0)] * c[0] + g[(i, 1)] * c[1] + g[(i, 2)] * c[2];
                r[i] += self.w_refl * self.beta * c[i] * c[i] + self.w_scat * gc * c[i];
            }
        }
        r
    }

    /// Channel 0 of [`Shading::apply`].
    #[inline]
    pub fn apply_channel0(&self, c: &[f64; 3], z: f64) -> f64 {
        if self.bypass {
            return c[0];
        }
        let mut r = c[0];
        if self.use_att {
            r -= self.w_att * self.alpha * z;
        }
        if self.use_refl_scat {
            let gc = self.gamma[(0, 1)] * c[1] + self.gamma[(0, 2)] * c[2];
            r += (self.w_refl * self.beta * c[0] + self.w_scat * gc) * c[0];
        }
        r
    }
}

/// Gradients of a scalar objective through [`Shading::apply`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ShadingGrad {
    pub c: [f64; 3],
    pub z: f64,
    pub globals: GlobalGrad,
}

/// Gradients of the scene-global acoustic parameters (pre-activation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlobalGrad {
    pub beta_raw: f64,
    pub gamma: Matrix3<f64>,
    pub raw_w_att: f64,
    pub raw_w_refl: f64,
    pub raw_w_scat: f64,
}

impl Default for GlobalGrad {
    fn default() -> Self {
        GlobalGrad {
            beta_raw: 0.0,
            gamma: Matrix3::zeros(),
            raw_w_att: 0.0,
            raw_w_refl: 0.0,
            raw_w_scat: 0.0,
        }
    }
}

impl GlobalGrad {
    pub fn add(&mut self, o: &GlobalGrad) {
        self.beta_raw += o.beta_raw;
        self.gamma += o.gamma;
        self.raw_w_att += o.raw_w_att;
        self.raw_w_refl += o.raw_w_refl;
        self.raw_w_scat += o.raw_w_scat;
    }
}

impl Shading {
    /// Accumulates gradients of pre-activation globals into `acc` (which must
    /// later be scaled by the activation derivatives via
    /// [`Shading::finish_globals`]) and returns the gradient with respect to
    /// `c` and `z`.
    #[inline]
    pub fn backward(&self, c: &[f64; 3], z: f64, g_r: &[f64; 3], acc: &mut GlobalGrad) -> ([f64; 3], f64) {
        if self.bypass {
            return (*g_r, 0.0);
        }
        let mut g_c = *g_r;
        let mut g_z = 0.0;
        if self.use_att {
            g_z = -g_r[0] * self.w_att * self.alpha;
            // d/dw_att
            acc.raw_w_att += -g_r[0] * self.alpha * z;
        }
        if self.use_refl_scat {
            let g = &self.gamma;
            let gc = g * Vector3::new(c[0], c[1], c[2]);
            let mut sq = 0.0;
            let mut sc = 0.0;
            for i in 0..3 {
                sq += g_r[i] * c[i] * c[i];
                sc += g_r[i] * gc[i] * c[i];
                g_c[i] += g_r[i] * (2.0 * self.w_refl * self.beta * c[i] + self.w_scat * gc[i]);
            }
            for j in 0..3 {
                let mut s = 0.0;
                for i in 0..3 {
                    s += g_r[i] * c[i] * g[(i, j)];
                }
                g_c[j] += self.w_scat * s;
            }
            // Unscaled partials: d/dbeta, d/dw_refl, d/dw_scat, d/dGamma.
            acc.beta_raw += self.w_refl * sq;
            acc.raw_w_refl += self.beta * sq;
            acc.raw_w_scat += sc;
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        acc.gamma[(i, j)] += self.w_scat * g_r[i] * c[i] * c[j];
                    }
                }
            }
        }
        (g_c, g_z)
    }

    /// Converts accumulated partials with respect to the activated values
    /// into partials with respect to the raw parameters.
    pub fn finish_globals(params: &AcousticParams, acc: &GlobalGrad) -> GlobalGrad {
        GlobalGrad {
            beta_raw: acc.beta_raw * sigmoid(params.beta_raw),
            gamma: acc.gamma,
            raw_w_att: acc.raw_w_att * sigmoid(params.raw_w_att),
            raw_w_refl: acc.raw_w_refl * sigmoid(params.raw_w_refl),
            raw_w_scat: acc.raw_w_scat * sigmoid(params.raw_w_scat),
        }
    }
}

/// Shaded response `I_final` for one base response at depth `z`.
pub fn compose(c: &Vector3<f64>, z: f64, params: &AcousticParams, flags: AblationFlags) -> Result<Vector3<f64>> {
    Ok(terms(c, z, params, flags)?.i_final)
}

/// All intermediate terms of [`compose`].
pub fn terms(c: &Vector3<f64>, z: f64, params: &AcousticParams, flags: AblationFlags) -> Result<AcousticTerms> {
    let i_att = attenuation(z, params.alpha())?;
    let i_refl = reflection(c, softplus(params.beta_raw));
    let mut gamma = params.gamma;
    for i in 0..3 {
        gamma[(i, i)] = 0.0;
    }
    let i_scat = scattering(c, &gamma)?;
    let s = Shading::new(params, flags);
    let r = s.apply(&[c.x, c.y, c.z], z);
    Ok(AcousticTerms {
        i_att,
        i_refl,
        i_scat,
        i_final: Vector3::new(r[0], r[1], r[2]),
    })
}
