//! Real spherical harmonics up to degree 3.
//!
//! Basis ordering and constants follow the usual splatting convention
//! (degree 1 is `-C1 y, C1 z, -C1 x`), and the evaluated response is shifted by
//! `+0.5` and clamped at zero.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
pub const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
pub const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_SH_DEGREE: u32 = 3;
pub const MAX_BASIS: usize = 16;
pub const CHANNELS: usize = 3;

/// Number of basis functions for a degree: `(l + 1)^2`.
pub fn basis_count(degree: u32) -> usize {
    ((degree + 1) * (degree + 1)) as usize
}

pub fn check_degree(degree: u32) -> Result<()> {
    if degree > MAX_SH_DEGREE {
        return Err(Error::InvalidConfig(format!(
            "sh degree {degree} outside 0..=3"
        )));
    }
    Ok(())
}

/// Basis values `Y_b(d)` for `b < basis_count(degree)`. Entries past that are
/// left at zero.
pub fn basis(d: &Vector3<f64>, degree: u32) -> [f64; MAX_BASIS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let mut b = [0.0; MAX_BASIS];
    b[0] = SH_C0;
    if degree == 0 {
        return b;
    }
    b[1] = -SH_C1 * y;
    b[2] = SH_C1 * z;
    b[3] = -SH_C1 * x;
    if degree == 1 {
        return b;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    b[4] = SH_C2[0] * xy;
    b[5] = SH_C2[1] * yz;
    b[6] = SH_C2[2] * (2.0 * zz - xx - yy);
    b[7] = SH_C2[3] * xz;
    b[8] = SH_C2[4] * (xx - yy);
    if degree == 2 {
        return b;
    }
    b[9] = SH_C3[0] * y * (3.0 * xx - yy);
    b[10] = SH_C3[1] * xy * z;
    b[11] = SH_C3[2] * y * (4.0 * zz - xx - yy);
    b[12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
    b[13] = SH_C3[4] * x * (4.0 * zz - xx - yy);
    b[14] = SH_C3[5] * z * (xx - yy);
    b[15] = SH_C3[6] * x * (xx - 3.0 * yy);
    b
}

/// Gradients of the basis polynomials with respect to the raw `(x, y, z)`
/// components (no normalization is differentiated here).
pub fn basis_grad(d: &Vector3<f64>, degree: u32) -> [Vector3<f64>; MAX_BASIS] {
    let (x, y, z) = (d.x, d.y, d.z);
    let zero = Vector3::zeros();
    let mut g = [zero; MAX_BASIS];
    if degree == 0 {
        return g;
    }
    g[1] = Vector3::new(0.0, -SH_C1, 0.0);
    g[2] = Vector3::new(0.0, 0.0, SH_C1);
    g[3] = Vector3::new(-SH_C1, 0.0, 0.0);
    if degree == 1 {
        return g;
    }
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    g[4] = SH_C2[0] * Vector3::new(y, x, 0.0);
    g[5] = SH_C2[1] * Vector3::new(0.0, z, y);
    g[6] = SH_C2[2] * Vector3::new(-2.0 * x, -2.0 * y, 4.0 * z);
    g[7] = SH_C2[3] * Vector3::new(z, 0.0, x);
    g[8] = SH_C2[4] * Vector3::new(2.0 * x, -2.0 * y, 0.0);
    if degree == 2 {
        return g;
    }
    g[9] = SH_C3[0] * Vector3::new(6.0 * xy, 3.0 * xx - 3.0 * yy, 0.0);
    g[10] = SH_C3[1] * Vector3::new(yz, xz, xy);
    g[11] = SH_C3[2] * Vector3::new(-2.0 * xy, 4.0 * zz - xx - 3.0 * yy, 8.0 * yz);
    g[12] = SH_C3[3] * Vector3::new(-6.0 * xz, -6.0 * yz, 6.0 * zz - 3.0 * xx - 3.0 * yy);
    g[13] = SH_C3[4] * Vector3::new(4.0 * zz - 3.0 * xx - yy, -2.0 * xy, 8.0 * xz);
    g[14] = SH_C3[5] * Vector3::new(2.0 * xz, -2.0 * yz, xx - yy);
    g[15] = SH_C3[6] * Vector3::new(3.0 * xx - 3.0 * yy, -6.0 * xy, 0.0);
    g
}

/// Pre-clamp response `0.5 + sum_b coeffs[ch][b] Y_b` for each channel.
///
/// `coeffs` is channel-major with `basis_count(degree)` entries per channel.
#[inline]
pub fn response_raw(basis: &[f64; MAX_BASIS], coeffs: &[f64], degree: u32) -> [f64; CHANNELS] {
    let nb = basis_count(degree);
    let mut out = [0.5; CHANNELS];
    for (ch, o) in out.iter_mut().enumerate() {
        let row = &coeffs[ch * nb..(ch + 1) * nb];
        for (k, y) in row.iter().zip(basis.iter()) {
            *o += k * y;
        }
    }
    out
}

/// Base response `c = max(0, 0.5 + sum_b k_b Y_b(d))` per channel.
pub fn eval_sh(direction: &Vector3<f64>, coeffs: &[f64], degree: u32) -> Result<Vector3<f64>> {
    check_degree(degree)?;
    let norm = direction.norm();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::Precondition(format!(
            "sh direction must be unit length, got norm {norm}"
        )));
    }
    let nb = basis_count(degree);
    if coeffs.len() != CHANNELS * nb {
        return Err(Error::Precondition(format!(
            "expected {} sh coefficients for degree {degree}, got {}",
            CHANNELS * nb,
            coeffs.len()
        )));
    }
    let raw = response_raw(&basis(direction, degree), coeffs, degree);
    Ok(Vector3::new(raw[0].max(0.0), raw[1].max(0.0), raw[2].max(0.0)))
}
