//! Binary checkpoint format.
//!
//! All multi-byte values are little-endian.
//!
//! | offset | bytes | content                                    |
//! |--------|-------|--------------------------------------------|
//! | 0      | 4     | magic `b"UGSC"`                            |
//! | 4      | 4     | format version, `u32` (currently 1)        |
//! | 8      | 4     | scalar width in bytes, `u32` (always 8)    |
//! | 12     | 4     | SH degree, `u32`                           |
//! | 16     | 4     | ablation flag bits, `u32`                  |
//! | 20     | 8     | primitive count `N`, `u64`                 |
//! | 28     | ...   | `N` primitive records                      |
//!
//! A primitive record is `12 + 3B` `f64` values with `B = (degree + 1)^2`:
//! center (3), tangent_u (3), tangent_v (3), log scales (2), opacity logit
//! (1), SH coefficients (3B, channel-major).
//!
//! The records are followed by the acoustic block, 13 `f64`: beta_raw, the
//! 3x3 gamma matrix row-major with its diagonal written as zero, and the raw
//! attenuation, reflection and scattering weights. The file ends with the
//! aperture block, 4 `f64`: theta_x, theta_y, theta_min, theta_max.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{sh, AblationFlags, AcousticParams, DarParams, SceneModel, SplatPrimitive};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"UGSC";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 28;
const SCALAR_BYTES: usize = 8;
const ACOUSTIC_SCALARS: usize = 13;
const DAR_SCALARS: usize = 4;

fn record_scalars(sh_degree: u32) -> usize {
    12 + 3 * sh::basis_count(sh_degree)
}

/// Exact file size for a scene with `count` primitives at `sh_degree`.
pub fn checkpoint_size(count: usize, sh_degree: u32) -> usize {
    HEADER_BYTES + SCALAR_BYTES * (count * record_scalars(sh_degree) + ACOUSTIC_SCALARS + DAR_SCALARS)
}

pub fn write_checkpoint(scene: &SceneModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(checkpoint_size(scene.primitives.len(), scene.sh_degree));
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(SCALAR_BYTES as u32).to_le_bytes());
    out.extend_from_slice(&scene.sh_degree.to_le_bytes());
    out.extend_from_slice(&scene.flags.bits().to_le_bytes());
    out.extend_from_slice(&(scene.primitives.len() as u64).to_le_bytes());
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    for p in &scene.primitives {
        p.center.iter().for_each(|&v| put(v));
        p.tangent_u.iter().for_each(|&v| put(v));
        p.tangent_v.iter().for_each(|&v| put(v));
        put(p.log_scale_u);
        put(p.log_scale_v);
        put(p.opacity_logit);
        p.sh_coeffs.iter().for_each(|&v| put(v));
    }
    let a = &scene.acoustics;
    put(a.beta_raw);
    for r in 0..3 {
        for c in 0..3 {
            put(if r == c { 0.0 } else { a.gamma[(r, c)] });
        }
    }
    put(a.raw_w_att);
    put(a.raw_w_refl);
    put(a.raw_w_scat);
    let d = &scene.dar;
    put(d.theta_x);
    put(d.theta_y);
    put(d.theta_min);
    put(d.theta_max);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn u32(&mut self) -> u32 {
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        v
    }

    fn u64(&mut self) -> u64 {
        let v = u64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        v
    }

    fn f64(&mut self, field: &str) -> Result<f64> {
        let v = f64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        if v.is_nan() {
            return Err(Error::NonFinite(field.to_string()));
        }
        Ok(v)
    }

    fn vec3(&mut self, field: &str) -> Result<Vector3<f64>> {
        Ok(Vector3::new(self.f64(field)?, self.f64(field)?, self.f64(field)?))
    }
}

/// Parses a checkpoint image. `path` is only used in error messages.
pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<SceneModel> {
    let header_err = |reason: &str| Error::Header {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let truncated = |needed: usize| Error::Truncated {
        path: path.to_path_buf(),
        needed,
        found: bytes.len(),
    };
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(header_err("missing UGSC magic"));
    }
    if bytes.len() < HEADER_BYTES {
        return Err(truncated(HEADER_BYTES));
    }
    let mut cur = Cursor { bytes, pos: 4 };
    let version = cur.u32();
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    if cur.u32() as usize != SCALAR_BYTES {
        return Err(header_err("only 64-bit scalars are supported"));
    }
    let sh_degree = cur.u32();
    if sh_degree > sh::MAX_SH_DEGREE {
        return Err(header_err("sh degree out of range"));
    }
    let flags = AblationFlags::from_bits(cur.u32()).ok_or_else(|| header_err("unknown flag bits"))?;
    let count = usize::try_from(cur.u64()).map_err(|_| header_err("primitive count overflow"))?;
    let needed = count
        .checked_mul(record_scalars(sh_degree) * SCALAR_BYTES)
        .and_then(|n| n.checked_add(checkpoint_size(0, sh_degree)))
        .ok_or_else(|| header_err("primitive count overflow"))?;
    if bytes.len() < needed {
        return Err(truncated(needed));
    }
    if bytes.len() > needed {
        return Err(header_err("trailing bytes after aperture block"));
    }

    let nb = 3 * sh::basis_count(sh_degree);
    let mut primitives = Vec::with_capacity(count);
    for _ in 0..count {
        let center = cur.vec3("center")?;
        let tangent_u = cur.vec3("tangent_u")?;
        let tangent_v = cur.vec3("tangent_v")?;
        let log_scale_u = cur.f64("log_scale_u")?;
        let log_scale_v = cur.f64("log_scale_v")?;
        let opacity_logit = cur.f64("opacity_logit")?;
        let sh_coeffs = (0..nb).map(|_| cur.f64("sh_coeffs")).collect::<Result<Vec<_>>>()?;
        primitives.push(SplatPrimitive {
            center,
            tangent_u,
            tangent_v,
            log_scale_u,
            log_scale_v,
            opacity_logit,
            sh_coeffs,
        });
    }
    let beta_raw = cur.f64("beta_raw")?;
    let mut gamma = Matrix3::zeros();
    for r in 0..3 {
        for c in 0..3 {
            gamma[(r, c)] = cur.f64("gamma")?;
        }
    }
    let acoustics = AcousticParams {
        beta_raw,
        gamma,
        raw_w_att: cur.f64("raw_w_att")?,
        raw_w_refl: cur.f64("raw_w_refl")?,
        raw_w_scat: cur.f64("raw_w_scat")?,
    };
    let dar = DarParams {
        theta_x: cur.f64("theta_x")?,
        theta_y: cur.f64("theta_y")?,
        theta_min: cur.f64("theta_min")?,
        theta_max: cur.f64("theta_max")?,
    };
    Ok(SceneModel {
        primitives,
        acoustics,
        dar,
        sh_degree,
        flags,
    })
}

pub fn save_checkpoint(scene: &SceneModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(scene)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<SceneModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes, path)
}
