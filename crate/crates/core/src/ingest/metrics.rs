//! Image quality metrics: MSE, PSNR and windowed SSIM.
//!
//! SSIM uses an 11x11 Gaussian window (sigma 1.5) with `K1 = 0.01`,
//! `K2 = 0.03` and dynamic range 1. The SSIM map is evaluated at every pixel;
//! near borders the window is truncated to the image and renormalized.
//! The reported value is the mean of the map.

use crate::error::{Error, Result};
use crate::image::Image;

pub const PSNR_CAP_DB: f64 = 99.0;
const WINDOW_RADIUS: usize = 5;
const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.data.len() as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n)
}

/// `10 log10(1 / mse)`, capped at 99 dB once `mse < 1e-10`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

pub(crate) fn window() -> [f64; 2 * WINDOW_RADIUS + 1] {
    let mut w = [0.0; 2 * WINDOW_RADIUS + 1];
    for (k, wk) in w.iter_mut().enumerate() {
        let d = k as f64 - WINDOW_RADIUS as f64;
        *wk = (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable truncated-and-renormalized Gaussian blur, and its adjoint.
struct Blur {
    w: [f64; 2 * WINDOW_RADIUS + 1],
    width: usize,
    height: usize,
    /// Per-column and per-row window mass inside the image.
    zx: Vec<f64>,
    zy: Vec<f64>,
}

impl Blur {
    fn new(width: usize, height: usize) -> Self {
        let w = window();
        let mass = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|i| {
                    let mut z = 0.0;
                    for (k, wk) in w.iter().enumerate() {
                        let j = i as isize + k as isize - WINDOW_RADIUS as isize;
                        if j >= 0 && (j as usize) < n {
                            z += wk;
                        }
                    }
                    z
                })
                .collect()
        };
        Blur {
            w,
            width,
            height,
            zx: mass(width),
            zy: mass(height),
        }
    }

    fn pass(&self, src: &[f64], horizontal: bool, normalize_out: bool, normalize_in: bool) -> Vec<f64> {
        let (w, h) = (self.width, self.height);
        let (n, z) = if horizontal { (w, &self.zx) } else { (h, &self.zy) };
        let mut dst = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = if horizontal { x } else { y };
                let mut s = 0.0;
                for (k, wk) in self.w.iter().enumerate() {
                    let j = i as isize + k as isize - WINDOW_RADIUS as isize;
                    if j < 0 || j as usize >= n {
                        continue;
                    }
                    let j = j as usize;
                    let idx = if horizontal { y * w + j } else { j * w + x };
                    let v = if normalize_in { src[idx] / z[j] } else { src[idx] };
                    s += wk * v;
                }
                dst[y * w + x] = if normalize_out { s / z[i] } else { s };
            }
        }
        dst
    }

    fn apply(&self, src: &[f64]) -> Vec<f64> {
        let t = self.pass(src, true, true, false);
        self.pass(&t, false, true, false)
    }

    fn adjoint(&self, src: &[f64]) -> Vec<f64> {
        let t = self.pass(src, false, false, true);
        self.pass(&t, true, false, true)
    }
}

struct SsimParts {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    exx: Vec<f64>,
    eyy: Vec<f64>,
    exy: Vec<f64>,
}

fn ssim_parts(blur: &Blur, x: &[f64], y: &[f64]) -> SsimParts {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    SsimParts {
        mu_x: blur.apply(x),
        mu_y: blur.apply(y),
        exx: blur.apply(&sq(x, x)),
        eyy: blur.apply(&sq(y, y)),
        exy: blur.apply(&sq(x, y)),
    }
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let blur = Blur::new(a.width, a.height);
    let p = ssim_parts(&blur, &a.data, &b.data);
    let n = a.data.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (p.mu_x[i], p.mu_y[i]);
        let vx = p.exx[i] - mx * mx;
        let vy = p.eyy[i] - my * my;
        let cxy = p.exy[i] - mx * my;
        total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
    Ok(total / n as f64)
}

/// Mean SSIM and its gradient with respect to the first image.
pub fn ssim_with_grad(x: &Image, y: &Image) -> Result<(f64, Vec<f64>)> {
    check_dims(x, y)?;
    let blur = Blur::new(x.width, x.height);
    let p = ssim_parts(&blur, &x.data, &y.data);
    let n = x.data.len();
    let inv_n = 1.0 / n as f64;
    let mut total = 0.0;
    let mut d_mu = vec![0.0; n];
    let mut d_exx = vec![0.0; n];
    let mut d_exy = vec![0.0; n];
    for i in 0..n {
        let (mx, my) = (p.mu_x[i], p.mu_y[i]);
        let vx = p.exx[i] - mx * mx;
        let vy = p.eyy[i] - my * my;
        let cxy = p.exy[i] - mx * my;
        let a1 = 2.0 * mx * my + C1;
        let a2 = 2.0 * cxy + C2;
        let b1 = mx * mx + my * my + C1;
        let b2 = vx + vy + C2;
        let den = b1 * b2;
        let s = a1 * a2 / den;
        total += s;
        d_mu[i] = inv_n * ((2.0 * my * a2 - 2.0 * my * a1) / den - s * (2.0 * mx / b1 - 2.0 * mx / b2));
        d_exx[i] = -inv_n * s / b2;
        d_exy[i] = inv_n * 2.0 * a1 / den;
    }
    let g_mu = blur.adjoint(&d_mu);
    let g_exx = blur.adjoint(&d_exx);
    let g_exy = blur.adjoint(&d_exy);
    let grad = (0..n)
        .map(|q| g_mu[q] + 2.0 * x.data[q] * g_exx[q] + y.data[q] * g_exy[q])
        .collect();
    Ok((total * inv_n, grad))
}
