use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ingest::metrics::{ssim, ssim_with_grad};

/// `total = (1 - lambda) l1 + lambda dssim` with `dssim = (1 - SSIM) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub total: f64,
    pub l1: f64,
    pub dssim: f64,
    pub lambda_dssim: f64,
}

fn check(rendered: &Image, target: &Image, lambda: f64) -> Result<()> {
    if rendered.dims() != target.dims() {
        return Err(Error::DimensionMismatch {
            expected: target.dims(),
            actual: rendered.dims(),
        });
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidConfig(format!("lambda_dssim must be in [0, 1], got {lambda}")));
    }
    if rendered.data.iter().chain(&target.data).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss input".into()));
    }
    Ok(())
}

pub fn loss(rendered: &Image, target: &Image, lambda_dssim: f64) -> Result<LossReport> {
    check(rendered, target, lambda_dssim)?;
    let n = rendered.data.len() as f64;
    let l1 = rendered.data.iter().zip(&target.data).map(|(r, t)| (r - t).abs()).sum::<f64>() / n;
    let dssim = (1.0 - ssim(rendered, target)?) / 2.0;
    Ok(report(l1, dssim, lambda_dssim))
}

fn report(l1: f64, dssim: f64, lambda: f64) -> LossReport {
    // Rounding can push 1 - SSIM a hair below zero for identical images.
    let dssim = dssim.max(0.0);
    LossReport {
        total: (1.0 - lambda) * l1 + lambda * dssim,
        l1,
        dssim,
        lambda_dssim: lambda,
    }
}

/// Loss and its gradient with respect to every rendered pixel.
pub fn loss_with_grad(rendered: &Image, target: &Image, lambda_dssim: f64) -> Result<(LossReport, Vec<f64>)> {
    check(rendered, target, lambda_dssim)?;
    let n = rendered.data.len() as f64;
    let l1 = rendered.data.iter().zip(&target.data).map(|(r, t)| (r - t).abs()).sum::<f64>() / n;
    let (s, g_ssim) = ssim_with_grad(rendered, target)?;
    let w1 = (1.0 - lambda_dssim) / n;
    let grad = rendered
        .data
        .iter()
        .zip(&target.data)
        .zip(&g_ssim)
        .map(|((r, t), gs)| {
            let sign = if r > t {
                1.0
            } else if r < t {
                -1.0
            } else {
                0.0
            };
            w1 * sign - 0.5 * lambda_dssim * gs
        })
        .collect();
    Ok((report(l1, (1.0 - s) / 2.0, lambda_dssim), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_images_have_zero_loss() {
        let a = Image::from_fn(16, 12, |x, y| (x * y) as f64 / 200.0);
        let r = loss(&a, &a, 0.2).unwrap();
        assert_eq!(r.total, 0.0);
        let (r2, g) = loss_with_grad(&a, &a, 0.2).unwrap();
        assert_eq!(r2.l1, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constant_offset_l1() {
        let t = Image::from_fn(12, 12, |x, _| 0.1 + x as f64 / 20.0);
        let r = Image::from_vec(12, 12, t.data.iter().map(|v| v + 0.1).collect()).unwrap();
        assert!((loss(&r, &t, 0.2).unwrap().l1 - 0.1).abs() < 1e-12);
    }

    #[test]
    fn matches_term_by_term_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = Image::from_fn(14, 10, |_, _| rng.random());
        let b = Image::from_fn(14, 10, |_, _| rng.random());
        let r = loss(&a, &b, 0.2).unwrap();
        let l1: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / 140.0;
        let ds = (1.0 - ssim(&a, &b).unwrap()) / 2.0;
        assert!((r.total - (0.8 * l1 + 0.2 * ds)).abs() < 1e-12);
        assert!(r.total >= 0.0 && r.l1 >= 0.0 && r.dssim >= 0.0);
    }

    #[test]
    fn pixel_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = Image::from_fn(12, 12, |_, _| rng.random());
        let b = Image::from_fn(12, 12, |_, _| rng.random());
        let (_, g) = loss_with_grad(&a, &b, 0.2).unwrap();
        let h = 1e-7;
        for q in [0, 17, 77, 143] {
            let mut ap = a.clone();
            let mut am = a.clone();
            ap.data[q] += h;
            am.data[q] -= h;
            let fd = (loss(&ap, &b, 0.2).unwrap().total - loss(&am, &b, 0.2).unwrap().total) / (2.0 * h);
            assert!((fd - g[q]).abs() < 1e-7, "pixel {q}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = Image::new(8, 8);
        assert!(loss(&a, &Image::new(9, 8), 0.2).is_err());
        let mut n = Image::new(8, 8);
        n.data[3] = f64::NAN;
        assert!(matches!(loss(&a, &n, 0.2), Err(Error::NonFinite(_))));
        assert!(loss(&a, &a, 1.5).is_err());
    }
}
