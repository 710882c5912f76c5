//! Speckle suppression and contrast enhancement applied to training targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

const BINS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionParams {
    pub iterations: usize,
    pub kappa: f64,
    pub lambda: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            iterations: 15,
            kappa: 0.1,
            lambda: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClaheParams {
    pub tiles_x: usize,
    pub tiles_y: usize,
    /// Multiple of the uniform bin height; `f64::INFINITY` disables clipping.
    pub clip_limit: f64,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            tiles_x: 8,
            tiles_y: 8,
            clip_limit: 2.0,
        }
    }
}

/// Optional filters, applied diffusion first.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub diffusion: Option<DiffusionParams>,
    pub clahe: Option<ClaheParams>,
}

impl PreprocessConfig {
    pub fn is_noop(&self) -> bool {
        self.diffusion.is_none() && self.clahe.is_none()
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        let mut out = img.clone();
        if let Some(d) = self.diffusion {
            out = anisotropic_diffusion(&out, d.iterations, d.kappa, d.lambda)?;
        }
        if let Some(c) = self.clahe {
            out = clahe(&out, (c.tiles_x, c.tiles_y), c.clip_limit)?;
        }
        Ok(out)
    }
}

/// Perona-Malik diffusion with conductance `exp(-(d / kappa)^2)` on the four
/// neighbour differences. Out-of-image neighbours mirror the pixel itself, so
/// boundary fluxes vanish and the image sum is conserved.
pub fn anisotropic_diffusion(img: &Image, iterations: usize, kappa: f64, lambda: f64) -> Result<Image> {
    if !(lambda > 0.0 && lambda <= 0.25) {
        return Err(Error::InvalidConfig(format!("diffusion lambda must be in (0, 0.25], got {lambda}")));
    }
    if !(kappa > 0.0) {
        return Err(Error::InvalidConfig(format!("diffusion kappa must be > 0, got {kappa}")));
    }
    let (w, h) = img.dims();
    let mut cur = img.data.clone();
    let mut next = vec![0.0; cur.len()];
    let cond = |d: f64| (-(d / kappa) * (d / kappa)).exp();
    for _ in 0..iterations {
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let c = cur[i];
                let mut flux = 0.0;
                let mut add = |j: usize| {
                    let d = cur[j] - c;
                    flux += cond(d) * d;
                };
                if x > 0 {
                    add(i - 1);
                }
                if x + 1 < w {
                    add(i + 1);
                }
                if y > 0 {
                    add(i - w);
                }
                if y + 1 < h {
                    add(i + w);
                }
                next[i] = c + lambda * flux;
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Image::from_vec(w, h, cur)
}

/// 8-bit level of a `[0, 1]` intensity.
fn level(v: f64) -> usize {
    (v.clamp(0.0, 1.0) * 255.0).round() as usize
}

/// Pixel range `[start, end)` of tile `i` out of `n` along a length `len`.
fn tile_span(i: usize, n: usize, len: usize) -> (usize, usize) {
    (i * len / n, (i + 1) * len / n)
}

/// Per-tile transfer functions, row-major over tiles. Each maps a level to
/// the clipped cumulative histogram fraction at that level.
pub fn clahe_tile_maps(img: &Image, tiles: (usize, usize), clip_limit: f64) -> Result<Vec<[f64; BINS]>> {
    let (tx, ty) = tiles;
    let (w, h) = img.dims();
    if tx == 0 || ty == 0 {
        return Err(Error::InvalidConfig("clahe needs at least one tile per axis".into()));
    }
    if !(clip_limit >= 1.0) {
        return Err(Error::InvalidConfig(format!("clahe clip_limit must be >= 1, got {clip_limit}")));
    }
    if w < tx || h < ty {
        return Err(Error::Precondition(format!("{w}x{h} image is smaller than the {tx}x{ty} tile grid")));
    }
    let mut maps = Vec::with_capacity(tx * ty);
    for j in 0..ty {
        let (y0, y1) = tile_span(j, ty, h);
        for i in 0..tx {
            let (x0, x1) = tile_span(i, tx, w);
            let mut hist = [0.0; BINS];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[level(img.get(x, y))] += 1.0;
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            if clip_limit.is_finite() {
                let limit = clip_limit * n / BINS as f64;
                let mut excess = 0.0;
                for b in hist.iter_mut() {
                    if *b > limit {
                        excess += *b - limit;
                        *b = limit;
                    }
                }
                let share = excess / BINS as f64;
                hist.iter_mut().for_each(|b| *b += share);
            }
            let mut map = [0.0; BINS];
            let mut cdf = 0.0;
            for (m, b) in map.iter_mut().zip(&hist) {
                cdf += b;
                *m = (cdf / n).min(1.0);
            }
            maps.push(map);
        }
    }
    Ok(maps)
}

/// Contrast-limited adaptive histogram equalization with bilinear blending
/// between the mappings of the four nearest tile centres.
pub fn clahe(img: &Image, tiles: (usize, usize), clip_limit: f64) -> Result<Image> {
    let maps = clahe_tile_maps(img, tiles, clip_limit)?;
    let (tx, ty) = tiles;
    let (w, h) = img.dims();
    // Fractional tile coordinate of a pixel relative to the tile centres.
    let locate = |p: usize, n: usize, len: usize| -> (usize, usize, f64) {
        let f = (p as f64 + 0.5) * n as f64 / len as f64 - 0.5;
        if f <= 0.0 {
            return (0, 0, 0.0);
        }
        let i0 = (f.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, if i1 == i0 { 0.0 } else { f - i0 as f64 })
    };
    Ok(Image::from_fn(w, h, |x, y| {
        let l = level(img.get(x, y));
        let (i0, i1, fx) = locate(x, tx, w);
        let (j0, j1, fy) = locate(y, ty, h);
        let m = |i: usize, j: usize| maps[j * tx + i][l];
        let top = m(i0, j0) * (1.0 - fx) + m(i1, j0) * fx;
        let bottom = m(i0, j1) * (1.0 - fx) + m(i1, j1) * fx;
        (top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)
    }))
}
