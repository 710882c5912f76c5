use std::fmt;
use std::time::Duration;

use serde::Serialize;

use super::{render_timed, TileConfig};
use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::scene::SceneModel;

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub frames: usize,
    pub primitives: usize,
    pub width: usize,
    pub height: usize,
    pub threads: usize,
    /// Wall-clock seconds per frame.
    pub samples: Vec<f64>,
    pub mean_fps: f64,
    /// Mean seconds per frame spent binning.
    pub binning_s: f64,
    /// Mean seconds per frame in intersection, scaled from summed tile time
    /// to the rasterization wall time.
    pub intersect_s: f64,
    pub composite_s: f64,
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} primitives, {}x{}, {} frames, {} threads",
            self.primitives, self.width, self.height, self.frames, self.threads
        )?;
        writeln!(f, "mean fps     {:>10.3}", self.mean_fps)?;
        writeln!(f, "binning   ms {:>10.3}", self.binning_s * 1e3)?;
        writeln!(f, "intersect ms {:>10.3}", self.intersect_s * 1e3)?;
        write!(f, "composite ms {:>10.3}", self.composite_s * 1e3)
    }
}

/// Renders `frames` times and reports throughput with a stage breakdown.
pub fn bench(scene: &SceneModel, view: &CameraView, cfg: &TileConfig, frames: usize) -> Result<BenchReport> {
    if frames == 0 {
        return Err(Error::InvalidConfig("frames must be >= 1".into()));
    }
    let mut samples = Vec::with_capacity(frames);
    let (mut bin, mut isect, mut comp) = (Duration::ZERO, 0.0, 0.0);
    for _ in 0..frames {
        let (_, t) = render_timed(scene, view, cfg)?;
        samples.push(t.total.as_secs_f64());
        bin += t.binning;
        let raster_wall = (t.total - t.binning).as_secs_f64();
        let busy = (t.intersect + t.composite).as_secs_f64();
        if busy > 0.0 {
            isect += raster_wall * t.intersect.as_secs_f64() / busy;
            comp += raster_wall * t.composite.as_secs_f64() / busy;
        }
    }
    let n = frames as f64;
    let mean = samples.iter().sum::<f64>() / n;
    Ok(BenchReport {
        frames,
        primitives: scene.primitives.len(),
        width: view.image_width,
        height: view.image_height,
        threads: rayon::current_num_threads(),
        samples,
        mean_fps: 1.0 / mean,
        binning_s: bin.as_secs_f64() / n,
        intersect_s: isect / n,
        composite_s: comp / n,
    })
}
