// Renders a large random scene repeatedly and reports frames per second
// with a per-stage breakdown.
//
// cargo run --release --example bench -- [splats] [size] [frames]

use acoustic_splat::raster::{bench, BenchReport};
use acoustic_splat::scene::{random_scene, RandomSceneSpec};
use acoustic_splat::{CameraView, Result, TileConfig};

pub fn run(splats: usize, size: usize, frames: usize) -> Result<BenchReport> {
    let spec = RandomSceneSpec {
        count: splats,
        extent_min: [-1.5, -1.5, 2.0],
        extent_max: [1.5, 1.5, 6.0],
        scale_range: (0.005, 0.05),
        ..Default::default()
    };
    let scene = random_scene(&spec, 0)?;
    let view = CameraView::identity(size, size)?;
    let report = bench(&scene, &view, &TileConfig::default(), frames)?;
    println!("{report}");
    Ok(report)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let splats = args.next().map_or(50_000, |a| a.parse().expect("splats"));
    let size = args.next().map_or(256, |a| a.parse().expect("size"));
    let frames = args.next().map_or(10, |a| a.parse().expect("frames"));
    run(splats, size, frames).map(|_| ())
}
