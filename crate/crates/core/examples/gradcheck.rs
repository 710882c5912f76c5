// Checks every analytic gradient of a small random scene against central
// differences and prints the worst relative error per parameter group.
//
// cargo run --release --example gradcheck -- [splats] [size]

use acoustic_splat::autodiff::{finite_diff_check, GradCheckReport, ParamSelector};
use acoustic_splat::scene::{random_scene, RandomSceneSpec};
use acoustic_splat::{CameraView, Image, Result, TileConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run(splats: usize, size: usize) -> Result<GradCheckReport> {
    let spec = RandomSceneSpec {
        count: splats,
        extent_min: [-0.6, -0.6, 2.5],
        extent_max: [0.6, 0.6, 3.5],
        scale_range: (0.1, 0.3),
        opacity_range: (0.3, 0.8),
        response_range: (0.3, 0.7),
        max_tilt_deg: 40.0,
        ..Default::default()
    };
    let scene = random_scene(&spec, 1)?;
    let view = CameraView::identity(size, size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let target = Image::from_fn(size, size, |_, _| rng.random_range(0.2..0.8));
    let report = finite_diff_check(&scene, &view, &TileConfig::exact(), &target, 0.2, &ParamSelector::All, 1e-4)?;
    for (group, err) in report.max_error_by_group() {
        println!("{:<10} {err:.2e}", group.name());
    }
    if let Some(w) = report.worst() {
        println!("worst: index {} analytic {:+.6e} numeric {:+.6e}", w.index, w.analytic, w.numeric);
    }
    Ok(report)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let splats = args.next().map_or(20, |a| a.parse().expect("splats"));
    let size = args.next().map_or(16, |a| a.parse().expect("size"));
    run(splats, size).map(|_| ())
}
