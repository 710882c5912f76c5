// Trains every module-removal variant on the same noisy phantom and prints
// a held-out comparison table.
//
// cargo run --release --example ablation -- [iterations] [noise]

use acoustic_splat::ingest::{init_scene_from_anchors, make_phantom, PhantomSpec};
use acoustic_splat::trainer::{run_ablation, AblationVariant, TrainConfig};
use acoustic_splat::Result;

pub fn run(iterations: usize, noise: f64) -> Result<Vec<(AblationVariant, f64, f64)>> {
    let (_, ds) = make_phantom(&PhantomSpec {
        noise,
        ..Default::default()
    })?;
    let init = init_scene_from_anchors(&ds, 1)?;
    let cfg = TrainConfig::low_resolution(iterations);
    let mut rows = Vec::new();
    println!("{:<20} {:>8} {:>7} {:>6}", "variant", "psnr", "ssim", "disks");
    for v in AblationVariant::ALL {
        let (scene, log) = run_ablation(&ds, &init, &cfg, v, None)?;
        let last = log.last().expect("at least one eval record");
        let (psnr, ssim) = (last.test_psnr.unwrap_or(f64::NAN), last.test_ssim.unwrap_or(f64::NAN));
        println!("{:<20} {:>8.3} {:>7.4} {:>6}", v.name(), psnr, ssim, scene.primitives.len());
        rows.push((v, psnr, ssim));
    }
    Ok(rows)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(3000, |a| a.parse().expect("iterations"));
    let noise = args.next().map_or(0.05, |a| a.parse().expect("noise"));
    run(iterations, noise).map(|_| ())
}
