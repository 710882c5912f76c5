// Fits a scene to the synthetic phantom, starting from its anchor points,
// and reports held-out quality as training progresses.
//
// cargo run --release --example train_phantom -- [iterations] [noise]

use acoustic_splat::ingest::{init_scene_from_anchors, make_phantom, PhantomSpec};
use acoustic_splat::trainer::{train, EvalRecord, TrainConfig};
use acoustic_splat::Result;

pub fn run(iterations: usize, noise: f64) -> Result<Vec<EvalRecord>> {
    let spec = PhantomSpec {
        noise,
        ..Default::default()
    };
    let (_, ds) = make_phantom(&spec)?;
    println!("{} train / {} test views, {}x{}", ds.train.len(), ds.test.len(), ds.dims().0, ds.dims().1);
    let init = init_scene_from_anchors(&ds, 1)?;
    let cfg = TrainConfig::low_resolution(iterations);
    let (scene, log) = train(&ds, &init, &cfg)?;
    println!("{:>6} {:>10} {:>8} {:>7} {:>6} {:>7}", "iter", "loss", "psnr", "ssim", "disks", "secs");
    for r in &log.records {
        println!(
            "{:>6} {:>10.5} {:>8.3} {:>7.4} {:>6} {:>7.1}",
            r.iteration,
            r.train_loss,
            r.test_psnr.unwrap_or(f64::NAN),
            r.test_ssim.unwrap_or(f64::NAN),
            r.primitives,
            r.seconds
        );
    }
    println!("fov {:.2} deg -> {:.2} deg", ds.init_dar().theta_x.exp().atan().to_degrees() * 2.0, scene.dar.theta_x.exp().atan().to_degrees() * 2.0);
    Ok(log.records)
}

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let iterations = args.next().map_or(3000, |a| a.parse().expect("iterations"));
    let noise = args.next().map_or(0.0, |a| a.parse().expect("noise"));
    run(iterations, noise).map(|_| ())
}
