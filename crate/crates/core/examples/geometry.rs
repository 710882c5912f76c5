// Pixel rays, rectified intrinsics and ray/disk intersection.
//
// cargo run --example geometry

use acoustic_splat::geometry::{disk_point, intersect, intrinsics_from_dar, pixel_ray_planes, rectified_fov};
use acoustic_splat::{CameraView, DarParams, Result, SplatPrimitive};
use nalgebra::Vector3;

/// Returns the largest distance between a hit point and the viewing ray.
pub fn run() -> Result<f64> {
    // theta = 0 is a 90 degree field of view.
    println!("fov(theta=0) = {:.6} deg", rectified_fov(0.0).to_degrees());

    let dar = DarParams::from_fov(60f64.to_radians(), 45f64.to_radians());
    let intr = intrinsics_from_dar(&dar, 64, 48);
    println!("fx {:.4} fy {:.4} c ({}, {})", intr.f_x, intr.f_y, intr.c_x, intr.c_y);

    let view = CameraView::look_at(Vector3::new(0.2, -0.1, -1.0), Vector3::new(0.0, 0.0, 2.0), -Vector3::y(), 64, 48)?;
    let mut disk = SplatPrimitive::new(
        Vector3::new(0.1, 0.05, 2.0),
        Vector3::new(1.0, 0.0, 0.3),
        Vector3::new(0.0, 1.0, -0.2),
        0.4,
        0.8,
        0,
    );
    disk.orthonormalize();

    let mut worst = 0.0f64;
    for (x, y) in [(32.0, 24.0), (10.0, 5.0), (50.0, 40.0), (0.0, 0.0)] {
        let (hx, hy) = pixel_ray_planes(x, y, &intr);
        let hit = intersect(&disk, &view, &hx, &hy);
        if !hit.valid {
            println!("pixel ({x}, {y}): no hit");
            continue;
        }
        // The hit lies on the disk plane by construction; check it is on the ray.
        let p = view.to_camera(&disk_point(&disk, hit.u, hit.v));
        let (a, b) = intr.normalize(x, y);
        let off = (p.x - a * p.z).abs().max((p.y - b * p.z).abs());
        worst = worst.max(off);
        println!("pixel ({x:>4}, {y:>4}): u {:+.4} v {:+.4} depth {:.4}", hit.u, hit.v, hit.depth_z);
    }
    println!("max distance from ray {worst:.2e}");
    Ok(worst)
}

fn main() -> Result<()> {
    run().map(|_| ())
}
