// Generates the synthetic phantom, writes it as a dataset plus a
// ground-truth checkpoint, and renders one view with both renderers.
//
// cargo run --release --example render_phantom -- [out_dir]

use std::path::{Path, PathBuf};

use acoustic_splat::ingest::{load_dataset, make_phantom, write_dataset, ImageFormat, PhantomSpec};
use acoustic_splat::raster::write_render;
use acoustic_splat::scene::{load_checkpoint, save_checkpoint};
use acoustic_splat::{reference_render, render, Result, TileConfig};

/// Returns the largest per-pixel difference between the two renderers.
pub fn run(out: &Path, spec: &PhantomSpec) -> Result<f64> {
    let (gt, ds) = make_phantom(spec)?;
    write_dataset(&ds, out.join("data"), ImageFormat::Png)?;
    save_checkpoint(&gt, out.join("ground_truth.ckpt"))?;
    println!("{} disks, {} frames -> {}", gt.primitives.len(), ds.frames.len(), out.display());

    let back = load_dataset(out.join("data"))?;
    let scene = load_checkpoint(out.join("ground_truth.ckpt"))?;
    assert_eq!(scene, gt);
    let view = &back.frames[back.test[0]].view;

    let tiled = render(&scene, view, &TileConfig::exact())?;
    let reference = reference_render(&scene, view)?;
    let diff = tiled
        .intensity
        .data
        .iter()
        .zip(&reference.intensity.data)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("tiled vs reference max |diff| {diff:.2e}");
    let fast = render(&scene, view, &TileConfig::default())?;
    let fast_diff = fast
        .intensity
        .data
        .iter()
        .zip(&reference.intensity.data)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    println!("3 sigma cutoff with early stop max |diff| {fast_diff:.2e}");

    write_render(&tiled, &out.join("view"))?;
    let (lo, hi) = tiled.depth.min_max();
    println!("depth range {lo:.3} .. {hi:.3}; wrote view.png, view.ugsi, view_depth.*");
    Ok(diff)
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| PathBuf::from("phantom_out"), PathBuf::from);
    run(&out, &PhantomSpec::default()).map(|_| ())
}
