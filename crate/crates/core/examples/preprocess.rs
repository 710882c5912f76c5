// Speckle suppression and contrast enhancement on a noisy phantom frame.
//
// cargo run --release --example preprocess -- [out_dir]

use std::path::{Path, PathBuf};

use acoustic_splat::ingest::metrics::psnr;
use acoustic_splat::ingest::{make_phantom, ClaheParams, DiffusionParams, PhantomSpec, PreprocessConfig};
use acoustic_splat::Result;

/// PSNR of the noisy and the diffused frame against the clean one.
pub fn run(out: Option<&Path>) -> Result<(f64, f64)> {
    let spec = PhantomSpec {
        n_views: 2,
        ..Default::default()
    };
    let (_, clean) = make_phantom(&spec)?;
    let (_, noisy) = make_phantom(&PhantomSpec { noise: 0.6, ..spec })?;
    let (c, n) = (&clean.frames[0].image, &noisy.frames[0].image);

    let smooth = PreprocessConfig {
        diffusion: Some(DiffusionParams::default()),
        clahe: None,
    };
    let d = smooth.apply(n)?;
    let (before, after) = (psnr(n, c)?, psnr(&d, c)?);
    println!("noisy    {before:.2} dB");
    println!("diffused {after:.2} dB");

    let both = PreprocessConfig {
        clahe: Some(ClaheParams::default()),
        ..smooth
    };
    let e = both.apply(n)?;
    let (lo, hi) = e.min_max();
    println!("after clahe range {lo:.3} .. {hi:.3}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|err| acoustic_splat::Error::io(dir, err))?;
        n.write_png(dir.join("noisy.png"))?;
        d.write_png(dir.join("diffused.png"))?;
        e.write_png(dir.join("diffused_clahe.png"))?;
    }
    Ok((before, after))
}

fn main() -> Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from);
    run(out.as_deref()).map(|_| ())
}
