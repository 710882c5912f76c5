// The shading operator on one base response: attenuation with depth,
// reflection, and cross-channel scattering.
//
// cargo run --example acoustic_operator

use acoustic_splat::acoustics::{softplus_inverse, terms};
use acoustic_splat::{AblationFlags, AcousticParams, Result};
use nalgebra::{Matrix3, Vector3};

/// Channel-0 response at each depth in `depths`.
pub fn run(depths: &[f64]) -> Result<Vec<f64>> {
    let mut params = AcousticParams {
        beta_raw: softplus_inverse(0.5),
        gamma: Matrix3::new(0.0, 0.2, -0.1, 0.1, 0.0, 0.3, -0.2, 0.1, 0.0),
        raw_w_att: softplus_inverse(0.05),
        raw_w_refl: softplus_inverse(0.15),
        raw_w_scat: softplus_inverse(0.1),
    };
    params.zero_gamma_diagonal();
    let c = Vector3::new(0.6, 0.4, 0.5);
    let mut out = Vec::with_capacity(depths.len());
    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "depth", "att", "refl", "scat", "final");
    for &z in depths {
        let t = terms(&c, z, &params, AblationFlags::default())?;
        println!("{z:>6.2} {:>9.4} {:>9.4} {:>9.4} {:>9.4}", t.i_att.x, t.i_refl.x, t.i_scat.x, t.i_final.x);
        out.push(t.i_final.x);
    }
    let bare = terms(&c, 3.0, &params, AblationFlags::all())?;
    println!("operator bypassed: {:?}", bare.i_final.as_slice());
    Ok(out)
}

fn main() -> Result<()> {
    run(&[0.0, 1.0, 2.0, 3.0, 4.0]).map(|_| ())
}
