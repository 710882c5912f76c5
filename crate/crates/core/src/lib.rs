//! Differentiable 2D Gaussian disk splatting for ultrasound-style novel view
//! synthesis.
//!
//! A scene is a set of planar Gaussian disks seen through a virtual pinhole
//! camera whose fields of view are themselves learnable. Each disk's
//! spherical-harmonic response is reshaped by a small acoustic operator
//! (log-domain depth attenuation, specular reflection and inter-channel
//! scattering) before front-to-back alpha compositing. Everything is
//! differentiable by hand-written reverse mode and checked against finite
//! differences and brute-force reference renders.
//!
//! The crate is organised bottom-up:
//!
//! * [`scene`] – primitives, global acoustic and aperture parameters, SH
//!   evaluation and the binary checkpoint format.
//! * [`geometry`] – rectified intrinsics, pixel ray planes and ray/disk
//!   intersection.
//! * [`acoustics`] – the decoupled shading operator.
//! * [`raster`] – tiled renderer, brute-force reference renderer, image IO.
//! * [`autodiff`] – loss, reverse-mode gradients, finite-difference checks
//!   and Adam.
//! * [`trainer`] – the optimisation loop, densification and ablations.
//! * [`ingest`] – datasets, preprocessing filters, metrics and the
//!   synthetic phantom generator.
//! * [`cli`] – argument handling behind the `acoustic-splat` binary.

pub mod acoustics;
pub mod autodiff;
pub mod cli;
pub mod error;
pub mod geometry;
pub mod image;
pub mod ingest;
pub mod raster;
pub mod scene;
pub mod trainer;

pub use error::{Error, Result};
pub use geometry::{CameraView, Intrinsics};
pub use image::Image;
pub use raster::{render, reference_render, RenderOutput, TileConfig};
pub use scene::{AblationFlags, AcousticParams, DarParams, SceneModel, SplatPrimitive};
