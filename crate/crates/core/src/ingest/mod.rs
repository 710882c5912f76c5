//! Datasets, preprocessing filters, image metrics and the synthetic phantom.
//!
//! A dataset directory holds `manifest.json` and the frame images it lists:
//!
//! ```json
//! {
//!   "width": 64, "height": 64,
//!   "fov_x_init_deg": 50.0, "fov_y_init_deg": 50.0,
//!   "frames": [{"file": "frames/0000.ugsi", "c2w": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1]}],
//!   "anchors": [[0.0, 0.1, 3.0]]
//! }
//! ```
//!
//! `c2w` is a row-major camera-to-world matrix. Images are 8-bit grayscale
//! PNG or float `.ugsi`. `anchors` are optional precomputed 3D points used to
//! seed primitives.

pub mod metrics;
mod phantom;
mod preprocess;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use metrics::{mse, psnr, ssim};
pub use phantom::{make_phantom, PhantomSpec};
pub use preprocess::{anisotropic_diffusion, clahe, clahe_tile_maps, ClaheParams, DiffusionParams, PreprocessConfig};

use crate::error::{Error, Result};
use crate::geometry::CameraView;
use crate::image::Image;
use crate::scene::{logit, sh, AcousticParams, DarParams, SceneModel, SplatPrimitive, ATTENUATION_ALPHA};

/// Every `TEST_EVERY`-th frame (by index, starting at 0) is held out.
pub const TEST_EVERY: usize = 8;
/// Scale/shear tolerance on manifest rotations.
pub const RIGIDITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub image: Image,
    pub view: CameraView,
    /// Path relative to the dataset root.
    pub file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frames: Vec<Frame>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Initial `(fov_x, fov_y)` in radians.
    pub init_fov: (f64, f64),
    pub anchors: Vec<Vector3<f64>>,
}

/// Train/test indices: test holds indices `≡ 0 (mod every)`.
pub fn split_indices(n: usize, every: usize) -> (Vec<usize>, Vec<usize>) {
    let every = every.max(1);
    (0..n).partition(|i| i % every != 0)
}

impl Dataset {
    pub fn new(frames: Vec<Frame>, init_fov: (f64, f64), anchors: Vec<Vector3<f64>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Precondition("dataset has no frames".into()));
        }
        let dims = frames[0].image.dims();
        for (i, f) in frames.iter().enumerate() {
            if f.image.dims() != dims {
                return Err(Error::DimensionMismatch {
                    expected: dims,
                    actual: f.image.dims(),
                });
            }
            if (f.view.image_width, f.view.image_height) != dims {
                return Err(Error::InvalidConfig(format!("frame {i}: view size does not match its image")));
            }
        }
        let (train, test) = split_indices(frames.len(), TEST_EVERY);
        Ok(Dataset {
            frames,
            train,
            test,
            init_fov,
            anchors,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].image.dims()
    }

    /// Aperture parameters initialized from the fov hint.
    pub fn init_dar(&self) -> DarParams {
        DarParams::from_fov(self.init_fov.0, self.init_fov.1)
    }

    /// Applies the configured filters to every frame image in place.
    pub fn preprocess(&mut self, cfg: &PreprocessConfig) -> Result<()> {
        let out: Result<Vec<Image>> = self.frames.par_iter().map(|f| cfg.apply(&f.image)).collect();
        for (f, img) in self.frames.iter_mut().zip(out?) {
            f.image = img;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub fov_x_init_deg: f64,
    pub fov_y_init_deg: f64,
    pub frames: Vec<ManifestFrame>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub anchors: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFrame {
    pub file: String,
    pub c2w: Vec<f64>,
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn pose_from_manifest(frame: usize, m: &[f64], w: usize, h: usize) -> Result<CameraView> {
    if m.len() != 16 {
        return Err(Error::NonRigidPose {
            frame,
            reason: format!("c2w must have 16 entries, got {}", m.len()),
        });
    }
    let c2w = Matrix4::from_row_slice(m);
    let mut view = CameraView::from_camera_to_world(&c2w, w, h, RIGIDITY_TOL).map_err(|e| match e {
        Error::Precondition(reason) => Error::NonRigidPose { frame, reason },
        other => other,
    })?;
    view.frame_id = frame;
    Ok(view)
}

/// Loads `dir/manifest.json` and its frames. Poses must be rigid within
/// [`RIGIDITY_TOL`].
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    let (w, h) = (manifest.width, manifest.height);
    let frames: Result<Vec<Frame>> = manifest
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, mf)| {
            let view = pose_from_manifest(i, &mf.c2w, w, h)?;
            let image = Image::read_any(dir.join(&mf.file))?;
            if image.dims() != (w, h) {
                return Err(Error::DimensionMismatch {
                    expected: (w, h),
                    actual: image.dims(),
                });
            }
            Ok(Frame {
                image,
                view,
                file: mf.file.clone(),
            })
        })
        .collect();
    let anchors = manifest.anchors.iter().map(|a| Vector3::new(a[0], a[1], a[2])).collect();
    Dataset::new(
        frames?,
        (manifest.fov_x_init_deg.to_radians(), manifest.fov_y_init_deg.to_radians()),
        anchors,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ugsi,
}

/// Writes `manifest.json` and `frames/NNNN.{png,ugsi}` under `dir`.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let (w, h) = ds.dims();
    let mut entries = Vec::with_capacity(ds.frames.len());
    for (i, f) in ds.frames.iter().enumerate() {
        let rel = match format {
            ImageFormat::Png => format!("frames/{i:04}.png"),
            ImageFormat::Ugsi => format!("frames/{i:04}.ugsi"),
        };
        let path: PathBuf = dir.join(&rel);
        match format {
            ImageFormat::Png => f.image.write_png(&path)?,
            ImageFormat::Ugsi => f.image.write_ugsi(&path)?,
        }
        let c2w = f.view.camera_to_world();
        let mut flat = Vec::with_capacity(16);
        for r in 0..4 {
            for c in 0..4 {
                flat.push(c2w[(r, c)]);
            }
        }
        entries.push(ManifestFrame { file: rel, c2w: flat });
    }
    let manifest = Manifest {
        width: w,
        height: h,
        fov_x_init_deg: ds.init_fov.0.to_degrees(),
        fov_y_init_deg: ds.init_fov.1.to_degrees(),
        frames: entries,
        anchors: ds.anchors.iter().map(|a| [a.x, a.y, a.z]).collect(),
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Seeds one disk per anchor point.
///
/// Each disk faces the mean training camera, has an isotropic scale of half
/// the mean distance to its three nearest anchors, opacity 0.5, and a DC
/// response equal to the mean training-image value at its projection (plus
/// the default attenuation at that depth, so the initial render starts near
/// the data).
pub fn init_scene_from_anchors(ds: &Dataset, sh_degree: u32) -> Result<SceneModel> {
    init_scene_with_acoustics(ds, sh_degree, AcousticParams::default())
}

/// [`init_scene_from_anchors`] with explicit starting operator parameters;
/// the base responses compensate for the given attenuation.
pub fn init_scene_with_acoustics(ds: &Dataset, sh_degree: u32, acoustics: AcousticParams) -> Result<SceneModel> {
    sh::check_degree(sh_degree)?;
    if ds.anchors.is_empty() {
        return Err(Error::Precondition("dataset has no anchor points to seed primitives".into()));
    }
    let dar = ds.init_dar();
    let mut scene = SceneModel::new(Vec::new(), dar, sh_degree);
    scene.acoustics = acoustics;
    scene.acoustics.zero_gamma_diagonal();
    let w_att = crate::acoustics::softplus(scene.acoustics.raw_w_att);
    let intr = crate::geometry::intrinsics_from_dar(&scene.dar, ds.dims().0, ds.dims().1);
    let views: Vec<&Frame> = ds.train.iter().map(|&i| &ds.frames[i]).collect();
    let eye = views.iter().map(|f| f.view.center()).sum::<Vector3<f64>>() / views.len().max(1) as f64;

    let anchors = &ds.anchors;
    let prims = anchors
        .iter()
        .map(|p| {
            let mut d: Vec<f64> = anchors.iter().map(|q| (q - p).norm()).filter(|&x| x > 0.0).collect();
            d.sort_by(f64::total_cmp);
            let k = d.len().min(3);
            let scale = if k == 0 { 0.1 } else { 0.5 * d[..k].iter().sum::<f64>() / k as f64 };
            let scale = scale.clamp(1e-3, 10.0);

            let normal = (eye - p).try_normalize(1e-12).unwrap_or(-Vector3::z());
            let helper = if normal.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let tu = (helper - normal * normal.dot(&helper)).normalize();
            let tv = normal.cross(&tu);

            let (mut sum, mut depth, mut n) = (0.0, 0.0, 0usize);
            for f in &views {
                let pc = f.view.to_camera(p);
                if pc.z <= 0.0 {
                    continue;
                }
                let (x, y) = intr.project(&pc);
                let (xi, yi) = (x.round(), y.round());
                if xi >= 0.0 && yi >= 0.0 && (xi as usize) < f.image.width && (yi as usize) < f.image.height {
                    sum += f.image.get(xi as usize, yi as usize);
                    depth += pc.z;
                    n += 1;
                }
            }
            let base = if n > 0 {
                sum / n as f64 + w_att * ATTENUATION_ALPHA * depth / n as f64
            } else {
                0.5
            };
            let mut prim = SplatPrimitive::new(*p, tu, tv, scale, 0.5, sh_degree);
            prim.opacity_logit = logit(0.5);
            prim.set_base_response(0, base.clamp(0.0, 2.0));
            prim
        })
        .collect();
    scene.primitives = prims;
    scene.validate()?;
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset(n: usize) -> Dataset {
        let frames = (0..n)
            .map(|i| {
                let mut view = CameraView::look_at(
                    Vector3::new(i as f64 * 0.1, 0.0, 0.0),
                    Vector3::new(i as f64 * 0.1, 0.0, 3.0),
                    -Vector3::y(),
                    16,
                    12,
                )
                .unwrap();
                view.frame_id = i;
                Frame {
                    image: Image::from_fn(16, 12, |x, y| ((x + y + i) % 7) as f64 / 7.0),
                    view,
                    file: String::new(),
                }
            })
            .collect();
        Dataset::new(frames, (1.0, 0.8), vec![Vector3::new(0.0, 0.0, 3.0), Vector3::new(0.3, 0.1, 3.2)]).unwrap()
    }

    #[test]
    fn split_rule() {
        let (train, test) = split_indices(16, 8);
        assert_eq!(test, vec![0, 8]);
        assert_eq!(train.len(), 14);
        for n in 1..40 {
            let (tr, te) = split_indices(n, 8);
            assert_eq!(te.len(), n.div_ceil(8));
            assert_eq!(tr.len() + te.len(), n);
            assert!(tr.iter().all(|i| !te.contains(i)));
        }
    }

    #[test]
    fn round_trip_through_disk() {
        let ds = tiny_dataset(9);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), ImageFormat::Ugsi).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.test, vec![0, 8]);
        assert_eq!(back.anchors, ds.anchors);
        for (a, b) in ds.frames.iter().zip(&back.frames) {
            assert_eq!(
                a.image.data.iter().map(|v| *v as f32).collect::<Vec<_>>(),
                b.image.data.iter().map(|v| *v as f32).collect::<Vec<_>>()
            );
            assert!((a.view.rotation - b.view.rotation).norm() < 1e-12);
            assert!((a.view.translation - b.view.translation).norm() < 1e-12);
        }
        assert!((back.init_fov.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fov_hint_of_ninety_degrees_gives_zero_theta() {
        let mut ds = tiny_dataset(2);
        ds.init_fov = (std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        let dar = ds.init_dar();
        assert!(dar.theta_x.abs() < 1e-12 && dar.theta_y.abs() < 1e-12);
    }

    #[test]
    fn scaled_rotation_is_rejected() {
        let ds = tiny_dataset(2);
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path(), ImageFormat::Png).unwrap();
        let path = dir.path().join("manifest.json");
        let mut m: Manifest = read_json(&path).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                m.frames[1].c2w[r * 4 + c] *= 1.01;
            }
        }
        write_json(&path, &m).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::NonRigidPose { frame: 1, .. })));
    }

    #[test]
    fn missing_manifest_and_mismatched_frames() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
        let mut ds = tiny_dataset(3);
        ds.frames[2].image = Image::new(16, 16);
        assert!(Dataset::new(ds.frames, (1.0, 1.0), vec![]).is_err());
    }

    #[test]
    fn anchors_seed_valid_scene() {
        let ds = tiny_dataset(4);
        let s = init_scene_from_anchors(&ds, 1).unwrap();
        assert_eq!(s.primitives.len(), 2);
        s.validate().unwrap();
        let mut empty = ds.clone();
        empty.anchors.clear();
        assert!(init_scene_from_anchors(&empty, 1).is_err());
    }
}
