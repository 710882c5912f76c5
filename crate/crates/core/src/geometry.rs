//! Virtual pinhole camera with learnable fields of view and perspective
//! correct ray/disk intersection.
//!
//! Camera frame convention: `+x` right, `+y` down, `+z` forward. A pixel at
//! continuous coordinates `(x, y)` has normalized coordinates
//! `a = (x - c_x) / f_x`, `b = (y - c_y) / f_y` and views along `(a, b, 1)`.
//! Rendering samples pixel `(i, j)` at `(x, y) = (i, j)`, so the pixel at the
//! principal point looks straight down the optical axis.

use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::scene::{DarParams, SplatPrimitive};

/// Hits at or closer than this camera depth are discarded.
pub const NEAR_PLANE: f64 = 1e-4;
/// Relative determinant threshold for the 2x2 plane system.
pub const SINGULAR_TOL: f64 = 1e-12;
pub const MIN_IMAGE_DIM: usize = 8;

/// A rigid world-to-camera transform plus image size.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraView {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub image_width: usize,
    pub image_height: usize,
    pub frame_id: usize,
}

impl CameraView {
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        if image_width < MIN_IMAGE_DIM || image_height < MIN_IMAGE_DIM {
            return Err(Error::InvalidConfig(format!(
                "image must be at least {MIN_IMAGE_DIM}x{MIN_IMAGE_DIM}, got {image_width}x{image_height}"
            )));
        }
        check_rotation(&rotation, 1e-9).map_err(Error::Precondition)?;
        Ok(CameraView {
            rotation,
            translation,
            image_width,
            image_height,
            frame_id: 0,
        })
    }

    pub fn identity(image_width: usize, image_height: usize) -> Result<Self> {
        Self::new(Matrix3::identity(), Vector3::zeros(), image_width, image_height)
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll (image `-y`).
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        image_width: usize,
        image_height: usize,
    ) -> Result<Self> {
        let forward = (target - eye).normalize();
        let right = (-up).cross(&forward).normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        Self::new(rotation, -(rotation * eye), image_width, image_height)
    }

    /// Builds the view from a 4x4 world-to-camera matrix, rejecting scale or
    /// shear beyond `tol`.
    pub fn from_world_to_camera(
        m: &Matrix4<f64>,
        image_width: usize,
        image_height: usize,
        tol: f64,
    ) -> Result<Self> {
        let rotation: Matrix3<f64> = m.fixed_view::<3, 3>(0, 0).into();
        check_rotation(&rotation, tol).map_err(Error::Precondition)?;
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > tol {
            return Err(Error::Precondition("bottom row must be (0, 0, 0, 1)".into()));
        }
        let translation = m.fixed_view::<3, 1>(0, 3).into();
        let mut v = CameraView::new(rotation, translation, image_width, image_height)?;
        // Re-project onto SO(3) so downstream invariants hold to 1e-9.
        v.rotation = orthonormalize_rotation(&rotation);
        Ok(v)
    }

    pub fn from_camera_to_world(
        c2w: &Matrix4<f64>,
        image_width: usize,
        image_height: usize,
        tol: f64,
    ) -> Result<Self> {
        let r: Matrix3<f64> = c2w.fixed_view::<3, 3>(0, 0).into();
        check_rotation(&r, tol).map_err(Error::Precondition)?;
        let r = orthonormalize_rotation(&r);
        let c: Vector3<f64> = c2w.fixed_view::<3, 1>(0, 3).into();
        let rt = r.transpose();
        let mut w2c = Matrix4::identity();
        w2c.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        w2c.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * c)));
        let bottom = c2w.fixed_view::<1, 4>(3, 0);
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs()) > tol {
            return Err(Error::Precondition("bottom row must be (0, 0, 0, 1)".into()));
        }
        Self::from_world_to_camera(&w2c, image_width, image_height, tol)
    }

    pub fn world_to_camera(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn camera_to_world(&self) -> Matrix4<f64> {
        let rt = self.rotation.transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * self.translation)));
        m
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    #[inline]
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }
}

fn check_rotation(r: &Matrix3<f64>, tol: f64) -> std::result::Result<(), String> {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    if !(err <= tol) {
        return Err(format!("rotation block is not orthonormal (error {err:e})"));
    }
    let det = r.determinant();
    if !((det - 1.0).abs() <= tol.max(1e-12) * 3.0) {
        return Err(format!("rotation determinant is {det}, expected +1"));
    }
    Ok(())
}

fn orthonormalize_rotation(r: &Matrix3<f64>) -> Matrix3<f64> {
    let x: Vector3<f64> = r.row(0).transpose().normalize();
    let y0: Vector3<f64> = r.row(1).transpose();
    let y = (y0 - x * x.dot(&y0)).normalize();
    let z = x.cross(&y);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// Pinhole intrinsics with the principal point at the image center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub fov_x: f64,
    pub fov_y: f64,
    pub f_x: f64,
    pub f_y: f64,
    pub c_x: f64,
    pub c_y: f64,
}

impl Intrinsics {
    pub fn from_fov(fov_x: f64, fov_y: f64, width: usize, height: usize) -> Self {
        Intrinsics {
            fov_x,
            fov_y,
            f_x: width as f64 / (2.0 * (fov_x / 2.0).tan()),
            f_y: height as f64 / (2.0 * (fov_y / 2.0).tan()),
            c_x: width as f64 / 2.0,
            c_y: height as f64 / 2.0,
        }
    }

    /// Normalized camera-plane coordinates of a pixel.
    #[inline]
    pub fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.c_x) / self.f_x, (y - self.c_y) / self.f_y)
    }

    /// Pixel coordinates of a camera-frame point.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> (f64, f64) {
        (self.f_x * p.x / p.z + self.c_x, self.f_y * p.y / p.z + self.c_y)
    }
}

/// `2 atan(exp(theta))`, strictly inside `(0, pi)`.
pub fn rectified_fov(theta: f64) -> f64 {
    2.0 * theta.exp().atan()
}

pub fn intrinsics_from_dar(dar: &DarParams, width: usize, height: usize) -> Intrinsics {
    Intrinsics::from_fov(rectified_fov(dar.theta_x), rectified_fov(dar.theta_y), width, height)
}

/// Two camera-frame planes whose intersection is the viewing ray of pixel
/// `(x, y)`: `h_x = (-1, 0, a, 0)` and `h_y = (0, -1, b, 0)` with `(a, b)` the
/// normalized coordinates. A camera-frame point `X` lies on the ray iff
/// `h_x . (X, 1) = h_y . (X, 1) = 0`.
pub fn pixel_ray_planes(x: f64, y: f64, intr: &Intrinsics) -> (Vector4<f64>, Vector4<f64>) {
    let (a, b) = intr.normalize(x, y);
    (Vector4::new(-1.0, 0.0, a, 0.0), Vector4::new(0.0, -1.0, b, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySplatHit {
    pub u: f64,
    pub v: f64,
    /// Camera-frame depth of the hit.
    pub depth_z: f64,
    pub valid: bool,
}

impl RaySplatHit {
    const INVALID: RaySplatHit = RaySplatHit {
        u: 0.0,
        v: 0.0,
        depth_z: 0.0,
        valid: false,
    };
}

/// A primitive's frame expressed in camera coordinates: the columns
/// `(U, V, P)` of `W H` restricted to the disk plane.
#[derive(Debug, Clone, Copy)]
pub struct CameraSplat {
    pub u_axis: Vector3<f64>,
    pub v_axis: Vector3<f64>,
    pub center: Vector3<f64>,
}

impl CameraSplat {
    pub fn new(prim: &SplatPrimitive, view: &CameraView) -> Self {
        CameraSplat {
            u_axis: view.rotation * prim.tangent_u,
            v_axis: view.rotation * prim.tangent_v,
            center: view.to_camera(&prim.center),
        }
    }
}

/// Solves the two plane equations pulled back into the disk's local frame.
///
/// A camera-frame plane `h` becomes `(W H)^T h` in local coordinates; on the
/// disk plane (`w = 0`) that leaves `h.U u + h.V v + (h.P + h_3) = 0`.
pub fn intersect_planes(cs: &CameraSplat, h_x: &Vector4<f64>, h_y: &Vector4<f64>) -> RaySplatHit {
    let hx = h_x.xyz();
    let hy = h_y.xyz();
    let (a00, a01, r0) = (hx.dot(&cs.u_axis), hx.dot(&cs.v_axis), hx.dot(&cs.center) + h_x.w);
    let (a10, a11, r1) = (hy.dot(&cs.u_axis), hy.dot(&cs.v_axis), hy.dot(&cs.center) + h_y.w);
    solve_2x2(cs, a00, a01, r0, a10, a11, r1)
}

/// Specialisation of [`intersect_planes`] for the planes returned by
/// [`pixel_ray_planes`], given the normalized coordinates `(a, b)`.
#[inline]
pub fn intersect_normalized(cs: &CameraSplat, a: f64, b: f64) -> RaySplatHit {
    let (u, v, p) = (&cs.u_axis, &cs.v_axis, &cs.center);
    let a00 = a * u.z - u.x;
    let a01 = a * v.z - v.x;
    let r0 = a * p.z - p.x;
    let a10 = b * u.z - u.y;
    let a11 = b * v.z - v.y;
    let r1 = b * p.z - p.y;
    solve_2x2(cs, a00, a01, r0, a10, a11, r1)
}

#[inline]
fn solve_2x2(cs: &CameraSplat, a00: f64, a01: f64, r0: f64, a10: f64, a11: f64, r1: f64) -> RaySplatHit {
    let det = a00 * a11 - a01 * a10;
    let scale = ((a00 * a00 + a01 * a01) * (a10 * a10 + a11 * a11)).sqrt();
    if !(det.abs() >= SINGULAR_TOL * scale) || scale == 0.0 {
        return RaySplatHit::INVALID;
    }
    let inv = 1.0 / det;
    let u = (a01 * r1 - a11 * r0) * inv;
    let v = (a10 * r0 - a00 * r1) * inv;
    let depth_z = cs.center.z + u * cs.u_axis.z + v * cs.v_axis.z;
    RaySplatHit {
        u,
        v,
        depth_z,
        valid: depth_z > NEAR_PLANE && u.is_finite() && v.is_finite(),
    }
}

/// Intersects the pixel ray described by the plane pair with a primitive.
pub fn intersect(prim: &SplatPrimitive, view: &CameraView, h_x: &Vector4<f64>, h_y: &Vector4<f64>) -> RaySplatHit {
    intersect_planes(&CameraSplat::new(prim, view), h_x, h_y)
}

/// World point on the disk at tangent coordinates `(u, v)`.
pub fn disk_point(prim: &SplatPrimitive, u: f64, v: f64) -> Vector3<f64> {
    prim.center + prim.tangent_u * u + prim.tangent_v * v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SplatPrimitive;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn disk(center: Vector3<f64>, tu: Vector3<f64>, tv: Vector3<f64>) -> SplatPrimitive {
        SplatPrimitive::new(center, tu, tv, 0.5, 0.5, 1)
    }

    #[test]
    fn rectified_fov_examples() {
        assert_eq!(rectified_fov(0.0), FRAC_PI_2);
        assert!(rectified_fov(-20.0) < 1e-8);
        assert!(rectified_fov(-20.0) > 0.0);
        assert!(rectified_fov(40.0) <= PI);
        let theta = 30f64.to_radians().tan().ln();
        assert!((rectified_fov(theta) - 60f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn intrinsics_examples() {
        let mut dar = DarParams::default();
        dar.theta_y = 30f64.to_radians().tan().ln();
        let k = intrinsics_from_dar(&dar, 512, 600);
        assert!((k.fov_x - FRAC_PI_2).abs() < 1e-15);
        assert!((k.f_x - 256.0).abs() < 1e-12);
        assert!((k.f_y - 519.615_242_270_663_2).abs() < 1e-9);
        assert_eq!((k.c_x, k.c_y), (256.0, 300.0));
        let sq = intrinsics_from_dar(&DarParams::from_fov(1.0, 1.0), 64, 64);
        assert_eq!(sq.f_x, sq.f_y);
    }

    #[test]
    fn center_pixel_planes_are_axis_planes() {
        let k = Intrinsics::from_fov(1.0, 1.2, 64, 48);
        let (hx, hy) = pixel_ray_planes(k.c_x, k.c_y, &k);
        assert_eq!(hx, Vector4::new(-1.0, 0.0, 0.0, 0.0));
        assert_eq!(hy, Vector4::new(0.0, -1.0, 0.0, 0.0));
    }

    #[test]
    fn unit_offset_pixel_looks_along_diagonal() {
        let k = Intrinsics::from_fov(1.0, 1.2, 64, 48);
        let (hx, hy) = pixel_ray_planes(k.c_x + k.f_x, k.c_y, &k);
        // Brute force: unproject with K^-1 and check both planes vanish.
        let kinv = Matrix3::new(k.f_x, 0.0, k.c_x, 0.0, k.f_y, k.c_y, 0.0, 0.0, 1.0)
            .try_inverse()
            .unwrap();
        let dir = kinv * Vector3::new(k.c_x + k.f_x, k.c_y, 1.0);
        assert!((dir - Vector3::new(1.0, 0.0, 1.0)).norm() < 1e-12);
        for t in [0.5, 3.0] {
            let p = (dir * t).push(1.0);
            assert!(hx.dot(&p).abs() < 1e-12 && hy.dot(&p).abs() < 1e-12);
        }
    }

    #[test]
    fn axis_aligned_disk_hits() {
        let view = CameraView::identity(64, 64).unwrap();
        let prim = disk(Vector3::new(0.0, 0.0, 5.0), Vector3::x(), Vector3::y());
        let hit = intersect(&prim, &view, &Vector4::new(-1.0, 0.0, 0.0, 0.0), &Vector4::new(0.0, -1.0, 0.0, 0.0));
        assert!(hit.valid);
        assert_eq!((hit.u, hit.v, hit.depth_z), (0.0, 0.0, 5.0));
        let hit = intersect(&prim, &view, &Vector4::new(-1.0, 0.0, 0.2, 0.0), &Vector4::new(0.0, -1.0, 0.0, 0.0));
        assert!((hit.u - 1.0).abs() < 1e-15 && hit.v == 0.0 && hit.depth_z == 5.0);
    }

    #[test]
    fn edge_on_and_behind_camera_are_invalid() {
        let view = CameraView::identity(64, 64).unwrap();
        let edge_on = disk(Vector3::new(0.0, 0.0, 5.0), Vector3::x(), Vector3::z());
        let hx = Vector4::new(-1.0, 0.0, 0.0, 0.0);
        let hy = Vector4::new(0.0, -1.0, 0.0, 0.0);
        assert!(!intersect(&edge_on, &view, &hx, &hy).valid);
        let behind = disk(Vector3::new(0.0, 0.0, -5.0), Vector3::x(), Vector3::y());
        assert!(!intersect(&behind, &view, &hx, &hy).valid);
    }

    #[test]
    fn rejects_scaled_pose() {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.01;
        assert!(CameraView::from_world_to_camera(&m, 16, 16, 1e-6).is_err());
        assert!(CameraView::from_camera_to_world(&m, 16, 16, 1e-6).is_err());
        assert!(CameraView::identity(4, 16).is_err());
    }

    #[test]
    fn look_at_maps_target_to_principal_axis() {
        let eye = Vector3::new(1.0, -2.0, 0.5);
        let target = Vector3::new(0.2, 0.3, 4.0);
        let v = CameraView::look_at(eye, target, -Vector3::y(), 32, 32).unwrap();
        let p = v.to_camera(&target);
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12 && p.z > 0.0);
        assert!((v.center() - eye).norm() < 1e-12);
        let back = CameraView::from_camera_to_world(&v.camera_to_world(), 32, 32, 1e-9).unwrap();
        assert!((back.rotation - v.rotation).abs().max() < 1e-12);
    }

    /// Independent oracle: classic ray/plane intersection in camera space.
    fn oracle(prim: &SplatPrimitive, view: &CameraView, a: f64, b: f64) -> Option<(f64, f64, f64, f64)> {
        let origin = view.center();
        let dir = view.rotation.transpose() * Vector3::new(a, b, 1.0);
        let n = prim.tangent_u.cross(&prim.tangent_v);
        let denom = n.dot(&dir);
        if denom.abs() < 1e-9 {
            return None;
        }
        let t = n.dot(&(prim.center - origin)) / denom;
        let x = origin + dir * t;
        let rel = x - prim.center;
        Some((rel.dot(&prim.tangent_u), rel.dot(&prim.tangent_v), view.to_camera(&x).z, t))
    }

    #[test]
    fn tilted_disk_matches_closed_form() {
        let view = CameraView::identity(64, 64).unwrap();
        let s = (PI / 4.0).sin();
        let prim = disk(Vector3::new(0.1, -0.2, 4.0), Vector3::x(), Vector3::new(0.0, s, s));
        let k = Intrinsics::from_fov(1.0, 1.0, 64, 64);
        for i in 0..50 {
            let x = (i * 7 % 64) as f64 + 0.3;
            let y = (i * 13 % 64) as f64 + 0.6;
            let (hx, hy) = pixel_ray_planes(x, y, &k);
            let hit = intersect(&prim, &view, &hx, &hy);
            let (a, b) = k.normalize(x, y);
            let (u, v, z, _) = oracle(&prim, &view, a, b).unwrap();
            assert!(hit.valid);
            assert!((hit.u - u).abs() < 1e-9 && (hit.v - v).abs() < 1e-9 && (hit.depth_z - z).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn fov_strictly_monotone(t1 in -8.0f64..8.0, dt in 1e-6f64..4.0) {
            prop_assert!(rectified_fov(t1) < rectified_fov(t1 + dt));
        }

        #[test]
        fn focal_identity_is_exact(theta in -3.0f64..3.0, w in 8usize..2048) {
            let k = intrinsics_from_dar(&DarParams { theta_x: theta, theta_y: theta, theta_min: -5.0, theta_max: 5.0 }, w, w);
            prop_assert_eq!(k.f_x, w as f64 / (2.0 * (k.fov_x / 2.0).tan()));
        }

        #[test]
        fn fast_path_matches_plane_form(
            cx in -1.0f64..1.0, cy in -1.0f64..1.0, cz in 1.0f64..6.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            bx in -1.0f64..1.0, by in -1.0f64..1.0, bz in -1.0f64..1.0,
            px in 0.0f64..64.0, py in 0.0f64..64.0,
        ) {
            let mut prim = disk(Vector3::new(cx, cy, cz), Vector3::new(ax, ay, az + 2.0), Vector3::new(bx + 2.0, by, bz));
            prim.orthonormalize();
            let view = CameraView::look_at(Vector3::new(0.1, 0.0, -0.5), Vector3::new(0.0, 0.0, 3.0), -Vector3::y(), 64, 64).unwrap();
            let k = Intrinsics::from_fov(1.2, 0.9, 64, 64);
            let (hx, hy) = pixel_ray_planes(px, py, &k);
            let (a, b) = k.normalize(px, py);
            let slow = intersect(&prim, &view, &hx, &hy);
            let fast = intersect_normalized(&CameraSplat::new(&prim, &view), a, b);
            prop_assert_eq!(slow.valid, fast.valid);
            if slow.valid {
                prop_assert!((slow.u - fast.u).abs() < 1e-9 && (slow.v - fast.v).abs() < 1e-9);
                prop_assert!((slow.depth_z - fast.depth_z).abs() < 1e-9);
            }
        }

        #[test]
        fn reprojection_round_trip(
            cx in -0.5f64..0.5, cy in -0.5f64..0.5, cz in 2.0f64..6.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -0.3f64..0.3,
            px in 0.0f64..63.0, py in 0.0f64..63.0,
        ) {
            let mut prim = disk(Vector3::new(cx, cy, cz), Vector3::new(1.0, ax, az), Vector3::new(ay, 1.0, az));
            prim.orthonormalize();
            let view = CameraView::look_at(Vector3::new(0.2, -0.1, 0.0), Vector3::new(0.0, 0.0, 4.0), -Vector3::y(), 64, 64).unwrap();
            let k = Intrinsics::from_fov(1.0, 1.1, 64, 64);
            let (hx, hy) = pixel_ray_planes(px, py, &k);
            let hit = intersect(&prim, &view, &hx, &hy);
            prop_assume!(hit.valid);
            let xw = disk_point(&prim, hit.u, hit.v);
            let xc = view.to_camera(&xw);
            let (rx, ry) = k.project(&xc);
            prop_assert!((rx - px).abs() < 1e-6 && (ry - py).abs() < 1e-6);
            prop_assert!((xc.z - hit.depth_z).abs() < 1e-9);
            let (a, b) = k.normalize(px, py);
            let (_, _, _, t) = oracle(&prim, &view, a, b).unwrap();
            // The oracle's direction has unit z in camera space, so z = t.
            prop_assert!((t - hit.depth_z).abs() < 1e-9 * hit.depth_z.max(1.0));
        }
    }
}
