//! Pinhole cameras, per-pixel rays, and depth-based cross-view warping with
//! occlusion masking.
//!
//! Conventions (shared by the dataset format, the ray tracer and the
//! renderer):
//! - world and camera frames are right-handed; the camera looks down `-z`
//!   with `x` right and `y` up,
//! - image rows grow downward, columns grow to the right, and pixel
//!   `(row, col)` has continuous image coordinates `(col + 0.5, row + 0.5)`,
//! - "depth" always means Euclidean distance from the camera center along
//!   the (unit) ray, not the `-z` coordinate.

use nalgebra::{Matrix3, Vector3};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{rf, Real};

/// Pinhole camera: intrinsics plus a camera-to-world rigid transform.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CameraPose {
    /// Focal length in pixels (same for x and y).
    pub focal: f64,
    /// Principal point in pixels.
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    /// Camera-to-world rotation.
    pub rotation: Matrix3<f64>,
    /// Camera center in world coordinates.
    pub translation: Vector3<f64>,
}

impl CameraPose {
    /// Camera at the world origin looking down `-z`, principal point at the
    /// image center.
    pub fn identity(focal: f64, width: usize, height: usize) -> Self {
        CameraPose {
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Camera placed at `eye` looking at `target` with the given up hint.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let backward = (eye - target).normalize(); // camera +z
        let right = up.cross(&backward).normalize();
        let true_up = backward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, true_up, backward]);
        CameraPose {
            focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation: eye,
        }
    }

    /// Checks the pose invariants: orthonormal rotation with determinant +1
    /// (to 1e-6), positive focal length, nonzero image size.
    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let should_be_id = r.transpose() * r - Matrix3::identity();
        if should_be_id.norm() > 1e-6 {
            return Err(Error::Dataset(format!(
                "rotation is not orthonormal (|R^T R - I| = {:.3e})",
                should_be_id.norm()
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::Dataset(format!(
                "rotation determinant {} != +1",
                r.determinant()
            )));
        }
        if !(self.focal > 0.0) {
            return Err(Error::Dataset(format!("focal length {} <= 0", self.focal)));
        }
        if self.width < 1 || self.height < 1 {
            return Err(Error::Dataset(format!(
                "degenerate image size {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> Vector3<f64> {
        self.translation
    }

    /// Optical axis in world coordinates (the `-z` camera axis).
    pub fn optical_axis(&self) -> Vector3<f64> {
        self.rotation * Vector3::new(0.0, 0.0, -1.0)
    }

    /// Unit world-space direction through the center of pixel `(row, col)`.
    pub fn pixel_direction(&self, row: u32, col: u32) -> Vector3<f64> {
        self.direction_at(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Unit world-space direction through continuous image point `(u, v)`.
    pub fn direction_at(&self, u: f64, v: f64) -> Vector3<f64> {
        let dir_cam = Vector3::new(
            (u - self.cx) / self.focal,
            -(v - self.cy) / self.focal,
            -1.0,
        );
        (self.rotation * dir_cam).normalize()
    }

    /// Projects a world point. Returns `(u, v, distance)` in continuous image
    /// coordinates, or `None` if the point is on or behind the camera plane.
    pub fn project(&self, point: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let p_cam = self.rotation.transpose() * (point - self.translation);
        if p_cam.z >= 0.0 {
            return None;
        }
        let inv_z = 1.0 / -p_cam.z;
        let u = self.cx + self.focal * p_cam.x * inv_z;
        let v = self.cy - self.focal * p_cam.y * inv_z;
        Some((u, v, (point - self.translation).norm()))
    }

    /// Pose after applying a rigid world transform `(g_rot, g_trans)` to the
    /// camera (both frames move together).
    pub fn transformed(&self, g_rot: &Matrix3<f64>, g_trans: &Vector3<f64>) -> Self {
        let mut out = self.clone();
        out.rotation = g_rot * self.rotation;
        out.translation = g_rot * self.translation + g_trans;
        out
    }
}

/// One ray per requested pixel.
#[derive(Clone, Debug)]
pub struct RayBundle {
    pub origins: Vec<Vector3<f64>>,
    /// Unit directions.
    pub directions: Vec<Vector3<f64>>,
    /// `(row, col)` per ray.
    pub pixels: Vec<(u32, u32)>,
}

impl RayBundle {
    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// Casts one ray through each listed pixel center.
pub fn generate_rays(camera: &CameraPose, pixels: &[(u32, u32)]) -> Result<RayBundle> {
    let mut origins = Vec::with_capacity(pixels.len());
    let mut directions = Vec::with_capacity(pixels.len());
    for &(row, col) in pixels {
        if row as usize >= camera.height || col as usize >= camera.width {
            return Err(Error::PixelOutOfBounds {
                row,
                col,
                width: camera.width,
                height: camera.height,
            });
        }
        origins.push(camera.center());
        directions.push(camera.pixel_direction(row, col));
    }
    Ok(RayBundle {
        origins,
        directions,
        pixels: pixels.to_vec(),
    })
}

/// All pixels of the camera's image plane in row-major order.
pub fn full_pixel_grid(camera: &CameraPose) -> Vec<(u32, u32)> {
    let mut pixels = Vec::with_capacity(camera.width * camera.height);
    for row in 0..camera.height as u32 {
        for col in 0..camera.width as u32 {
            pixels.push((row, col));
        }
    }
    pixels
}

/// Result of warping a source view into a target view.
///
/// Masked-out pixels carry the sentinel value zero. The mask is false where
/// the target depth is invalid, the reprojected point leaves the source
/// frame or lies behind the source camera, the source depth is invalid, or
/// the occlusion test fails.
#[derive(Clone, Debug)]
pub struct WarpResult {
    /// `(3, H, W)`, values in `[0, 1]`.
    pub image: Array3<f32>,
    pub mask: Array2<bool>,
}

impl WarpResult {
    pub fn valid_fraction(&self) -> f64 {
        let total = self.mask.len();
        if total == 0 {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / total as f64
    }
}

/// The geometric part of a warp: where each valid target pixel samples the
/// source image, in continuous index coordinates. Applying the field is a
/// fixed linear (bilinear) map, so gradients can flow back to the source.
#[derive(Clone, Debug)]
pub struct WarpField {
    pub sample_x: Array2<f64>,
    pub sample_y: Array2<f64>,
    pub mask: Array2<bool>,
    source_height: usize,
    source_width: usize,
}

impl WarpField {
    pub fn valid_fraction(&self) -> f64 {
        let total = self.mask.len();
        if total == 0 {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / total as f64
    }

    /// Bilinearly samples `source` at the stored coordinates; masked-out
    /// pixels become zero.
    pub fn apply<F: Real>(&self, source: &ndarray::Array3<F>) -> ndarray::Array3<F> {
        let (th, tw) = self.mask.dim();
        let mut out = ndarray::Array3::zeros((3, th, tw));
        for row in 0..th {
            for col in 0..tw {
                if !self.mask[(row, col)] {
                    continue;
                }
                let (x0, fx) = split_index(self.sample_x[(row, col)], self.source_width);
                let (y0, fy) = split_index(self.sample_y[(row, col)], self.source_height);
                let (fx, fy) = (rf::<F>(fx), rf::<F>(fy));
                let one = F::one();
                for ch in 0..3 {
                    let top = source[(ch, y0, x0)] * (one - fx) + source[(ch, y0, x0 + 1)] * fx;
                    let bot =
                        source[(ch, y0 + 1, x0)] * (one - fx) + source[(ch, y0 + 1, x0 + 1)] * fx;
                    out[(ch, row, col)] = top * (one - fy) + bot * fy;
                }
            }
        }
        out
    }

    /// Transpose of [`WarpField::apply`]: scatters a gradient on the warped
    /// image back onto the source image.
    pub fn apply_backward<F: Real>(&self, d_warped: &ndarray::Array3<F>) -> ndarray::Array3<F> {
        let (th, tw) = self.mask.dim();
        let mut d_source = ndarray::Array3::zeros((3, self.source_height, self.source_width));
        for row in 0..th {
            for col in 0..tw {
                if !self.mask[(row, col)] {
                    continue;
                }
                let (x0, fx) = split_index(self.sample_x[(row, col)], self.source_width);
                let (y0, fy) = split_index(self.sample_y[(row, col)], self.source_height);
                let (fx, fy) = (rf::<F>(fx), rf::<F>(fy));
                let one = F::one();
                for ch in 0..3 {
                    let g = d_warped[(ch, row, col)];
                    d_source[(ch, y0, x0)] =
                        d_source[(ch, y0, x0)] + g * (one - fx) * (one - fy);
                    d_source[(ch, y0, x0 + 1)] = d_source[(ch, y0, x0 + 1)] + g * fx * (one - fy);
                    d_source[(ch, y0 + 1, x0)] = d_source[(ch, y0 + 1, x0)] + g * (one - fx) * fy;
                    d_source[(ch, y0 + 1, x0 + 1)] = d_source[(ch, y0 + 1, x0 + 1)] + g * fx * fy;
                }
            }
        }
        d_source
    }
}

/// Reprojects the center of target pixel `(row, col)` with the given depth
/// into the source camera. Returns continuous source image coordinates and
/// the distance of the 3D point from the source camera center.
pub fn reproject_pixel(
    target_cam: &CameraPose,
    source_cam: &CameraPose,
    row: u32,
    col: u32,
    depth: f64,
) -> Option<(f64, f64, f64)> {
    let dir = target_cam.pixel_direction(row, col);
    let point = target_cam.center() + dir * depth;
    source_cam.project(&point)
}

/// Computes the backward-warp correspondence from the source view into the
/// target view.
///
/// Each target pixel is unprojected with `target_depth` and reprojected into
/// the source camera. A correspondence is occluded when the reprojected
/// distance differs from the bilinearly interpolated `source_depth` by more
/// than `depth_tolerance`. Depths `<= 0` are treated as invalid.
pub fn compute_warp_field(
    source_cam: &CameraPose,
    target_cam: &CameraPose,
    target_depth: &Array2<f32>,
    source_depth: &Array2<f32>,
    depth_tolerance: f32,
) -> Result<WarpField> {
    let (h, w) = (source_cam.height, source_cam.width);
    if source_depth.dim() != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "source depth {:?} does not match source camera ({h}, {w})",
            source_depth.dim()
        )));
    }
    let (th, tw) = (target_cam.height, target_cam.width);
    if target_depth.dim() != (th, tw) {
        return Err(Error::ShapeMismatch(format!(
            "target depth {:?} does not match target camera ({th}, {tw})",
            target_depth.dim()
        )));
    }

    let mut sample_x = Array2::<f64>::from_elem((th, tw), -1.0);
    let mut sample_y = Array2::<f64>::from_elem((th, tw), -1.0);
    let mut mask = Array2::<bool>::from_elem((th, tw), false);

    for row in 0..th {
        for col in 0..tw {
            let depth = target_depth[(row, col)] as f64;
            if !(depth > 0.0) {
                continue;
            }
            let Some((u, v, dist)) =
                reproject_pixel(target_cam, source_cam, row as u32, col as u32, depth)
            else {
                continue;
            };
            // continuous index coordinates of the sample point; the epsilon
            // keeps exact-boundary reprojections (identity warp) in bounds
            const BOUNDS_EPS: f64 = 1e-9;
            let x = u - 0.5;
            let y = v - 0.5;
            if x < -BOUNDS_EPS
                || x > (w - 1) as f64 + BOUNDS_EPS
                || y < -BOUNDS_EPS
                || y > (h - 1) as f64 + BOUNDS_EPS
            {
                continue;
            }
            let x = x.clamp(0.0, (w - 1) as f64);
            let y = y.clamp(0.0, (h - 1) as f64);
            let (x0, fx) = split_index(x, w);
            let (y0, fy) = split_index(y, h);
            let d00 = source_depth[(y0, x0)];
            let d01 = source_depth[(y0, x0 + 1)];
            let d10 = source_depth[(y0 + 1, x0)];
            let d11 = source_depth[(y0 + 1, x0 + 1)];
            if d00 <= 0.0 || d01 <= 0.0 || d10 <= 0.0 || d11 <= 0.0 {
                continue;
            }
            let interp_depth = bilerp(d00 as f64, d01 as f64, d10 as f64, d11 as f64, fx, fy);
            if (dist - interp_depth).abs() > depth_tolerance as f64 {
                continue;
            }
            sample_x[(row, col)] = x;
            sample_y[(row, col)] = y;
            mask[(row, col)] = true;
        }
    }

    Ok(WarpField {
        sample_x,
        sample_y,
        mask,
        source_height: h,
        source_width: w,
    })
}

/// Backward warp of `source` into the target view: the correspondence of
/// [`compute_warp_field`] followed by bilinear sampling.
pub fn warp_view(
    source: &Array3<f32>,
    source_cam: &CameraPose,
    target_cam: &CameraPose,
    target_depth: &Array2<f32>,
    source_depth: &Array2<f32>,
    depth_tolerance: f32,
) -> Result<WarpResult> {
    let (c, h, w) = source.dim();
    if c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "source image must be (3, H, W), got ({c}, {h}, {w})"
        )));
    }
    if (source_cam.height, source_cam.width) != (h, w) {
        return Err(Error::ShapeMismatch(format!(
            "source camera {}x{} does not match source image ({h}, {w})",
            source_cam.height, source_cam.width
        )));
    }
    let field = compute_warp_field(
        source_cam,
        target_cam,
        target_depth,
        source_depth,
        depth_tolerance,
    )?;
    Ok(WarpResult {
        image: field.apply(source),
        mask: field.mask,
    })
}

/// Splits a continuous index into a base cell and fraction, nudging points on
/// the last grid line into the previous cell so the 2x2 neighborhood exists.
fn split_index(x: f64, n: usize) -> (usize, f64) {
    let mut x0 = x.floor() as usize;
    if x0 >= n - 1 {
        x0 = n - 2;
    }
    (x0, x - x0 as f64)
}

#[inline]
fn bilerp(v00: f64, v01: f64, v10: f64, v11: f64, fx: f64, fy: f64) -> f64 {
    let top = v00 * (1.0 - fx) + v01 * fx;
    let bot = v10 * (1.0 - fx) + v11 * fx;
    top * (1.0 - fy) + bot * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn smooth_image(h: usize, w: usize) -> Array3<f32> {
        Array3::from_shape_fn((3, h, w), |(c, r, col)| {
            let x = col as f32 / w as f32;
            let y = r as f32 / h as f32;
            0.5 + 0.3 * ((x * 3.0 + c as f32) * std::f32::consts::PI).sin() * (y * 2.0).cos()
        })
    }

    #[test]
    fn principal_pixel_maps_to_optical_axis() {
        let cam = CameraPose::identity(50.0, 64, 64);
        // pixel whose center coincides with the principal point
        let dir = cam.direction_at(cam.cx, cam.cy);
        assert_relative_eq!(dir.dot(&cam.optical_axis()), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_pose_rays_start_at_origin() {
        let cam = CameraPose::identity(50.0, 64, 64);
        let rays = generate_rays(&cam, &[(0, 0), (31, 63)]).unwrap();
        for o in &rays.origins {
            assert_eq!(*o, Vector3::zeros());
        }
        for d in &rays.directions {
            assert_relative_eq!(d.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pixel_one_focal_length_off_axis_is_45_degrees() {
        // analytic back-projection: offset == focal => tan = 1 => 45 degrees
        let cam = CameraPose::identity(20.0, 64, 64);
        let dir = cam.direction_at(cam.cx + cam.focal, cam.cy);
        let cos_angle = dir.dot(&cam.optical_axis());
        assert_relative_eq!(cos_angle, (std::f64::consts::FRAC_PI_4).cos(), epsilon = 1e-12);
        // stays in the horizontal plane
        assert_relative_eq!(dir.y, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn out_of_bounds_pixel_is_reported() {
        let cam = CameraPose::identity(50.0, 32, 32);
        let err = generate_rays(&cam, &[(0, 0), (40, 2)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(40, 2)"), "unhelpful error: {msg}");
    }

    #[test]
    fn ray_directions_commute_with_rigid_transforms() {
        let cam = CameraPose::look_at(
            Vector3::new(0.5, -0.3, 2.0),
            Vector3::zeros(),
            Vector3::y(),
            40.0,
            32,
            24,
        );
        let g_rot = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 0.7)
            .matrix()
            .to_owned();
        let g_trans = Vector3::new(1.0, 2.0, -0.5);
        let moved = cam.transformed(&g_rot, &g_trans);
        let pixels = [(0u32, 0u32), (5, 17), (23, 31)];
        let base = generate_rays(&cam, &pixels).unwrap();
        let trans = generate_rays(&moved, &pixels).unwrap();
        for (d0, d1) in base.directions.iter().zip(&trans.directions) {
            assert_relative_eq!((g_rot * d0 - d1).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let cam = CameraPose::identity(40.0, 24, 24);
        let img = smooth_image(24, 24);
        let depth = Array2::from_elem((24, 24), 3.0f32);
        let warp = warp_view(&img, &cam, &cam, &depth, &depth, 0.1).unwrap();
        assert!(warp.mask.iter().all(|&m| m), "identity warp should be fully valid");
        let mut max_err = 0.0f32;
        for (a, b) in warp.image.iter().zip(img.iter()) {
            max_err = max_err.max((a - b).abs());
        }
        assert!(max_err < 1e-6, "identity warp error {max_err}");
    }

    #[test]
    fn out_of_frame_reprojection_is_masked_and_zero() {
        let src = CameraPose::identity(40.0, 24, 24);
        // target shifted far sideways so most pixels leave the source frame
        let mut tgt = src.clone();
        tgt.translation = Vector3::new(10.0, 0.0, 0.0);
        let img = smooth_image(24, 24);
        let depth = Array2::from_elem((24, 24), 3.0f32);
        let warp = warp_view(&img, &src, &tgt, &depth, &depth, 0.1).unwrap();
        let invalid = warp
            .mask
            .indexed_iter()
            .filter(|&(_, &m)| !m)
            .collect::<Vec<_>>();
        assert!(!invalid.is_empty());
        for ((r, c), _) in invalid {
            for ch in 0..3 {
                assert_eq!(warp.image[(ch, r, c)], 0.0);
            }
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let cam = CameraPose::identity(40.0, 24, 24);
        let img = smooth_image(24, 24);
        let depth = Array2::from_elem((12, 12), 3.0f32);
        assert!(warp_view(&img, &cam, &cam, &depth, &depth, 0.1).is_err());
    }

    #[test]
    fn shrinking_tolerance_never_enlarges_mask() {
        let src = CameraPose::look_at(
            Vector3::new(0.3, 0.1, 3.0),
            Vector3::zeros(),
            Vector3::y(),
            30.0,
            24,
            24,
        );
        let tgt = CameraPose::look_at(
            Vector3::new(-0.2, 0.0, 3.0),
            Vector3::zeros(),
            Vector3::y(),
            30.0,
            24,
            24,
        );
        let img = smooth_image(24, 24);
        // mildly inconsistent depths so the occlusion test actually fires
        let sd = Array2::from_shape_fn((24, 24), |(r, c)| 3.0 + 0.02 * ((r * 7 + c) % 5) as f32);
        let td = Array2::from_elem((24, 24), 3.0f32);
        let loose = warp_view(&img, &src, &tgt, &td, &sd, 0.08).unwrap();
        let tight = warp_view(&img, &src, &tgt, &td, &sd, 0.02).unwrap();
        for (l, t) in loose.mask.iter().zip(tight.mask.iter()) {
            assert!(*l || !*t, "tight mask valid where loose mask is not");
        }
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(proptest::test_runner::Config::with_cases(24))]
        #[test]
        fn tighter_tolerance_never_enlarges_the_mask(
            dx in -0.6f64..0.6,
            dy in -0.3f64..0.3,
            noise_seed in 0u64..50,
            tol_big in 0.05f32..0.2,
            tol_ratio in 0.1f32..0.9,
        ) {
            use rand::{Rng, SeedableRng};
            let src = CameraPose::look_at(
                Vector3::new(0.2, 0.0, 3.0),
                Vector3::zeros(),
                Vector3::y(),
                24.0,
                16,
                16,
            );
            let tgt = CameraPose::look_at(
                Vector3::new(0.2 + dx, dy, 3.0),
                Vector3::zeros(),
                Vector3::y(),
                24.0,
                16,
                16,
            );
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(noise_seed);
            let sd = Array2::from_shape_fn((16, 16), |_| 3.0 + rng.gen_range(-0.05f32..0.05));
            let td = Array2::from_elem((16, 16), 3.0f32);
            let tol_small = tol_big * tol_ratio;
            let loose = compute_warp_field(&src, &tgt, &td, &sd, tol_big).unwrap();
            let tight = compute_warp_field(&src, &tgt, &td, &sd, tol_small).unwrap();
            for (l, t) in loose.mask.iter().zip(tight.mask.iter()) {
                prop_assert!(*l || !*t);
            }
        }
    }
}
