//! Pinhole camera with Brown–Conrady distortion, frustum construction and
//! conservative frustum culling.
//!
//! Pixel coordinates follow the OpenCV convention: the center of pixel
//! `(i, j)` sits at `(i, j)`, so an image of width `W` spans
//! `[-0.5, W - 0.5]` horizontally.

use crate::geometry::{Box3D, Cuboid, Mat3, RigidTransform, Vec3};
use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const DEFAULT_NEAR: f64 = 0.1;
pub const DEFAULT_FAR: f64 = 5.0;

/// Iteration cap for undistortion.
pub const UNDISTORT_MAX_ITERS: usize = 20;
/// Convergence threshold for undistortion, in normalized image coordinates.
pub const UNDISTORT_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CameraError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid clip range: near {near}, far {far}")]
    InvalidClip { near: f64, far: f64 },
    #[error("distortion coefficients must be finite")]
    NonFiniteDistortion,
    #[error("distortion is not invertible over the image (radial map folds at r = {0:.4})")]
    NonInvertibleDistortion(f64),
    #[error("undistortion did not converge at pixel ({u:.3}, {v:.3})")]
    NoConvergence { u: f64, v: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("gravity rotation is not a proper rotation")]
    InvalidGravity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<(), CameraError> {
        let bad = |m: &str| Err(CameraError::InvalidIntrinsics(m.to_string()));
        if ![self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) {
            return bad("non-finite value");
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return bad("focal lengths must be positive");
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive");
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    /// Intrinsics for the same camera sampled at `width x height`.
    pub fn scaled(&self, width: u32, height: u32) -> Intrinsics {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Intrinsics {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }
}

/// Brown–Conrady coefficients (OpenCV ordering k1, k2, p1, p2, k3).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Distortion {
    #[serde(default)]
    pub k1: f64,
    #[serde(default)]
    pub k2: f64,
    #[serde(default)]
    pub k3: f64,
    #[serde(default)]
    pub p1: f64,
    #[serde(default)]
    pub p2: f64,
}

impl Distortion {
    pub fn is_zero(&self) -> bool {
        self.k1 == 0.0 && self.k2 == 0.0 && self.k3 == 0.0 && self.p1 == 0.0 && self.p2 == 0.0
    }

    fn is_finite(&self) -> bool {
        [self.k1, self.k2, self.k3, self.p1, self.p2].iter().all(|v| v.is_finite())
    }

    #[inline]
    fn radial(&self, r2: f64) -> f64 {
        1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3))
    }

    /// Applies distortion to normalized coordinates.
    #[inline]
    pub fn distort(&self, x: f64, y: f64) -> (f64, f64) {
        let r2 = x * x + y * y;
        let radial = self.radial(r2);
        let xy2 = 2.0 * x * y;
        let xd = x * radial + self.p1 * xy2 + self.p2 * (r2 + 2.0 * x * x);
        let yd = y * radial + self.p1 * (r2 + 2.0 * y * y) + self.p2 * xy2;
        (xd, yd)
    }

    /// Inverts [`Distortion::distort`] by fixed-point iteration.
    pub fn undistort(&self, xd: f64, yd: f64) -> Option<(f64, f64)> {
        if self.is_zero() {
            return Some((xd, yd));
        }
        let (mut x, mut y) = (xd, yd);
        let mut step = f64::INFINITY;
        for _ in 0..UNDISTORT_MAX_ITERS {
            let r2 = x * x + y * y;
            let radial = self.radial(r2);
            if radial <= 0.0 {
                return None;
            }
            let xy2 = 2.0 * x * y;
            let dx = self.p1 * xy2 + self.p2 * (r2 + 2.0 * x * x);
            let dy = self.p1 * (r2 + 2.0 * y * y) + self.p2 * xy2;
            let nx = (xd - dx) / radial;
            let ny = (yd - dy) / radial;
            step = (nx - x).abs().max((ny - y).abs());
            x = nx;
            y = ny;
            // Keep iterating past the acceptance threshold while it is cheap.
            if step < 1e-15 {
                break;
            }
        }
        (step <= UNDISTORT_TOL && x.is_finite() && y.is_finite()).then_some((x, y))
    }

    /// Smallest radius where the radial map `r * radial(r^2)` stops
    /// increasing, searched on `(0, 10]`; `f64::INFINITY` if it never does.
    pub fn fold_radius(&self) -> f64 {
        let deriv = |r: f64| {
            let r2 = r * r;
            1.0 + 3.0 * self.k1 * r2 + 5.0 * self.k2 * r2 * r2 + 7.0 * self.k3 * r2 * r2 * r2
        };
        const STEPS: usize = 4000;
        let mut prev = 0.0;
        for i in 1..=STEPS {
            let r = 10.0 * i as f64 / STEPS as f64;
            if deriv(r) <= 0.0 {
                // Bisect the sign change.
                let (mut lo, mut hi) = (prev, r);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if deriv(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return lo;
            }
            prev = r;
        }
        f64::INFINITY
    }
}

/// Everything needed to image one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub intrinsics: Intrinsics,
    pub distortion: Distortion,
    pub world_to_camera: RigidTransform,
    /// Rotation taking gravity-aligned coordinates (+z up) into camera
    /// coordinates.
    pub gravity_to_camera: Option<Mat3>,
    pub near: f64,
    pub far: f64,
}

/// Normalized-coordinate bounds of the undistorted image plus the largest
/// radius the distortion model may be evaluated at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOfView {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl CameraFrame {
    pub fn new(
        intrinsics: Intrinsics,
        distortion: Distortion,
        world_to_camera: RigidTransform,
        gravity_to_camera: Option<Mat3>,
    ) -> Result<Self, CameraError> {
        Self::with_clip(intrinsics, distortion, world_to_camera, gravity_to_camera, DEFAULT_NEAR, DEFAULT_FAR)
    }

    pub fn with_clip(
        intrinsics: Intrinsics,
        distortion: Distortion,
        world_to_camera: RigidTransform,
        gravity_to_camera: Option<Mat3>,
        near: f64,
        far: f64,
    ) -> Result<Self, CameraError> {
        let cam = CameraFrame {
            intrinsics,
            distortion,
            world_to_camera,
            gravity_to_camera,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), CameraError> {
        self.intrinsics.validate()?;
        if !(self.near > 0.0 && self.near < self.far && self.far.is_finite()) {
            return Err(CameraError::InvalidClip {
                near: self.near,
                far: self.far,
            });
        }
        if !self.distortion.is_finite() {
            return Err(CameraError::NonFiniteDistortion);
        }
        if let Some(g) = &self.gravity_to_camera {
            crate::geometry::check_rotation(g).map_err(|_| CameraError::InvalidGravity)?;
        }
        if !self.distortion.is_zero() {
            let fold = self.distortion.fold_radius();
            let fov = self.try_field_of_view()?;
            let r = fov.corner_radius() * RENDER_FOV_MARGIN;
            if r >= fold {
                return Err(CameraError::NonInvertibleDistortion(fold));
            }
        }
        Ok(())
    }

    /// Rotation from camera to gravity-aligned coordinates.
    pub fn camera_to_gravity(&self) -> Option<Mat3> {
        self.gravity_to_camera.map(|g| g.transpose())
    }

    pub fn width(&self) -> u32 {
        self.intrinsics.width
    }

    pub fn height(&self) -> u32 {
        self.intrinsics.height
    }

    /// Same camera with intrinsics resampled to another resolution.
    pub fn at_resolution(&self, width: u32, height: u32) -> CameraFrame {
        CameraFrame {
            intrinsics: self.intrinsics.scaled(width, height),
            ..self.clone()
        }
    }

    /// Projects a camera-space point to pixel coordinates; `None` behind the
    /// camera.
    pub fn project(&self, p: &Vec3) -> Option<Vector2<f64>> {
        if p.z <= 0.0 {
            return None;
        }
        let x = p.x / p.z;
        let y = p.y / p.z;
        Some(self.normalized_to_pixel(x, y))
    }

    #[inline]
    pub fn normalized_to_pixel(&self, x: f64, y: f64) -> Vector2<f64> {
        let k = &self.intrinsics;
        let (xd, yd) = self.distortion.distort(x, y);
        Vector2::new(k.fx * xd + k.cx, k.fy * yd + k.cy)
    }

    /// Undistorted normalized coordinates `(x, y)` of the ray through a pixel.
    pub fn undistort(&self, u: f64, v: f64) -> Result<(f64, f64), CameraError> {
        let k = &self.intrinsics;
        let xd = (u - k.cx) / k.fx;
        let yd = (v - k.cy) / k.fy;
        self.distortion
            .undistort(xd, yd)
            .ok_or(CameraError::NoConvergence { u, v })
    }

    /// Camera-space point at depth `z` along the ray through `(u, v)`.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Result<Vec3, CameraError> {
        if !(z > 0.0) {
            return Err(CameraError::NonPositiveDepth(z));
        }
        let (x, y) = self.undistort(u, v)?;
        Ok(Vec3::new(x * z, y * z, z))
    }

    fn try_field_of_view(&self) -> Result<FieldOfView, CameraError> {
        const SAMPLES_PER_EDGE: usize = 64;
        let w = self.intrinsics.width as f64;
        let h = self.intrinsics.height as f64;
        let (u0, u1, v0, v1) = (-0.5, w - 0.5, -0.5, h - 0.5);
        let mut fov = FieldOfView {
            x_min: f64::MAX,
            x_max: f64::MIN,
            y_min: f64::MAX,
            y_max: f64::MIN,
        };
        for i in 0..=SAMPLES_PER_EDGE {
            let s = i as f64 / SAMPLES_PER_EDGE as f64;
            let u = u0 + s * (u1 - u0);
            let v = v0 + s * (v1 - v0);
            for (pu, pv) in [(u, v0), (u, v1), (u0, v), (u1, v)] {
                let (x, y) = self.undistort(pu, pv)?;
                fov.x_min = fov.x_min.min(x);
                fov.x_max = fov.x_max.max(x);
                fov.y_min = fov.y_min.min(y);
                fov.y_max = fov.y_max.max(y);
            }
        }
        // Sampling slack along curved edges.
        let pad_x = 1e-6 * (fov.x_max - fov.x_min);
        let pad_y = 1e-6 * (fov.y_max - fov.y_min);
        fov.x_min -= pad_x;
        fov.x_max += pad_x;
        fov.y_min -= pad_y;
        fov.y_max += pad_y;
        Ok(fov)
    }

    /// Rectangle, in undistorted normalized coordinates, of rays that are
    /// certainly inside the image area: the border samples bound it from
    /// inside and it is then shrunk by 1% of its size for the curvature of
    /// the border between samples.
    pub fn inner_field_of_view(&self) -> FieldOfView {
        const SAMPLES_PER_EDGE: usize = 64;
        let w = self.intrinsics.width as f64;
        let h = self.intrinsics.height as f64;
        let (u0, u1, v0, v1) = (-0.5, w - 0.5, -0.5, h - 0.5);
        let mut fov = FieldOfView {
            x_min: f64::MIN,
            x_max: f64::MAX,
            y_min: f64::MIN,
            y_max: f64::MAX,
        };
        let ray = |u: f64, v: f64| self.undistort(u, v).expect("camera validated: image border undistorts");
        for i in 0..=SAMPLES_PER_EDGE {
            let s = i as f64 / SAMPLES_PER_EDGE as f64;
            let u = u0 + s * (u1 - u0);
            let v = v0 + s * (v1 - v0);
            fov.x_min = fov.x_min.max(ray(u0, v).0);
            fov.x_max = fov.x_max.min(ray(u1, v).0);
            fov.y_min = fov.y_min.max(ray(u, v0).1);
            fov.y_max = fov.y_max.min(ray(u, v1).1);
        }
        let pad_x = 0.01 * (fov.x_max - fov.x_min);
        let pad_y = 0.01 * (fov.y_max - fov.y_min);
        fov.x_min += pad_x;
        fov.x_max -= pad_x;
        fov.y_min += pad_y;
        fov.y_max -= pad_y;
        fov
    }

    /// Whether every point of `b` lies inside the image cone and between the
    /// near and far planes. Conservative: may answer false for boxes that
    /// barely fit.
    pub fn contains_box(&self, b: &Box3D, inner: &FieldOfView) -> bool {
        b.corners().iter().all(|c| {
            c.z >= self.near
                && c.z <= self.far
                && (inner.x_min..=inner.x_max).contains(&(c.x / c.z))
                && (inner.y_min..=inner.y_max).contains(&(c.y / c.z))
        })
    }

    /// Bounding rectangle, in undistorted normalized coordinates, of every
    /// ray through the image area.
    pub fn field_of_view(&self) -> FieldOfView {
        // Validated cameras undistort every border pixel.
        self.try_field_of_view()
            .expect("camera validated: image border undistorts")
    }
}

/// Undistorted normalized rays through every pixel center and pixel corner
/// of a camera. Entries are bit-identical to [`CameraFrame::undistort`].
#[derive(Debug)]
pub struct PixelRays {
    intrinsics: Intrinsics,
    distortion: Distortion,
    /// `width x height`, row-major; NaN where undistortion failed.
    centers: Vec<(f64, f64)>,
    /// `(width + 1) x (height + 1)`; corner `(i, j)` sits at pixel
    /// coordinates `(i - 0.5, j - 0.5)`.
    corners: Vec<(f64, f64)>,
}

const RAY_CACHE_SIZE: usize = 4;
static RAY_CACHE: Mutex<Vec<Arc<PixelRays>>> = Mutex::new(Vec::new());

impl PixelRays {
    pub fn new(camera: &CameraFrame) -> Self {
        let (w, h) = (camera.width() as usize, camera.height() as usize);
        let table = |cols: usize, rows: usize, offset: f64| -> Vec<(f64, f64)> {
            (0..rows)
                .into_par_iter()
                .flat_map_iter(|j| {
                    (0..cols).map(move |i| {
                        camera
                            .undistort(i as f64 + offset, j as f64 + offset)
                            .unwrap_or((f64::NAN, f64::NAN))
                    })
                })
                .collect()
        };
        PixelRays {
            intrinsics: camera.intrinsics,
            distortion: camera.distortion,
            centers: table(w, h, 0.0),
            corners: table(w + 1, h + 1, -0.5),
        }
    }

    /// Shared table for the camera's intrinsics and distortion, built on
    /// first use.
    pub fn cached(camera: &CameraFrame) -> Arc<PixelRays> {
        let hit = |t: &Arc<PixelRays>| t.intrinsics == camera.intrinsics && t.distortion == camera.distortion;
        if let Some(t) = RAY_CACHE.lock().expect("ray cache lock").iter().find(|t| hit(t)) {
            return Arc::clone(t);
        }
        let table = Arc::new(PixelRays::new(camera));
        let mut cache = RAY_CACHE.lock().expect("ray cache lock");
        if let Some(t) = cache.iter().find(|t| hit(t)) {
            return Arc::clone(t);
        }
        if cache.len() == RAY_CACHE_SIZE {
            cache.remove(0);
        }
        cache.push(Arc::clone(&table));
        table
    }

    fn lookup(v: (f64, f64), u: f64, pv: f64) -> Result<(f64, f64), CameraError> {
        if v.0.is_nan() {
            Err(CameraError::NoConvergence { u, v: pv })
        } else {
            Ok(v)
        }
    }

    /// Ray through the center of pixel `(x, y)`.
    #[inline]
    pub fn center(&self, x: u32, y: u32) -> Result<(f64, f64), CameraError> {
        let i = y as usize * self.intrinsics.width as usize + x as usize;
        Self::lookup(self.centers[i], x as f64, y as f64)
    }

    /// Ray through pixel corner `(i, j)`, at `(i - 0.5, j - 0.5)`.
    #[inline]
    pub fn corner(&self, i: u32, j: u32) -> Result<(f64, f64), CameraError> {
        let k = j as usize * (self.intrinsics.width as usize + 1) + i as usize;
        Self::lookup(self.corners[k], i as f64 - 0.5, j as f64 - 0.5)
    }
}

/// Growth factor applied to the field of view when clipping geometry for
/// rendering.
pub const RENDER_FOV_MARGIN: f64 = 1.05;

impl FieldOfView {
    pub fn corner_radius(&self) -> f64 {
        let xs = self.x_min.abs().max(self.x_max.abs());
        let ys = self.y_min.abs().max(self.y_max.abs());
        xs.hypot(ys)
    }

    /// The rectangle scaled about the optical axis by `factor`.
    pub fn expanded(&self, factor: f64) -> FieldOfView {
        FieldOfView {
            x_min: self.x_min * factor,
            x_max: self.x_max * factor,
            y_min: self.y_min * factor,
            y_max: self.y_max * factor,
        }
    }
}

/// A plane `n·x = offset` with outward unit normal `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub offset: f64,
}

impl Plane {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        let n = normal.norm();
        Plane {
            normal: normal / n,
            offset: offset / n,
        }
    }

    /// Positive outside, negative inside.
    #[inline]
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Six outward-facing planes in camera space: near, far, left, right, top,
/// bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct Frustum {
    pub planes: [Plane; 6],
}

impl Frustum {
    pub fn from_fov(fov: &FieldOfView, near: f64, far: f64) -> Frustum {
        Frustum {
            planes: [
                Plane::new(Vec3::new(0.0, 0.0, -1.0), -near),
                Plane::new(Vec3::new(0.0, 0.0, 1.0), far),
                Plane::new(Vec3::new(-1.0, 0.0, fov.x_min), 0.0),
                Plane::new(Vec3::new(1.0, 0.0, -fov.x_max), 0.0),
                Plane::new(Vec3::new(0.0, -1.0, fov.y_min), 0.0),
                Plane::new(Vec3::new(0.0, 1.0, -fov.y_max), 0.0),
            ],
        }
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        self.planes.iter().all(|pl| pl.signed_distance(p) <= 0.0)
    }
}

/// Builds the camera-space viewing frustum.
///
/// Side planes pass through the optical center and bound the undistorted
/// rays of the image border (corners included), so the frustum contains
/// every ray through the image even when distortion bends the border.
pub fn build_frustum(camera: &CameraFrame) -> Frustum {
    Frustum::from_fov(&camera.field_of_view(), camera.near, camera.far)
}

/// Conservative culling: `false` only when all eight corners lie outside a
/// single plane.
pub fn frustum_cull(frustum: &Frustum, b: &Box3D) -> bool {
    let corners = b.corners();
    !frustum
        .planes
        .iter()
        .any(|pl| corners.iter().all(|c| pl.signed_distance(c) > 0.0))
}
