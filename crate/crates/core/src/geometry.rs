//! Oriented 3D boxes, rigid transforms and the gravity-aligned enclosing box.
//!
//! Corner order is fixed crate-wide by the sign-bit convention: corner `i`
//! takes the `+` half extent on local axis `k` when bit `k` of `i` is set
//! and the `-` half extent otherwise. Corner 0 is `(-l/2, -w/2, -h/2)`,
//! corner 7 is `(+l/2, +w/2, +h/2)`.

use nalgebra::{Matrix3, Matrix4, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance for rotation matrices.
pub const ROTATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("box dimensions must be strictly positive, got ({0}, {1}, {2})")]
    NonPositiveDims(f64, f64, f64),
    #[error("rotation is not orthonormal with determinant +1 (error {0:.3e})")]
    NotOrthonormal(f64),
    #[error("degenerate footprint: gravity-plane projection has zero area")]
    DegenerateFootprint,
}

/// Coordinate frame a box is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Frame {
    World,
    Camera,
    Gravity,
}

/// Returns the largest absolute deviation of `r` from a proper rotation.
pub fn rotation_error(r: &Mat3) -> f64 {
    let ortho = (r.transpose() * r - Mat3::identity()).abs().max();
    let det = (r.determinant() - 1.0).abs();
    ortho.max(det)
}

pub fn check_rotation(r: &Mat3) -> Result<(), GeometryError> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite("rotation"));
    }
    let err = rotation_error(r);
    if err > ROTATION_TOL {
        return Err(GeometryError::NotOrthonormal(err));
    }
    Ok(())
}

/// Rotation `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rotation_from_euler(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    rot_z(yaw) * rot_y(pitch) * rot_x(roll)
}

/// Inverse of [`rotation_from_euler`], returning `(yaw, pitch, roll)`.
pub fn euler_from_rotation(r: &Mat3) -> (f64, f64, f64) {
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    if r[(2, 0)].abs() < 1.0 - 1e-12 {
        let yaw = r[(1, 0)].atan2(r[(0, 0)]);
        let roll = r[(2, 1)].atan2(r[(2, 2)]);
        (yaw, pitch, roll)
    } else {
        // Gimbal lock: fold roll into yaw.
        let yaw = (-r[(0, 1)]).atan2(r[(1, 1)]);
        (yaw, pitch, 0.0)
    }
}

pub fn rot_x(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner()
}

pub fn rot_y(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner()
}

pub fn rot_z(a: f64) -> Mat3 {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a).into_inner()
}

/// Wraps an angle into `[-pi, pi)`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    if (-PI..PI).contains(&yaw) {
        return yaw;
    }
    let mut a = (yaw + PI).rem_euclid(2.0 * PI) - PI;
    if a >= PI {
        a -= 2.0 * PI;
    }
    a
}

/// Proper rigid motion `x -> R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Mat3,
    translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self, GeometryError> {
        check_rotation(&rotation)?;
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Builds a transform from a row-major homogeneous 4x4 matrix.
    pub fn from_row_major(m: &[f64; 16]) -> Result<Self, GeometryError> {
        let m4 = Matrix4::from_row_slice(m);
        let bottom = [m4[(3, 0)], m4[(3, 1)], m4[(3, 2)], m4[(3, 3)]];
        if (bottom[0].abs() + bottom[1].abs() + bottom[2].abs() + (bottom[3] - 1.0).abs())
            > ROTATION_TOL
        {
            return Err(GeometryError::NotOrthonormal(f64::NAN));
        }
        let r = m4.fixed_view::<3, 3>(0, 0).into_owned();
        let t = m4.fixed_view::<3, 1>(0, 3).into_owned();
        Self::new(r, t)
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
            0.0,
            0.0,
            0.0,
            1.0,
        ]
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }
}

/// Anything with eight corners and a volume.
pub trait Cuboid {
    fn corners(&self) -> [Vec3; 8];
    fn volume(&self) -> f64;
}

/// Sign vector of corner `i` under the sign-bit convention.
#[inline]
pub fn corner_signs(i: usize) -> Vec3 {
    let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
    Vec3::new(s(0), s(1), s(2))
}

/// A 9-DOF oriented box. `rotation` maps box-local axes into `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3D {
    pub center: Vec3,
    pub dims: Vec3,
    pub rotation: Mat3,
    pub frame: Frame,
}

impl Box3D {
    pub fn new(center: Vec3, dims: Vec3, rotation: Mat3, frame: Frame) -> Result<Self, GeometryError> {
        if center.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("center"));
        }
        if dims.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite("dims"));
        }
        if dims.iter().any(|&v| v <= 0.0) {
            return Err(GeometryError::NonPositiveDims(dims.x, dims.y, dims.z));
        }
        check_rotation(&rotation)?;
        Ok(Self {
            center,
            dims,
            rotation,
            frame,
        })
    }

    /// Axis-aligned box; convenient for tests and fixtures.
    pub fn axis_aligned(center: Vec3, dims: Vec3, frame: Frame) -> Result<Self, GeometryError> {
        Self::new(center, dims, Mat3::identity(), frame)
    }

    pub fn half_extents(&self) -> Vec3 {
        self.dims * 0.5
    }

    /// Expresses a point of the parent frame in box-local coordinates.
    pub fn to_local(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.center)
    }

    pub fn from_local(&self, q: &Vec3) -> Vec3 {
        self.rotation * q + self.center
    }

    /// Point containment with an absolute slack `eps` on every face.
    pub fn contains(&self, p: &Vec3, eps: f64) -> bool {
        let q = self.to_local(p);
        let h = self.half_extents();
        q.x.abs() <= h.x + eps && q.y.abs() <= h.y + eps && q.z.abs() <= h.z + eps
    }

    /// Maps the box through `rt` into `frame`. Dimensions are unchanged.
    pub fn transform(&self, rt: &RigidTransform, frame: Frame) -> Box3D {
        Box3D {
            center: rt.apply(&self.center),
            dims: self.dims,
            rotation: rt.rotation() * self.rotation,
            frame,
        }
    }

    /// Outward face planes as `(normal, offset)` with interior `n·x <= offset`.
    pub fn face_planes(&self) -> [(Vec3, f64); 6] {
        let h = self.half_extents();
        let mut out = [(Vec3::zeros(), 0.0); 6];
        for axis in 0..3 {
            let n = self.rotation.column(axis).into_owned();
            let c = n.dot(&self.center);
            out[2 * axis] = (n, c + h[axis]);
            out[2 * axis + 1] = (-n, -c + h[axis]);
        }
        out
    }

    pub fn surface_area(&self) -> f64 {
        let d = self.dims;
        2.0 * (d.x * d.y + d.y * d.z + d.x * d.z)
    }
}

impl Cuboid for Box3D {
    fn corners(&self) -> [Vec3; 8] {
        let h = self.half_extents();
        std::array::from_fn(|i| self.center + self.rotation * corner_signs(i).component_mul(&h))
    }

    fn volume(&self) -> f64 {
        self.dims.x * self.dims.y * self.dims.z
    }
}

/// Transforms a box between frames; free-function form of [`Box3D::transform`].
pub fn transform_box(b: &Box3D, rt: &RigidTransform, frame: Frame) -> Box3D {
    b.transform(rt, frame)
}

/// A 7-DOF box: yaw-only rotation about the +z (anti-gravity) axis.
///
/// `dims.x` runs along the yaw heading, `dims.y` across it and `dims.z`
/// vertically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityBox {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl GravityBox {
    pub fn new(center: Vec3, dims: Vec3, yaw: f64) -> Result<Self, GeometryError> {
        if center.iter().chain(dims.iter()).any(|v| !v.is_finite()) || !yaw.is_finite() {
            return Err(GeometryError::NonFinite("gravity box"));
        }
        if dims.iter().any(|&v| v <= 0.0) {
            return Err(GeometryError::NonPositiveDims(dims.x, dims.y, dims.z));
        }
        Ok(Self {
            center: center.into(),
            dims: dims.into(),
            yaw: normalize_yaw(yaw),
        })
    }

    pub fn center(&self) -> Vec3 {
        Vec3::from(self.center)
    }

    pub fn dims(&self) -> Vec3 {
        Vec3::from(self.dims)
    }

    pub fn rotation(&self) -> Mat3 {
        rot_z(self.yaw)
    }

    pub fn to_box3d(&self) -> Box3D {
        Box3D {
            center: self.center(),
            dims: self.dims(),
            rotation: self.rotation(),
            frame: Frame::Gravity,
        }
    }

    /// Counter-clockwise footprint rectangle in the gravity plane.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let (hl, hw) = (self.dims[0] * 0.5, self.dims[1] * 0.5);
        let cx = self.center[0];
        let cy = self.center[1];
        let pt = |a: f64, b: f64| Vector2::new(cx + c * a - s * b, cy + s * a + c * b);
        [pt(-hl, -hw), pt(hl, -hw), pt(hl, hw), pt(-hl, hw)]
    }

    /// Vertical extent `(zmin, zmax)`.
    pub fn z_range(&self) -> (f64, f64) {
        let hh = self.dims[2] * 0.5;
        (self.center[2] - hh, self.center[2] + hh)
    }
}

impl Cuboid for GravityBox {
    fn corners(&self) -> [Vec3; 8] {
        self.to_box3d().corners()
    }

    fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }
}

pub fn box_volume<B: Cuboid>(b: &B) -> f64 {
    b.volume()
}

pub fn box_corners<B: Cuboid>(b: &B) -> [Vec3; 8] {
    b.corners()
}

/// Convex hull of 2D points (Andrew's monotone chain), counter-clockwise,
/// without collinear points.
pub fn convex_hull_2d(points: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup_by(|a, b| a == b);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut hull: Vec<Vector2<f64>> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle of a convex CCW polygon by rotating
/// calipers. Returns `(angle, center, length, width)` where `length` runs
/// along `angle`.
pub fn min_area_rect(hull: &[Vector2<f64>]) -> Option<(f64, Vector2<f64>, f64, f64)> {
    let n = hull.len();
    if n < 3 {
        return None;
    }
    let mut best: Option<(f64, f64, Vector2<f64>, f64, f64)> = None;
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let e = b - a;
        let len = e.norm();
        if len == 0.0 {
            continue;
        }
        let u = e / len;
        let v = Vector2::new(-u.y, u.x);
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in hull {
            let d = p - a;
            let pu = d.dot(&u);
            let pv = d.dot(&v);
            umin = umin.min(pu);
            umax = umax.max(pu);
            vmin = vmin.min(pv);
            vmax = vmax.max(pv);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|b| area < b.0) {
            let c = a + u * (0.5 * (umin + umax)) + v * (0.5 * (vmin + vmax));
            best = Some((area, u.y.atan2(u.x), c, umax - umin, vmax - vmin));
        }
    }
    best.map(|(_, ang, c, l, w)| (ang, c, l, w))
}

/// Relative area below which a footprint is treated as degenerate.
const DEGENERATE_AREA_REL: f64 = 1e-12;

/// Minimum-volume yaw-only box containing all corners of `b`.
///
/// `gravity_rotation` maps coordinates of `b`'s frame into a gravity-aligned
/// frame whose +z axis opposes gravity. The vertical extent is fixed by the
/// corners, so the minimum-volume box is the minimum-area footprint, solved
/// exactly by rotating calipers over the hull of the projected corners.
pub fn enclosing_gravity_box(b: &Box3D, gravity_rotation: &Mat3) -> Result<GravityBox, GeometryError> {
    let corners: Vec<Vec3> = b.corners().iter().map(|c| gravity_rotation * c).collect();
    let (zmin, zmax) = corners
        .iter()
        .fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.z), hi.max(c.z)));
    let flat: Vec<Vector2<f64>> = corners.iter().map(|c| Vector2::new(c.x, c.y)).collect();
    let hull = convex_hull_2d(&flat);
    let (angle, c2, l, w) = min_area_rect(&hull).ok_or(GeometryError::DegenerateFootprint)?;
    let scale = b.dims.max().powi(2);
    if l * w <= DEGENERATE_AREA_REL * scale || zmax - zmin <= 0.0 {
        return Err(GeometryError::DegenerateFootprint);
    }
    GravityBox::new(
        Vec3::new(c2.x, c2.y, 0.5 * (zmin + zmax)),
        Vec3::new(l, w, zmax - zmin),
        angle,
    )
}

/// Parametric interval `[t0, t1]` where `origin + t·dir` lies inside `b`,
/// clipped to `t >= 0`. `dir` need not be unit length; `t` is in units of
/// `|dir|`.
pub fn ray_box_interval(origin: &Vec3, dir: &Vec3, b: &Box3D) -> Option<(f64, f64)> {
    let o = b.to_local(origin);
    let d = b.rotation.transpose() * dir;
    let h = b.half_extents();
    let mut t0 = 0.0_f64;
    let mut t1 = f64::INFINITY;
    for k in 0..3 {
        if d[k] == 0.0 {
            if o[k].abs() > h[k] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[k];
        let mut ta = (-h[k] - o[k]) * inv;
        let mut tb = (h[k] - o[k]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// Entry/exit distances of a unit-direction ray through `b`, clipped at the
/// origin. `None` when the ray misses.
pub fn ray_box_segment(origin: &Vec3, dir: &Vec3, b: &Box3D) -> Option<(f64, f64)> {
    debug_assert!((dir.norm() - 1.0).abs() < 1e-9, "direction must be unit length");
    ray_box_interval(origin, dir, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn unit_cube(center: Vec3) -> Box3D {
        Box3D::axis_aligned(center, Vec3::new(1.0, 1.0, 1.0), Frame::World).unwrap()
    }

    #[test]
    fn unit_cube_corners_follow_sign_bits() {
        let c = unit_cube(Vec3::zeros()).corners();
        assert_eq!(c[0], Vec3::new(-0.5, -0.5, -0.5));
        assert_eq!(c[1], Vec3::new(0.5, -0.5, -0.5));
        assert_eq!(c[2], Vec3::new(-0.5, 0.5, -0.5));
        assert_eq!(c[4], Vec3::new(-0.5, -0.5, 0.5));
        assert_eq!(c[7], Vec3::new(0.5, 0.5, 0.5));
        let shifted = unit_cube(Vec3::new(1.0, 2.0, 3.0)).corners();
        for i in 0..8 {
            assert_eq!(shifted[i], c[i] + Vec3::new(1.0, 2.0, 3.0));
        }
    }

    #[test]
    fn yaw_90_rotates_corner() {
        let b = Box3D::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), rot_z(FRAC_PI_2), Frame::World).unwrap();
        let c7 = b.corners()[7];
        assert_abs_diff_eq!(c7, Vec3::new(-0.5, 0.5, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn transform_box_cases() {
        let b = Box3D::new(Vec3::new(1.0, -2.0, 0.5), Vec3::new(1.0, 2.0, 3.0), rot_z(0.3), Frame::World).unwrap();
        let same = b.transform(&RigidTransform::identity(), Frame::World);
        assert_eq!(same, b);

        let moved = b.transform(&RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0)), Frame::Camera);
        assert_eq!(moved.center, b.center + Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(moved.rotation, b.rotation);

        let b30 = Box3D::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), rot_z(30f64.to_radians()), Frame::World).unwrap();
        let rt = RigidTransform::new(rot_z(FRAC_PI_2), Vec3::zeros()).unwrap();
        let out = b30.transform(&rt, Frame::Camera);
        // Composed yaw is 120 degrees.
        assert_abs_diff_eq!(out.rotation, rot_z(120f64.to_radians()), epsilon = 1e-12);
    }

    #[test]
    fn euler_convention_round_trips() {
        let r = rotation_from_euler(0.4, -0.2, 0.1);
        assert_abs_diff_eq!(r, rot_z(0.4) * rot_y(-0.2) * rot_x(0.1), epsilon = 1e-15);
        let (y, p, ro) = euler_from_rotation(&r);
        assert_abs_diff_eq!(y, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(p, -0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(ro, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_boxes() {
        assert!(matches!(
            Box3D::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 0.0, 1.0), Frame::World),
            Err(GeometryError::NonPositiveDims(..))
        ));
        let sheared = Mat3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Box3D::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0), sheared, Frame::World),
            Err(GeometryError::NotOrthonormal(_))
        ));
        let mirror = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, -1.0));
        assert!(check_rotation(&mirror).is_err());
    }

    #[test]
    fn volumes() {
        assert_eq!(unit_cube(Vec3::zeros()).volume(), 1.0);
        let b = Box3D::new(Vec3::zeros(), Vec3::new(2.0, 3.0, 4.0), rotation_from_euler(0.3, 0.2, 0.1), Frame::World).unwrap();
        assert_eq!(box_volume(&b), 24.0);
    }

    #[test]
    fn normalize_yaw_range() {
        assert_eq!(normalize_yaw(PI), -PI);
        assert_abs_diff_eq!(normalize_yaw(3.0 * PI + 0.1), -PI + 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(normalize_yaw(-0.5), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn ray_segment_examples() {
        let b = unit_cube(Vec3::zeros());
        let (t0, t1) = ray_box_segment(&Vec3::new(0.0, 0.0, -5.0), &Vec3::z(), &b).unwrap();
        assert_abs_diff_eq!(t0, 4.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t1, 5.5, epsilon = 1e-12);
        assert!(ray_box_segment(&Vec3::new(0.0, 0.0, -5.0), &-Vec3::z(), &b).is_none());
        let (t0, t1) = ray_box_segment(&Vec3::new(0.1, 0.0, 0.0), &Vec3::x(), &b).unwrap();
        assert_eq!(t0, 0.0);
        assert_abs_diff_eq!(t1, 0.4, epsilon = 1e-12);
        // Parallel ray outside a slab.
        assert!(ray_box_segment(&Vec3::new(0.0, 2.0, -5.0), &Vec3::z(), &b).is_none());
    }

    #[test]
    fn enclosing_box_fixed_point_on_yaw_only_box() {
        let b = Box3D::new(Vec3::new(1.0, 2.0, 0.5), Vec3::new(2.0, 1.0, 0.8), rot_z(0.7), Frame::Camera).unwrap();
        let g = enclosing_gravity_box(&b, &Mat3::identity()).unwrap();
        assert_abs_diff_eq!(g.volume(), b.volume(), epsilon = 1e-9);
        assert_corner_sets_equal(&g.corners(), &b.corners(), 1e-9);
    }

    #[test]
    fn enclosing_box_of_90_degree_pitch_swaps_axes() {
        let b = Box3D::new(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0), rot_x(FRAC_PI_2), Frame::Camera).unwrap();
        let g = enclosing_gravity_box(&b, &Mat3::identity()).unwrap();
        let mut d = g.dims;
        let mut foot = [d[0], d[1]];
        foot.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(foot[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(foot[1], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(d[2], 2.0, epsilon = 1e-9);
        d.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(g.volume(), 6.0, epsilon = 1e-9);
    }

    /// Dense yaw sweep over a quarter turn; each candidate is the axis-aligned
    /// extent of the corners rotated by `-yaw`.
    fn yaw_sweep_min_volume(b: &Box3D, steps: usize) -> f64 {
        let corners = b.corners();
        let (zmin, zmax) = corners.iter().fold((f64::MAX, f64::MIN), |(lo, hi), c| (lo.min(c.z), hi.max(c.z)));
        (0..steps)
            .map(|k| {
                let a = FRAC_PI_2 * k as f64 / steps as f64;
                let (s, c) = a.sin_cos();
                let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                for p in &corners {
                    let x = c * p.x + s * p.y;
                    let y = -s * p.x + c * p.y;
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                    y0 = y0.min(y);
                    y1 = y1.max(y);
                }
                (x1 - x0) * (y1 - y0) * (zmax - zmin)
            })
            .fold(f64::MAX, f64::min)
    }

    #[test]
    fn enclosing_box_matches_yaw_sweep_for_pitched_box() {
        let b = Box3D::new(
            Vec3::new(0.3, -0.2, 1.0),
            Vec3::new(1.2, 0.6, 0.9),
            rot_z(30f64.to_radians()) * rot_x(10f64.to_radians()),
            Frame::Camera,
        )
        .unwrap();
        let g = enclosing_gravity_box(&b, &Mat3::identity()).unwrap();
        let oracle = yaw_sweep_min_volume(&b, 3600);
        assert!(g.volume() >= b.volume());
        assert!(((g.volume() - oracle) / oracle).abs() < 1e-6, "{} vs {}", g.volume(), oracle);
        for c in b.corners() {
            assert!(g.to_box3d().contains(&c, 1e-9));
        }
    }

    #[test]
    fn enclosing_box_uses_gravity_rotation() {
        // Camera looking horizontally: camera +y points down, so gravity-up is -y.
        let cam_to_grav = rot_x(-FRAC_PI_2);
        let b = Box3D::axis_aligned(Vec3::new(0.0, 0.0, 3.0), Vec3::new(1.0, 2.0, 0.5), Frame::Camera).unwrap();
        let g = enclosing_gravity_box(&b, &cam_to_grav).unwrap();
        assert_abs_diff_eq!(g.dims[2], 2.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g.center(), cam_to_grav * b.center, epsilon = 1e-9);
    }

    fn assert_corner_sets_equal(a: &[Vec3; 8], b: &[Vec3; 8], tol: f64) {
        for p in a {
            let d = b.iter().map(|q| (p - q).norm()).fold(f64::MAX, f64::min);
            assert!(d < tol, "corner {p:?} has no match (distance {d})");
        }
    }

    /// Half-space clipping against all six face planes, in the parent frame.
    fn plane_clip_oracle(o: &Vec3, d: &Vec3, b: &Box3D) -> Option<(f64, f64)> {
        let mut t0 = 0.0_f64;
        let mut t1 = f64::INFINITY;
        for (n, off) in b.face_planes() {
            let denom = n.dot(d);
            let dist = off - n.dot(o);
            if denom.abs() < 1e-300 {
                if dist < 0.0 {
                    return None;
                }
            } else if denom > 0.0 {
                t1 = t1.min(dist / denom);
            } else {
                t0 = t0.max(dist / denom);
            }
        }
        (t0 <= t1).then_some((t0, t1))
    }

    #[test]
    fn ray_segment_agrees_with_plane_clipping_oracle() {
        use rand::{RngExt, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut hits = 0;
        for _ in 0..10_000 {
            let b = Box3D::new(
                Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                Vec3::new(rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)),
                rotation_from_euler(rng.random_range(-PI..PI), rng.random_range(-1.5..1.5), rng.random_range(-PI..PI)),
                Frame::World,
            )
            .unwrap();
            let o = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let jitter = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            // Aim roughly half of the rays at the box.
            let d = if rng.random_bool(0.5) { (b.center - o).normalize() + 0.3 * jitter } else { jitter }.normalize();
            let got = ray_box_segment(&o, &d, &b);
            let want = plane_clip_oracle(&o, &d, &b);
            match (got, want) {
                (Some(g), Some(w)) => {
                    hits += 1;
                    assert!((g.0 - w.0).abs() < 1e-9 && (g.1 - w.1).abs() < 1e-9, "{g:?} vs {w:?}");
                }
                (None, None) => {}
                // Grazing rays may differ only when the interval is vanishingly short.
                (Some(g), None) => assert!(g.1 - g.0 < 1e-9),
                (None, Some(w)) => assert!(w.1 - w.0 < 1e-9),
            }
        }
        assert!(hits > 500);
    }

    fn arb_box() -> impl Strategy<Value = Box3D> {
        (
            prop::array::uniform3(-5.0..5.0f64),
            prop::array::uniform3(0.05..3.0f64),
            prop::array::uniform3(-PI..PI),
        )
            .prop_map(|(c, d, e)| {
                Box3D::new(Vec3::from(c), Vec3::from(d), rotation_from_euler(e[0], e[1], e[2]), Frame::World).unwrap()
            })
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (prop::array::uniform3(-10.0..10.0f64), prop::array::uniform3(-PI..PI)).prop_map(|(t, e)| {
            RigidTransform::new(rotation_from_euler(e[0], e[1], e[2]), Vec3::from(t)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn corners_commute_with_transform(b in arb_box(), rt in arb_transform()) {
            let moved = b.transform(&rt, Frame::Camera);
            let mc = moved.corners();
            for (i, c) in b.corners().iter().enumerate() {
                prop_assert!((rt.apply(c) - mc[i]).norm() < 1e-9);
            }
            prop_assert!((moved.volume() - b.volume()).abs() < 1e-12 * b.volume().max(1.0));
        }

        #[test]
        fn enclosing_box_never_shrinks(b in arb_box()) {
            if let Ok(g) = enclosing_gravity_box(&b, &Mat3::identity()) {
                prop_assert!(g.volume() >= b.volume() * (1.0 - 1e-9));
                let gb = g.to_box3d();
                for c in b.corners() {
                    prop_assert!(gb.contains(&c, 1e-9));
                }
            }
        }

        #[test]
        fn enclosing_box_idempotent_on_yaw_only(c in prop::array::uniform3(-5.0..5.0f64), d in prop::array::uniform3(0.05..3.0f64), yaw in -PI..PI) {
            let b = Box3D::new(Vec3::from(c), Vec3::from(d), rot_z(yaw), Frame::Gravity).unwrap();
            let g = enclosing_gravity_box(&b, &Mat3::identity()).unwrap();
            assert_corner_sets_equal(&g.corners(), &b.corners(), 1e-9);
        }

        #[test]
        fn rigid_transform_inverse(rt in arb_transform(), p in prop::array::uniform3(-5.0..5.0f64)) {
            let p = Vec3::from(p);
            prop_assert!((rt.inverse().apply(&rt.apply(&p)) - p).norm() < 1e-9);
            let back = RigidTransform::from_row_major(&rt.to_row_major()).unwrap();
            prop_assert!((back.apply(&p) - rt.apply(&p)).norm() < 1e-12);
        }
    }
}
