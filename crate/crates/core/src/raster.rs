//! Distortion-aware software rasterization of boxes into instance masks with
//! a nearest-surface depth buffer.
//!
//! Boxes are tessellated so that straight edges bend correctly under lens
//! distortion, clipped to a slightly enlarged viewing volume, projected per
//! vertex and scan converted with a top-left fill rule sampled at pixel
//! centers.

use crate::camera::{CameraFrame, RENDER_FOV_MARGIN};
use crate::geometry::{corner_signs, Box3D, Vec3};
use nalgebra::Vector2;
use thiserror::Error;

pub const DEFAULT_RENDER_WIDTH: u32 = 320;
pub const DEFAULT_RENDER_HEIGHT: u32 = 240;
pub const DEFAULT_SUBDIVISIONS: u32 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RasterError {
    #[error("render resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(u32, u32, u32, u32),
}

pub type Triangle = [Vec3; 3];

/// Splits each face into `subdivisions²` quads, two triangles per quad.
pub fn tessellate_box(b: &Box3D, subdivisions: u32) -> Vec<Triangle> {
    let mut tris = Vec::new();
    tessellate_faces(b, subdivisions, |_, _| true, &mut tris);
    tris
}

/// Tessellates the faces `(axis, sign)` accepted by `keep`.
fn tessellate_faces(b: &Box3D, subdivisions: u32, keep: impl Fn(usize, f64) -> bool, tris: &mut Vec<Triangle>) {
    let n = subdivisions.max(1) as usize;
    let h = b.half_extents();
    tris.reserve(12 * n * n);
    let mut grid = vec![Vec3::zeros(); (n + 1) * (n + 1)];
    for axis in 0..3 {
        let (a, c) = ((axis + 1) % 3, (axis + 2) % 3);
        for sign in [-1.0, 1.0] {
            if !keep(axis, sign) {
                continue;
            }
            for i in 0..=n {
                for j in 0..=n {
                    let mut q = Vec3::zeros();
                    q[axis] = sign * h[axis];
                    q[a] = h[a] * (2.0 * i as f64 / n as f64 - 1.0);
                    q[c] = h[c] * (2.0 * j as f64 / n as f64 - 1.0);
                    grid[i * (n + 1) + j] = b.from_local(&q);
                }
            }
            for i in 0..n {
                for j in 0..n {
                    let p00 = grid[i * (n + 1) + j];
                    let p10 = grid[(i + 1) * (n + 1) + j];
                    let p01 = grid[i * (n + 1) + j + 1];
                    let p11 = grid[(i + 1) * (n + 1) + j + 1];
                    tris.push([p00, p10, p11]);
                    tris.push([p00, p11, p01]);
                }
            }
        }
    }
}

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn is_empty(&self) -> bool {
        self.x1 <= self.x0 || self.y1 <= self.y0
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// One box rendered in isolation. Storage covers only the window the box
/// touches; every accessor speaks full-frame pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRender {
    pub box_index: usize,
    width: u32,
    height: u32,
    window: PixelRect,
    /// Row-major over `window`; `+inf` where the box does not cover.
    depth: Vec<f64>,
}

impl InstanceRender {
    pub fn empty(box_index: usize, width: u32, height: u32) -> Self {
        InstanceRender {
            box_index,
            width,
            height,
            window: PixelRect::default(),
            depth: Vec::new(),
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn window(&self) -> PixelRect {
        self.window
    }

    /// Depth at a pixel, `+inf` where the mask is false.
    pub fn depth(&self, x: u32, y: u32) -> f64 {
        if !self.window.contains(x, y) {
            return f64::INFINITY;
        }
        let w = self.window.width();
        self.depth[((y - self.window.y0) * w + (x - self.window.x0)) as usize]
    }

    pub fn mask(&self, x: u32, y: u32) -> bool {
        self.depth(x, y).is_finite()
    }

    /// Depth buffer over [`InstanceRender::window`], row-major.
    pub fn window_depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn pixel_count(&self) -> usize {
        self.depth.iter().filter(|d| d.is_finite()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.pixel_count() == 0
    }

    /// Covered pixels as `(x, y, depth)` in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        let win = self.window;
        let w = win.width().max(1);
        self.depth.iter().enumerate().filter_map(move |(i, &d)| {
            d.is_finite().then(|| (win.x0 + i as u32 % w, win.y0 + i as u32 / w, d))
        })
    }

    pub fn full_mask(&self) -> Vec<bool> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.mask(x, y))
            .collect()
    }

    pub fn full_depth(&self) -> Vec<f64> {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (x, y)))
            .map(|(x, y)| self.depth(x, y))
            .collect()
    }
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    p: Vector2<f64>,
    inv_z: f64,
}

/// Clips a convex polygon against `n·x <= 0`-style half-spaces given as
/// `(normal, offset)` with interior `n·x <= offset`.
fn clip_polygon(poly: &mut Vec<Vec3>, scratch: &mut Vec<Vec3>, planes: &[(Vec3, f64)]) {
    for (n, off) in planes {
        if poly.is_empty() {
            return;
        }
        scratch.clear();
        let len = poly.len();
        for i in 0..len {
            let a = poly[i];
            let b = poly[(i + 1) % len];
            let da = n.dot(&a) - off;
            let db = n.dot(&b) - off;
            if da <= 0.0 {
                scratch.push(a);
            }
            if (da < 0.0 && db > 0.0) || (da > 0.0 && db < 0.0) {
                // Same arithmetic for an edge shared by two triangles, in
                // either direction, so clipped seams stay watertight.
                let a_first = (a.x, a.y, a.z) < (b.x, b.y, b.z);
                let (p, q, dp, dq) = if a_first { (a, b, da, db) } else { (b, a, db, da) };
                let t = dp / (dp - dq);
                scratch.push(p + (q - p) * t);
            }
        }
        std::mem::swap(poly, scratch);
    }
}

/// Edge function, evaluated with canonical endpoint order so that a shared
/// edge yields exactly negated values in its two triangles.
#[inline]
fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    if (a.x, a.y) <= (b.x, b.y) {
        (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
    } else {
        -((a.x - b.x) * (p.y - b.y) - (a.y - b.y) * (p.x - b.x))
    }
}

/// [`edge`] with the canonical endpoint order resolved up front.
#[derive(Clone, Copy)]
struct EdgeFn {
    ax: f64,
    ay: f64,
    dx: f64,
    dy: f64,
    negate: bool,
}

impl EdgeFn {
    fn new(a: &Vector2<f64>, b: &Vector2<f64>) -> Self {
        let (p, q, negate) = if (a.x, a.y) <= (b.x, b.y) { (a, b, false) } else { (b, a, true) };
        EdgeFn {
            ax: p.x,
            ay: p.y,
            dx: q.x - p.x,
            dy: q.y - p.y,
            negate,
        }
    }

    /// Row term `dx * (y - ay)`, shared by every pixel of a row.
    #[inline]
    fn row(&self, y: f64) -> f64 {
        self.dx * (y - self.ay)
    }

    #[inline]
    fn eval(&self, row: f64, x: f64) -> f64 {
        let v = row - self.dy * (x - self.ax);
        if self.negate {
            -v
        } else {
            v
        }
    }
}

/// Top-left rule for triangles with positive [`edge`] area (y points down).
#[inline]
fn is_top_left(a: &Vector2<f64>, b: &Vector2<f64>) -> bool {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Render-resolution camera plus the clip volume used for rasterization.
/// Build once per frame and share across boxes.
#[derive(Debug, Clone)]
pub struct RenderContext {
    camera: CameraFrame,
    planes: [(Vec3, f64); 5],
}

impl RenderContext {
    pub fn new(camera: &CameraFrame, (width, height): (u32, u32)) -> Self {
        let cam = camera.at_resolution(width, height);
        let fov = cam.field_of_view().expanded(RENDER_FOV_MARGIN);
        let planes = [
            (Vec3::new(0.0, 0.0, -1.0), -cam.near),
            (Vec3::new(-1.0, 0.0, fov.x_min), 0.0),
            (Vec3::new(1.0, 0.0, -fov.x_max), 0.0),
            (Vec3::new(0.0, -1.0, fov.y_min), 0.0),
            (Vec3::new(0.0, 1.0, -fov.y_max), 0.0),
        ];
        RenderContext { camera: cam, planes }
    }

    /// The camera resampled to the render resolution.
    pub fn camera(&self) -> &CameraFrame {
        &self.camera
    }

    pub fn resolution(&self) -> (u32, u32) {
        (self.camera.width(), self.camera.height())
    }
}

/// Renders one camera-space box at `width x height`.
///
/// The camera's intrinsics are resampled to the render resolution. Geometry
/// closer than the camera's near plane is clipped away; all faces are drawn
/// and the nearest surface wins.
pub fn rasterize_box(
    camera: &CameraFrame,
    b: &Box3D,
    box_index: usize,
    resolution: (u32, u32),
    subdivisions: u32,
) -> InstanceRender {
    rasterize_with(&RenderContext::new(camera, resolution), b, box_index, subdivisions)
}

/// [`rasterize_box`] with a prebuilt context.
pub fn rasterize_with(ctx: &RenderContext, b: &Box3D, box_index: usize, subdivisions: u32) -> InstanceRender {
    let cam = &ctx.camera;
    let planes = &ctx.planes;
    let (width, height) = ctx.resolution();

    // Whole-box early out: every corner outside one plane.
    let corners: [Vec3; 8] = std::array::from_fn(|i| b.from_local(&corner_signs(i).component_mul(&b.half_extents())));
    if planes
        .iter()
        .any(|(n, off)| corners.iter().all(|c| n.dot(c) - off > 0.0))
    {
        return InstanceRender::empty(box_index, width, height);
    }

    // With the eye outside the box and the box past the near plane, the
    // faces turned towards the eye cover the whole silhouette.
    let eye = b.to_local(&Vec3::zeros());
    let h = b.half_extents();
    let eye_outside = (0..3).any(|k| eye[k].abs() > h[k]);
    let past_near = corners.iter().all(|c| c.z > cam.near);
    let mut tris = Vec::new();
    tessellate_faces(b, subdivisions, |axis, sign| !(eye_outside && past_near) || sign * eye[axis] > h[axis], &mut tris);

    let mut screen_tris: Vec<[ScreenVertex; 3]> = Vec::new();
    let mut poly = Vec::with_capacity(8);
    let mut scratch = Vec::with_capacity(8);
    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    let mut projected: Vec<ScreenVertex> = Vec::with_capacity(8);
    for tri in tris {
        poly.clear();
        poly.extend_from_slice(&tri);
        clip_polygon(&mut poly, &mut scratch, planes);
        if poly.len() < 3 {
            continue;
        }
        projected.clear();
        for v in &poly {
            let p = cam.normalized_to_pixel(v.x / v.z, v.y / v.z);
            umin = umin.min(p.x);
            umax = umax.max(p.x);
            vmin = vmin.min(p.y);
            vmax = vmax.max(p.y);
            projected.push(ScreenVertex { p, inv_z: 1.0 / v.z });
        }
        for k in 1..projected.len() - 1 {
            screen_tris.push([projected[0], projected[k], projected[k + 1]]);
        }
    }
    if screen_tris.is_empty() {
        return InstanceRender::empty(box_index, width, height);
    }

    let clamp_lo = |v: f64, max: u32| v.ceil().clamp(0.0, max as f64) as u32;
    let clamp_hi = |v: f64, max: u32| (v.floor() + 1.0).clamp(0.0, max as f64) as u32;
    let window = PixelRect {
        x0: clamp_lo(umin, width),
        x1: clamp_hi(umax, width),
        y0: clamp_lo(vmin, height),
        y1: clamp_hi(vmax, height),
    };
    if window.is_empty() {
        return InstanceRender::empty(box_index, width, height);
    }
    let ww = window.width() as usize;
    // Nearest surface wins on inverse depth; 0 marks no coverage.
    let mut inv_depth = vec![0.0_f64; ww * window.height() as usize];

    for tri in &screen_tris {
        let [v0, mut v1, mut v2] = *tri;
        let mut area = edge(&v0.p, &v1.p, &v2.p);
        if area == 0.0 || !area.is_finite() {
            continue;
        }
        if area < 0.0 {
            std::mem::swap(&mut v1, &mut v2);
            area = -area;
        }
        let tl0 = is_top_left(&v1.p, &v2.p);
        let tl1 = is_top_left(&v2.p, &v0.p);
        let tl2 = is_top_left(&v0.p, &v1.p);
        let xs = [v0.p.x, v1.p.x, v2.p.x];
        let ys = [v0.p.y, v1.p.y, v2.p.y];
        let x_lo = clamp_lo(xs.iter().copied().fold(f64::MAX, f64::min), window.x1).max(window.x0);
        let x_hi = clamp_hi(xs.iter().copied().fold(f64::MIN, f64::max), window.x1);
        let y_lo = clamp_lo(ys.iter().copied().fold(f64::MAX, f64::min), window.y1).max(window.y0);
        let y_hi = clamp_hi(ys.iter().copied().fold(f64::MIN, f64::max), window.y1);
        let inv_area = 1.0 / area;
        let (e0, e1, e2) = (EdgeFn::new(&v1.p, &v2.p), EdgeFn::new(&v2.p, &v0.p), EdgeFn::new(&v0.p, &v1.p));
        for y in y_lo..y_hi {
            let row = (y - window.y0) as usize * ww;
            let (r0, r1, r2) = (e0.row(y as f64), e1.row(y as f64), e2.row(y as f64));
            for x in x_lo..x_hi {
                let px = x as f64;
                let w0 = e0.eval(r0, px);
                let w1 = e1.eval(r1, px);
                let w2 = e2.eval(r2, px);
                let inside = (w0 > 0.0 || (w0 == 0.0 && tl0))
                    && (w1 > 0.0 || (w1 == 0.0 && tl1))
                    && (w2 > 0.0 || (w2 == 0.0 && tl2));
                if !inside {
                    continue;
                }
                let inv_z = (w0 * v0.inv_z + w1 * v1.inv_z + w2 * v2.inv_z) * inv_area;
                let cell = &mut inv_depth[row + (x - window.x0) as usize];
                if inv_z > *cell {
                    *cell = inv_z;
                }
            }
        }
    }
    let depth = inv_depth
        .into_iter()
        .map(|v| if v > 0.0 { 1.0 / v } else { f64::INFINITY })
        .collect();

    InstanceRender {
        box_index,
        width,
        height,
        window,
        depth,
    }
}

/// Pixels of one render that are nearest among all renders.
#[derive(Debug, Clone, PartialEq)]
pub struct Visibility {
    pub box_index: usize,
    window: PixelRect,
    visible: Vec<bool>,
}

impl Visibility {
    pub fn window(&self) -> PixelRect {
        self.window
    }

    /// Visibility over [`Visibility::window`], row-major.
    pub fn window_visible(&self) -> &[bool] {
        &self.visible
    }

    pub fn is_visible(&self, x: u32, y: u32) -> bool {
        self.window.contains(x, y)
            && self.visible[((y - self.window.y0) * self.window.width() + (x - self.window.x0)) as usize]
    }

    pub fn pixel_count(&self) -> usize {
        self.visible.iter().filter(|v| **v).count()
    }

    /// Visible pixels in row-major order.
    pub fn pixels(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let win = self.window;
        let w = win.width().max(1);
        self.visible
            .iter()
            .enumerate()
            .filter_map(move |(i, &v)| v.then(|| (win.x0 + i as u32 % w, win.y0 + i as u32 / w)))
    }
}

/// Assigns each pixel to the render with the smallest depth there; ties go
/// to the lower `box_index`. Output is aligned with `renders`.
pub fn composite_visibility(renders: &[InstanceRender]) -> Result<Vec<Visibility>, RasterError> {
    let refs: Vec<&InstanceRender> = renders.iter().collect();
    composite_visibility_refs(&refs)
}

/// [`composite_visibility`] over borrowed renders.
pub fn composite_visibility_refs(renders: &[&InstanceRender]) -> Result<Vec<Visibility>, RasterError> {
    let Some(first) = renders.first() else {
        return Ok(Vec::new());
    };
    let (w, h) = (first.width, first.height);
    for r in renders {
        if (r.width, r.height) != (w, h) {
            return Err(RasterError::ResolutionMismatch(w, h, r.width, r.height));
        }
    }
    let mut best_depth = vec![f64::INFINITY; (w * h) as usize];
    let mut best_owner = vec![usize::MAX; (w * h) as usize];
    for r in renders {
        let win = r.window;
        let ww = win.width() as usize;
        for y in win.y0..win.y1 {
            let src = &r.depth[(y - win.y0) as usize * ww..][..ww];
            let dst = (y * w + win.x0) as usize;
            for (k, &d) in src.iter().enumerate() {
                let i = dst + k;
                if d < best_depth[i] || (d == best_depth[i] && d.is_finite() && r.box_index < best_owner[i]) {
                    best_depth[i] = d;
                    best_owner[i] = r.box_index;
                }
            }
        }
    }
    Ok(renders
        .iter()
        .map(|r| {
            let win = r.window;
            let ww = win.width() as usize;
            let mut visible = Vec::with_capacity(r.depth.len());
            for y in win.y0..win.y1 {
                let src = &r.depth[(y - win.y0) as usize * ww..][..ww];
                let owners = &best_owner[(y * w + win.x0) as usize..][..ww];
                visible.extend(src.iter().zip(owners).map(|(d, o)| d.is_finite() && *o == r.box_index));
            }
            Visibility {
                box_index: r.box_index,
                window: win,
                visible,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Distortion, Intrinsics};
    use crate::geometry::{rotation_from_euler, Cuboid, Frame, RigidTransform};
    use approx::assert_abs_diff_eq;
    use rand::{RngExt, SeedableRng};

    fn camera(d: Distortion) -> CameraFrame {
        CameraFrame::new(
            Intrinsics {
                fx: 500.0,
                fy: 500.0,
                cx: 319.5,
                cy: 239.5,
                width: 640,
                height: 480,
            },
            d,
            RigidTransform::identity(),
            None,
        )
        .unwrap()
    }

    fn cube(center: Vec3, size: f64) -> Box3D {
        Box3D::axis_aligned(center, Vec3::new(size, size, size), Frame::Camera).unwrap()
    }

    fn tri_area(t: &Triangle) -> f64 {
        0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()
    }

    #[test]
    fn tessellation_counts_and_area() {
        let b = cube(Vec3::zeros(), 1.0);
        assert_eq!(tessellate_box(&b, 1).len(), 12);
        let tris = tessellate_box(&b, 4);
        assert_eq!(tris.len(), 192);
        let area: f64 = tris.iter().map(tri_area).sum();
        assert_abs_diff_eq!(area, 6.0, epsilon = 6.0 * 1e-9);

        let odd = Box3D::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.3, 1.7, 2.2), rotation_from_euler(0.4, 0.3, -0.2), Frame::World).unwrap();
        let tris = tessellate_box(&odd, 3);
        let area: f64 = tris.iter().map(tri_area).sum();
        assert!((area - odd.surface_area()).abs() < 1e-9 * odd.surface_area());
        for c in odd.corners() {
            assert!(tris.iter().flatten().any(|v| (v - c).norm() < 1e-12));
        }
    }

    #[test]
    fn front_face_square_matches_pinhole_extents() {
        let cam = camera(Distortion::default());
        let b = cube(Vec3::new(0.0, 0.0, 3.0), 1.0);
        let r = rasterize_box(&cam, &b, 0, (640, 480), 1);
        // Front face at z = 2.5 spans +-0.5 -> +-100 px about the center.
        let (lo, hi) = (319.5 - 100.0, 319.5 + 100.0);
        let xs: Vec<u32> = r.pixels().map(|p| p.0).collect();
        let ys: Vec<u32> = r.pixels().map(|p| p.1).collect();
        let (xmin, xmax) = (*xs.iter().min().unwrap() as f64, *xs.iter().max().unwrap() as f64);
        let (ymin, ymax) = (*ys.iter().min().unwrap() as f64, *ys.iter().max().unwrap() as f64);
        assert!((xmin - lo).abs() <= 1.0 && (xmax - hi).abs() <= 1.0);
        assert!((ymin - lo + 80.0).abs() <= 1.0 && (ymax - hi + 80.0).abs() <= 1.0);
        // Nearest surface is the front face.
        assert_abs_diff_eq!(r.depth(320, 240), 2.5, epsilon = 1e-9);
        assert_eq!(r.pixel_count(), (xmax - xmin + 1.0) as usize * (ymax - ymin + 1.0) as usize);
    }

    #[test]
    fn box_behind_camera_renders_nothing() {
        let cam = camera(Distortion::default());
        let r = rasterize_box(&cam, &cube(Vec3::new(0.0, 0.0, -3.0), 1.0), 0, (320, 240), 8);
        assert!(r.is_empty());
        assert_eq!(r.full_mask().len(), 320 * 240);
    }

    #[test]
    fn masked_pixels_backproject_into_box() {
        let cam = camera(Distortion {
            k1: 0.05,
            k2: -0.02,
            p1: 0.001,
            ..Default::default()
        });
        let (w, h) = (320, 240);
        let rcam = cam.at_resolution(w, h);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..40 {
            let b = Box3D::new(
                Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8), rng.random_range(1.0..4.0)),
                Vec3::new(rng.random_range(0.2..1.0), rng.random_range(0.2..1.0), rng.random_range(0.2..1.0)),
                rotation_from_euler(rng.random_range(-3.0..3.0), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
                Frame::Camera,
            )
            .unwrap();
            let r = rasterize_box(&cam, &b, 0, (w, h), 8);
            for (x, y, d) in r.pixels() {
                let p = rcam.backproject(x as f64, y as f64, d).unwrap();
                // Two diagonal pixel footprints at this depth.
                let tol = 2.0 * std::f64::consts::SQRT_2 * d / rcam.intrinsics.fx;
                assert!(b.contains(&p, tol), "pixel ({x},{y}) depth {d}");
            }
        }
    }

    #[test]
    fn deterministic_output() {
        let cam = camera(Distortion { k1: 0.04, ..Default::default() });
        let b = Box3D::new(Vec3::new(0.3, 0.1, 2.0), Vec3::new(0.7, 0.4, 0.9), rotation_from_euler(0.5, 0.1, 0.0), Frame::Camera).unwrap();
        let a = rasterize_box(&cam, &b, 0, (320, 240), 8);
        let c = rasterize_box(&cam, &b, 0, (320, 240), 8);
        assert_eq!(a.full_depth().iter().map(|d| d.to_bits()).collect::<Vec<_>>(), c.full_depth().iter().map(|d| d.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn resolution_scaling_quarters_area() {
        let cam = camera(Distortion::default());
        let b = Box3D::new(Vec3::new(0.2, -0.1, 2.5), Vec3::new(0.8, 0.5, 0.6), rotation_from_euler(0.6, 0.2, 0.1), Frame::Camera).unwrap();
        let lo = rasterize_box(&cam, &b, 0, (320, 240), 8).pixel_count() as f64;
        let hi = rasterize_box(&cam, &b, 0, (640, 480), 8).pixel_count() as f64;
        let ratio = lo / hi;
        assert!((ratio - 0.25).abs() < 0.025, "ratio {ratio}");
    }

    #[test]
    fn subdivision_is_irrelevant_without_distortion() {
        let cam = camera(Distortion::default());
        let b = Box3D::new(Vec3::new(-0.3, 0.2, 2.0), Vec3::new(0.9, 0.5, 0.7), rotation_from_euler(0.9, 0.3, 0.2), Frame::Camera).unwrap();
        let a = rasterize_box(&cam, &b, 0, (320, 240), 1).full_mask();
        let c = rasterize_box(&cam, &b, 0, (320, 240), 8).full_mask();
        let (w, h) = (320usize, 240usize);
        for y in 0..h {
            for x in 0..w {
                if a[y * w + x] != c[y * w + x] {
                    // Differences only on the silhouette boundary band.
                    let near_boundary = (y.saturating_sub(1)..(y + 2).min(h))
                        .flat_map(|yy| (x.saturating_sub(1)..(x + 2).min(w)).map(move |xx| (xx, yy)))
                        .any(|(xx, yy)| a[yy * w + xx] != a[y * w + x] || c[yy * w + xx] != c[y * w + x]);
                    assert!(near_boundary, "interior difference at ({x},{y})");
                }
            }
        }
    }

    #[test]
    fn box_containing_camera_is_clipped_not_dropped() {
        let cam = camera(Distortion::default());
        let r = rasterize_box(&cam, &cube(Vec3::new(0.0, 0.0, 0.5), 4.0), 0, (320, 240), 4);
        // Every pixel sees the far face from inside.
        assert_eq!(r.pixel_count(), 320 * 240);
        assert_abs_diff_eq!(r.depth(160, 120), 2.5, epsilon = 1e-9);
    }

    #[test]
    fn composite_examples() {
        let cam = camera(Distortion::default());
        let res = (320, 240);
        let a = rasterize_box(&cam, &cube(Vec3::new(0.0, 0.0, 2.0), 0.5), 0, res, 2);
        let vis = composite_visibility(std::slice::from_ref(&a)).unwrap();
        assert_eq!(vis[0].pixel_count(), a.pixel_count());

        let left = rasterize_box(&cam, &cube(Vec3::new(-1.0, 0.0, 3.0), 0.4), 0, res, 2);
        let right = rasterize_box(&cam, &cube(Vec3::new(1.0, 0.0, 3.0), 0.4), 1, res, 2);
        let vis = composite_visibility(&[left.clone(), right.clone()]).unwrap();
        assert_eq!(vis[0].pixel_count(), left.pixel_count());
        assert_eq!(vis[1].pixel_count(), right.pixel_count());

        let front = rasterize_box(&cam, &cube(Vec3::new(0.0, 0.0, 2.0), 0.6), 0, res, 2);
        let back = rasterize_box(&cam, &cube(Vec3::new(0.2, 0.0, 3.5), 1.0), 1, res, 2);
        let vis = composite_visibility(&[back.clone(), front.clone()]).unwrap();
        for y in 0..240 {
            for x in 0..320 {
                assert_eq!(vis[0].is_visible(x, y), back.mask(x, y) && !front.mask(x, y));
                assert_eq!(vis[1].is_visible(x, y), front.mask(x, y));
            }
        }
    }

    #[test]
    fn composite_ties_go_to_lower_index() {
        let cam = camera(Distortion::default());
        let b = cube(Vec3::new(0.0, 0.0, 2.0), 0.5);
        let r0 = rasterize_box(&cam, &b, 0, (320, 240), 2);
        let r1 = rasterize_box(&cam, &b, 1, (320, 240), 2);
        let vis = composite_visibility(&[r1, r0]).unwrap();
        assert_eq!(vis[0].pixel_count(), 0);
        assert!(vis[1].pixel_count() > 0);
    }

    #[test]
    fn composite_rejects_mixed_resolution() {
        let a = InstanceRender::empty(0, 320, 240);
        let b = InstanceRender::empty(1, 640, 480);
        assert!(matches!(composite_visibility(&[a, b]), Err(RasterError::ResolutionMismatch(..))));
    }
}
