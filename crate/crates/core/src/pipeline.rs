//! Per-frame ground truth: turns world-space box annotations into the boxes
//! a camera actually sees in one frame.
//!
//! For every frame the pipeline
//!
//! 1. moves each box into camera space,
//! 2. drops boxes wholly outside the viewing frustum,
//! 3. rasterizes every survivor on its own,
//! 4. cuts each box to the frustum by intersecting its pixel rays (near to
//!    far plane) with the box,
//! 5. resolves box-vs-box visibility by nearest rendered depth,
//! 6. cuts each box to the scene with rays of its visible pixels that stop
//!    at the measured scene depth plus a margin,
//! 7. drops boxes that lost too much volume or kept too few visible pixels.
//!
//! Survivors are converted to gravity-aligned boxes and paired with the 2D
//! rectangle of their visible pixels at full image resolution.
//!
//! Pixel rays run through pixel centers. Pixels on the outline of a mask
//! also shoot rays through their four corners so that cut extents reach the
//! true silhouette rather than stopping half a pixel short.

use crate::camera::{build_frustum, frustum_cull, CameraError, CameraFrame, FieldOfView, PixelRays};
use crate::depth::DepthMap;
use crate::geometry::{enclosing_gravity_box, Box3D, Cuboid, Frame, GeometryError, GravityBox, Mat3, Vec3};
use crate::raster::{composite_visibility_refs, rasterize_with, InstanceRender, PixelRect, RasterError, RenderContext, Visibility};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::sync::Arc;
use thiserror::Error;

/// Smallest extent a cut box may shrink to along any axis, in meters.
pub const MIN_CUT_EXTENT: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("cannot cut a box to an empty point set")]
    EmptyPoints,
    #[error("duplicate box id {0:?}")]
    DuplicateBoxId(String),
    #[error("box {0:?} is not in world coordinates")]
    NotWorldFrame(String),
    #[error("frame {0:?} has no gravity rotation")]
    MissingGravity(String),
    #[error("scene depth {dw}x{dh} is not registered to the {iw}x{ih} image")]
    DepthRegistration { dw: u32, dh: u32, iw: u32, ih: u32 },
    #[error("invalid pipeline parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedBox {
    pub box_id: String,
    pub class_id: Option<u32>,
    pub bbox: Box3D,
}

/// World-space annotations of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneAnnotations {
    pub scene_id: String,
    boxes: Vec<AnnotatedBox>,
}

impl SceneAnnotations {
    pub fn new(scene_id: impl Into<String>, boxes: Vec<AnnotatedBox>) -> Result<Self, PipelineError> {
        let mut seen = HashSet::new();
        for b in &boxes {
            if !seen.insert(b.box_id.as_str()) {
                return Err(PipelineError::DuplicateBoxId(b.box_id.clone()));
            }
            if b.bbox.frame != Frame::World {
                return Err(PipelineError::NotWorldFrame(b.box_id.clone()));
            }
        }
        Ok(SceneAnnotations {
            scene_id: scene_id.into(),
            boxes,
        })
    }

    pub fn boxes(&self) -> &[AnnotatedBox] {
        &self.boxes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub render_resolution: (u32, u32),
    pub subdivisions: u32,
    /// Minimum cut volume over original volume for a box to be kept.
    pub keep_ratio: f64,
    /// Slack past the measured scene depth before a ray stops, in meters.
    pub occlusion_margin: f64,
    /// Cast rays through every `ray_stride`-th pixel in x and y.
    pub ray_stride: u32,
    pub min_visible_pixels: u32,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams {
            render_resolution: (crate::raster::DEFAULT_RENDER_WIDTH, crate::raster::DEFAULT_RENDER_HEIGHT),
            subdivisions: crate::raster::DEFAULT_SUBDIVISIONS,
            keep_ratio: 0.25,
            occlusion_margin: 0.05,
            ray_stride: 1,
            min_visible_pixels: 10,
        }
    }
}

impl PipelineParams {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidParams(m.to_string()));
        if self.render_resolution.0 == 0 || self.render_resolution.1 == 0 {
            return bad("render resolution must be positive");
        }
        if self.subdivisions == 0 {
            return bad("subdivisions must be at least 1");
        }
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return bad("keep_ratio must lie in (0, 1]");
        }
        if !(self.occlusion_margin >= 0.0 && self.occlusion_margin.is_finite()) {
            return bad("occlusion_margin must be finite and non-negative");
        }
        if self.ray_stride == 0 {
            return bad("ray_stride must be at least 1");
        }
        Ok(())
    }
}

/// One retained box of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub box_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_id: Option<u32>,
    /// Gravity-aligned box in the camera-centered gravity frame.
    pub cut_box: GravityBox,
    /// `[x1, y1, x2, y2]` in full-resolution pixel coordinates.
    pub box2d: [f64; 4],
    pub visible_pixel_fraction: f64,
    pub cut_volume_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameGroundTruth {
    pub frame_id: String,
    pub instances: Vec<GtInstance>,
}

/// Instance counts through the pipeline stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FrameStats {
    pub boxes: usize,
    pub culled: usize,
    pub empty_render: usize,
    pub dropped_cut: usize,
    pub dropped_visibility: usize,
    pub retained: usize,
}

/// Running min/max of points in a box's local frame.
#[derive(Debug, Clone, Copy)]
struct LocalExtents {
    lo: Vec3,
    hi: Vec3,
    count: usize,
}

impl LocalExtents {
    fn new() -> Self {
        LocalExtents {
            lo: Vec3::repeat(f64::INFINITY),
            hi: Vec3::repeat(f64::NEG_INFINITY),
            count: 0,
        }
    }

    fn add_local(&mut self, q: &Vec3) {
        for k in 0..3 {
            if q[k] < self.lo[k] {
                self.lo[k] = q[k];
            }
            if q[k] > self.hi[k] {
                self.hi[k] = q[k];
            }
        }
        self.count += 1;
    }

    /// Shrinks `b` to the extents, clamped inside `b` and floored at
    /// [`MIN_CUT_EXTENT`].
    fn to_box(&self, b: &Box3D) -> Option<Box3D> {
        if self.count == 0 {
            return None;
        }
        let h = b.half_extents();
        let mut center = Vec3::zeros();
        let mut dims = Vec3::zeros();
        for k in 0..3 {
            let lo = self.lo[k].clamp(-h[k], h[k]);
            let hi = self.hi[k].clamp(-h[k], h[k]);
            let floor = MIN_CUT_EXTENT.min(b.dims[k]);
            let ext = (hi - lo).max(floor);
            let half = 0.5 * ext;
            center[k] = (0.5 * (lo + hi)).clamp(-h[k] + half, h[k] - half);
            dims[k] = ext;
        }
        Some(Box3D {
            center: b.from_local(&center),
            dims,
            rotation: b.rotation,
            frame: b.frame,
        })
    }
}

/// Shrinks `b` along its own axes to the extents of `points`, keeping the
/// rotation. Points are expected inside `b`; anything outside is clamped.
pub fn cut_box_to_points(b: &Box3D, points: &[Vec3]) -> Result<Box3D, PipelineError> {
    let mut ext = LocalExtents::new();
    for p in points {
        ext.add_local(&b.to_local(p));
    }
    ext.to_box(b).ok_or(PipelineError::EmptyPoints)
}

/// Corner offsets, in corner-grid steps, of the rays cast for an outline
/// pixel.
const CORNER_OFFSETS: [(u32, u32); 4] = [(0, 0), (1, 0), (0, 1), (1, 1)];

struct RayCaster<'a> {
    camera: &'a CameraFrame,
    rays: Arc<PixelRays>,
}

impl<'a> RayCaster<'a> {
    fn new(camera: &'a CameraFrame) -> Self {
        RayCaster {
            camera,
            rays: PixelRays::cached(camera),
        }
    }

    /// Casts through the center of render pixel `(x, y)`.
    fn center(&self, x: u32, y: u32, z_max: f64, b: &LocalBox, ext: &mut LocalExtents) -> Result<bool, CameraError> {
        let (nx, ny) = self.rays.center(x, y)?;
        Ok(self.cast(nx, ny, z_max, b, ext))
    }

    /// Casts through the four corners of render pixel `(x, y)`.
    fn corners(&self, x: u32, y: u32, z_max: f64, b: &LocalBox, ext: &mut LocalExtents) -> Result<(), CameraError> {
        for (dx, dy) in CORNER_OFFSETS {
            let (nx, ny) = self.rays.corner(x + dx, y + dy)?;
            self.cast(nx, ny, z_max, b, ext);
        }
        Ok(())
    }

    /// Clips the ray with normalized direction `(x, y, 1)` to
    /// `z in [near, z_max]` and `b`, accumulating the segment endpoints.
    /// Returns whether the ray produced a non-empty segment.
    fn cast(&self, x: f64, y: f64, z_max: f64, b: &LocalBox, ext: &mut LocalExtents) -> bool {
        // With dir = (x, y, 1) the ray parameter equals camera-space z.
        let d = b.rt * Vec3::new(x, y, 1.0);
        let Some((t0, t1)) = b.interval(&d) else {
            return false;
        };
        let t0 = if t0 < self.camera.near { self.camera.near } else { t0 };
        let t1 = if t1 > z_max { z_max } else { t1 };
        if t0 > t1 {
            return false;
        }
        ext.add_local(&(b.origin + d * t0));
        ext.add_local(&(b.origin + d * t1));
        true
    }
}

/// A box seen from its own frame: the camera origin and the rotation that
/// takes camera directions into box coordinates.
struct LocalBox {
    origin: Vec3,
    rt: Mat3,
    half: Vec3,
}

impl LocalBox {
    fn new(b: &Box3D) -> Self {
        LocalBox {
            origin: b.to_local(&Vec3::zeros()),
            rt: b.rotation.transpose(),
            half: b.half_extents(),
        }
    }

    /// Slab intersection of the ray `origin + t d`, `t >= 0`.
    #[inline]
    fn interval(&self, d: &Vec3) -> Option<(f64, f64)> {
        let (o, h) = (&self.origin, &self.half);
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
            if ta > t0 {
                t0 = ta;
            }
            if tb < t1 {
                t1 = tb;
            }
            if t0 > t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

/// First multiple of `stride` at or after `v`.
fn stride_start(v: u32, stride: u32) -> u32 {
    v.div_ceil(stride) * stride
}

/// Visits every on-stride pixel of `win` for which `inside` holds, with
/// whether it is an outline pixel: one with a 4-neighbour outside `inside`
/// or on the image border. `inside` takes an index into the row-major
/// window buffer.
fn scan_window<E>(
    win: PixelRect,
    (w, h): (u32, u32),
    stride: u32,
    inside: impl Fn(usize) -> bool,
    mut visit: impl FnMut(u32, u32, bool) -> Result<(), E>,
) -> Result<(), E> {
    let ww = win.width() as usize;
    for y in (stride_start(win.y0, stride)..win.y1).step_by(stride as usize) {
        let row = (y - win.y0) as usize * ww;
        for x in (stride_start(win.x0, stride)..win.x1).step_by(stride as usize) {
            let i = row + (x - win.x0) as usize;
            if !inside(i) {
                continue;
            }
            let outline = x == 0
                || y == 0
                || x + 1 >= w
                || y + 1 >= h
                || x == win.x0
                || x + 1 == win.x1
                || y == win.y0
                || y + 1 == win.y1
                || !inside(i - 1)
                || !inside(i + 1)
                || !inside(i - ww)
                || !inside(i + ww);
            visit(x, y, outline)?;
        }
    }
    Ok(())
}

/// Step 4: cut a camera-space box to the frustum using its rendered mask.
/// Boxes wholly inside `inner` and the depth range are returned unchanged.
fn frustum_cut(
    caster: &RayCaster,
    render: &InstanceRender,
    b: &Box3D,
    stride: u32,
    inner: &FieldOfView,
) -> Result<Option<Box3D>, CameraError> {
    if caster.camera.contains_box(b, inner) {
        return Ok(Some(*b));
    }
    let far = caster.camera.far;
    let lb = LocalBox::new(b);
    let mut ext = LocalExtents::new();
    let depth = render.window_depth();
    scan_window(render.window(), (render.width(), render.height()), stride, |i| depth[i].is_finite(), |x, y, outline| {
        caster.center(x, y, far, &lb, &mut ext)?;
        if outline {
            caster.corners(x, y, far, &lb, &mut ext)?;
        }
        Ok(())
    })?;
    Ok(ext.to_box(b))
}

struct SceneCut {
    cut: Option<Box3D>,
    sampled: usize,
    visible: usize,
    /// Pixel bounds `(x_min, y_min, x_max, y_max)` of surviving visible
    /// pixels, inclusive.
    bounds: Option<(u32, u32, u32, u32)>,
}

/// Step 6: cut to the scene with rays that stop at the measured depth.
fn scene_cut(
    caster: &RayCaster,
    render: &InstanceRender,
    vis: &Visibility,
    b: &Box3D,
    depth: &DepthMap,
    params: &PipelineParams,
) -> Result<SceneCut, CameraError> {
    let cam = caster.camera;
    let (w, h) = (render.width(), render.height());
    let stride = params.ray_stride;
    let lb = LocalBox::new(b);
    let mut ext = LocalExtents::new();
    let rd = render.window_depth();
    let mut sampled = 0;
    scan_window(render.window(), (w, h), stride, |i| rd[i].is_finite(), |_, _, _| {
        sampled += 1;
        Ok::<_, CameraError>(())
    })?;
    let mut out = SceneCut {
        cut: None,
        sampled,
        visible: 0,
        bounds: None,
    };
    let visible = vis.window_visible();
    scan_window(vis.window(), (w, h), stride, |i| visible[i], |x, y, outline| {
        let d = depth.sample_for(x, y, w, h) as f64;
        let z_max = if d > 0.0 { (d + params.occlusion_margin).min(cam.far) } else { cam.far };
        if !caster.center(x, y, z_max, &lb, &mut ext)? {
            return Ok(());
        }
        out.visible += 1;
        out.bounds = Some(match out.bounds {
            None => (x, y, x, y),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
        });
        if outline {
            caster.corners(x, y, z_max, &lb, &mut ext)?;
        }
        Ok(())
    })?;
    out.cut = ext.to_box(b);
    Ok(out)
}

/// Maps inclusive render-pixel bounds to a full-resolution rectangle
/// covering those pixels' areas, clamped to the image.
fn box2d_from_bounds(bounds: (u32, u32, u32, u32), render: (u32, u32), image: (u32, u32)) -> [f64; 4] {
    let sx = render.0 as f64 / image.0 as f64;
    let sy = render.1 as f64 / image.1 as f64;
    let (iw, ih) = (image.0 as f64, image.1 as f64);
    let x1 = (bounds.0 as f64 / sx - 0.5).max(-0.5);
    let y1 = (bounds.1 as f64 / sy - 0.5).max(-0.5);
    let x2 = ((bounds.2 + 1) as f64 / sx - 0.5).min(iw - 0.5);
    let y2 = ((bounds.3 + 1) as f64 / sy - 0.5).min(ih - 0.5);
    [x1, y1, x2, y2]
}

/// Runs the full per-frame ground-truth pipeline.
pub fn render_frame_gt(
    annotations: &SceneAnnotations,
    frame_id: &str,
    camera: &CameraFrame,
    scene_depth: &DepthMap,
    params: &PipelineParams,
) -> Result<(FrameGroundTruth, FrameStats), PipelineError> {
    params.validate()?;
    camera.validate()?;
    let cam_to_gravity = camera
        .camera_to_gravity()
        .ok_or_else(|| PipelineError::MissingGravity(frame_id.to_string()))?;
    if !scene_depth.is_registered_to(camera.width(), camera.height()) {
        return Err(PipelineError::DepthRegistration {
            dw: scene_depth.width(),
            dh: scene_depth.height(),
            iw: camera.width(),
            ih: camera.height(),
        });
    }

    let mut stats = FrameStats {
        boxes: annotations.boxes().len(),
        ..Default::default()
    };

    // 1-2: to camera space, frustum cull.
    let frustum = build_frustum(camera);
    let candidates: Vec<(usize, Box3D)> = annotations
        .boxes()
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.bbox.transform(&camera.world_to_camera, Frame::Camera)))
        .filter(|(_, b)| frustum_cull(&frustum, b))
        .collect();
    stats.culled = stats.boxes - candidates.len();

    // 3-4: render each box and cut it to the frustum.
    let ctx = RenderContext::new(camera, params.render_resolution);
    let caster = RayCaster::new(ctx.camera());
    let inner = camera.inner_field_of_view();
    let per_box: Vec<Option<(InstanceRender, Box3D, Box3D)>> = candidates
        .par_iter()
        .map(|(i, b)| {
            let render = rasterize_with(&ctx, b, *i, params.subdivisions);
            if render.is_empty() {
                return Ok(None);
            }
            Ok(frustum_cut(&caster, &render, b, params.ray_stride, &inner)?.map(|cut| (render, *b, cut)))
        })
        .collect::<Result<_, CameraError>>()?;
    let empty = per_box.iter().filter(|r| r.is_none()).count();
    stats.empty_render = empty;
    let survivors: Vec<(InstanceRender, Box3D, Box3D)> = per_box.into_iter().flatten().collect();

    // 5: box-vs-box visibility.
    let renders: Vec<&InstanceRender> = survivors.iter().map(|s| &s.0).collect();
    let visibility = composite_visibility_refs(&renders)?;

    // 6: cut to the scene.
    let cuts: Vec<SceneCut> = survivors
        .par_iter()
        .zip(visibility.par_iter())
        .map(|((render, _, frustum_box), vis)| scene_cut(&caster, render, vis, frustum_box, scene_depth, params))
        .collect::<Result<_, CameraError>>()?;

    // 7: filter and emit.
    let stride_area = (params.ray_stride as usize).pow(2);
    let mut instances = Vec::new();
    for ((render, original, _), sc) in survivors.iter().zip(cuts) {
        let ann = &annotations.boxes()[render.box_index];
        let (Some(cut), Some(bounds)) = (sc.cut, sc.bounds) else {
            stats.dropped_visibility += 1;
            continue;
        };
        if sc.visible * stride_area < params.min_visible_pixels as usize {
            stats.dropped_visibility += 1;
            continue;
        }
        let ratio = cut.volume() / original.volume();
        if ratio < params.keep_ratio {
            stats.dropped_cut += 1;
            continue;
        }
        let gravity_box = match enclosing_gravity_box(&cut, &cam_to_gravity) {
            Ok(g) => g,
            Err(e) => {
                log::warn!("frame {frame_id}: dropping {}: {e}", ann.box_id);
                stats.dropped_cut += 1;
                continue;
            }
        };
        instances.push(GtInstance {
            box_id: ann.box_id.clone(),
            class_id: ann.class_id,
            cut_box: gravity_box,
            box2d: box2d_from_bounds(bounds, params.render_resolution, (camera.width(), camera.height())),
            visible_pixel_fraction: sc.visible as f64 / sc.sampled.max(1) as f64,
            cut_volume_ratio: ratio.min(1.0),
        });
    }
    stats.retained = instances.len();
    Ok((
        FrameGroundTruth {
            frame_id: frame_id.to_string(),
            instances,
        },
        stats,
    ))
}

/// Per-box intermediate results, exposed for inspection and debugging.
#[derive(Debug, Clone)]
pub struct BoxTrace {
    pub box_index: usize,
    pub camera_box: Box3D,
    pub render: InstanceRender,
    pub frustum_cut: Option<Box3D>,
}

/// Steps 1-4 only: camera-space boxes, their renders and frustum cuts, for
/// boxes surviving culling.
pub fn trace_frustum_cuts(
    annotations: &SceneAnnotations,
    camera: &CameraFrame,
    params: &PipelineParams,
) -> Result<Vec<BoxTrace>, PipelineError> {
    params.validate()?;
    let frustum = build_frustum(camera);
    let ctx = RenderContext::new(camera, params.render_resolution);
    let caster = RayCaster::new(ctx.camera());
    let inner = camera.inner_field_of_view();
    annotations
        .boxes()
        .iter()
        .enumerate()
        .map(|(i, a)| (i, a.bbox.transform(&camera.world_to_camera, Frame::Camera)))
        .filter(|(_, b)| frustum_cull(&frustum, b))
        .map(|(i, b)| {
            let render = rasterize_with(&ctx, &b, i, params.subdivisions);
            let cut = if render.is_empty() { None } else { frustum_cut(&caster, &render, &b, params.ray_stride, &inner)? };
            Ok(BoxTrace {
                box_index: i,
                camera_box: b,
                render,
                frustum_cut: cut,
            })
        })
        .collect()
}
