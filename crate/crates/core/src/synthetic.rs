//! Seeded synthetic cameras, scenes and on-disk capture fixtures.

use std::f64::consts::{FRAC_PI_2, PI};
use std::path::{Path, PathBuf};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::camera::{CameraFrame, Distortion, Intrinsics};
use crate::depth::DepthMap;
use crate::geometry::{rot_x, rot_z, rotation_from_euler, Box3D, Frame, RigidTransform, Vec3};
use crate::io::{save_annotations, save_depth_png, FrameEntry, IoError, ManifestDoc};
use crate::pipeline::{AnnotatedBox, SceneAnnotations};

/// Level camera at `position` looking along world heading `yaw` (0 is +y),
/// pitched up by `tilt`. Its gravity frame shares its heading.
pub fn upright_camera(
    width: u32,
    height: u32,
    hfov: f64,
    position: Vec3,
    yaw: f64,
    tilt: f64,
    distortion: Distortion,
) -> CameraFrame {
    let fx = 0.5 * width as f64 / (0.5 * hfov).tan();
    let k = Intrinsics {
        fx,
        fy: fx,
        cx: 0.5 * (width as f64 - 1.0),
        cy: 0.5 * (height as f64 - 1.0),
        width,
        height,
    };
    let cam_to_gravity = rot_x(-FRAC_PI_2 + tilt);
    let cam_to_world = RigidTransform::new(rot_z(yaw) * cam_to_gravity, position).expect("rotation");
    CameraFrame::new(k, distortion, cam_to_world.inverse(), Some(cam_to_gravity.transpose())).expect("synthetic camera is valid")
}

/// Mild barrel distortion typical of phone cameras.
pub fn mild_distortion() -> Distortion {
    Distortion {
        k1: 0.06,
        k2: -0.02,
        k3: 0.004,
        p1: 0.0008,
        p2: -0.0006,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub num_boxes: usize,
    /// Center distance range from the camera, meters.
    pub distance: (f64, f64),
    pub dims: (f64, f64),
    /// Fraction of the field of view box centers are spread over; above 1
    /// places some boxes partly or wholly outside the image.
    pub spread: f64,
    /// Random pitch and roll up to this angle; 0 gives yaw-only boxes.
    pub max_tilt: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            num_boxes: 20,
            distance: (1.0, 4.5),
            dims: (0.2, 1.5),
            spread: 1.3,
            max_tilt: 0.0,
        }
    }
}

/// Random world-space boxes around the view of `camera`.
pub fn random_scene(rng: &mut impl Rng, camera: &CameraFrame, spec: &SceneSpec, scene_id: &str) -> SceneAnnotations {
    let fov = camera.field_of_view();
    let (mx, my) = (0.5 * (fov.x_min + fov.x_max), 0.5 * (fov.y_min + fov.y_max));
    let (hx, hy) = (0.5 * (fov.x_max - fov.x_min) * spec.spread, 0.5 * (fov.y_max - fov.y_min) * spec.spread);
    let cam_to_world = camera.world_to_camera.inverse();
    let boxes = (0..spec.num_boxes)
        .map(|i| {
            let x = mx + rng.random_range(-hx..=hx);
            let y = my + rng.random_range(-hy..=hy);
            let d = rng.random_range(spec.distance.0..=spec.distance.1);
            let ray = Vec3::new(x, y, 1.0).normalize();
            let center = cam_to_world.apply(&(ray * d));
            let dims = Vec3::from_fn(|_, _| rng.random_range(spec.dims.0..=spec.dims.1));
            let yaw = rng.random_range(-PI..PI);
            let (pitch, roll) = if spec.max_tilt > 0.0 {
                (rng.random_range(-spec.max_tilt..=spec.max_tilt), rng.random_range(-spec.max_tilt..=spec.max_tilt))
            } else {
                (0.0, 0.0)
            };
            AnnotatedBox {
                box_id: format!("box{i:03}"),
                class_id: Some(rng.random_range(0..5)),
                bbox: Box3D::new(center, dims, rotation_from_euler(yaw, pitch, roll), Frame::World).expect("valid box"),
            }
        })
        .collect();
    SceneAnnotations::new(scene_id, boxes).expect("unique ids")
}

/// Description of a generated capture on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub seed: u64,
    pub num_frames: usize,
    pub num_boxes: usize,
    pub width: u32,
    pub height: u32,
    pub depth_size: (u32, u32),
    /// Constant scene depth, meters.
    pub wall_depth: f32,
    pub distortion: Distortion,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 7,
            num_frames: 4,
            num_boxes: 12,
            width: 640,
            height: 480,
            depth_size: (256, 192),
            wall_depth: 4.0,
            distortion: mild_distortion(),
        }
    }
}

/// Writes annotations, per-frame depth images and a manifest into `dir`;
/// returns the manifest path. Output depends only on `spec`.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<PathBuf, IoError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cam_at = |yaw: f64| upright_camera(spec.width, spec.height, 1.1, Vec3::new(0.0, 0.0, 1.4), yaw, -0.15, spec.distortion);
    let scene_spec = SceneSpec {
        num_boxes: spec.num_boxes,
        distance: (1.5, 3.8),
        dims: (0.2, 0.8),
        spread: 1.6,
        ..SceneSpec::default()
    };
    let scene = random_scene(&mut rng, &cam_at(0.0), &scene_spec, &format!("synthetic-{}", spec.seed));
    save_annotations(&dir.join("scene.jsonl"), &scene)?;

    let depth = DepthMap::constant(spec.depth_size.0, spec.depth_size.1, spec.wall_depth);
    let mut frames = Vec::with_capacity(spec.num_frames);
    for i in 0..spec.num_frames {
        let yaw = (i as f64 - 0.5 * spec.num_frames as f64) * 0.12 + rng.random_range(-0.02..0.02);
        let id = format!("frame{i:04}");
        let depth_name = format!("{id}.depth.png");
        save_depth_png(&dir.join(&depth_name), &depth)?;
        frames.push(FrameEntry::from_camera(id, &cam_at(yaw), depth_name));
    }
    let manifest = dir.join("manifest.json");
    crate::io::save_manifest(
        &manifest,
        &ManifestDoc {
            capture_id: format!("synthetic-{}", spec.seed),
            annotations: "scene.jsonl".into(),
            frames,
        },
    )?;
    Ok(manifest)
}
