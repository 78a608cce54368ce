//! Running the ground-truth pipeline over every frame of a capture.

use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::io::{load_depth_png, save_depth_dump, save_mask_png, CaptureManifest, FrameRecord, IoError};
use crate::pipeline::{render_frame_gt, trace_frustum_cuts, FrameGroundTruth, FrameStats, PipelineError, PipelineParams, SceneAnnotations};

#[derive(Debug, Error)]
pub enum CaptureError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("frame {frame_id:?}: {source}")]
    Pipeline {
        frame_id: String,
        #[source]
        source: PipelineError,
    },
}

impl CaptureError {
    pub fn is_io(&self) -> bool {
        matches!(self, CaptureError::Io(e) if e.is_io())
    }
}

#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub gt: FrameGroundTruth,
    pub stats: FrameStats,
    pub elapsed: Duration,
}

fn render_one(annotations: &SceneAnnotations, frame: &FrameRecord, params: &PipelineParams) -> Result<FrameOutput, CaptureError> {
    let start = Instant::now();
    let depth = load_depth_png(&frame.scene_depth)?;
    let (gt, stats) = render_frame_gt(annotations, &frame.frame_id, &frame.camera, &depth, params).map_err(|source| CaptureError::Pipeline {
        frame_id: frame.frame_id.clone(),
        source,
    })?;
    Ok(FrameOutput {
        gt,
        stats,
        elapsed: start.elapsed(),
    })
}

/// Frames run in parallel on the current rayon pool; results keep manifest
/// order.
pub fn render_capture(
    manifest: &CaptureManifest,
    annotations: &SceneAnnotations,
    params: &PipelineParams,
) -> Result<Vec<FrameOutput>, CaptureError> {
    params.validate().map_err(|source| CaptureError::Pipeline {
        frame_id: String::new(),
        source,
    })?;
    manifest
        .frames
        .par_iter()
        .map(|f| render_one(annotations, f, params))
        .collect()
}

/// Everything that determines the output, for the head of a ground-truth
/// file.
pub fn provenance(manifest: &CaptureManifest, annotations: &SceneAnnotations, params: &PipelineParams) -> Value {
    json!({
        "generator": concat!("boxgt ", env!("CARGO_PKG_VERSION")),
        "capture_id": manifest.capture_id,
        "scene_id": annotations.scene_id,
        "num_boxes": annotations.boxes().len(),
        "num_frames": manifest.frames.len(),
        "params": {
            "render_resolution": [params.render_resolution.0, params.render_resolution.1],
            "subdivisions": params.subdivisions,
            "keep_ratio": params.keep_ratio,
            "occlusion_margin": params.occlusion_margin,
            "ray_stride": params.ray_stride,
            "min_visible_pixels": params.min_visible_pixels,
        },
    })
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes each box's render-resolution mask and depth for one frame.
pub fn write_debug_renders(dir: &Path, annotations: &SceneAnnotations, frame: &FrameRecord, params: &PipelineParams) -> Result<usize, CaptureError> {
    let traces = trace_frustum_cuts(annotations, &frame.camera, params).map_err(|source| CaptureError::Pipeline {
        frame_id: frame.frame_id.clone(),
        source,
    })?;
    let mut written = 0;
    for t in traces.iter().filter(|t| !t.render.is_empty()) {
        let stem = format!("{}.{}", file_safe(&frame.frame_id), file_safe(&annotations.boxes()[t.box_index].box_id));
        let (w, h) = (t.render.width(), t.render.height());
        save_mask_png(&dir.join(format!("{stem}.mask.png")), w, h, &t.render.full_mask())?;
        let depth: Vec<f32> = t
            .render
            .full_depth()
            .iter()
            .map(|d| if d.is_finite() { *d as f32 } else { 0.0 })
            .collect();
        save_depth_dump(&dir.join(format!("{stem}.depth.cubd")), w, h, &depth)?;
        written += 1;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{load_annotations, load_manifest};
    use crate::synthetic::{write_fixture, FixtureSpec};

    #[test]
    fn fixture_capture_renders_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(&write_fixture(dir.path(), &FixtureSpec::default()).unwrap()).unwrap();
        let scene = load_annotations(&m.annotations).unwrap();
        let out = render_capture(&m, &scene, &PipelineParams::default()).unwrap();
        let ids: Vec<&str> = out.iter().map(|f| f.gt.frame_id.as_str()).collect();
        assert_eq!(ids, ["frame0000", "frame0001", "frame0002", "frame0003"]);
        let retained: usize = out.iter().map(|f| f.stats.retained).sum();
        assert!(retained > 0);
        for f in &out {
            let s = f.stats;
            assert_eq!(s.boxes, s.culled + s.empty_render + s.dropped_cut + s.dropped_visibility + s.retained);
        }
        let p = provenance(&m, &scene, &PipelineParams::default());
        assert_eq!(p["num_frames"], 4);

        let debug = tempfile::tempdir().unwrap();
        let n = write_debug_renders(debug.path(), &scene, &m.frames[0], &PipelineParams::default()).unwrap();
        assert!(n > 0);
        assert_eq!(std::fs::read_dir(debug.path()).unwrap().count(), 2 * n);
    }
}
