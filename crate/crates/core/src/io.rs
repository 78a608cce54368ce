//! On-disk formats.
//!
//! Records are JSON, one object per line, with sorted keys. Generated
//! outputs round floats to 9 significant digits; annotation files keep full
//! precision so that they round-trip exactly.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::camera::{CameraFrame, Distortion, Intrinsics, DEFAULT_FAR, DEFAULT_NEAR};
use crate::decode::RawPrediction;
use crate::depth::DepthMap;
use crate::eval::{bucket_label, threshold_label, Detection, EvalReport};
use crate::geometry::{rotation_from_euler, Box3D, Frame, GeometryError, GravityBox, Mat3, RigidTransform, Vec3};
use crate::pipeline::{AnnotatedBox, FrameGroundTruth, GtInstance, SceneAnnotations};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{}: {msg}", path.display())]
    Invalid { path: PathBuf, msg: String },
}

impl IoError {
    /// Whether the failure came from the file system rather than content.
    pub fn is_io(&self) -> bool {
        matches!(self, IoError::Io { .. })
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn invalid(path: &Path, msg: impl Into<String>) -> Self {
        IoError::Invalid {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Rounds to 9 significant digits; negative zero becomes zero.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn num(x: f64) -> Value {
    Value::from(round_sig(x))
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|x| num(*x)).collect())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| IoError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| IoError::io(path, e))
}

/// Non-empty lines with their 1-based line numbers, parsed as JSON objects.
fn read_records(path: &Path) -> Result<Vec<(usize, Map<String, Value>)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| IoError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(m)) => out.push((i + 1, m)),
            Ok(_) => return Err(parse_err("expected a JSON object".into())),
            Err(e) => return Err(parse_err(e.to_string())),
        }
    }
    Ok(out)
}

fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a Value>) -> Result<()> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| IoError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| IoError::io(path, e))?;
    }
    w.flush().map_err(|e| IoError::io(path, e))
}

/// Field access on one record with errors that name the record and field.
struct Record<'a> {
    path: &'a Path,
    line: usize,
    id: String,
    map: &'a Map<String, Value>,
}

impl<'a> Record<'a> {
    fn new(path: &'a Path, line: usize, map: &'a Map<String, Value>, id_key: &str) -> Self {
        let id = map.get(id_key).and_then(Value::as_str).unwrap_or("?").to_string();
        Record { path, line, id, map }
    }

    fn err(&self, field: &str, msg: impl std::fmt::Display) -> IoError {
        IoError::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: format!("record {:?}: field `{field}`: {msg}", self.id),
        }
    }

    fn has(&self, key: &str) -> bool {
        self.map.get(key).is_some_and(|v| !v.is_null())
    }

    fn string(&self, key: &str) -> Result<String> {
        match self.map.get(key) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            Some(_) => Err(self.err(key, "expected a non-empty string")),
            None => Err(self.err(key, "missing")),
        }
    }

    fn f64(&self, key: &str) -> Result<f64> {
        let v = self.map.get(key).ok_or_else(|| self.err(key, "missing"))?;
        let x = v.as_f64().ok_or_else(|| self.err(key, "expected a number"))?;
        if !x.is_finite() {
            return Err(self.err(key, "not finite"));
        }
        Ok(x)
    }

    fn array<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let v = self.map.get(key).ok_or_else(|| self.err(key, "missing"))?;
        let arr = v.as_array().ok_or_else(|| self.err(key, format!("expected an array of {N} numbers")))?;
        if arr.len() != N {
            return Err(self.err(key, format!("expected {N} numbers, found {}", arr.len())));
        }
        let mut out = [0.0; N];
        for (o, x) in out.iter_mut().zip(arr) {
            *o = x
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.err(key, "expected finite numbers"))?;
        }
        Ok(out)
    }

    fn opt_array<const N: usize>(&self, key: &str) -> Result<Option<[f64; N]>> {
        if self.has(key) {
            self.array(key).map(Some)
        } else {
            Ok(None)
        }
    }

    fn opt_u32(&self, key: &str) -> Result<Option<u32>> {
        if !self.has(key) {
            return Ok(None);
        }
        self.map[key]
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .map(Some)
            .ok_or_else(|| self.err(key, "expected a non-negative integer"))
    }

    fn gravity_box(&self) -> Result<GravityBox> {
        let center = self.array::<3>("center")?;
        let dims = self.array::<3>("dims")?;
        if dims.iter().any(|d| *d <= 0.0) {
            return Err(self.err("dims", "dimensions must be positive"));
        }
        let yaw = self.f64("yaw")?;
        GravityBox::new(Vec3::from(center), Vec3::from(dims), yaw).map_err(|e| self.err("center", e))
    }
}

// ---------------------------------------------------------------- annotations

pub fn load_annotations(path: &Path) -> Result<SceneAnnotations> {
    let records = read_records(path)?;
    let mut iter = records.iter().peekable();
    let scene_id = match iter.peek() {
        Some((line, m)) if !m.contains_key("box_id") => {
            let r = Record::new(path, *line, m, "scene_id");
            iter.next();
            r.string("scene_id")?
        }
        _ => path
            .file_stem()
            .map(|s| s.to_string_lossy().trim_end_matches(".annotations").to_string())
            .unwrap_or_default(),
    };
    let mut boxes = Vec::new();
    let mut seen = HashSet::new();
    for (line, m) in iter {
        let r = Record::new(path, *line, m, "box_id");
        let box_id = r.string("box_id")?;
        if !seen.insert(box_id.clone()) {
            return Err(r.err("box_id", "duplicate id"));
        }
        let center = r.array::<3>("center")?;
        let dims = r.array::<3>("dims")?;
        if dims.iter().any(|d| *d <= 0.0) {
            return Err(r.err("dims", format!("dimensions must be positive, got {dims:?}")));
        }
        let (rotation, field) = match (r.has("rotation"), r.has("euler")) {
            (true, false) => (Mat3::from_row_slice(&r.array::<9>("rotation")?), "rotation"),
            (false, true) => {
                let [yaw, pitch, roll] = r.array::<3>("euler")?;
                (rotation_from_euler(yaw, pitch, roll), "euler")
            }
            (true, true) => return Err(r.err("rotation", "give either rotation or euler, not both")),
            (false, false) => return Err(r.err("rotation", "missing (or give euler)")),
        };
        let bbox = Box3D::new(Vec3::from(center), Vec3::from(dims), rotation, Frame::World).map_err(|e| match e {
            GeometryError::NotOrthonormal(_) => r.err(field, e),
            _ => r.err("center", e),
        })?;
        boxes.push(AnnotatedBox {
            box_id,
            class_id: r.opt_u32("class_id")?,
            bbox,
        });
    }
    log::info!("{}: {} boxes", path.display(), boxes.len());
    SceneAnnotations::new(scene_id, boxes).map_err(|e| IoError::invalid(path, e.to_string()))
}

pub fn save_annotations(path: &Path, scene: &SceneAnnotations) -> Result<()> {
    let mut lines = vec![json!({ "scene_id": scene.scene_id })];
    for b in scene.boxes() {
        let r = &b.bbox.rotation;
        let rows: Vec<f64> = (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])).collect();
        let mut m = json!({
            "box_id": b.box_id,
            "center": b.bbox.center.as_slice(),
            "dims": b.bbox.dims.as_slice(),
            "rotation": rows,
        });
        if let Some(c) = b.class_id {
            m["class_id"] = json!(c);
        }
        lines.push(m);
    }
    write_records(path, &lines)
}

// ------------------------------------------------------------------ manifest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub frame_id: String,
    pub intrinsics: Intrinsics,
    #[serde(default)]
    pub distortion: Distortion,
    /// Row-major 4x4.
    pub world_to_camera: Vec<f64>,
    /// Row-major 3x3.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity_to_camera: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub far: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<PathBuf>,
    pub scene_depth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_depth: Option<PathBuf>,
}

/// Manifest document as stored; paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestDoc {
    pub capture_id: String,
    pub annotations: PathBuf,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_id: String,
    pub camera: CameraFrame,
    pub image: Option<PathBuf>,
    pub scene_depth: PathBuf,
    pub sensor_depth: Option<PathBuf>,
}

/// A loaded capture with validated cameras and resolved paths.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureManifest {
    pub capture_id: String,
    pub annotations: PathBuf,
    pub frames: Vec<FrameRecord>,
}

impl FrameEntry {
    pub fn from_camera(frame_id: impl Into<String>, camera: &CameraFrame, scene_depth: impl Into<PathBuf>) -> Self {
        FrameEntry {
            frame_id: frame_id.into(),
            intrinsics: camera.intrinsics,
            distortion: camera.distortion,
            world_to_camera: camera.world_to_camera.to_row_major().to_vec(),
            gravity_to_camera: camera
                .gravity_to_camera
                .map(|g| (0..3).flat_map(|i| (0..3).map(move |j| g[(i, j)])).collect()),
            near: Some(camera.near),
            far: Some(camera.far),
            image: None,
            scene_depth: scene_depth.into(),
            sensor_depth: None,
        }
    }

    fn camera(&self) -> std::result::Result<CameraFrame, String> {
        let pose: [f64; 16] = self
            .world_to_camera
            .as_slice()
            .try_into()
            .map_err(|_| "world_to_camera needs 16 numbers".to_string())?;
        let world_to_camera = RigidTransform::from_row_major(&pose).map_err(|e| format!("world_to_camera: {e}"))?;
        let gravity = match &self.gravity_to_camera {
            Some(g) if g.len() == 9 => Some(Mat3::from_row_slice(g)),
            Some(_) => return Err("gravity_to_camera needs 9 numbers".into()),
            None => None,
        };
        CameraFrame::with_clip(
            self.intrinsics,
            self.distortion,
            world_to_camera,
            gravity,
            self.near.unwrap_or(DEFAULT_NEAR),
            self.far.unwrap_or(DEFAULT_FAR),
        )
        .map_err(|e| e.to_string())
    }
}

fn resolve(base: &Path, p: &Path) -> Result<PathBuf> {
    let full = base.join(p);
    if !full.is_file() {
        return Err(IoError::io(&full, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file not found")));
    }
    Ok(full)
}

pub fn load_manifest(path: &Path) -> Result<CaptureManifest> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(|e| IoError::io(path, e))?;
    let doc: ManifestDoc = serde_json::from_str(&text).map_err(|e| IoError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut frames = Vec::with_capacity(doc.frames.len());
    for f in &doc.frames {
        if !seen.insert(f.frame_id.as_str()) {
            return Err(IoError::invalid(path, format!("duplicate frame_id {:?}", f.frame_id)));
        }
        let camera = f
            .camera()
            .map_err(|e| IoError::invalid(path, format!("frame {:?}: {e}", f.frame_id)))?;
        frames.push(FrameRecord {
            frame_id: f.frame_id.clone(),
            camera,
            image: f.image.as_deref().map(|p| resolve(base, p)).transpose()?,
            scene_depth: resolve(base, &f.scene_depth)?,
            sensor_depth: f.sensor_depth.as_deref().map(|p| resolve(base, p)).transpose()?,
        });
    }
    Ok(CaptureManifest {
        capture_id: doc.capture_id,
        annotations: resolve(base, &doc.annotations)?,
        frames,
    })
}

pub fn save_manifest(path: &Path, doc: &ManifestDoc) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, doc).map_err(|e| IoError::io(path, e.into()))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
}

// --------------------------------------------------------------------- depth

/// Reads a 16-bit single-channel PNG in millimeters.
pub fn load_depth_png(path: &Path) -> Result<DepthMap> {
    let mut decoder = png::Decoder::new(open(path)?);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| IoError::invalid(path, format!("png: {e}")))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(IoError::invalid(
            path,
            format!("depth must be 16-bit single-channel, found {:?} {:?}", info.color_type, info.bit_depth),
        ));
    }
    let (w, h) = (info.width, info.height);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| IoError::invalid(path, "png: image too large"))?;
    let mut buf = vec![0u8; size];
    reader
        .next_frame(&mut buf)
        .map_err(|e| IoError::invalid(path, format!("png: {e}")))?;
    let values = buf
        .chunks_exact(2)
        .take(w as usize * h as usize)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / 1000.0)
        .collect();
    DepthMap::new(w, h, values).map_err(|e| IoError::invalid(path, e.to_string()))
}

/// Writes depth as 16-bit millimeters; values round to the nearest
/// millimeter and saturate at 65.535 m.
pub fn save_depth_png(path: &Path, depth: &DepthMap) -> Result<()> {
    let data: Vec<u8> = depth
        .values()
        .iter()
        .flat_map(|v| ((*v as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16).to_be_bytes())
        .collect();
    write_png(path, depth.width(), depth.height(), png::BitDepth::Sixteen, &data)
}

fn write_png(path: &Path, width: u32, height: u32, depth: png::BitDepth, data: &[u8]) -> Result<()> {
    let png_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(e) => IoError::io(path, e),
        e => IoError::invalid(path, format!("png: {e}")),
    };
    let mut enc = png::Encoder::new(create(path)?, width, height);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(depth);
    let mut w = enc.write_header().map_err(png_err)?;
    w.write_image_data(data).map_err(png_err)?;
    w.finish().map_err(png_err)
}

/// 8-bit mask image, 255 inside.
pub fn save_mask_png(path: &Path, width: u32, height: u32, mask: &[bool]) -> Result<()> {
    let data: Vec<u8> = mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
    write_png(path, width, height, png::BitDepth::Eight, &data)
}

const CUBD_MAGIC: &[u8; 4] = b"CUBD";

/// Raw float depth dump: `CUBD`, width, height, a reserved word, then
/// row-major little-endian `f32` values. Missing depth is stored as 0.
pub fn save_depth_dump(path: &Path, width: u32, height: u32, values: &[f32]) -> Result<()> {
    let mut w = create(path)?;
    let mut bytes = Vec::with_capacity(16 + values.len() * 4);
    bytes.extend_from_slice(CUBD_MAGIC);
    for v in [width, height, 0] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes).and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
}

pub fn load_depth_dump(path: &Path) -> Result<(u32, u32, Vec<f32>)> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(|e| IoError::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != CUBD_MAGIC {
        return Err(IoError::invalid(path, "not a CUBD depth dump"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let (w, h) = (word(4), word(8));
    if bytes.len() != 16 + 4 * w as usize * h as usize {
        return Err(IoError::invalid(path, "CUBD payload size does not match header"));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((w, h, values))
}

// -------------------------------------------------------------- ground truth

fn gt_instance_value(g: &GtInstance) -> Value {
    let mut m = json!({
        "box_id": g.box_id,
        "center": nums(&g.cut_box.center),
        "dims": nums(&g.cut_box.dims),
        "yaw": num(g.cut_box.yaw),
        "box2d": nums(&g.box2d),
        "visible_pixel_fraction": num(g.visible_pixel_fraction),
        "cut_volume_ratio": num(g.cut_volume_ratio),
    });
    if let Some(c) = g.class_id {
        m["class_id"] = json!(c);
    }
    m
}

/// Serializes one frame as a single JSON line (without the newline).
pub fn frame_gt_line(frame: &FrameGroundTruth) -> String {
    let v = json!({
        "frame_id": frame.frame_id,
        "instances": frame.instances.iter().map(gt_instance_value).collect::<Vec<_>>(),
    });
    serde_json::to_string(&v).expect("JSON values serialize")
}

/// Provenance line followed by one line per frame.
pub fn write_ground_truth(path: &Path, provenance: &Value, frames: &[FrameGroundTruth]) -> Result<()> {
    let mut w = create(path)?;
    let head = serde_json::to_string(&json!({ "provenance": provenance })).expect("JSON values serialize");
    let mut text = head;
    text.push('\n');
    for f in frames {
        text.push_str(&frame_gt_line(f));
        text.push('\n');
    }
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| IoError::io(path, e))
}

/// Returns the provenance block (if any) and the frames in file order.
pub fn read_ground_truth(path: &Path) -> Result<(Option<Value>, Vec<FrameGroundTruth>)> {
    let mut provenance = None;
    let mut frames = Vec::new();
    for (line, m) in read_records(path)? {
        if let Some(p) = m.get("provenance") {
            provenance = Some(p.clone());
            continue;
        }
        let r = Record::new(path, line, &m, "frame_id");
        let frame_id = r.string("frame_id")?;
        let list = m
            .get("instances")
            .and_then(Value::as_array)
            .ok_or_else(|| r.err("instances", "expected an array"))?;
        let mut instances = Vec::with_capacity(list.len());
        for item in list {
            let obj = item.as_object().ok_or_else(|| r.err("instances", "expected objects"))?;
            let ir = Record::new(path, line, obj, "box_id");
            instances.push(GtInstance {
                box_id: ir.string("box_id")?,
                class_id: ir.opt_u32("class_id")?,
                cut_box: ir.gravity_box()?,
                box2d: ir.array::<4>("box2d")?,
                visible_pixel_fraction: ir.f64("visible_pixel_fraction")?,
                cut_volume_ratio: ir.f64("cut_volume_ratio")?,
            });
        }
        frames.push(FrameGroundTruth { frame_id, instances });
    }
    Ok((provenance, frames))
}

/// Reads one ground-truth file, or every `*.gt.jsonl` file of a directory in
/// name order.
pub fn read_ground_truth_path(path: &Path) -> Result<Vec<FrameGroundTruth>> {
    if !path.is_dir() {
        return read_ground_truth(path).map(|r| r.1);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| IoError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".gt.jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(IoError::invalid(path, "no *.gt.jsonl files"));
    }
    let mut out = Vec::new();
    for f in files {
        out.extend(read_ground_truth(&f)?.1);
    }
    Ok(out)
}

// ---------------------------------------------------------------- detections

pub fn detection_value(d: &Detection) -> Value {
    let mut m = json!({
        "frame_id": d.frame_id,
        "score": num(d.score),
        "center": nums(&d.bbox.center),
        "dims": nums(&d.bbox.dims),
        "yaw": num(d.bbox.yaw),
    });
    if let Some(b) = &d.box2d {
        m["box2d"] = nums(b);
    }
    if let Some(c) = d.class_id {
        m["class_id"] = json!(c);
    }
    m
}

/// One line per detection, after an optional provenance line.
pub fn detections_text(provenance: Option<&Value>, dets: &[Detection]) -> String {
    let head = provenance.map(|p| json!({ "provenance": p }));
    let mut text = String::new();
    for v in head.into_iter().chain(dets.iter().map(detection_value)) {
        text.push_str(&serde_json::to_string(&v).expect("JSON values serialize"));
        text.push('\n');
    }
    text
}

pub fn write_detections(path: &Path, provenance: Option<&Value>, dets: &[Detection]) -> Result<()> {
    write_text(path, &detections_text(provenance, dets))
}

/// Detections in file order; a provenance line is skipped.
pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    read_records(path)?
        .iter()
        .filter(|(_, m)| !m.contains_key("provenance"))
        .map(|(line, m)| {
            let r = Record::new(path, *line, m, "frame_id");
            Ok(Detection {
                frame_id: r.string("frame_id")?,
                score: r.f64("score")?,
                bbox: r.gravity_box()?,
                box2d: r.opt_array::<4>("box2d")?,
                class_id: r.opt_u32("class_id")?,
            })
        })
        .collect()
}

/// Raw predictions keyed by frame.
pub fn read_predictions(path: &Path) -> Result<Vec<(String, Option<u32>, RawPrediction)>> {
    read_records(path)?
        .iter()
        .map(|(line, m)| {
            let r = Record::new(path, *line, m, "frame_id");
            Ok((
                r.string("frame_id")?,
                r.opt_u32("class_id")?,
                RawPrediction {
                    u: r.f64("u")?,
                    v: r.f64("v")?,
                    z: r.f64("z")?,
                    dims: r.array::<3>("dims")?,
                    yaw: r.f64("yaw")?,
                    score: r.f64("score")?,
                },
            ))
        })
        .collect()
}

pub fn write_predictions(path: &Path, preds: &[(String, Option<u32>, RawPrediction)]) -> Result<()> {
    let lines: Vec<Value> = preds
        .iter()
        .map(|(f, c, p)| {
            let mut m = json!({
                "frame_id": f,
                "u": num(p.u),
                "v": num(p.v),
                "z": num(p.z),
                "dims": nums(&p.dims),
                "yaw": num(p.yaw),
                "score": num(p.score),
            });
            if let Some(c) = c {
                m["class_id"] = json!(c);
            }
            m
        })
        .collect();
    write_records(path, &lines)
}

// -------------------------------------------------------------------- report

/// A number as written in every output file: 9 significant digits, JSON
/// syntax (`1.0`, `0.333333333`).
pub fn format_number(x: f64) -> String {
    serde_json::to_string(&num(x)).expect("JSON numbers serialize")
}

/// One `KEY value` line per metric followed by dataset counts.
pub fn report_text(report: &EvalReport) -> String {
    let mut s = String::new();
    for (k, v) in report.key_values() {
        s.push_str(&format!("{k} {}\n", format_number(v)));
    }
    s.push_str(&format!("num_frames {}\n", report.num_frames));
    s.push_str(&format!("num_detections {}\n", report.num_detections));
    s.push_str(&format!("num_gt {}\n", report.num_gt));
    s
}

/// Tab-separated per-cell metrics with a header row.
pub fn report_tsv(report: &EvalReport) -> String {
    let mut s = String::from("class\tiou\tbucket\tAP\tAR\tTP\tFP\tFN\tnum_gt\n");
    for c in &report.cells {
        let class = c.class_id.map_or_else(|| "all".to_string(), |c| c.to_string());
        let bucket = c
            .bucket
            .map_or_else(|| "all".to_string(), |b| bucket_label(report.config.distance_buckets[b]));
        s.push_str(&format!(
            "{class}\t{}\t{bucket}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            threshold_label(c.threshold),
            format_number(c.ap),
            format_number(c.ar),
            c.tp,
            c.fp,
            c.fn_,
            c.num_gt
        ));
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}
