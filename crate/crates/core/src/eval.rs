//! Dataset-level average precision and recall for 3D detections.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::greedy_match;
use crate::geometry::GravityBox;
use crate::metrics::{iou_2d, iou_gravity};
use crate::pipeline::FrameGroundTruth;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("detection references unknown frame {0:?}")]
    UnknownFrame(String),
    #[error("ground truth contains no instances")]
    EmptyGroundTruth,
    #[error("duplicate ground-truth frame {0:?}")]
    DuplicateFrame(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("detection {index} in frame {frame_id:?}: {reason}")]
    InvalidDetection { frame_id: String, index: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame_id: String,
    pub score: f64,
    /// Gravity-aligned box in the camera-centered gravity frame.
    pub bbox: GravityBox,
    pub box2d: Option<[f64; 4]>,
    pub class_id: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IouKind {
    /// Exact IoU of gravity-aligned boxes.
    Box3d,
    /// Image-rectangle IoU on `box2d`.
    Rect2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_thresholds: Vec<f64>,
    pub max_detections_per_frame: usize,
    pub class_agnostic: bool,
    pub distance_buckets: Vec<(f64, f64)>,
    /// Recall samples of the interpolated precision envelope; 0 integrates
    /// the envelope exactly over recall instead.
    pub interpolation_points: usize,
    pub iou_kind: IouKind,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_thresholds: vec![0.25, 0.5],
            max_detections_per_frame: 100,
            class_agnostic: false,
            distance_buckets: vec![(0.0, 2.0), (2.0, 4.0), (4.0, 5.0)],
            interpolation_points: 101,
            iou_kind: IouKind::Box3d,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: &str| Err(EvalError::InvalidConfig(m.to_string()));
        if self.iou_thresholds.is_empty() {
            return bad("at least one IoU threshold is required");
        }
        if self.iou_thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad("IoU thresholds must lie in (0, 1]");
        }
        if self.max_detections_per_frame == 0 {
            return bad("max detections per frame must be positive");
        }
        if self.interpolation_points == 1 {
            return bad("interpolation needs 0 (exact) or at least 2 points");
        }
        let mut prev_hi = f64::NEG_INFINITY;
        for &(lo, hi) in &self.distance_buckets {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo < hi) {
                return bad("distance buckets must be finite with 0 <= lo < hi");
            }
            if lo < prev_hi {
                return bad("distance buckets must be ascending and non-overlapping");
            }
            prev_hi = hi;
        }
        Ok(())
    }
}

/// Metric label for a threshold: `0.25` becomes `"25"`.
pub fn threshold_label(t: f64) -> String {
    let pct = t * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{}", (pct * 1e6).round() / 1e6)
    }
}

/// Metric label for a bucket: `(0, 2)` becomes `"0-2"`.
pub fn bucket_label(b: (f64, f64)) -> String {
    format!("{}-{}", b.0, b.1)
}

/// Index of the half-open bucket `[lo, hi)` containing the center's
/// distance from the origin.
pub fn bucket_of(b: &GravityBox, buckets: &[(f64, f64)]) -> Option<usize> {
    let d = b.center().norm();
    buckets.iter().position(|&(lo, hi)| d >= lo && d < hi)
}

/// Area under the interpolated precision envelope.
///
/// `points` are cumulative `(recall, precision)` pairs in rank order.
/// With `samples >= 2` the envelope is read at that many equally spaced
/// recall values; with `samples == 0` it is integrated exactly.
pub fn ap_from_pr(points: &[(f64, f64)], samples: usize) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut env: Vec<f64> = points.iter().map(|p| p.1).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    if samples == 0 {
        let mut area = 0.0;
        let mut prev_r = 0.0;
        for (i, &(r, _)) in points.iter().enumerate() {
            if r > prev_r {
                area += (r - prev_r) * env[i];
                prev_r = r;
            }
        }
        return area.clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut k = 0;
    for s in 0..samples {
        let r = s as f64 / (samples - 1) as f64;
        while k < points.len() && points[k].0 < r - 1e-12 {
            k += 1;
        }
        if k < points.len() {
            sum += env[k];
        }
    }
    (sum / samples as f64).clamp(0.0, 1.0)
}

/// Metrics of one (class, threshold, bucket) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellMetrics {
    pub class_id: Option<u32>,
    pub threshold: f64,
    pub bucket: Option<usize>,
    pub ap: f64,
    pub ar: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub num_gt: usize,
    /// Cumulative `(recall, precision)` after each ranked detection.
    pub pr_curve: Vec<(f64, f64)>,
}

/// Class-averaged metrics for one threshold and bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryMetric {
    pub threshold: f64,
    pub bucket: Option<usize>,
    pub ap: f64,
    pub ar: f64,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub num_frames: usize,
    pub num_detections: usize,
    pub num_gt: usize,
    pub cells: Vec<CellMetrics>,
    pub summary: Vec<SummaryMetric>,
}

impl EvalReport {
    pub fn summary_for(&self, threshold: f64, bucket: Option<usize>) -> Option<&SummaryMetric> {
        self.summary
            .iter()
            .find(|s| s.threshold == threshold && s.bucket == bucket)
    }

    /// `(key, value)` pairs such as `("AP25", 0.41)` or `("AR50_2-4", 0.3)`.
    pub fn key_values(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        for s in &self.summary {
            let t = threshold_label(s.threshold);
            let suffix = s
                .bucket
                .map(|b| format!("_{}", bucket_label(self.config.distance_buckets[b])))
                .unwrap_or_default();
            out.push((format!("AP{t}{suffix}"), s.ap));
            out.push((format!("AR{t}{suffix}"), s.ar));
        }
        out
    }
}

/// Ranked match outcome of one detection inside a cell.
struct Ranked<'a> {
    score: f64,
    frame: &'a str,
    index: usize,
    tp: bool,
}

fn rank_order(a: &Ranked, b: &Ranked) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.frame.cmp(b.frame))
        .then_with(|| a.index.cmp(&b.index))
}

struct Item<'a> {
    index: usize,
    class: Option<u32>,
    bucket: Option<usize>,
    score: f64,
    bbox: &'a GravityBox,
    rect: Option<&'a [f64; 4]>,
}

pub fn evaluate(detections: &[Detection], gt: &[FrameGroundTruth], config: &EvalConfig) -> Result<EvalReport, EvalError> {
    config.validate()?;
    let mut gt_frames: BTreeMap<&str, &FrameGroundTruth> = BTreeMap::new();
    for f in gt {
        if gt_frames.insert(f.frame_id.as_str(), f).is_some() {
            return Err(EvalError::DuplicateFrame(f.frame_id.clone()));
        }
    }
    let num_gt: usize = gt.iter().map(|f| f.instances.len()).sum();
    if num_gt == 0 {
        return Err(EvalError::EmptyGroundTruth);
    }

    let class_of = |c: Option<u32>| if config.class_agnostic { None } else { c };
    let mut dets_by_frame: HashMap<&str, Vec<(usize, &Detection)>> = HashMap::new();
    for (i, d) in detections.iter().enumerate() {
        if !gt_frames.contains_key(d.frame_id.as_str()) {
            return Err(EvalError::UnknownFrame(d.frame_id.clone()));
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(EvalError::InvalidDetection {
                frame_id: d.frame_id.clone(),
                index: i,
                reason: format!("score {} outside [0, 1]", d.score),
            });
        }
        if config.iou_kind == IouKind::Rect2d && d.box2d.is_none() {
            return Err(EvalError::InvalidDetection {
                frame_id: d.frame_id.clone(),
                index: i,
                reason: "missing box2d for rectangle IoU".into(),
            });
        }
        dets_by_frame.entry(d.frame_id.as_str()).or_default().push((i, d));
    }

    let classes: BTreeSet<Option<u32>> = gt
        .iter()
        .flat_map(|f| f.instances.iter().map(|g| class_of(g.class_id)))
        .collect();
    let buckets = &config.distance_buckets;
    let scopes: Vec<Option<usize>> = std::iter::once(None).chain((0..buckets.len()).map(Some)).collect();

    // (class, threshold index, scope) -> ranked detections and GT count.
    let mut ranked: BTreeMap<(Option<u32>, usize, usize), Vec<Ranked>> = BTreeMap::new();
    let mut gt_counts: BTreeMap<(Option<u32>, usize), usize> = BTreeMap::new();

    for (frame_id, frame) in &gt_frames {
        let gts: Vec<Item> = frame
            .instances
            .iter()
            .enumerate()
            .map(|(i, g)| Item {
                index: i,
                class: class_of(g.class_id),
                bucket: bucket_of(&g.cut_box, buckets),
                score: 1.0,
                bbox: &g.cut_box,
                rect: Some(&g.box2d),
            })
            .collect();
        let mut dets: Vec<Item> = dets_by_frame
            .get(frame_id)
            .map(|v| {
                v.iter()
                    .enumerate()
                    .map(|(k, (_, d))| Item {
                        index: k,
                        class: class_of(d.class_id),
                        bucket: bucket_of(&d.bbox, buckets),
                        score: d.score,
                        bbox: &d.bbox,
                        rect: d.box2d.as_ref(),
                    })
                    .collect()
            })
            .unwrap_or_default();
        dets.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.index.cmp(&b.index))
        });
        dets.truncate(config.max_detections_per_frame);

        for (si, scope) in scopes.iter().enumerate() {
            let in_scope = |it: &&Item| scope.is_none() || it.bucket == *scope;
            for class in &classes {
                let g: Vec<&Item> = gts.iter().filter(|it| it.class == *class).filter(in_scope).collect();
                let d: Vec<&Item> = dets.iter().filter(|it| it.class == *class).filter(in_scope).collect();
                *gt_counts.entry((*class, si)).or_default() += g.len();
                for (ti, &t) in config.iou_thresholds.iter().enumerate() {
                    let m = greedy_match(
                        &d,
                        &g,
                        |a, b| match config.iou_kind {
                            IouKind::Box3d => iou_gravity(a.bbox, b.bbox),
                            IouKind::Rect2d => iou_2d(a.rect.expect("validated"), b.rect.expect("validated")),
                        },
                        t,
                    );
                    let cell = ranked.entry((*class, ti, si)).or_default();
                    for (det, hit) in d.iter().zip(&m.detections) {
                        cell.push(Ranked {
                            score: det.score,
                            frame: frame_id,
                            index: det.index,
                            tp: hit.is_some(),
                        });
                    }
                }
            }
        }
    }

    let mut cells = Vec::new();
    let mut summary = Vec::new();
    for (ti, &t) in config.iou_thresholds.iter().enumerate() {
        for (si, scope) in scopes.iter().enumerate() {
            let mut aps = Vec::new();
            let mut ars = Vec::new();
            for class in &classes {
                let n = gt_counts.get(&(*class, si)).copied().unwrap_or(0);
                let mut list = ranked.remove(&(*class, ti, si)).unwrap_or_default();
                list.sort_by(rank_order);
                let mut tp = 0usize;
                let mut pr_curve = Vec::with_capacity(list.len());
                for (k, r) in list.iter().enumerate() {
                    tp += r.tp as usize;
                    let recall = if n > 0 { tp as f64 / n as f64 } else { 0.0 };
                    pr_curve.push((recall, tp as f64 / (k + 1) as f64));
                }
                let fp = list.len() - tp;
                let (ap, ar) = if n > 0 {
                    (ap_from_pr(&pr_curve, config.interpolation_points), tp as f64 / n as f64)
                } else {
                    (0.0, 0.0)
                };
                if n > 0 {
                    aps.push(ap);
                    ars.push(ar);
                }
                cells.push(CellMetrics {
                    class_id: *class,
                    threshold: t,
                    bucket: *scope,
                    ap,
                    ar,
                    tp,
                    fp,
                    fn_: n - tp,
                    num_gt: n,
                    pr_curve,
                });
            }
            if !aps.is_empty() {
                let k = aps.len() as f64;
                summary.push(SummaryMetric {
                    threshold: t,
                    bucket: *scope,
                    ap: aps.iter().sum::<f64>() / k,
                    ar: ars.iter().sum::<f64>() / k,
                    classes: aps.len(),
                });
            }
        }
    }

    Ok(EvalReport {
        config: config.clone(),
        num_frames: gt.len(),
        num_detections: detections.len(),
        num_gt,
        cells,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::pipeline::GtInstance;
    use proptest::prelude::*;

    fn gbox(c: [f64; 3], d: f64) -> GravityBox {
        GravityBox::new(Vec3::from(c), Vec3::repeat(d), 0.0).unwrap()
    }

    fn inst(id: &str, b: GravityBox, class_id: Option<u32>) -> GtInstance {
        GtInstance {
            box_id: id.into(),
            class_id,
            cut_box: b,
            box2d: [0.0, 0.0, 10.0, 10.0],
            visible_pixel_fraction: 1.0,
            cut_volume_ratio: 1.0,
        }
    }

    fn det(frame: &str, score: f64, b: GravityBox, class_id: Option<u32>) -> Detection {
        Detection {
            frame_id: frame.into(),
            score,
            bbox: b,
            box2d: None,
            class_id,
        }
    }

    fn self_dets(gt: &[FrameGroundTruth]) -> Vec<Detection> {
        gt.iter()
            .flat_map(|f| f.instances.iter().map(|g| det(&f.frame_id, 1.0, g.cut_box, g.class_id)))
            .collect()
    }

    fn two_gt_fixture() -> (Vec<FrameGroundTruth>, Vec<Detection>) {
        let g1 = gbox([0.0, 0.0, 1.0], 0.5);
        let g2 = gbox([1.0, 0.0, 1.5], 0.5);
        let gt = vec![FrameGroundTruth {
            frame_id: "f0".into(),
            instances: vec![inst("a", g1, None), inst("b", g2, None)],
        }];
        let dets = vec![det("f0", 0.9, g1, None), det("f0", 0.8, gbox([-1.0, 0.0, 1.0], 0.5), None)];
        (gt, dets)
    }

    #[test]
    fn ap_from_pr_examples() {
        assert_eq!(ap_from_pr(&[(1.0, 1.0)], 101), 1.0);
        assert_eq!(ap_from_pr(&[], 101), 0.0);
        assert!((ap_from_pr(&[(0.5, 1.0)], 101) - 51.0 / 101.0).abs() < 1e-15);
        assert!((ap_from_pr(&[(0.5, 1.0)], 101) - 0.5).abs() <= 1.0 / 100.0);
        assert_eq!(ap_from_pr(&[(0.5, 1.0)], 0), 0.5);
        assert_eq!(ap_from_pr(&[(0.0, 0.0), (0.0, 0.0)], 101), 0.0);
        // Envelope lifts the dip at rank 2.
        let pr = [(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)];
        assert!((ap_from_pr(&pr, 0) - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn bucket_examples() {
        let b = &EvalConfig::default().distance_buckets;
        assert_eq!(bucket_of(&gbox([0.0, 0.0, 1.5], 1.0), b), Some(0));
        assert_eq!(bucket_of(&gbox([0.0, 0.0, 3.0], 1.0), b), Some(1));
        assert_eq!(bucket_of(&gbox([3.0, 0.0, 4.5], 1.0), b), None);
        assert_eq!(bucket_of(&gbox([0.0, 0.0, 2.0], 1.0), b), Some(1));
    }

    #[test]
    fn labels() {
        assert_eq!(threshold_label(0.25), "25");
        assert_eq!(threshold_label(0.5), "50");
        assert_eq!(bucket_label((0.0, 2.0)), "0-2");
        assert_eq!(bucket_label((4.0, 5.5)), "4-5.5");
    }

    #[test]
    fn two_gt_fixture_gives_half() {
        let (gt, dets) = two_gt_fixture();
        let exact = EvalConfig {
            interpolation_points: 0,
            ..EvalConfig::default()
        };
        let r = evaluate(&dets, &gt, &exact).unwrap();
        for t in [0.25, 0.5] {
            let s = r.summary_for(t, None).unwrap();
            assert_eq!((s.ap, s.ar), (0.5, 0.5));
        }
        let cell = &r.cells[0];
        assert_eq!(cell.pr_curve, vec![(0.5, 1.0), (0.5, 0.5)]);
        assert_eq!((cell.tp, cell.fp, cell.fn_), (1, 1, 1));

        let r = evaluate(&dets, &gt, &EvalConfig::default()).unwrap();
        let s = r.summary_for(0.25, None).unwrap();
        assert_eq!(s.ar, 0.5);
        assert!((s.ap - 51.0 / 101.0).abs() < 1e-15);
    }

    #[test]
    fn zero_detections() {
        let (gt, _) = two_gt_fixture();
        let r = evaluate(&[], &gt, &EvalConfig::default()).unwrap();
        let s = r.summary_for(0.5, None).unwrap();
        assert_eq!((s.ap, s.ar), (0.0, 0.0));
        assert_eq!(r.cells[0].fn_, 2);
    }

    #[test]
    fn errors() {
        let (gt, _) = two_gt_fixture();
        let bad = vec![det("nope", 0.5, gbox([0.0; 3], 1.0), None)];
        assert!(matches!(evaluate(&bad, &gt, &EvalConfig::default()), Err(EvalError::UnknownFrame(_))));
        let empty = vec![FrameGroundTruth {
            frame_id: "f".into(),
            instances: vec![],
        }];
        assert_eq!(evaluate(&[], &empty, &EvalConfig::default()), Err(EvalError::EmptyGroundTruth));
        let cfg = EvalConfig {
            distance_buckets: vec![(0.0, 3.0), (2.0, 4.0)],
            ..EvalConfig::default()
        };
        assert!(matches!(evaluate(&[], &gt, &cfg), Err(EvalError::InvalidConfig(_))));
        let rect = EvalConfig {
            iou_kind: IouKind::Rect2d,
            ..EvalConfig::default()
        };
        let d = vec![det("f0", 0.5, gbox([0.0; 3], 1.0), None)];
        assert!(matches!(evaluate(&d, &gt, &rect), Err(EvalError::InvalidDetection { .. })));
    }

    #[test]
    fn detection_cap_applies_per_frame() {
        let (gt, _) = two_gt_fixture();
        let g = &gt[0].instances;
        let mut dets: Vec<Detection> = (0..5).map(|i| det("f0", 0.9 - i as f64 * 0.01, gbox([9.0, 9.0, 9.0], 0.1), None)).collect();
        dets.push(det("f0", 0.1, g[0].cut_box, None));
        let cfg = EvalConfig {
            max_detections_per_frame: 5,
            ..EvalConfig::default()
        };
        assert_eq!(evaluate(&dets, &gt, &cfg).unwrap().summary_for(0.5, None).unwrap().ar, 0.0);
        assert_eq!(evaluate(&dets, &gt, &EvalConfig::default()).unwrap().summary_for(0.5, None).unwrap().ar, 0.5);
    }

    #[test]
    fn class_averaging() {
        let a = gbox([0.0, 0.0, 1.0], 0.5);
        let b = gbox([1.0, 0.0, 1.0], 0.5);
        let gt = vec![FrameGroundTruth {
            frame_id: "f".into(),
            instances: vec![inst("a", a, Some(1)), inst("b", b, Some(2))],
        }];
        // Right box, wrong class for b.
        let dets = vec![det("f", 0.9, a, Some(1)), det("f", 0.8, b, Some(1))];
        let r = evaluate(&dets, &gt, &EvalConfig::default()).unwrap();
        let s = r.summary_for(0.5, None).unwrap();
        assert_eq!(s.classes, 2);
        assert_eq!(s.ar, 0.5);
        let agnostic = EvalConfig {
            class_agnostic: true,
            ..EvalConfig::default()
        };
        let s = evaluate(&dets, &gt, &agnostic).unwrap().summary_for(0.5, None).unwrap().clone();
        assert_eq!((s.ap, s.ar, s.classes), (1.0, 1.0, 1));
    }

    #[test]
    fn rect_iou_mode() {
        let (gt, _) = two_gt_fixture();
        let mut d = det("f0", 0.9, gbox([5.0, 5.0, 5.0], 0.1), None);
        d.box2d = Some([0.0, 0.0, 10.0, 10.0]);
        let cfg = EvalConfig {
            iou_kind: IouKind::Rect2d,
            ..EvalConfig::default()
        };
        assert_eq!(evaluate(&[d], &gt, &cfg).unwrap().summary_for(0.5, None).unwrap().ar, 0.5);
    }

    #[test]
    fn bucketed_metrics_only_where_gt_exists() {
        let (gt, dets) = two_gt_fixture();
        let r = evaluate(&dets, &gt, &EvalConfig::default()).unwrap();
        assert!(r.summary_for(0.25, Some(0)).is_some());
        assert!(r.summary_for(0.25, Some(2)).is_none());
        let keys: Vec<String> = r.key_values().into_iter().map(|(k, _)| k).collect();
        assert_eq!(&keys[..2], &["AP25".to_string(), "AR25".to_string()]);
        assert!(keys.contains(&"AR50_0-2".to_string()));
    }

    fn arb_scene() -> impl Strategy<Value = (Vec<FrameGroundTruth>, Vec<Detection>)> {
        let gbox_s = (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(0.2..1.5f64), -3.0..3.0f64)
            .prop_map(|(c, d, y)| GravityBox::new(Vec3::from(c), Vec3::from(d), y).unwrap());
        let frame = (prop::collection::vec((gbox_s.clone(), 0u32..3), 1..6), prop::collection::vec((gbox_s, 0u32..3, 0.0..1.0f64), 0..8));
        prop::collection::vec(frame, 1..4).prop_map(|frames| {
            let mut gt = Vec::new();
            let mut dets = Vec::new();
            for (fi, (gs, ds)) in frames.into_iter().enumerate() {
                let id = format!("f{fi}");
                gt.push(FrameGroundTruth {
                    frame_id: id.clone(),
                    instances: gs.iter().enumerate().map(|(k, (b, c))| inst(&format!("b{k}"), *b, Some(*c))).collect(),
                });
                // Jittered copies of some GT plus random boxes.
                for (k, (b, c)) in gs.iter().enumerate().step_by(2) {
                    let mut j = *b;
                    j.center[0] += 0.1 * k as f64;
                    dets.push(det(&id, 0.5 + 0.1 * k as f64 % 0.5, j, Some(*c)));
                }
                dets.extend(ds.into_iter().map(|(b, c, s)| det(&id, s, b, Some(c))));
            }
            (gt, dets)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn gt_against_itself_is_perfect((gt, _) in arb_scene()) {
            let r = evaluate(&self_dets(&gt), &gt, &EvalConfig::default()).unwrap();
            for s in &r.summary {
                prop_assert_eq!((s.ap, s.ar), (1.0, 1.0));
            }
        }

        #[test]
        fn metrics_non_increasing_in_threshold((gt, dets) in arb_scene()) {
            let cfg = EvalConfig { iou_thresholds: vec![0.1, 0.25, 0.5, 0.75], ..EvalConfig::default() };
            let r = evaluate(&dets, &gt, &cfg).unwrap();
            for w in cfg.iou_thresholds.windows(2) {
                let lo = r.summary_for(w[0], None).unwrap();
                let hi = r.summary_for(w[1], None).unwrap();
                prop_assert!(hi.ar <= lo.ar + 1e-12);
                prop_assert!(hi.ap <= lo.ap + 1e-12);
            }
        }

        #[test]
        fn invariant_to_frame_and_detection_order((gt, dets) in arb_scene()) {
            let cfg = EvalConfig::default();
            let base = evaluate(&dets, &gt, &cfg).unwrap();
            let mut gt_rev = gt.clone();
            gt_rev.reverse();
            let mut dets_rev = dets.clone();
            dets_rev.sort_by(|a, b| b.frame_id.cmp(&a.frame_id));
            let other = evaluate(&dets_rev, &gt_rev, &cfg).unwrap();
            prop_assert_eq!(base.summary, other.summary);
        }

        #[test]
        fn removing_false_positive_never_lowers_ap((gt, dets) in arb_scene()) {
            let cfg = EvalConfig { class_agnostic: true, iou_thresholds: vec![0.5], ..EvalConfig::default() };
            let base = evaluate(&dets, &gt, &cfg).unwrap();
            let ap = base.summary_for(0.5, None).unwrap().ap;
            // A detection overlapping no GT at all is a false positive in every matching.
            let fp = dets.iter().position(|d| {
                gt.iter().find(|f| f.frame_id == d.frame_id).unwrap().instances.iter().all(|g| iou_gravity(&d.bbox, &g.cut_box) == 0.0)
            });
            if let Some(i) = fp {
                let mut fewer = dets.clone();
                fewer.remove(i);
                let ap2 = evaluate(&fewer, &gt, &cfg).unwrap().summary_for(0.5, None).unwrap().ap;
                prop_assert!(ap2 >= ap - 1e-12);
            }
        }
    }
}
