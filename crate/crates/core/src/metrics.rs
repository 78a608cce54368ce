//! Box overlap and distance metrics.

use crate::geometry::{Box3D, Cuboid, GravityBox, Vec3};
use nalgebra::Vector2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Point2 = Vector2<f64>;

/// Simple polygon with counter-clockwise vertices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polygon2D {
    pub vertices: Vec<Point2>,
}

impl Polygon2D {
    pub fn new(vertices: Vec<Point2>) -> Self {
        Polygon2D { vertices }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Shoelace area; positive for counter-clockwise polygons.
    pub fn signed_area(&self) -> f64 {
        let v = &self.vertices;
        let n = v.len();
        if n < 3 {
            return 0.0;
        }
        0.5 * (0..n).map(|i| v[i].perp(&v[(i + 1) % n])).sum::<f64>()
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }
}

#[inline]
fn side(a: &Point2, b: &Point2, p: &Point2) -> f64 {
    (b - a).perp(&(p - a))
}

/// Sutherland–Hodgman clip of `subject` by the convex, counter-clockwise
/// polygon `clip`.
pub fn convex_clip(subject: &Polygon2D, clip: &Polygon2D) -> Polygon2D {
    let mut out = subject.vertices.clone();
    let cn = clip.vertices.len();
    if cn < 3 {
        return Polygon2D::default();
    }
    let mut input = Vec::with_capacity(out.len() + cn);
    for i in 0..cn {
        if out.is_empty() {
            break;
        }
        let a = clip.vertices[i];
        let b = clip.vertices[(i + 1) % cn];
        std::mem::swap(&mut input, &mut out);
        out.clear();
        let n = input.len();
        for j in 0..n {
            let p = input[j];
            let q = input[(j + 1) % n];
            let sp = side(&a, &b, &p);
            let sq = side(&a, &b, &q);
            if sp >= 0.0 {
                out.push(p);
            }
            if (sp >= 0.0) != (sq >= 0.0) {
                let t = sp / (sp - sq);
                out.push(p + (q - p) * t);
            }
        }
    }
    let poly = Polygon2D::new(out);
    if poly.is_empty() {
        Polygon2D::default()
    } else {
        poly
    }
}

/// Footprint areas below this fraction of the squared length scale count
/// as degenerate.
const DEGENERATE_REL: f64 = 1e-12;

/// Exact IoU of two gravity-aligned boxes in the same frame.
pub fn iou_gravity(a: &GravityBox, b: &GravityBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let vol_a = a.volume();
    let vol_b = b.volume();
    let scale = a.dims.iter().chain(b.dims.iter()).fold(0.0_f64, |m, v| m.max(*v)).powi(3);
    let degen_a = vol_a <= DEGENERATE_REL * scale;
    let degen_b = vol_b <= DEGENERATE_REL * scale;
    if degen_a || degen_b {
        return if degen_a && degen_b && a == b { 1.0 } else { 0.0 };
    }
    let (az0, az1) = a.z_range();
    let (bz0, bz1) = b.z_range();
    let dz = az1.min(bz1) - az0.max(bz0);
    if dz <= 0.0 {
        return 0.0;
    }
    let pa = Polygon2D::new(a.footprint().to_vec());
    let pb = Polygon2D::new(b.footprint().to_vec());
    let inter = convex_clip(&pa, &pb).area() * dz;
    let union = vol_a + vol_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Axis-aligned rectangle IoU for `[x1, y1, x2, y2]` boxes.
pub fn iou_2d(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: &[f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Monte Carlo IoU estimate with its binomial standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McIou {
    pub iou: f64,
    /// Samples that fell in either box.
    pub union_samples: u64,
    pub std_err: f64,
}

/// Estimates the IoU of two arbitrary oriented boxes by sampling their
/// joint axis-aligned bounding volume.
///
/// Samples are jittered on a regular grid (one uniform point per cell), so
/// the estimate is unbiased and never noisier than plain uniform sampling.
/// Deterministic for a fixed seed.
pub fn iou_monte_carlo(a: &Box3D, b: &Box3D, samples: u64, seed: u64) -> McIou {
    let samples = samples.max(1);
    let (lo, hi) = a
        .corners()
        .iter()
        .chain(b.corners().iter())
        .fold((Vec3::repeat(f64::MAX), Vec3::repeat(f64::MIN)), |(lo, hi), c| (lo.inf(c), hi.sup(c)));
    let span = hi - lo;
    let cells = (samples as f64).cbrt().floor().max(1.0) as u64;
    let grid = cells * cells * cells;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ra, ha) = (a.rotation.transpose(), a.half_extents());
    let (rb, hb) = (b.rotation.transpose(), b.half_extents());
    let inside = |r: &nalgebra::Matrix3<f64>, c: &Vec3, h: &Vec3, p: &Vec3| {
        let q = r * (p - c);
        q.x.abs() <= h.x && q.y.abs() <= h.y && q.z.abs() <= h.z
    };
    let (mut n_a, mut n_b, mut n_both) = (0u64, 0u64, 0u64);
    let cellf = cells as f64;
    for i in 0..samples {
        let mut u = Vec3::new(rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
        if i < grid {
            let ix = i % cells;
            let iy = (i / cells) % cells;
            let iz = i / (cells * cells);
            u = (Vec3::new(ix as f64, iy as f64, iz as f64) + u) / cellf;
        }
        let p = lo + span.component_mul(&u);
        let in_a = inside(&ra, &a.center, &ha, &p);
        let in_b = inside(&rb, &b.center, &hb, &p);
        n_a += in_a as u64;
        n_b += in_b as u64;
        n_both += (in_a && in_b) as u64;
    }
    let union = n_a + n_b - n_both;
    if union == 0 {
        return McIou {
            iou: 0.0,
            union_samples: 0,
            std_err: 0.0,
        };
    }
    let p = n_both as f64 / union as f64;
    McIou {
        iou: p,
        union_samples: union,
        std_err: (p * (1.0 - p) / union as f64).sqrt(),
    }
}

/// Symmetric mean nearest-corner distance between two boxes, in meters.
pub fn chamfer_corner_distance<A: Cuboid, B: Cuboid>(a: &A, b: &B) -> f64 {
    let ca = a.corners();
    let cb = b.corners();
    let one_way = |from: &[Vec3; 8], to: &[Vec3; 8]| {
        from.iter()
            .map(|p| to.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / 8.0
    };
    one_way(&ca, &cb) + one_way(&cb, &ca)
}
