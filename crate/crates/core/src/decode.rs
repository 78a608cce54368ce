//! Turning raw box regressions into metric gravity-aligned boxes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{CameraError, CameraFrame};
use crate::depth::DepthMap;
use crate::geometry::{GeometryError, GravityBox, Vec3};

pub const SIGMA_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("depth statistics need at least 2 valid pixels, found {0}")]
    TooFewValidPixels(usize),
    #[error("decoded depth {0} is not positive")]
    NonPositiveDepth(f64),
    #[error("decoded dimensions {0:?} are not positive")]
    NonPositiveDims([f64; 3]),
    #[error("camera has no gravity rotation")]
    MissingGravity,
    #[error("prediction has non-finite fields")]
    NonFinite,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl DecodeError {
    /// Whether the prediction itself is unusable, as opposed to the inputs
    /// around it.
    pub fn is_rejection(&self) -> bool {
        matches!(self, DecodeError::NonPositiveDepth(_) | DecodeError::NonPositiveDims(_) | DecodeError::NonFinite)
    }
}

/// Affine depth normalization `(mu, sigma)` in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub mu: f64,
    pub sigma: f64,
}

impl DepthStats {
    pub const IDENTITY: DepthStats = DepthStats { mu: 0.0, sigma: 1.0 };
}

/// Mean and population standard deviation of the valid pixels, with sigma
/// clamped to [`SIGMA_FLOOR`].
pub fn depth_stats(depth: &DepthMap) -> Result<DepthStats, DecodeError> {
    let valid: Vec<f64> = depth.values().iter().filter(|v| **v > 0.0).map(|v| *v as f64).collect();
    if valid.len() < 2 {
        return Err(DecodeError::TooFewValidPixels(valid.len()));
    }
    let n = valid.len() as f64;
    let mu = valid.iter().sum::<f64>() / n;
    let var = valid.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    Ok(DepthStats {
        mu,
        sigma: var.sqrt().max(SIGMA_FLOOR),
    })
}

/// Network output for one box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawPrediction {
    /// Projected 3D center, in pixels.
    pub u: f64,
    pub v: f64,
    /// Center depth; meters, or normalized units when stats are applied.
    pub z: f64,
    pub dims: [f64; 3],
    pub yaw: f64,
    pub score: f64,
}

/// Decodes a prediction into the camera's gravity-aligned frame.
///
/// With stats, `z' = sigma * z + mu` and `dims' = sigma * dims`.
pub fn decode(pred: &RawPrediction, camera: &CameraFrame, stats: Option<&DepthStats>) -> Result<GravityBox, DecodeError> {
    let finite = [pred.u, pred.v, pred.z, pred.yaw, pred.dims[0], pred.dims[1], pred.dims[2]]
        .iter()
        .all(|v| v.is_finite());
    if !finite {
        return Err(DecodeError::NonFinite);
    }
    let to_gravity = camera.camera_to_gravity().ok_or(DecodeError::MissingGravity)?;
    let (z, dims) = match stats {
        Some(s) => (s.sigma * pred.z + s.mu, pred.dims.map(|d| s.sigma * d)),
        None => (pred.z, pred.dims),
    };
    if !(z > 0.0) {
        return Err(DecodeError::NonPositiveDepth(z));
    }
    if dims.iter().any(|d| !(*d > 0.0)) {
        return Err(DecodeError::NonPositiveDims(dims));
    }
    let center = to_gravity * camera.backproject(pred.u, pred.v, z)?;
    Ok(GravityBox::new(center, Vec3::from(dims), pred.yaw)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{Distortion, Intrinsics};
    use crate::geometry::{rot_x, RigidTransform};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn camera(distortion: Distortion) -> CameraFrame {
        let k = Intrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            width: 640,
            height: 480,
        };
        // Upright camera: gravity +z is camera -y.
        CameraFrame::new(k, distortion, RigidTransform::identity(), Some(rot_x(-FRAC_PI_2).transpose())).unwrap()
    }

    fn pred(u: f64, v: f64, z: f64, d: f64) -> RawPrediction {
        RawPrediction {
            u,
            v,
            z,
            dims: [d; 3],
            yaw: 0.3,
            score: 0.9,
        }
    }

    #[test]
    fn depth_stats_examples() {
        let s = depth_stats(&DepthMap::new(2, 1, vec![1.0, 3.0]).unwrap()).unwrap();
        assert_eq!((s.mu, s.sigma), (2.0, 1.0));
        let s = depth_stats(&DepthMap::constant(4, 4, 2.0)).unwrap();
        assert_eq!((s.mu, s.sigma), (2.0, SIGMA_FLOOR));
        let s = depth_stats(&DepthMap::new(4, 1, vec![0.0, 1.0, 0.0, 3.0]).unwrap()).unwrap();
        assert_eq!((s.mu, s.sigma), (2.0, 1.0));
        assert_eq!(depth_stats(&DepthMap::new(2, 1, vec![0.0, 3.0]).unwrap()), Err(DecodeError::TooFewValidPixels(1)));
    }

    #[test]
    fn affine_rescale_by_hand() {
        let cam = camera(Distortion::default());
        let stats = DepthStats { mu: 2.0, sigma: 0.5 };
        let b = decode(&pred(320.0, 240.0, 1.0, 1.0), &cam, Some(&stats)).unwrap();
        assert_eq!(b.dims, [0.5; 3]);
        // Principal ray at z' = 2.5 points along gravity-frame +y.
        assert_abs_diff_eq!(b.center()[1], 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(b.center()[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.center()[2], 0.0, epsilon = 1e-15);
        assert_eq!(b.yaw, 0.3);
    }

    #[test]
    fn principal_point_before_gravity_alignment() {
        let cam = camera(Distortion::default());
        let b = decode(&pred(320.0, 240.0, 2.0, 1.0), &cam, None).unwrap();
        let c = cam.gravity_to_camera.unwrap() * b.center();
        assert_abs_diff_eq!(c, Vec3::new(0.0, 0.0, 2.0), epsilon = 1e-15);
    }

    #[test]
    fn rejections_and_errors() {
        let cam = camera(Distortion::default());
        let stats = DepthStats { mu: -1.0, sigma: 0.5 };
        let e = decode(&pred(320.0, 240.0, 1.0, 1.0), &cam, Some(&stats)).unwrap_err();
        assert!(e.is_rejection());
        let e = decode(&pred(320.0, 240.0, 1.0, -1.0), &cam, None).unwrap_err();
        assert!(e.is_rejection());
        let mut no_g = cam.clone();
        no_g.gravity_to_camera = None;
        assert_eq!(decode(&pred(320.0, 240.0, 1.0, 1.0), &no_g, None), Err(DecodeError::MissingGravity));
        assert!(!DecodeError::MissingGravity.is_rejection());
    }

    fn distortion() -> Distortion {
        Distortion {
            k1: 0.08,
            k2: -0.02,
            k3: 0.005,
            p1: 0.001,
            p2: -0.0015,
        }
    }

    proptest! {
        #[test]
        fn identity_stats_match_plain_decode(u in 0.0..640.0f64, v in 0.0..480.0f64, z in 0.2..6.0f64, d in 0.1..3.0f64) {
            let cam = camera(distortion());
            let p = pred(u, v, z, d);
            let a = decode(&p, &cam, None).unwrap();
            let b = decode(&p, &cam, Some(&DepthStats::IDENTITY)).unwrap();
            for k in 0..3 {
                prop_assert!((a.center[k] - b.center[k]).abs() <= 1e-12);
                prop_assert!((a.dims[k] - b.dims[k]).abs() <= 1e-12);
            }
        }

        #[test]
        fn decoded_center_reprojects(u in 0.0..640.0f64, v in 0.0..480.0f64, z in 0.2..6.0f64) {
            let cam = camera(distortion());
            let b = decode(&pred(u, v, z, 1.0), &cam, None).unwrap();
            let p = cam.project(&(cam.gravity_to_camera.unwrap() * b.center())).unwrap();
            prop_assert!((p.x - u).abs() < 1e-6 && (p.y - v).abs() < 1e-6);
        }

        #[test]
        fn stats_scale_with_depth(vals in prop::collection::vec(0.5..4.0f32, 4..40), e in -3i32..4, z in -1.0..1.0f64) {
            let k = 2.0f64.powi(e);
            let a = DepthMap::new(vals.len() as u32, 1, vals.clone()).unwrap();
            let b = DepthMap::new(vals.len() as u32, 1, vals.iter().map(|v| v * k as f32).collect()).unwrap();
            let (sa, sb) = (depth_stats(&a).unwrap(), depth_stats(&b).unwrap());
            prop_assume!(sa.sigma > SIGMA_FLOOR && sb.sigma > SIGMA_FLOOR);
            prop_assert_eq!(sb.mu, k * sa.mu);
            prop_assert_eq!(sb.sigma, k * sa.sigma);
            prop_assert_eq!(sb.sigma * z + sb.mu, k * (sa.sigma * z + sa.mu));
        }
    }
}
