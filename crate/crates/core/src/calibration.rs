//! One-shot ground-truth estimation from a single standing T-pose snapshot.
//!
//! Protocol precondition: the user stands upright at the centre of the play
//! area with both arms fully extended sideways. Nothing here checks the pose
//! beyond rejecting hands that sit on top of the head.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transforms::{GroundTruth, Vec3};

/// Squat depth cannot be observed from one frame; default to the upper bound.
pub const DEFAULT_ASSUMED_DEPTH_M: f64 = 0.913;
/// Midpoint of the voice pitch bounds.
pub const DEFAULT_PITCH_HZ: f64 = 170.0;
/// Hands closer than this (horizontally) to the head are not a T-pose.
pub const MIN_ARM_M: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("degenerate floor plane normal {0:?}")]
    DegenerateNormal([f64; 3]),
    #[error("implausible pose: {0} hand is {1:.3} m from the head")]
    ImplausiblePose(&'static str, f64),
    #[error("invalid snapshot: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloorPlane {
    pub origin: Vec3,
    pub normal: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSnapshot {
    pub head: Vec3,
    pub left_eye: Vec3,
    pub right_eye: Vec3,
    pub left_hand: Vec3,
    pub right_hand: Vec3,
    pub floor: FloorPlane,
    /// Play-area extent along x.
    pub play_width: f64,
    /// Play-area extent along z.
    pub play_length: f64,
}

/// Values that a single snapshot cannot provide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationDefaults {
    pub assumed_depth: f64,
    pub pitch_hz: f64,
    pub right_handed: bool,
}

impl Default for CalibrationDefaults {
    fn default() -> Self {
        Self {
            assumed_depth: DEFAULT_ASSUMED_DEPTH_M,
            pitch_hz: DEFAULT_PITCH_HZ,
            right_handed: true,
        }
    }
}

pub fn calibrate(
    snapshot: &CalibrationSnapshot,
    defaults: &CalibrationDefaults,
) -> Result<GroundTruth, CalibrationError> {
    let n = snapshot.floor.normal;
    let len = n.norm();
    if !(len.is_finite() && len > 1e-9) {
        return Err(CalibrationError::DegenerateNormal(n.to_array()));
    }
    let unit = n.scale(1.0 / len);
    let height = snapshot.head.sub(snapshot.floor.origin).dot(unit).abs();

    let arm_r = snapshot.head.horizontal_distance(snapshot.right_hand);
    let arm_l = snapshot.head.horizontal_distance(snapshot.left_hand);
    if arm_r < MIN_ARM_M {
        return Err(CalibrationError::ImplausiblePose("right", arm_r));
    }
    if arm_l < MIN_ARM_M {
        return Err(CalibrationError::ImplausiblePose("left", arm_l));
    }

    let ipd_mm = snapshot.left_eye.distance(snapshot.right_eye) * 1000.0;
    let truth = GroundTruth::new(
        height,
        arm_r,
        arm_l,
        ipd_mm,
        defaults.pitch_hz,
        defaults.assumed_depth,
        snapshot.play_width,
        snapshot.play_length,
        defaults.right_handed,
    );
    if let Some(field) = truth.invalid_field() {
        return Err(CalibrationError::Invalid(format!(
            "derived {field} is not a positive finite value"
        )));
    }
    Ok(truth)
}

/// The snapshot an ideal T-pose at the room centre would produce.
pub fn tpose_snapshot(truth: &GroundTruth) -> CalibrationSnapshot {
    let head = Vec3::new(0.0, truth.height, 0.0);
    let half_ipd = truth.ipd_mm / 2000.0;
    let shoulder_y = truth.height - 0.25;
    CalibrationSnapshot {
        head,
        left_eye: Vec3::new(-half_ipd, truth.height - 0.05, 0.05),
        right_eye: Vec3::new(half_ipd, truth.height - 0.05, 0.05),
        left_hand: Vec3::new(-truth.arm_l, shoulder_y, 0.0),
        right_hand: Vec3::new(truth.arm_r, shoulder_y, 0.0),
        floor: FloorPlane {
            origin: Vec3::new(0.0, 0.0, 0.0),
            normal: Vec3::new(0.0, 1.0, 0.0),
        },
        play_width: truth.room_width,
        play_length: truth.room_length,
    }
}

pub fn defaults_from(truth: &GroundTruth) -> CalibrationDefaults {
    CalibrationDefaults {
        assumed_depth: truth.squat_depth,
        pitch_hz: truth.pitch_hz,
        right_handed: truth.right_handed,
    }
}
