//! Per-frame coordinate transforms.
//!
//! Coordinates follow a left-handed, Y-up convention with the play-space
//! origin at the centre of the room floor. Additive defenses (IPD, voice
//! pitch) shift a static quantity by a fixed offset. Multiplicative defenses
//! rescale a range so that the zero reference maps to itself and the
//! ground-truth extreme maps to the session's noisy value:
//!
//! | defense  | zero reference            | extreme             | maps to        |
//! |----------|---------------------------|---------------------|----------------|
//! | height   | `y_h = 0`                 | `y_h = height`      | `height'`      |
//! | depth    | `y_h = height`            | `y_h = height-depth`| `height-depth'`|
//! | wingspan | controllers coincide      | full T-pose         | `span'`        |
//! | arms     | controllers coincide      | full T-pose         | `ratio'`       |
//! | room     | head at room centre       | head at a wall      | `W'/2`, `L'/2` |

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("invalid transform parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }

    pub fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn scale(self, k: f64) -> Vec3 {
        Vec3::new(self.x * k, self.y * k, self.z * k)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec3) -> f64 {
        self.sub(o).norm()
    }

    /// Distance in the horizontal (x, z) plane.
    pub fn horizontal_distance(self, o: Vec3) -> f64 {
        (self.x - o.x).hypot(self.z - o.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Stimulus,
    Response,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hand {
    Left,
    Right,
    None,
}

impl Hand {
    pub fn swapped(self) -> Hand {
        match self {
            Hand::Left => Hand::Right,
            Hand::Right => Hand::Left,
            Hand::None => Hand::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEvent {
    pub kind: EventKind,
    pub hand: Hand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eyes {
    pub left: Vec3,
    pub right: Vec3,
}

impl Eyes {
    /// Eye gap in millimetres.
    pub fn gap_mm(&self) -> f64 {
        self.left.distance(self.right) * 1000.0
    }
}

/// One timestamped telemetry sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryFrame {
    /// Milliseconds since session start.
    pub t_ms: f64,
    pub head: Vec3,
    pub right: Vec3,
    pub left: Vec3,
    pub eyes: Option<Eyes>,
    pub pitch_hz: Option<f64>,
    pub event: Option<FrameEvent>,
    /// Round-trip time sidecar for network simulation.
    pub rtt_ms: Option<f64>,
}

impl TelemetryFrame {
    pub fn new(t_ms: f64, head: Vec3, right: Vec3, left: Vec3) -> Self {
        Self {
            t_ms,
            head,
            right,
            left,
            eyes: None,
            pitch_hz: None,
            event: None,
            rtt_ms: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t_ms.is_finite()
            && self.head.is_finite()
            && self.right.is_finite()
            && self.left.is_finite()
            && self
                .eyes
                .map_or(true, |e| e.left.is_finite() && e.right.is_finite())
            && self.pitch_hz.map_or(true, f64::is_finite)
            && self.rtt_ms.map_or(true, f64::is_finite)
    }

    fn shift_y(&mut self, dy: f64) {
        self.head.y += dy;
        self.right.y += dy;
        self.left.y += dy;
        if let Some(e) = self.eyes.as_mut() {
            e.left.y += dy;
            e.right.y += dy;
        }
    }

    fn shift_xz(&mut self, dx: f64, dz: f64) {
        for p in [&mut self.head, &mut self.right, &mut self.left] {
            p.x += dx;
            p.z += dz;
        }
        if let Some(e) = self.eyes.as_mut() {
            e.left.x += dx;
            e.left.z += dz;
            e.right.x += dx;
            e.right.z += dz;
        }
    }
}

/// Calibrated sensitive attributes of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// metres
    pub height: f64,
    pub arm_r: f64,
    pub arm_l: f64,
    pub wingspan: f64,
    /// Right arm as a fraction of wingspan.
    pub arm_ratio: f64,
    pub ipd_mm: f64,
    pub pitch_hz: f64,
    pub squat_depth: f64,
    pub room_width: f64,
    pub room_length: f64,
    pub right_handed: bool,
}

impl GroundTruth {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        height: f64,
        arm_r: f64,
        arm_l: f64,
        ipd_mm: f64,
        pitch_hz: f64,
        squat_depth: f64,
        room_width: f64,
        room_length: f64,
        right_handed: bool,
    ) -> Self {
        let wingspan = arm_r + arm_l;
        Self {
            height,
            arm_r,
            arm_l,
            wingspan,
            arm_ratio: arm_r / wingspan,
            ipd_mm,
            pitch_hz,
            squat_depth,
            room_width,
            room_length,
            right_handed,
        }
    }

    /// Name of the first field that is non-finite, non-positive, or
    /// inconsistent with its siblings.
    pub fn invalid_field(&self) -> Option<&'static str> {
        let positive = [
            ("height", self.height),
            ("arm_r", self.arm_r),
            ("arm_l", self.arm_l),
            ("wingspan", self.wingspan),
            ("ipd_mm", self.ipd_mm),
            ("pitch_hz", self.pitch_hz),
            ("squat_depth", self.squat_depth),
            ("room_width", self.room_width),
            ("room_length", self.room_length),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Some(name);
            }
        }
        if (self.wingspan - (self.arm_r + self.arm_l)).abs() > 1e-9 {
            return Some("wingspan");
        }
        if !(self.arm_ratio > 0.0 && self.arm_ratio < 1.0)
            || (self.arm_ratio - self.arm_r / self.wingspan).abs() > 1e-9
        {
            return Some("arm_ratio");
        }
        None
    }

    pub fn retained(&self) -> RetainedTruth {
        RetainedTruth {
            height: self.height,
            squat_depth: self.squat_depth,
            arm_r: self.arm_r,
            arm_l: self.arm_l,
            room_width: self.room_width,
            room_length: self.room_length,
        }
    }
}

/// The subset of ground truth the per-frame transforms need after setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetainedTruth {
    pub height: f64,
    pub squat_depth: f64,
    pub arm_r: f64,
    pub arm_l: f64,
    pub room_width: f64,
    pub room_length: f64,
}

impl RetainedTruth {
    pub fn wingspan(&self) -> f64 {
        self.arm_r + self.arm_l
    }

    pub fn arm_ratio(&self) -> f64 {
        self.arm_r / self.wingspan()
    }
}

/// Noisy attribute values frozen for one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionOffsets {
    pub height: f64,
    pub depth: f64,
    pub span: f64,
    pub ratio: f64,
    pub room_width: f64,
    pub room_length: f64,
    pub ipd_offset_mm: f64,
    pub pitch_offset_hz: f64,
    pub mirrored: bool,
}

impl SessionOffsets {
    /// Offsets that leave every frame unchanged.
    pub fn identity(truth: &RetainedTruth) -> Self {
        Self {
            height: truth.height,
            depth: truth.squat_depth,
            span: truth.wingspan(),
            ratio: truth.arm_ratio(),
            room_width: truth.room_width,
            room_length: truth.room_length,
            ipd_offset_mm: 0.0,
            pitch_offset_hz: 0.0,
            mirrored: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarDecomposition {
    pub d_r: f64,
    pub d_l: f64,
    pub alpha_r: f64,
    pub alpha_l: f64,
}

fn angle(dx: f64, dz: f64) -> f64 {
    if dx == 0.0 && dz == 0.0 {
        return 0.0;
    }
    let a = dz.atan2(dx);
    // keep the range half-open at -pi
    if a == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        a
    }
}

/// Split the controllers into radial distance and heading about their midpoint.
pub fn polar_transform(x_r: f64, z_r: f64, x_l: f64, z_l: f64) -> PolarDecomposition {
    let mx = (x_r + x_l) / 2.0;
    let mz = (z_r + z_l) / 2.0;
    let (rx, rz) = (x_r - mx, z_r - mz);
    let (lx, lz) = (x_l - mx, z_l - mz);
    PolarDecomposition {
        d_r: rx.hypot(rz),
        d_l: lx.hypot(lz),
        alpha_r: angle(rx, rz),
        alpha_l: angle(lx, lz),
    }
}

/// Shift the eyes apart symmetrically about their midpoint by `ipd_offset_mm`.
/// Returns the frame and whether eyes were present.
pub fn apply_ipd(frame: &TelemetryFrame, offsets: &SessionOffsets) -> (TelemetryFrame, bool) {
    let mut out = frame.clone();
    let Some(eyes) = frame.eyes else {
        return (out, false);
    };
    if offsets.ipd_offset_mm == 0.0 {
        return (out, true);
    }
    let mid = eyes.left.add(eyes.right).scale(0.5);
    let axis = eyes.right.sub(eyes.left);
    let gap = axis.norm();
    let dir = if gap > 0.0 {
        axis.scale(1.0 / gap)
    } else {
        Vec3::new(1.0, 0.0, 0.0)
    };
    let new_gap = (gap + offsets.ipd_offset_mm / 1000.0).max(0.0);
    out.eyes = Some(Eyes {
        left: mid.sub(dir.scale(new_gap / 2.0)),
        right: mid.add(dir.scale(new_gap / 2.0)),
    });
    (out, true)
}

pub fn apply_pitch(frame: &TelemetryFrame, offsets: &SessionOffsets) -> (TelemetryFrame, bool) {
    let mut out = frame.clone();
    match frame.pitch_hz {
        Some(p) => {
            out.pitch_hz = Some(p + offsets.pitch_offset_hz);
            (out, true)
        }
        None => (out, false),
    }
}

/// Vertical shift applied by the height defense at head height `y_h`.
pub fn height_offset(y_h: f64, truth: &RetainedTruth, offsets: &SessionOffsets) -> f64 {
    y_h * (offsets.height / truth.height) - y_h
}

/// Vertical shift applied by the squat-depth defense at head height `y_h`.
pub fn depth_offset(y_h: f64, truth: &RetainedTruth, offsets: &SessionOffsets) -> f64 {
    (truth.height - ((truth.height - y_h) / truth.squat_depth) * offsets.depth) - y_h
}

/// Vertical shift when height and depth defenses are both active.
///
/// The depth rescale is evaluated in the height-defended frame, whose standing
/// height is `height'` and whose squat depth is `depth * height'/height`. This
/// collapses to `height' - (height - y_h) * depth'/depth`, so a standing head
/// reads `height'` and the squat bottom reads `height' - depth'`.
pub fn combined_vertical_offset(y_h: f64, truth: &RetainedTruth, offsets: &SessionOffsets) -> f64 {
    offsets.height - (truth.height - y_h) * offsets.depth / truth.squat_depth - y_h
}

pub fn apply_height(
    frame: &TelemetryFrame,
    truth: &RetainedTruth,
    offsets: &SessionOffsets,
) -> TelemetryFrame {
    let mut out = frame.clone();
    out.shift_y(height_offset(frame.head.y, truth, offsets));
    out
}

pub fn apply_depth(
    frame: &TelemetryFrame,
    truth: &RetainedTruth,
    offsets: &SessionOffsets,
) -> TelemetryFrame {
    let mut out = frame.clone();
    out.shift_y(depth_offset(frame.head.y, truth, offsets));
    out
}

/// Scale each controller's distance from the controller midpoint.
fn radial_scale(frame: &TelemetryFrame, scale_r: f64, scale_l: f64) -> TelemetryFrame {
    let mut out = frame.clone();
    let p = polar_transform(frame.right.x, frame.right.z, frame.left.x, frame.left.z);
    let off_r = p.d_r * scale_r - p.d_r;
    let off_l = p.d_l * scale_l - p.d_l;
    out.right.x += off_r * p.alpha_r.cos();
    out.right.z += off_r * p.alpha_r.sin();
    out.left.x += off_l * p.alpha_l.cos();
    out.left.z += off_l * p.alpha_l.sin();
    out
}

/// Per-arm radial scale factors `(right, left)` of the wingspan defense.
///
/// Distances are measured from the controller midpoint, so at full extension
/// each arm sits at half the wingspan whatever its own length. Dividing by
/// that keeps the extended separation exactly `span'`.
pub fn wingspan_scales(truth: &RetainedTruth, offsets: &SessionOffsets) -> (f64, f64) {
    let s = offsets.span / truth.wingspan();
    (s, s)
}

pub fn apply_wingspan(
    frame: &TelemetryFrame,
    truth: &RetainedTruth,
    offsets: &SessionOffsets,
) -> TelemetryFrame {
    let (sr, sl) = wingspan_scales(truth, offsets);
    radial_scale(frame, sr, sl)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmRatioMode {
    /// Left-arm factor `span / ratio'`, exactly as originally published.
    Literal,
    /// Left-arm factor `span * (1 - ratio')`, preserving total span.
    #[default]
    Corrected,
}

/// Per-arm radial scale factors `(right, left)` of the arm-ratio defense.
pub fn arm_ratio_scales(
    truth: &RetainedTruth,
    offsets: &SessionOffsets,
    mode: ArmRatioMode,
) -> Result<(f64, f64), TransformError> {
    let ratio = offsets.ratio;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(TransformError::InvalidParams(format!(
            "noisy arm ratio must be positive, got {ratio}"
        )));
    }
    let span = truth.wingspan();
    let right = span * ratio / truth.arm_r;
    let left = match mode {
        ArmRatioMode::Literal => span * (1.0 / ratio) / truth.arm_l,
        ArmRatioMode::Corrected => {
            if ratio >= 1.0 {
                return Err(TransformError::InvalidParams(format!(
                    "noisy arm ratio must be below 1 in corrected mode, got {ratio}"
                )));
            }
            span * (1.0 - ratio) / truth.arm_l
        }
    };
    Ok((right, left))
}

pub fn apply_arm_ratio(
    frame: &TelemetryFrame,
    truth: &RetainedTruth,
    offsets: &SessionOffsets,
    mode: ArmRatioMode,
) -> Result<TelemetryFrame, TransformError> {
    let (sr, sl) = arm_ratio_scales(truth, offsets, mode)?;
    Ok(radial_scale(frame, sr, sl))
}

pub fn apply_room(
    frame: &TelemetryFrame,
    truth: &RetainedTruth,
    offsets: &SessionOffsets,
) -> TelemetryFrame {
    let mut out = frame.clone();
    let (x_h, z_h) = (frame.head.x, frame.head.z);
    let off_x = (x_h / truth.room_width) * offsets.room_width - x_h;
    let off_z = (z_h / truth.room_length) * offsets.room_length - z_h;
    out.shift_xz(off_x, off_z);
    out
}

/// Reflect across the x = 0 plane and swap left/right channels and labels.
pub fn apply_mirror(frame: &TelemetryFrame, offsets: &SessionOffsets) -> TelemetryFrame {
    if !offsets.mirrored {
        return frame.clone();
    }
    let flip = |p: Vec3| Vec3::new(-p.x, p.y, p.z);
    let mut out = frame.clone();
    out.head = flip(frame.head);
    out.right = flip(frame.left);
    out.left = flip(frame.right);
    out.eyes = frame.eyes.map(|e| Eyes {
        left: flip(e.right),
        right: flip(e.left),
    });
    out.event = frame.event.map(|ev| FrameEvent {
        kind: ev.kind,
        hand: ev.hand.swapped(),
    });
    out
}

/// Which position/channel defenses are active for a frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ActiveDefenses {
    pub room: bool,
    pub height: bool,
    pub depth: bool,
    pub wingspan: bool,
    pub arm_ratio: bool,
    pub mirror: bool,
    pub ipd: bool,
    pub pitch: bool,
}

impl ActiveDefenses {
    pub fn all() -> Self {
        Self {
            room: true,
            height: true,
            depth: true,
            wingspan: true,
            arm_ratio: true,
            mirror: true,
            ipd: true,
            pitch: true,
        }
    }
}

/// Apply the active defenses in hierarchy order:
/// room, height/depth, wingspan, arm ratio, mirror. IPD and pitch are
/// independent channels.
pub fn compose(
    frame: &TelemetryFrame,
    truth: &RetainedTruth,
    offsets: &SessionOffsets,
    active: &ActiveDefenses,
    mode: ArmRatioMode,
) -> Result<TelemetryFrame, TransformError> {
    let mut f = if active.room {
        apply_room(frame, truth, offsets)
    } else {
        frame.clone()
    };
    let y_h = f.head.y;
    let dy = match (active.height, active.depth) {
        (true, true) => combined_vertical_offset(y_h, truth, offsets),
        (true, false) => height_offset(y_h, truth, offsets),
        (false, true) => depth_offset(y_h, truth, offsets),
        (false, false) => 0.0,
    };
    if dy != 0.0 {
        f.shift_y(dy);
    }
    if active.wingspan {
        f = apply_wingspan(&f, truth, offsets);
    }
    if active.arm_ratio {
        f = apply_arm_ratio(&f, truth, offsets, mode)?;
    }
    if active.ipd {
        f = apply_ipd(&f, offsets).0;
    }
    if active.pitch {
        f = apply_pitch(&f, offsets).0;
    }
    if active.mirror {
        f = apply_mirror(&f, offsets);
    }
    Ok(f)
}
