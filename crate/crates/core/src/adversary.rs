//! Attribute-harvesting and identification attacks.
//!
//! Every estimator is a pure function of a finished frame stream.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netshield::median_interval_ms;
use crate::transforms::{EventKind, GroundTruth, Hand, TelemetryFrame};

pub const MIN_HEIGHT_FRAMES: usize = 100;
/// Arms whose reach differs by no more than this are reported as a tie.
pub const ARM_TIE_M: f64 = 0.001;
/// Signal propagation speed in km per ms (speed of light, rounded).
pub const PROPAGATION_KM_PER_MS: f64 = 300.0;
pub const LOW_CONFIDENCE_RMS_MS: f64 = 0.5;
pub const LOW_CONFIDENCE_CONDITION: f64 = 1e-4;
const COLLINEAR_RATIO: f64 = 1e-9;
const GRID_STEPS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },
    #[error("stream has no `{0}` data")]
    MissingChannel(&'static str),
    #[error("no {0} events in stream")]
    NoEvents(&'static str),
    #[error("need at least 3 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("anchors are collinear or coincident")]
    DegenerateGeometry,
    #[error("probe shares no features with the population")]
    Unidentifiable,
    #[error("population is empty")]
    EmptyPopulation,
    #[error("invalid input: {0}")]
    Invalid(String),
}

fn need(frames: &[TelemetryFrame], n: usize) -> Result<(), AttackError> {
    if frames.len() < n {
        Err(AttackError::TooFewFrames {
            needed: n,
            got: frames.len(),
        })
    } else {
        Ok(())
    }
}

/// Linear-interpolated percentile, `p` in [0, 100].
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

pub fn median(values: &[f64]) -> Option<f64> {
    percentile(values, 50.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightMethod {
    #[default]
    Percentile99,
    Max,
}

pub fn estimate_height(frames: &[TelemetryFrame]) -> Result<f64, AttackError> {
    estimate_height_with(frames, HeightMethod::Percentile99)
}

pub fn estimate_height_with(frames: &[TelemetryFrame], method: HeightMethod) -> Result<f64, AttackError> {
    need(frames, MIN_HEIGHT_FRAMES)?;
    let ys: Vec<f64> = frames.iter().map(|f| f.head.y).collect();
    Ok(match method {
        HeightMethod::Percentile99 => percentile(&ys, 99.0).expect("non-empty"),
        HeightMethod::Max => ys.iter().copied().fold(f64::MIN, f64::max),
    })
}

/// Largest horizontal controller separation.
pub fn estimate_wingspan(frames: &[TelemetryFrame]) -> Result<f64, AttackError> {
    need(frames, 1)?;
    Ok(frames
        .iter()
        .map(|f| f.right.horizontal_distance(f.left))
        .fold(0.0, f64::max))
}

fn range(values: impl Iterator<Item = f64>) -> f64 {
    let (lo, hi) = values.fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
    hi - lo
}

/// Extent of head travel along x and z.
pub fn estimate_room(frames: &[TelemetryFrame]) -> Result<(f64, f64), AttackError> {
    need(frames, 1)?;
    Ok((
        range(frames.iter().map(|f| f.head.x)),
        range(frames.iter().map(|f| f.head.z)),
    ))
}

pub fn estimate_depth(frames: &[TelemetryFrame], height_est: f64) -> Result<f64, AttackError> {
    need(frames, 1)?;
    let lowest = frames.iter().map(|f| f.head.y).fold(f64::MAX, f64::min);
    Ok(height_est - lowest)
}

/// Median eye gap in millimetres.
pub fn estimate_ipd(frames: &[TelemetryFrame]) -> Result<f64, AttackError> {
    let gaps: Vec<f64> = frames.iter().filter_map(|f| f.eyes.map(|e| e.gap_mm())).collect();
    median(&gaps).ok_or(AttackError::MissingChannel("eyes"))
}

pub fn estimate_pitch(frames: &[TelemetryFrame]) -> Result<f64, AttackError> {
    let p: Vec<f64> = frames.iter().filter_map(|f| f.pitch_hz).collect();
    median(&p).ok_or(AttackError::MissingChannel("pitch_hz"))
}

/// Majority hand over interaction events; `true` means right-handed.
/// An even split is read as right-handed, the population majority.
pub fn estimate_handedness(frames: &[TelemetryFrame]) -> Result<bool, AttackError> {
    let (mut right, mut left) = (0usize, 0usize);
    for ev in frames.iter().filter_map(|f| f.event) {
        if ev.kind != EventKind::Interaction {
            continue;
        }
        match ev.hand {
            Hand::Right => right += 1,
            Hand::Left => left += 1,
            Hand::None => {}
        }
    }
    if right + left == 0 {
        return Err(AttackError::NoEvents("interaction"));
    }
    Ok(right >= left)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LongerArm {
    Left,
    Right,
    Tie,
}

impl LongerArm {
    pub fn from_lengths(right: f64, left: f64) -> Self {
        if (right - left).abs() <= ARM_TIE_M {
            LongerArm::Tie
        } else if right > left {
            LongerArm::Right
        } else {
            LongerArm::Left
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LongerArm::Left => "left",
            LongerArm::Right => "right",
            LongerArm::Tie => "tie",
        }
    }
}

/// Maximum horizontal reach of each controller from the head: `(right, left)`.
pub fn arm_reach(frames: &[TelemetryFrame]) -> Result<(f64, f64), AttackError> {
    need(frames, 1)?;
    Ok(frames.iter().fold((0.0f64, 0.0f64), |(r, l), f| {
        (
            r.max(f.right.horizontal_distance(f.head)),
            l.max(f.left.horizontal_distance(f.head)),
        )
    }))
}

pub fn estimate_longer_arm(frames: &[TelemetryFrame]) -> Result<LongerArm, AttackError> {
    let (r, l) = arm_reach(frames)?;
    Ok(LongerArm::from_lengths(r, l))
}

/// Right-arm reach as a fraction of total reach.
pub fn estimate_arm_ratio(frames: &[TelemetryFrame]) -> Result<f64, AttackError> {
    let (r, l) = arm_reach(frames)?;
    if r + l <= 0.0 {
        return Err(AttackError::Invalid("controllers never leave the head".into()));
    }
    Ok(r / (r + l))
}

pub fn estimate_refresh_rate(frames: &[TelemetryFrame]) -> Result<f64, AttackError> {
    need(frames, 2)?;
    let dt = median_interval_ms(frames).expect("two frames");
    if dt <= 0.0 {
        return Err(AttackError::Invalid("non-increasing timestamps".into()));
    }
    Ok(1000.0 / dt)
}

/// Mean delay from each stimulus to the next response, in ms.
pub fn estimate_reaction(frames: &[TelemetryFrame]) -> Result<f64, AttackError> {
    let mut pending: Option<f64> = None;
    let mut delays = Vec::new();
    for f in frames {
        let Some(ev) = f.event else { continue };
        match ev.kind {
            EventKind::Stimulus => pending = Some(f.t_ms),
            EventKind::Response => {
                if let Some(t0) = pending.take() {
                    delays.push(f.t_ms - t0);
                }
            }
            EventKind::Interaction => {}
        }
    }
    if delays.is_empty() {
        return Err(AttackError::NoEvents("stimulus/response"));
    }
    Ok(delays.iter().sum::<f64>() / delays.len() as f64)
}

// ---- geolocation ----

/// How an RTT maps to distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeModel {
    /// `rtt = 2 * distance / propagation`
    #[default]
    RoundTrip,
    /// `rtt = distance / propagation`
    OneWay,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoModel {
    pub propagation_km_per_ms: f64,
    pub range: RangeModel,
}

impl Default for GeoModel {
    fn default() -> Self {
        Self {
            propagation_km_per_ms: PROPAGATION_KM_PER_MS,
            range: RangeModel::RoundTrip,
        }
    }
}

impl GeoModel {
    fn legs(&self) -> f64 {
        match self.range {
            RangeModel::RoundTrip => 2.0,
            RangeModel::OneWay => 1.0,
        }
    }

    pub fn rtt_for_distance(&self, km: f64) -> f64 {
        self.legs() * km / self.propagation_km_per_ms
    }

    pub fn distance_for_rtt(&self, rtt_ms: f64) -> f64 {
        rtt_ms * self.propagation_km_per_ms / self.legs()
    }

    /// Position shift per millisecond of range error on one anchor.
    pub fn km_per_ms(&self) -> f64 {
        self.distance_for_rtt(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub position_km: [f64; 2],
    pub rtt_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoFix {
    pub position_km: [f64; 2],
    pub rms_residual_ms: f64,
    pub low_confidence: bool,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
fn sym_eigen(a: f64, b: f64, d: f64) -> (f64, f64) {
    let mean = (a + d) / 2.0;
    let r = (((a - d) / 2.0).powi(2) + b * b).sqrt();
    (mean - r, mean + r)
}

fn cost(p: [f64; 2], anchors: &[Anchor], model: &GeoModel) -> f64 {
    anchors
        .iter()
        .map(|a| (model.rtt_for_distance(dist2(p, a.position_km)) - a.rtt_ms).powi(2))
        .sum()
}

/// Least-squares position from anchor RTTs: coarse grid, then Levenberg-Marquardt.
pub fn geolocate(anchors: &[Anchor], model: &GeoModel) -> Result<GeoFix, AttackError> {
    if anchors.len() < 3 {
        return Err(AttackError::TooFewAnchors(anchors.len()));
    }
    if !(model.propagation_km_per_ms.is_finite() && model.propagation_km_per_ms > 0.0) {
        return Err(AttackError::Invalid("propagation speed must be positive".into()));
    }
    if anchors.iter().any(|a| !(a.rtt_ms.is_finite() && a.rtt_ms >= 0.0)) {
        return Err(AttackError::Invalid("RTTs must be finite and non-negative".into()));
    }
    let n = anchors.len() as f64;
    let cx = anchors.iter().map(|a| a.position_km[0]).sum::<f64>() / n;
    let cy = anchors.iter().map(|a| a.position_km[1]).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for a in anchors {
        let (dx, dy) = (a.position_km[0] - cx, a.position_km[1] - cy);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let (lo, hi) = sym_eigen(sxx, sxy, syy);
    if hi <= 0.0 || lo / hi < COLLINEAR_RATIO {
        return Err(AttackError::DegenerateGeometry);
    }

    let reach = anchors
        .iter()
        .map(|a| model.distance_for_rtt(a.rtt_ms))
        .fold(0.0, f64::max);
    let min_x = anchors.iter().map(|a| a.position_km[0]).fold(f64::MAX, f64::min) - reach;
    let max_x = anchors.iter().map(|a| a.position_km[0]).fold(f64::MIN, f64::max) + reach;
    let min_y = anchors.iter().map(|a| a.position_km[1]).fold(f64::MAX, f64::min) - reach;
    let max_y = anchors.iter().map(|a| a.position_km[1]).fold(f64::MIN, f64::max) + reach;
    let mut best = ([cx, cy], f64::MAX);
    for i in 0..=GRID_STEPS {
        for j in 0..=GRID_STEPS {
            let p = [
                min_x + (max_x - min_x) * i as f64 / GRID_STEPS as f64,
                min_y + (max_y - min_y) * j as f64 / GRID_STEPS as f64,
            ];
            let c = cost(p, anchors, model);
            if c < best.1 {
                best = (p, c);
            }
        }
    }

    let k = model.legs() / model.propagation_km_per_ms;
    let normal_matrix = |p: [f64; 2]| {
        let (mut a, mut b, mut d, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for an in anchors {
            let dist = dist2(p, an.position_km);
            if dist < 1e-12 {
                continue;
            }
            let j0 = k * (p[0] - an.position_km[0]) / dist;
            let j1 = k * (p[1] - an.position_km[1]) / dist;
            let r = k * dist - an.rtt_ms;
            a += j0 * j0;
            b += j0 * j1;
            d += j1 * j1;
            g0 += j0 * r;
            g1 += j1 * r;
        }
        (a, b, d, g0, g1)
    };

    let (mut p, mut c) = best;
    let mut lambda = 1e-3;
    for _ in 0..500 {
        let (a, b, d, g0, g1) = normal_matrix(p);
        let (a2, d2) = (a + lambda * a.max(1e-12), d + lambda * d.max(1e-12));
        let det = a2 * d2 - b * b;
        if det.abs() < 1e-300 {
            break;
        }
        let step = [-(d2 * g0 - b * g1) / det, -(a2 * g1 - b * g0) / det];
        let cand = [p[0] + step[0], p[1] + step[1]];
        let cc = cost(cand, anchors, model);
        if cc < c {
            p = cand;
            c = cc;
            lambda = (lambda / 10.0).max(1e-12);
            if step[0].hypot(step[1]) < 1e-9 {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }

    let rms = (c / n).sqrt();
    let (a, b, d, _, _) = normal_matrix(p);
    let (elo, ehi) = sym_eigen(a, b, d);
    let ill_conditioned = ehi <= 0.0 || elo / ehi < LOW_CONFIDENCE_CONDITION;
    Ok(GeoFix {
        position_km: p,
        rms_residual_ms: rms,
        low_confidence: rms > LOW_CONFIDENCE_RMS_MS || ill_conditioned,
    })
}

// ---- identification ----

pub const FEATURE_NAMES: [&str; 10] = [
    "height",
    "wingspan",
    "arm_ratio",
    "ipd",
    "room_width",
    "room_length",
    "depth",
    "pitch",
    "reaction",
    "refresh_rate",
];

/// Attack features with a presence mask (`None` = not observed).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: [Option<f64>; 10],
}

impl FeatureVector {
    pub fn from_stream(frames: &[TelemetryFrame]) -> Self {
        let height = estimate_height(frames).ok();
        let room = estimate_room(frames).ok();
        let values = [
            height,
            estimate_wingspan(frames).ok(),
            estimate_arm_ratio(frames).ok(),
            estimate_ipd(frames).ok(),
            room.map(|r| r.0),
            room.map(|r| r.1),
            height.and_then(|h| estimate_depth(frames, h).ok()),
            estimate_pitch(frames).ok(),
            estimate_reaction(frames).ok(),
            estimate_refresh_rate(frames).ok(),
        ];
        Self {
            values: values.map(|v| v.filter(|x| x.is_finite())),
        }
    }

    pub fn present(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }
}

/// Nearest neighbour over per-feature z-scores; ties go to the smallest id.
///
/// Distance is the mean squared z-difference over the features both vectors
/// carry. Normalization statistics come from the population only.
pub fn identify(population: &[(u64, FeatureVector)], probe: &FeatureVector) -> Result<u64, AttackError> {
    if population.is_empty() {
        return Err(AttackError::EmptyPopulation);
    }
    let mut scale = [1.0f64; 10];
    for (i, s) in scale.iter_mut().enumerate() {
        let vals: Vec<f64> = population.iter().filter_map(|(_, v)| v.values[i]).collect();
        if vals.len() < 2 {
            continue;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        if var > 0.0 {
            *s = var.sqrt();
        }
    }
    let mut best: Option<(f64, u64)> = None;
    for (id, cand) in population {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..10 {
            if let (Some(a), Some(b)) = (cand.values[i], probe.values[i]) {
                sum += ((a - b) / scale[i]).powi(2);
                n += 1;
            }
        }
        if n == 0 {
            continue;
        }
        let d = sum / n as f64;
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && *id < bid),
        };
        if better {
            best = Some((d, *id));
        }
    }
    best.map(|(_, id)| id).ok_or(AttackError::Unidentifiable)
}

// ---- structured output ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    Height,
    Wingspan,
    ArmRatio,
    LongerArm,
    Room,
    Depth,
    Ipd,
    Pitch,
    Handedness,
    RefreshRate,
    Reaction,
}

impl Attack {
    pub const ALL: [Attack; 11] = [
        Attack::Height,
        Attack::Wingspan,
        Attack::ArmRatio,
        Attack::LongerArm,
        Attack::Room,
        Attack::Depth,
        Attack::Ipd,
        Attack::Pitch,
        Attack::Handedness,
        Attack::RefreshRate,
        Attack::Reaction,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Attack::Height => "height",
            Attack::Wingspan => "wingspan",
            Attack::ArmRatio => "arm_ratio",
            Attack::LongerArm => "longer_arm",
            Attack::Room => "room",
            Attack::Depth => "depth",
            Attack::Ipd => "ipd",
            Attack::Pitch => "pitch",
            Attack::Handedness => "handedness",
            Attack::RefreshRate => "refresh_rate",
            Attack::Reaction => "reaction",
        }
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Attack {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attack::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown attack `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EstimateValue {
    Number(f64),
    Flag(bool),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeEstimate {
    pub attribute: String,
    pub value: EstimateValue,
    pub units: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<EstimateValue>,
}

impl AttributeEstimate {
    fn number(attribute: &str, value: f64, units: &str, truth: Option<f64>) -> Self {
        Self {
            attribute: attribute.into(),
            value: EstimateValue::Number(value),
            units: units.into(),
            truth: truth.map(EstimateValue::Number),
        }
    }
}

/// Run one attack; `truth`, when given, is echoed next to each estimate.
pub fn run_attack(
    attack: Attack,
    frames: &[TelemetryFrame],
    truth: Option<&GroundTruth>,
) -> Result<Vec<AttributeEstimate>, AttackError> {
    let num = AttributeEstimate::number;
    Ok(match attack {
        Attack::Height => vec![num("height", estimate_height(frames)?, "m", truth.map(|t| t.height))],
        Attack::Wingspan => vec![num("wingspan", estimate_wingspan(frames)?, "m", truth.map(|t| t.wingspan))],
        Attack::ArmRatio => vec![num("arm_ratio", estimate_arm_ratio(frames)?, "ratio", truth.map(|t| t.arm_ratio))],
        Attack::LongerArm => vec![AttributeEstimate {
            attribute: "longer_arm".into(),
            value: EstimateValue::Label(estimate_longer_arm(frames)?.as_str().into()),
            units: "side".into(),
            truth: truth.map(|t| EstimateValue::Label(LongerArm::from_lengths(t.arm_r, t.arm_l).as_str().into())),
        }],
        Attack::Room => {
            let (w, l) = estimate_room(frames)?;
            vec![
                num("room_width", w, "m", truth.map(|t| t.room_width)),
                num("room_length", l, "m", truth.map(|t| t.room_length)),
            ]
        }
        Attack::Depth => {
            let h = estimate_height(frames)?;
            vec![num("depth", estimate_depth(frames, h)?, "m", truth.map(|t| t.squat_depth))]
        }
        Attack::Ipd => vec![num("ipd", estimate_ipd(frames)?, "mm", truth.map(|t| t.ipd_mm))],
        Attack::Pitch => vec![num("pitch", estimate_pitch(frames)?, "Hz", truth.map(|t| t.pitch_hz))],
        Attack::Handedness => vec![AttributeEstimate {
            attribute: "right_handed".into(),
            value: EstimateValue::Flag(estimate_handedness(frames)?),
            units: "bool".into(),
            truth: truth.map(|t| EstimateValue::Flag(t.right_handed)),
        }],
        Attack::RefreshRate => vec![num("refresh_rate", estimate_refresh_rate(frames)?, "Hz", None)],
        Attack::Reaction => vec![num("reaction", estimate_reaction(frames)?, "ms", None)],
    })
}
