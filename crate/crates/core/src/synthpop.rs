//! Synthetic users and scripted sessions.
//!
//! A session script runs, in order: standing (first 10%), T-pose (to 25%),
//! squats (to 45%), a walk touching the four room corners (to 85%), and a
//! final standing phase. Interaction events and stimulus/response pairs are
//! spread over the whole session.
//!
//! Positional jitter is Gaussian but clipped at the physical limits of the
//! pose (head never above standing height or below the squat bottom, never
//! outside the room, hands never beyond arm's reach), so the extremes an
//! attacker looks for are reached exactly.

use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netshield::round_to_resolution;
use crate::rng::RandomSource;
use crate::transforms::{EventKind, Eyes, FrameEvent, GroundTruth, Hand, TelemetryFrame, Vec3};

pub const MIN_DURATION_S: f64 = 10.0;
pub const DEFAULT_JITTER_M: f64 = 0.005;
pub const DEVICE_RATES_HZ: [f64; 5] = [60.0, 72.0, 90.0, 120.0, 144.0];
pub const INTERACTION_EVENTS: usize = 24;
pub const DOMINANT_INTERACTIONS: usize = 20;
/// Square region (km) in which user locations are drawn.
pub const REGION_KM: f64 = 4000.0;

/// Sampling ranges. Where these differ from the defense bounds they sit inside them.
pub const HEIGHT_RANGE: (f64, f64) = (1.496, 1.826);
pub const WINGSPAN_RANGE: (f64, f64) = (1.556, 1.899);
/// Right arm over left arm.
pub const ARM_QUOTIENT_RANGE: (f64, f64) = (0.95, 1.05);
pub const IPD_RANGE_MM: (f64, f64) = (55.696, 71.024);
pub const PITCH_RANGE_HZ: (f64, f64) = (85.0, 255.0);
pub const DEPTH_RANGE: (f64, f64) = (0.2, 0.913);
pub const ROOM_RANGE: (f64, f64) = (1.0, 5.0);
pub const REACTION_RANGE_MS: (f64, f64) = (180.0, 400.0);
pub const RIGHT_HANDED_SHARE: f64 = 0.9;
/// Session-to-session spread of a user's reaction time.
pub const REACTION_SESSION_SD_MS: f64 = 15.0;
const PITCH_SD_HZ: f64 = 0.5;
const EYE_DROP_M: f64 = 0.05;
/// How far a standing head may sag below full height.
const STANDING_SWAY_M: f64 = 0.03;
const EYE_FORWARD_M: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("session duration {0} s is shorter than the {MIN_DURATION_S} s script")]
    TooShort(f64),
    #[error("invalid generator parameter: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distribution {
    #[default]
    Uniform,
    TruncatedNormal,
}

impl FromStr for Distribution {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" => Ok(Distribution::Uniform),
            "truncated_normal" | "truncated-normal" => Ok(Distribution::TruncatedNormal),
            other => Err(format!("unknown distribution `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionScript {
    pub squats: u32,
    /// Index of the first corner visited on the walk.
    pub first_corner: u8,
    pub clockwise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticUser {
    pub id: u64,
    pub truth: GroundTruth,
    pub reaction_ms: f64,
    pub device_rate_hz: f64,
    pub location_km: [f64; 2],
    pub jitter_m: f64,
    pub script: MotionScript,
}

fn draw(rng: &mut RandomSource, (lo, hi): (f64, f64), dist: Distribution) -> f64 {
    match dist {
        Distribution::Uniform => rng.uniform_in(lo, hi),
        Distribution::TruncatedNormal => {
            let mid = (lo + hi) / 2.0;
            let sd = (hi - lo) / 4.0;
            loop {
                let v = mid + sd * rng.standard_normal();
                if v >= lo && v <= hi {
                    return v;
                }
            }
        }
    }
}

/// Draw one user; attributes are independent and keyed to `(seed, id)`.
pub fn sample_user(id: u64, seed: u64, dist: Distribution) -> SyntheticUser {
    let mut rng = RandomSource::derive(seed, &["user".into(), id.into()]);
    let height = draw(&mut rng, HEIGHT_RANGE, dist);
    let span = draw(&mut rng, WINGSPAN_RANGE, dist);
    let q = draw(&mut rng, ARM_QUOTIENT_RANGE, dist);
    let arm_l = span / (1.0 + q);
    let arm_r = span - arm_l;
    let ipd = draw(&mut rng, IPD_RANGE_MM, dist);
    let pitch = draw(&mut rng, PITCH_RANGE_HZ, dist);
    let depth = draw(&mut rng, DEPTH_RANGE, dist);
    let width = draw(&mut rng, ROOM_RANGE, dist);
    let length = draw(&mut rng, ROOM_RANGE, dist);
    let right_handed = rng.uniform_open() < RIGHT_HANDED_SHARE;
    let reaction_ms = draw(&mut rng, REACTION_RANGE_MS, dist);
    let device_rate_hz = DEVICE_RATES_HZ[rng.index(DEVICE_RATES_HZ.len())];
    let location_km = [rng.uniform_in(0.0, REGION_KM), rng.uniform_in(0.0, REGION_KM)];
    let script = MotionScript {
        squats: 2 + rng.index(3) as u32,
        first_corner: rng.index(4) as u8,
        clockwise: rng.uniform_open() < 0.5,
    };
    SyntheticUser {
        id,
        truth: GroundTruth::new(
            height,
            arm_r,
            arm_l,
            ipd,
            pitch,
            depth,
            width,
            length,
            right_handed,
        ),
        reaction_ms,
        device_rate_hz,
        location_km,
        jitter_m: DEFAULT_JITTER_M,
        script,
    }
}

pub fn sample_population(n: usize, seed: u64, dist: Distribution) -> Vec<SyntheticUser> {
    (0..n as u64).map(|id| sample_user(id, seed, dist)).collect()
}

/// A generated recording plus the per-session behavioural values it realised.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSession {
    pub frames: Vec<TelemetryFrame>,
    /// Reaction time used for every stimulus/response pair in this session.
    pub reaction_ms: f64,
    pub stimulus_pairs: usize,
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

fn smooth(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Pose without jitter at session fraction `f`, plus which limits apply.
struct Pose {
    head: Vec3,
    right: Vec3,
    left: Vec3,
    /// Hands are held exactly (no horizontal jitter) at full extension.
    hands_exact: bool,
    /// Lowest allowed head height.
    floor_y: f64,
}

fn corners(user: &SyntheticUser) -> [(f64, f64); 4] {
    let (w, l) = (user.truth.room_width / 2.0, user.truth.room_length / 2.0);
    let ring = [(w, l), (w, -l), (-w, -l), (-w, l)];
    let mut out = [(0.0, 0.0); 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let step = if user.script.clockwise { i } else { 4 - i };
        *slot = ring[(user.script.first_corner as usize + step) % 4];
    }
    out
}

fn pose_at(user: &SyntheticUser, f: f64) -> Pose {
    let t = &user.truth;
    let h = t.height;
    let rest = |head: Vec3| Pose {
        head,
        right: head.add(Vec3::new(0.2, -0.8, 0.05)),
        left: head.add(Vec3::new(-0.2, -0.8, 0.05)),
        hands_exact: false,
        floor_y: h - STANDING_SWAY_M,
    };
    if !(0.10..0.85).contains(&f) {
        return rest(Vec3::new(0.0, h, 0.0));
    }
    if f < 0.25 {
        // T-pose: raise for a third of the phase, hold for the rest
        let s = (f - 0.10) / 0.15;
        let head = Vec3::new(0.0, h, 0.0);
        let shoulder = h - 0.25;
        if s < 1.0 / 3.0 {
            let k = smooth(s * 3.0);
            return Pose {
                head,
                right: Vec3::new(lerp(0.2, t.arm_r * 0.98, k), lerp(h - 0.8, shoulder, k), 0.05 * (1.0 - k)),
                left: Vec3::new(lerp(-0.2, -t.arm_l * 0.98, k), lerp(h - 0.8, shoulder, k), 0.05 * (1.0 - k)),
                hands_exact: false,
                floor_y: h - STANDING_SWAY_M,
            };
        }
        return Pose {
            head,
            right: Vec3::new(t.arm_r, shoulder, 0.0),
            left: Vec3::new(-t.arm_l, shoulder, 0.0),
            hands_exact: true,
            floor_y: h - STANDING_SWAY_M,
        };
    }
    if f < 0.45 {
        let s = (f - 0.25) / 0.20 * user.script.squats as f64;
        let cycle = s.fract();
        // descend 40%, hold 20%, rise 40%
        let down = if cycle < 0.4 {
            smooth(cycle / 0.4)
        } else if cycle < 0.6 {
            1.0
        } else {
            1.0 - smooth((cycle - 0.6) / 0.4)
        };
        let head = Vec3::new(0.0, h - t.squat_depth * down, 0.0);
        return Pose {
            head,
            right: head.add(Vec3::new(0.15, -0.4, 0.3)),
            left: head.add(Vec3::new(-0.15, -0.4, 0.3)),
            hands_exact: false,
            floor_y: h - t.squat_depth,
        };
    }
    // corner walk: centre -> c0 -> c1 -> c2 -> c3 -> centre, dwelling at corners
    let s = (f - 0.45) / 0.40 * 5.0;
    let leg = (s.floor() as usize).min(4);
    let u = s - leg as f64;
    let cs = corners(user);
    let from = if leg == 0 { (0.0, 0.0) } else { cs[leg - 1] };
    let to = if leg == 4 { (0.0, 0.0) } else { cs[leg] };
    let k = smooth(u / 0.7);
    let head = Vec3::new(lerp(from.0, to.0, k), h, lerp(from.1, to.1, k));
    rest(head)
}

fn jittered(user: &SyntheticUser, pose: &Pose, rng: &mut RandomSource) -> (Vec3, Vec3, Vec3) {
    let t = &user.truth;
    let sd = user.jitter_m;
    let mut n = || if sd > 0.0 { sd * rng.standard_normal() } else { 0.0 };
    let (w, l) = (t.room_width / 2.0, t.room_length / 2.0);
    let head = Vec3::new(
        (pose.head.x + n()).clamp(-w, w),
        (pose.head.y + n()).clamp(pose.floor_y.min(t.height), t.height),
        (pose.head.z + n()).clamp(-l, l),
    );
    let shift = head.sub(pose.head);
    let hand = |p: Vec3, reach: f64, n: &mut dyn FnMut() -> f64| {
        let moved = p.add(shift);
        let (dx, dy, dz) = if pose.hands_exact { (0.0, n(), 0.0) } else { (n(), n(), n()) };
        let mut q = Vec3::new(moved.x + dx, moved.y + dy, moved.z + dz);
        let r = q.horizontal_distance(head);
        if r > reach {
            let k = reach / r;
            q.x = head.x + (q.x - head.x) * k;
            q.z = head.z + (q.z - head.z) * k;
        }
        q
    };
    let right = hand(pose.right, t.arm_r, &mut n);
    let left = hand(pose.left, t.arm_l, &mut n);
    (head, right, left)
}

fn eyes_for(head: Vec3, ipd_mm: f64) -> Eyes {
    let half = ipd_mm / 2000.0;
    Eyes {
        left: head.add(Vec3::new(-half, -EYE_DROP_M, EYE_FORWARD_M)),
        right: head.add(Vec3::new(half, -EYE_DROP_M, EYE_FORWARD_M)),
    }
}

/// Generate one scripted session at `rate_hz` for `duration_s` seconds.
pub fn generate_session(
    user: &SyntheticUser,
    duration_s: f64,
    rate_hz: f64,
    seed: u64,
) -> Result<GeneratedSession, SynthError> {
    if !(duration_s >= MIN_DURATION_S) {
        return Err(SynthError::TooShort(duration_s));
    }
    if !(rate_hz.is_finite() && rate_hz > 0.0) {
        return Err(SynthError::Invalid(format!("frame rate {rate_hz}")));
    }
    if !(user.jitter_m.is_finite() && user.jitter_m >= 0.0) {
        return Err(SynthError::Invalid(format!("jitter {}", user.jitter_m)));
    }
    if let Some(field) = user.truth.invalid_field() {
        return Err(SynthError::Invalid(format!("ground truth field {field}")));
    }
    let n = (duration_s * rate_hz).round() as usize;
    let period = 1000.0 / rate_hz;
    let mut motion = RandomSource::derive(seed, &["motion".into(), user.id.into()]);
    let mut behaviour = RandomSource::derive(seed, &["behaviour".into(), user.id.into()]);

    let reaction_ms = (user.reaction_ms + REACTION_SESSION_SD_MS * behaviour.standard_normal())
        .clamp(REACTION_RANGE_MS.0 - 50.0, REACTION_RANGE_MS.1 + 50.0);
    let pitch_sd = if user.jitter_m > 0.0 { PITCH_SD_HZ } else { 0.0 };

    let mut frames = Vec::with_capacity(n);
    for k in 0..n {
        let f = k as f64 / n as f64;
        let pose = pose_at(user, f);
        let (head, right, left) = jittered(user, &pose, &mut motion);
        let mut frame = TelemetryFrame::new(round_to_resolution(k as f64 * period), head, right, left);
        frame.eyes = Some(eyes_for(head, user.truth.ipd_mm));
        frame.pitch_hz = Some(user.truth.pitch_hz + pitch_sd * behaviour.standard_normal());
        frames.push(frame);
    }

    let dominant = if user.truth.right_handed { Hand::Right } else { Hand::Left };
    let duration_ms = n as f64 * period;

    // stimulus/response pairs, each in its own window
    let pairs = 10usize.max((duration_s / 5.0).floor() as usize);
    let window = duration_ms / pairs as f64;
    let mut placed = 0;
    for j in 0..pairs {
        let k_s = ((j as f64 * window + 0.1 * window) / period).round() as usize;
        let t_r = round_to_resolution(frames[k_s].t_ms + reaction_ms);
        // frame whose slot holds the response instant
        let k_r = frames.partition_point(|fr| fr.t_ms <= t_r).saturating_sub(1);
        if k_r <= k_s || k_r + 1 >= n {
            continue;
        }
        frames[k_s].event = Some(FrameEvent { kind: EventKind::Stimulus, hand: Hand::None });
        frames[k_r].t_ms = t_r;
        frames[k_r].event = Some(FrameEvent { kind: EventKind::Response, hand: dominant });
        placed += 1;
    }

    let mut hands = vec![dominant; DOMINANT_INTERACTIONS];
    hands.extend(std::iter::repeat(dominant.swapped()).take(INTERACTION_EVENTS - DOMINANT_INTERACTIONS));
    behaviour.shuffle(&mut hands);
    let spacing = n as f64 / INTERACTION_EVENTS as f64;
    for (i, hand) in hands.into_iter().enumerate() {
        let mut k = ((i as f64 + 0.5) * spacing) as usize;
        while k < n && frames[k].event.is_some() {
            k += 1;
        }
        if k < n {
            frames[k].event = Some(FrameEvent { kind: EventKind::Interaction, hand });
        }
    }

    Ok(GeneratedSession {
        frames,
        reaction_ms,
        stimulus_pairs: placed,
    })
}
