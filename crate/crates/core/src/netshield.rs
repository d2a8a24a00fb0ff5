//! Network-attribute clamping over a timestamped frame stream.
//!
//! Latency and tracking rate are one-way bounded: a client can only add delay
//! or drop samples, never remove intrinsic delay or invent samples. The
//! functions here therefore clamp rather than add noise, so every user whose
//! intrinsic value is below the clamp looks identical.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transforms::{EventKind, TelemetryFrame};

/// Timestamp resolution in milliseconds.
pub const TIME_RESOLUTION_MS: f64 = 0.001;
/// Relative tolerance when comparing an input rate with a clamp.
const RATE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("clamp must be positive and finite, got {0}")]
    InvalidClamp(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum NetWarning {
    /// A response arrived with no preceding unmatched stimulus; left in place.
    UnmatchedResponse { t_ms: f64 },
    /// The stream is already slower than the clamp; frames cannot be invented.
    RateBelowClamp { input_hz: f64, clamp_hz: f64 },
}

impl std::fmt::Display for NetWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NetWarning::UnmatchedResponse { t_ms } => {
                write!(f, "response at {t_ms} ms has no matching stimulus; passed through")
            }
            NetWarning::RateBelowClamp { input_hz, clamp_hz } => write!(
                f,
                "input rate {input_hz:.3} Hz is below the {clamp_hz} Hz clamp; passed through"
            ),
        }
    }
}

pub fn round_to_resolution(t_ms: f64) -> f64 {
    (t_ms / TIME_RESOLUTION_MS).round() * TIME_RESOLUTION_MS
}

fn check_clamp(v: f64) -> Result<(), NetError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(NetError::InvalidClamp(v))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedPacket {
    pub frame: TelemetryFrame,
    pub send_time_ms: f64,
    pub intrinsic_rtt_ms: f64,
    /// Minimum observed round trip; zero when unclamped.
    pub latency_floor_ms: f64,
}

impl TimedPacket {
    pub fn new(frame: TelemetryFrame, send_time_ms: f64, intrinsic_rtt_ms: f64) -> Self {
        Self {
            frame,
            send_time_ms,
            intrinsic_rtt_ms,
            latency_floor_ms: 0.0,
        }
    }

    pub fn observed_rtt_ms(&self) -> f64 {
        self.intrinsic_rtt_ms.max(self.latency_floor_ms)
    }

    pub fn added_delay_ms(&self) -> f64 {
        self.observed_rtt_ms() - self.intrinsic_rtt_ms
    }
}

/// Pad every packet so its observed round trip is at least `clamp_ms`.
pub fn clamp_latency(
    packets: Vec<TimedPacket>,
    clamp_ms: f64,
) -> Result<Vec<TimedPacket>, NetError> {
    check_clamp(clamp_ms)?;
    Ok(packets
        .into_iter()
        .map(|mut p| {
            p.latency_floor_ms = clamp_ms;
            p
        })
        .collect())
}

/// Apply [`clamp_latency`] to the `rtt_ms` sidecar of a recording.
pub fn clamp_frame_latency(
    frames: &[TelemetryFrame],
    clamp_ms: f64,
) -> Result<Vec<TelemetryFrame>, NetError> {
    check_clamp(clamp_ms)?;
    let mut out = frames.to_vec();
    for f in out.iter_mut() {
        if let Some(rtt) = f.rtt_ms {
            let p = clamp_latency(vec![TimedPacket::new(f.clone(), f.t_ms, rtt)], clamp_ms)?;
            f.rtt_ms = Some(p[0].observed_rtt_ms());
        }
    }
    Ok(out)
}

/// Delay each matched response event by `pad_ms`.
///
/// The delayed event rides on a frame at exactly `t + pad`: an existing
/// event-free frame at that instant, or else a new frame holding the most
/// recent coordinates. Unmatched responses stay where they are.
pub fn clamp_reaction(
    frames: &[TelemetryFrame],
    pad_ms: f64,
) -> Result<(Vec<TelemetryFrame>, Vec<NetWarning>), NetError> {
    if !(pad_ms.is_finite() && pad_ms >= 0.0) {
        return Err(NetError::InvalidClamp(pad_ms));
    }
    let mut warnings = Vec::new();
    if pad_ms == 0.0 {
        return Ok((frames.to_vec(), warnings));
    }

    let mut out = frames.to_vec();
    let mut relocations = Vec::new();
    let mut pending_stimulus = false;
    for f in out.iter_mut() {
        let Some(ev) = f.event else { continue };
        match ev.kind {
            EventKind::Stimulus => pending_stimulus = true,
            EventKind::Response if pending_stimulus => {
                pending_stimulus = false;
                relocations.push((round_to_resolution(f.t_ms + pad_ms), ev));
                f.event = None;
            }
            EventKind::Response => warnings.push(NetWarning::UnmatchedResponse { t_ms: f.t_ms }),
            EventKind::Interaction => {}
        }
    }

    let eps = TIME_RESOLUTION_MS / 2.0;
    for (mut target, ev) in relocations {
        loop {
            // first index with t >= target - eps
            let pos = out.partition_point(|f| f.t_ms < target - eps);
            match out.get(pos) {
                Some(f) if (f.t_ms - target).abs() <= eps => {
                    if f.event.is_none() {
                        out[pos].event = Some(ev);
                        break;
                    }
                    target = round_to_resolution(target + TIME_RESOLUTION_MS);
                }
                _ => {
                    let mut held = out[pos.saturating_sub(1)].clone();
                    held.t_ms = target;
                    held.event = Some(ev);
                    out.insert(pos, held);
                    break;
                }
            }
        }
    }
    Ok((out, warnings))
}

/// Median inter-frame interval in milliseconds.
pub fn median_interval_ms(frames: &[TelemetryFrame]) -> Option<f64> {
    if frames.len() < 2 {
        return None;
    }
    let mut dts: Vec<f64> = frames.windows(2).map(|w| w[1].t_ms - w[0].t_ms).collect();
    dts.sort_by(f64::total_cmp);
    let n = dts.len();
    Some(if n % 2 == 1 {
        dts[n / 2]
    } else {
        (dts[n / 2 - 1] + dts[n / 2]) / 2.0
    })
}

/// Re-emit the stream on a fixed `1000/rate_hz` ms grid (sample-and-hold).
///
/// Each grid slot carries the most recent input frame at or before the slot
/// time. Events from skipped frames are carried to the next emitted slot.
pub fn clamp_rate(
    frames: &[TelemetryFrame],
    rate_hz: f64,
) -> Result<(Vec<TelemetryFrame>, Option<NetWarning>), NetError> {
    check_clamp(rate_hz)?;
    let Some(median_dt) = median_interval_ms(frames) else {
        return Ok((frames.to_vec(), None));
    };
    let input_hz = 1000.0 / median_dt;
    if input_hz <= rate_hz * (1.0 + RATE_TOLERANCE) {
        let warning = (input_hz < rate_hz * (1.0 - RATE_TOLERANCE)).then_some(
            NetWarning::RateBelowClamp {
                input_hz,
                clamp_hz: rate_hz,
            },
        );
        return Ok((frames.to_vec(), warning));
    }

    let eps = TIME_RESOLUTION_MS / 2.0;
    let period = 1000.0 / rate_hz;
    let t0 = frames[0].t_ms;
    let t_end = frames[frames.len() - 1].t_ms;
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    let mut idx = 0usize;
    if let Some(ev) = frames[0].event {
        queue.push_back(ev);
    }
    for k in 0u64.. {
        let slot = round_to_resolution(t0 + k as f64 * period);
        if slot > t_end + eps {
            break;
        }
        while idx + 1 < frames.len() && frames[idx + 1].t_ms <= slot + eps {
            idx += 1;
            if let Some(ev) = frames[idx].event {
                queue.push_back(ev);
            }
        }
        let mut held = frames[idx].clone();
        held.t_ms = slot;
        held.event = queue.pop_front();
        out.push(held);
    }
    Ok((out, None))
}

/// Clamp values in force for one session; `None` means disabled.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkPolicy {
    pub latency_clamp_ms: Option<f64>,
    pub reaction_pad_ms: Option<f64>,
    pub rate_hz: Option<f64>,
}

impl NetworkPolicy {
    /// When both latency-style clamps are on, the larger one protects both.
    pub fn with_shared_latency(geo_ms: Option<f64>, reaction_ms: Option<f64>, rate_hz: Option<f64>) -> Self {
        let (latency_clamp_ms, reaction_pad_ms) = match (geo_ms, reaction_ms) {
            (Some(g), Some(r)) => {
                let m = g.max(r);
                (Some(m), Some(m))
            }
            other => other,
        };
        Self {
            latency_clamp_ms,
            reaction_pad_ms,
            rate_hz,
        }
    }

    pub fn is_noop(&self) -> bool {
        self.latency_clamp_ms.is_none() && self.reaction_pad_ms.is_none() && self.rate_hz.is_none()
    }

    /// Reaction padding, then rate clamping, then latency clamping.
    pub fn apply(
        &self,
        frames: &[TelemetryFrame],
    ) -> Result<(Vec<TelemetryFrame>, Vec<NetWarning>), NetError> {
        let mut warnings = Vec::new();
        let mut out = frames.to_vec();
        if let Some(pad) = self.reaction_pad_ms {
            let (f, w) = clamp_reaction(&out, pad)?;
            out = f;
            warnings.extend(w);
        }
        if let Some(rate) = self.rate_hz {
            let (f, w) = clamp_rate(&out, rate)?;
            out = f;
            warnings.extend(w);
        }
        if let Some(clamp) = self.latency_clamp_ms {
            out = clamp_frame_latency(&out, clamp)?;
        }
        Ok((out, warnings))
    }
}
