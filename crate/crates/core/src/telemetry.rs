//! Line-delimited telemetry recordings.
//!
//! One JSON object per line, fields in this order:
//! `t_ms`, `head`, `right`, `left`, then the optional `eyes` (six numbers,
//! left eye then right eye), `pitch_hz`, `event` and `rtt_ms`. Absent optional
//! fields are omitted. Every float is written in plain decimal with at least
//! nine significant digits and parses back to the identical value.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::transforms::{EventKind, Eyes, FrameEvent, Hand, TelemetryFrame, Vec3};

pub const MIN_SIGNIFICANT_DIGITS: usize = 9;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("cannot serialize non-finite value in frame at {0} ms")]
    NonFinite(f64),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TelemetryError + '_ {
    move |source| TelemetryError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Shortest round-trip decimal, right-padded with zeros to nine significant digits.
pub fn format_f64(v: f64) -> String {
    let mut s = format!("{v}");
    let digits = s
        .trim_start_matches('-')
        .chars()
        .filter(char::is_ascii_digit)
        .skip_while(|c| *c == '0')
        .count();
    // zero has no significant digits of its own
    let digits = if v == 0.0 { 1 } else { digits };
    if digits < MIN_SIGNIFICANT_DIGITS {
        if !s.contains('.') {
            s.push('.');
        }
        s.extend(std::iter::repeat('0').take(MIN_SIGNIFICANT_DIGITS - digits));
    }
    s
}

fn push_vec(out: &mut String, v: Vec3) {
    let _ = write!(
        out,
        "[{},{},{}]",
        format_f64(v.x),
        format_f64(v.y),
        format_f64(v.z)
    );
}

fn kind_str(k: EventKind) -> &'static str {
    match k {
        EventKind::Stimulus => "stimulus",
        EventKind::Response => "response",
        EventKind::Interaction => "interaction",
    }
}

fn hand_str(h: Hand) -> &'static str {
    match h {
        Hand::Left => "left",
        Hand::Right => "right",
        Hand::None => "none",
    }
}

/// Serialize one frame as a single line (without the trailing newline).
pub fn frame_to_line(frame: &TelemetryFrame) -> Result<String, TelemetryError> {
    if !frame.is_finite() {
        return Err(TelemetryError::NonFinite(frame.t_ms));
    }
    let mut s = String::with_capacity(256);
    let _ = write!(s, "{{\"t_ms\":{}", format_f64(frame.t_ms));
    s.push_str(",\"head\":");
    push_vec(&mut s, frame.head);
    s.push_str(",\"right\":");
    push_vec(&mut s, frame.right);
    s.push_str(",\"left\":");
    push_vec(&mut s, frame.left);
    if let Some(e) = frame.eyes {
        let v: Vec<String> = e
            .left
            .to_array()
            .into_iter()
            .chain(e.right.to_array())
            .map(format_f64)
            .collect();
        let _ = write!(s, ",\"eyes\":[{}]", v.join(","));
    }
    if let Some(p) = frame.pitch_hz {
        let _ = write!(s, ",\"pitch_hz\":{}", format_f64(p));
    }
    if let Some(ev) = frame.event {
        let _ = write!(
            s,
            ",\"event\":{{\"kind\":\"{}\",\"hand\":\"{}\"}}",
            kind_str(ev.kind),
            hand_str(ev.hand)
        );
    }
    if let Some(r) = frame.rtt_ms {
        let _ = write!(s, ",\"rtt_ms\":{}", format_f64(r));
    }
    s.push('}');
    Ok(s)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    t_ms: f64,
    head: [f64; 3],
    right: [f64; 3],
    left: [f64; 3],
    #[serde(default)]
    eyes: Option<[f64; 6]>,
    #[serde(default)]
    pitch_hz: Option<f64>,
    #[serde(default)]
    event: Option<FrameEvent>,
    #[serde(default)]
    rtt_ms: Option<f64>,
}

/// Parse one line; `line_no` is 1-based and only used in errors.
pub fn parse_line(line: &str, line_no: usize) -> Result<TelemetryFrame, TelemetryError> {
    let raw: RawFrame = serde_json::from_str(line).map_err(|e| TelemetryError::Malformed {
        line: line_no,
        message: e.to_string(),
    })?;
    let frame = TelemetryFrame {
        t_ms: raw.t_ms,
        head: raw.head.into(),
        right: raw.right.into(),
        left: raw.left.into(),
        eyes: raw.eyes.map(|e| Eyes {
            left: Vec3::new(e[0], e[1], e[2]),
            right: Vec3::new(e[3], e[4], e[5]),
        }),
        pitch_hz: raw.pitch_hz,
        event: raw.event,
        rtt_ms: raw.rtt_ms,
    };
    if !frame.is_finite() {
        return Err(TelemetryError::Malformed {
            line: line_no,
            message: "non-finite value".into(),
        });
    }
    Ok(frame)
}

/// Parse a whole recording. Blank lines are skipped.
pub fn parse_str(text: &str) -> Result<Vec<TelemetryFrame>, TelemetryError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1))
        .collect()
}

pub fn read_file(path: &Path) -> Result<Vec<TelemetryFrame>, TelemetryError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut frames = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(parse_line(&line, i + 1)?);
    }
    Ok(frames)
}

pub fn to_string(frames: &[TelemetryFrame]) -> Result<String, TelemetryError> {
    let mut out = String::new();
    for f in frames {
        out.push_str(&frame_to_line(f)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_file(path: &Path, frames: &[TelemetryFrame]) -> Result<(), TelemetryError> {
    let text = to_string(frames)?;
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(text.as_bytes()).map_err(io_err(path))
}
