//! Session lifecycle: privacy presets, feature toggles, per-session offsets,
//! and the per-frame pipeline.
//!
//! All noisy values are drawn once in [`begin_session`] from substreams keyed
//! by `(master seed, session id, attribute)`, then frozen. With
//! `rerandomize_per_session = false` the session id is ignored, so every
//! session of the user shares one set of offsets.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mechanisms::{
    randomized_response, rr_bias_for_epsilon, BoundedLaplace, BudgetEntry, BudgetLedger,
    MechanismError, PrivacyParams,
};
use crate::netshield::{NetError, NetWarning, NetworkPolicy};
use crate::rng::RandomSource;
use crate::transforms::{
    compose, ActiveDefenses, ArmRatioMode, GroundTruth, RetainedTruth, SessionOffsets,
    TelemetryFrame, TransformError,
};

const PRESETS_TOML: &str = include_str!("../presets/levels-v1.toml");

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("ground truth field `{0}` is missing or invalid for an enabled defense")]
    MissingTruth(&'static str),
    #[error("non-monotonic timestamp: {t_ms} ms after {prev_ms} ms")]
    NonMonotonic { t_ms: f64, prev_ms: f64 },
    #[error("non-finite coordinate in frame at {0} ms")]
    NonFinite(f64),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrivacyLevel {
    Off,
    Low,
    Medium,
    High,
}

impl PrivacyLevel {
    pub const ALL: [PrivacyLevel; 4] = [
        PrivacyLevel::Off,
        PrivacyLevel::Low,
        PrivacyLevel::Medium,
        PrivacyLevel::High,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrivacyLevel::Off => "off",
            PrivacyLevel::Low => "low",
            PrivacyLevel::Medium => "medium",
            PrivacyLevel::High => "high",
        }
    }
}

impl fmt::Display for PrivacyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrivacyLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(PrivacyLevel::Off),
            "low" => Ok(PrivacyLevel::Low),
            "medium" => Ok(PrivacyLevel::Medium),
            "high" => Ok(PrivacyLevel::High),
            other => Err(format!("unknown privacy level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Height,
    Depth,
    Wingspan,
    ArmRatio,
    Room,
    Ipd,
    Pitch,
    Handedness,
    LatencyGeo,
    ReactionTime,
    RateClamp,
}

impl Feature {
    pub const ALL: [Feature; 11] = [
        Feature::Height,
        Feature::Depth,
        Feature::Wingspan,
        Feature::ArmRatio,
        Feature::Room,
        Feature::Ipd,
        Feature::Pitch,
        Feature::Handedness,
        Feature::LatencyGeo,
        Feature::ReactionTime,
        Feature::RateClamp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Height => "height",
            Feature::Depth => "depth",
            Feature::Wingspan => "wingspan",
            Feature::ArmRatio => "arm_ratio",
            Feature::Room => "room",
            Feature::Ipd => "ipd",
            Feature::Pitch => "pitch",
            Feature::Handedness => "handedness",
            Feature::LatencyGeo => "latency_geo",
            Feature::ReactionTime => "reaction_time",
            Feature::RateClamp => "rate_clamp",
        }
    }

    /// Features protected by an epsilon-consuming mechanism.
    pub fn consumes_epsilon(self) -> bool {
        !matches!(
            self,
            Feature::LatencyGeo | Feature::ReactionTime | Feature::RateClamp
        )
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL
            .iter()
            .copied()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| format!("unknown feature `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize, Serialize)]
pub struct PerLevel {
    pub low: f64,
    pub medium: f64,
    pub high: f64,
}

impl PerLevel {
    pub fn get(&self, level: PrivacyLevel) -> Option<f64> {
        match level {
            PrivacyLevel::Off => None,
            PrivacyLevel::Low => Some(self.low),
            PrivacyLevel::Medium => Some(self.medium),
            PrivacyLevel::High => Some(self.high),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct AttributePreset {
    pub lower: f64,
    pub upper: f64,
    pub epsilon: PerLevel,
}

/// The built-in preset table (epsilons, bounds, clamps per level).
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
pub struct Presets {
    pub version: u32,
    pub attributes: BTreeMap<Feature, AttributePreset>,
    pub clamps: BTreeMap<Feature, PerLevel>,
}

impl Presets {
    pub fn builtin() -> &'static Presets {
        static PRESETS: std::sync::OnceLock<Presets> = std::sync::OnceLock::new();
        PRESETS.get_or_init(|| toml::from_str(PRESETS_TOML).expect("built-in presets parse"))
    }

    pub fn attribute(&self, feature: Feature) -> &AttributePreset {
        &self.attributes[&feature]
    }

    pub fn params(&self, feature: Feature, epsilon: f64) -> Result<PrivacyParams, MechanismError> {
        let a = self.attribute(feature);
        PrivacyParams::new(epsilon, a.lower, a.upper)
    }

    pub fn clamp(&self, feature: Feature, level: PrivacyLevel) -> Option<f64> {
        self.clamps.get(&feature).and_then(|c| c.get(level))
    }
}

/// User-facing defense settings: the master toggle (`level = off`), the
/// feature toggles, and the privacy slider (level plus overrides).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefenseConfig {
    pub level: PrivacyLevel,
    pub enabled: BTreeSet<Feature>,
    pub overrides: BTreeMap<Feature, f64>,
    pub master_seed: u64,
    pub rerandomize_per_session: bool,
    pub arm_ratio_mode: ArmRatioMode,
}

impl DefenseConfig {
    pub fn new(level: PrivacyLevel, master_seed: u64) -> Self {
        Self {
            level,
            enabled: Feature::ALL.into_iter().collect(),
            overrides: BTreeMap::new(),
            master_seed,
            rerandomize_per_session: true,
            arm_ratio_mode: ArmRatioMode::Corrected,
        }
    }

    /// Same level and seed, but only `features` enabled.
    pub fn only(level: PrivacyLevel, master_seed: u64, features: &[Feature]) -> Self {
        Self {
            enabled: features.iter().copied().collect(),
            ..Self::new(level, master_seed)
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        for (feature, eps) in &self.overrides {
            if !feature.consumes_epsilon() {
                return Err(SessionError::Config(format!(
                    "`{feature}` is a clamp and takes no epsilon override"
                )));
            }
            if !(eps.is_finite() && *eps > 0.0) {
                return Err(SessionError::Config(format!(
                    "epsilon override for `{feature}` must be positive, got {eps}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_enabled(&self, feature: Feature) -> bool {
        self.level != PrivacyLevel::Off && self.enabled.contains(&feature)
    }

    /// Epsilon in force for `feature`, or `None` if it is disabled.
    pub fn epsilon(&self, feature: Feature) -> Option<f64> {
        if !feature.consumes_epsilon() || !self.is_enabled(feature) {
            return None;
        }
        self.overrides.get(&feature).copied().or_else(|| {
            Presets::builtin()
                .attributes
                .get(&feature)
                .and_then(|a| a.epsilon.get(self.level))
        })
    }

    pub fn network_policy(&self) -> NetworkPolicy {
        let p = Presets::builtin();
        let get = |f: Feature| {
            if self.is_enabled(f) {
                p.clamp(f, self.level)
            } else {
                None
            }
        };
        NetworkPolicy::with_shared_latency(
            get(Feature::LatencyGeo),
            get(Feature::ReactionTime),
            get(Feature::RateClamp),
        )
    }

    pub fn from_toml_str(s: &str) -> Result<Self, SessionError> {
        let file: ConfigFile =
            toml::from_str(s).map_err(|e| SessionError::Config(e.message().to_string()))?;
        let mut cfg = DefenseConfig::new(file.level.privacy, file.seed.master);
        cfg.rerandomize_per_session = file.seed.rerandomize_per_session;
        if let Some(mode) = file.options.arm_ratio_mode {
            cfg.arm_ratio_mode = mode;
        }
        for (name, on) in file.features {
            let f = Feature::from_str(&name).map_err(SessionError::Config)?;
            if on {
                cfg.enabled.insert(f);
            } else {
                cfg.enabled.remove(&f);
            }
        }
        for (name, eps) in file.overrides {
            let f = Feature::from_str(&name).map_err(SessionError::Config)?;
            cfg.overrides.insert(f, eps);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_file(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path).map_err(|source| SessionError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    level: LevelSection,
    #[serde(default)]
    features: BTreeMap<String, bool>,
    #[serde(default)]
    overrides: BTreeMap<String, f64>,
    seed: SeedSection,
    #[serde(default)]
    options: OptionsSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptionsSection {
    #[serde(default)]
    arm_ratio_mode: Option<ArmRatioMode>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelSection {
    privacy: PrivacyLevel,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedSection {
    master: u64,
    #[serde(default = "yes")]
    rerandomize_per_session: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone)]
pub struct Session {
    config: DefenseConfig,
    session_id: u64,
    truth: RetainedTruth,
    offsets: SessionOffsets,
    ledger: BudgetLedger,
    active: ActiveDefenses,
    network: NetworkPolicy,
    frames_processed: u64,
    last_t_ms: Option<f64>,
    mechanism_fallbacks: u64,
}

/// Fields each defense reads from the ground truth.
fn required_fields(feature: Feature) -> &'static [&'static str] {
    match feature {
        Feature::Height => &["height"],
        Feature::Depth => &["height", "squat_depth"],
        Feature::Wingspan | Feature::ArmRatio => &["arm_r", "arm_l"],
        Feature::Room => &["room_width", "room_length"],
        Feature::Ipd => &["ipd_mm"],
        Feature::Pitch => &["pitch_hz"],
        _ => &[],
    }
}

fn truth_field(truth: &GroundTruth, name: &str) -> f64 {
    match name {
        "height" => truth.height,
        "squat_depth" => truth.squat_depth,
        "arm_r" => truth.arm_r,
        "arm_l" => truth.arm_l,
        "room_width" => truth.room_width,
        "room_length" => truth.room_length,
        "ipd_mm" => truth.ipd_mm,
        "pitch_hz" => truth.pitch_hz,
        _ => unreachable!("unknown truth field {name}"),
    }
}

/// Setup phase: draw and freeze every noisy attribute value for this session.
pub fn begin_session(
    config: &DefenseConfig,
    truth: &GroundTruth,
    session_id: u64,
) -> Result<Session, SessionError> {
    config.validate()?;
    for feature in Feature::ALL {
        if !config.is_enabled(feature) {
            continue;
        }
        for &field in required_fields(feature) {
            let v = truth_field(truth, field);
            if !(v.is_finite() && v > 0.0) {
                return Err(SessionError::MissingTruth(field));
            }
        }
    }

    let presets = Presets::builtin();
    let stream_key = if config.rerandomize_per_session { session_id } else { 0 };
    let stream = |name: &str| {
        RandomSource::derive(config.master_seed, &["session".into(), stream_key.into(), name.into()])
    };
    let retained = truth.retained();
    let mut offsets = SessionOffsets::identity(&retained);
    let mut ledger = BudgetLedger::new();
    let mut sampler = BoundedLaplace::new();

    let noisy = |feature: Feature, name: &str, value: f64, sampler: &mut BoundedLaplace| {
        let eps = config.epsilon(feature).expect("enabled feature has epsilon");
        let params = presets.params(feature, eps)?;
        sampler.sample(value, &params, &mut stream(name))
    };

    for feature in Feature::ALL {
        let Some(eps) = config.epsilon(feature) else { continue };
        match feature {
            Feature::Height => offsets.height = noisy(feature, "height", truth.height, &mut sampler)?,
            Feature::Depth => {
                offsets.depth = noisy(feature, "depth", truth.squat_depth, &mut sampler)?
            }
            Feature::Wingspan => {
                offsets.span = noisy(feature, "wingspan", truth.wingspan, &mut sampler)?
            }
            Feature::ArmRatio => {
                // noise is drawn on right/left, then expressed as right/span
                let q = noisy(feature, "arm_ratio", truth.arm_r / truth.arm_l, &mut sampler)?;
                offsets.ratio = q / (1.0 + q);
            }
            Feature::Room => {
                offsets.room_width =
                    noisy(feature, "room_width", truth.room_width, &mut sampler)?;
                offsets.room_length =
                    noisy(feature, "room_length", truth.room_length, &mut sampler)?;
            }
            Feature::Ipd => {
                offsets.ipd_offset_mm =
                    noisy(feature, "ipd", truth.ipd_mm, &mut sampler)? - truth.ipd_mm
            }
            Feature::Pitch => {
                offsets.pitch_offset_hz =
                    noisy(feature, "pitch", truth.pitch_hz, &mut sampler)? - truth.pitch_hz
            }
            Feature::Handedness => {
                let bias = rr_bias_for_epsilon(eps)?;
                let reported =
                    randomized_response(truth.right_handed, bias, &mut stream("handedness"))?;
                offsets.mirrored = reported != truth.right_handed;
            }
            _ => continue,
        }
        ledger.record(feature.as_str(), eps);
    }

    let on = |f| config.is_enabled(f);
    let active = ActiveDefenses {
        room: on(Feature::Room),
        height: on(Feature::Height),
        depth: on(Feature::Depth),
        wingspan: on(Feature::Wingspan),
        arm_ratio: on(Feature::ArmRatio),
        mirror: on(Feature::Handedness),
        ipd: on(Feature::Ipd),
        pitch: on(Feature::Pitch),
    };

    Ok(Session {
        config: config.clone(),
        session_id,
        truth: retained,
        offsets,
        ledger,
        active,
        network: config.network_policy(),
        frames_processed: 0,
        last_t_ms: None,
        mechanism_fallbacks: sampler.fallback_count(),
    })
}

/// Output of [`Session::process_stream`].
#[derive(Debug, Clone)]
pub struct StreamOutput {
    pub frames: Vec<TelemetryFrame>,
    pub warnings: Vec<NetWarning>,
}

impl Session {
    pub fn offsets(&self) -> &SessionOffsets {
        &self.offsets
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn config(&self) -> &DefenseConfig {
        &self.config
    }

    pub fn retained_truth(&self) -> &RetainedTruth {
        &self.truth
    }

    pub fn network_policy(&self) -> &NetworkPolicy {
        &self.network
    }

    pub fn frames_processed(&self) -> u64 {
        self.frames_processed
    }

    /// Update phase for one frame. Disabled defenses are the identity.
    pub fn process_frame(&mut self, frame: &TelemetryFrame) -> Result<TelemetryFrame, SessionError> {
        if let Some(prev) = self.last_t_ms {
            if !(frame.t_ms > prev) {
                return Err(SessionError::NonMonotonic {
                    t_ms: frame.t_ms,
                    prev_ms: prev,
                });
            }
        }
        if !frame.is_finite() {
            return Err(SessionError::NonFinite(frame.t_ms));
        }
        let out = compose(
            frame,
            &self.truth,
            &self.offsets,
            &self.active,
            self.config.arm_ratio_mode,
        )?;
        self.last_t_ms = Some(frame.t_ms);
        self.frames_processed += 1;
        Ok(out)
    }

    /// Transform every frame, then apply the network clamps to the stream.
    pub fn process_stream(&mut self, frames: &[TelemetryFrame]) -> Result<StreamOutput, SessionError> {
        let transformed = frames
            .iter()
            .map(|f| self.process_frame(f))
            .collect::<Result<Vec<_>, _>>()?;
        if self.network.is_noop() {
            return Ok(StreamOutput {
                frames: transformed,
                warnings: Vec::new(),
            });
        }
        let (frames, warnings) = self.network.apply(&transformed)?;
        Ok(StreamOutput { frames, warnings })
    }

    pub fn report(&self) -> SessionReport {
        session_report(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub session_id: u64,
    pub level: PrivacyLevel,
    pub enabled: Vec<Feature>,
    pub epsilons: Vec<BudgetEntry>,
    pub epsilon_total: f64,
    pub network: NetworkPolicy,
    pub frames_processed: u64,
    pub mechanism_fallbacks: u64,
}

pub fn session_report(session: &Session) -> SessionReport {
    let enabled = Feature::ALL
        .into_iter()
        .filter(|f| session.config.is_enabled(*f))
        .collect();
    SessionReport {
        session_id: session.session_id,
        level: session.config.level,
        enabled,
        epsilons: session.ledger.entries().to_vec(),
        epsilon_total: session.ledger.total(),
        network: session.network,
        frames_processed: session.frames_processed,
        mechanism_fallbacks: session.mechanism_fallbacks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::Vec3;

    fn truth() -> GroundTruth {
        GroundTruth::new(1.7, 0.86, 0.84, 63.0, 120.0, 0.5, 4.0, 3.0, true)
    }

    #[test]
    fn presets_match_reference_table() {
        let p = Presets::builtin();
        assert_eq!(p.version, 1);
        let h = p.attribute(Feature::Height);
        assert_eq!((h.lower, h.upper), (1.496, 1.826));
        assert_eq!((h.epsilon.low, h.epsilon.medium, h.epsilon.high), (5.0, 3.0, 1.0));
        let hd = p.attribute(Feature::Handedness).epsilon;
        assert_eq!((hd.low, hd.medium, hd.high), (1.28, 0.88, 0.73));
        let lat = |l| p.clamp(Feature::LatencyGeo, l);
        assert_eq!(
            [lat(PrivacyLevel::Low), lat(PrivacyLevel::Medium), lat(PrivacyLevel::High)],
            [Some(25.0), Some(30.0), Some(50.0)]
        );
        let r = |l| p.clamp(Feature::ReactionTime, l).unwrap();
        assert_eq!([r(PrivacyLevel::Low), r(PrivacyLevel::Medium), r(PrivacyLevel::High)], [10.0, 20.0, 100.0]);
        let hz = |l| p.clamp(Feature::RateClamp, l).unwrap();
        assert_eq!([hz(PrivacyLevel::Low), hz(PrivacyLevel::Medium), hz(PrivacyLevel::High)], [90.0, 72.0, 60.0]);
        assert_eq!(p.clamp(Feature::RateClamp, PrivacyLevel::Off), None);
    }

    #[test]
    fn high_level_budget_total() {
        let s = begin_session(&DefenseConfig::new(PrivacyLevel::High, 1), &truth(), 0).unwrap();
        assert!((s.ledger().total() - 4.93).abs() < 1e-12);
    }

    #[test]
    fn off_is_identity() {
        let t = truth();
        let s = begin_session(&DefenseConfig::new(PrivacyLevel::Off, 1), &t, 3).unwrap();
        assert_eq!(*s.offsets(), SessionOffsets::identity(&t.retained()));
        assert_eq!(s.ledger().total(), 0.0);
        assert!(s.report().epsilons.is_empty());
        assert!(s.network_policy().is_noop());
    }

    #[test]
    fn same_seed_and_session_same_offsets() {
        let cfg = DefenseConfig::new(PrivacyLevel::Medium, 99);
        let a = begin_session(&cfg, &truth(), 5).unwrap();
        let b = begin_session(&cfg, &truth(), 5).unwrap();
        let c = begin_session(&cfg, &truth(), 6).unwrap();
        assert_eq!(a.offsets(), b.offsets());
        assert_ne!(a.offsets(), c.offsets());
    }

    #[test]
    fn one_time_randomization_ignores_session_id() {
        let mut cfg = DefenseConfig::new(PrivacyLevel::High, 99);
        cfg.rerandomize_per_session = false;
        let a = begin_session(&cfg, &truth(), 5).unwrap();
        let b = begin_session(&cfg, &truth(), 1234).unwrap();
        assert_eq!(a.offsets(), b.offsets());
    }

    #[test]
    fn toggling_one_feature_does_not_shift_another() {
        let full = DefenseConfig::new(PrivacyLevel::High, 7);
        let mut partial = full.clone();
        partial.enabled.remove(&Feature::Wingspan);
        partial.enabled.remove(&Feature::Height);
        let a = begin_session(&full, &truth(), 2).unwrap();
        let b = begin_session(&partial, &truth(), 2).unwrap();
        assert_eq!(a.offsets().depth, b.offsets().depth);
        assert_eq!(a.offsets().room_width, b.offsets().room_width);
        assert_eq!(b.offsets().height, truth().height);
    }

    #[test]
    fn offsets_within_bounds() {
        let p = Presets::builtin();
        for id in 0..200 {
            let s = begin_session(&DefenseConfig::new(PrivacyLevel::High, 3), &truth(), id).unwrap();
            let o = s.offsets();
            let inb = |f: Feature, v: f64| {
                let a = p.attribute(f);
                v >= a.lower && v <= a.upper
            };
            assert!(inb(Feature::Height, o.height));
            assert!(inb(Feature::Depth, o.depth));
            assert!(inb(Feature::Wingspan, o.span));
            assert!(inb(Feature::ArmRatio, o.ratio / (1.0 - o.ratio) * (1.0 - 1e-12)) || inb(Feature::ArmRatio, o.ratio / (1.0 - o.ratio)));
            assert!(inb(Feature::Room, o.room_width) && inb(Feature::Room, o.room_length));
            assert!(inb(Feature::Ipd, truth().ipd_mm + o.ipd_offset_mm));
            assert!(inb(Feature::Pitch, truth().pitch_hz + o.pitch_offset_hz));
        }
    }

    #[test]
    fn missing_truth_names_field() {
        let mut t = truth();
        t.room_length = f64::NAN;
        let err = begin_session(&DefenseConfig::new(PrivacyLevel::Low, 1), &t, 0).unwrap_err();
        assert!(matches!(err, SessionError::MissingTruth("room_length")));
        // fine when the room defense is off
        let cfg = DefenseConfig::only(PrivacyLevel::Low, 1, &[Feature::Height]);
        assert!(begin_session(&cfg, &t, 0).is_ok());
    }

    #[test]
    fn bad_overrides_rejected() {
        let mut cfg = DefenseConfig::new(PrivacyLevel::Low, 1);
        cfg.overrides.insert(Feature::Height, -1.0);
        assert!(matches!(begin_session(&cfg, &truth(), 0), Err(SessionError::Config(_))));
        let mut cfg = DefenseConfig::new(PrivacyLevel::Low, 1);
        cfg.overrides.insert(Feature::RateClamp, 2.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn report_echoes_medium_column_and_override() {
        let cfg = DefenseConfig::new(PrivacyLevel::Medium, 1);
        let r = begin_session(&cfg, &truth(), 0).unwrap().report();
        let eps: Vec<(String, f64)> =
            r.epsilons.iter().map(|e| (e.attribute.clone(), e.epsilon)).collect();
        let expected = [
            ("height", 3.0),
            ("depth", 3.0),
            ("wingspan", 1.0),
            ("arm_ratio", 1.0),
            ("room", 1.0),
            ("ipd", 3.0),
            ("pitch", 1.0),
            ("handedness", 0.88),
        ];
        assert_eq!(eps.len(), expected.len());
        for ((a, e), (name, v)) in eps.iter().zip(expected) {
            assert_eq!((a.as_str(), *e), (name, v));
        }
        let mut cfg = DefenseConfig::new(PrivacyLevel::Medium, 1);
        cfg.overrides.insert(Feature::Height, 2.0);
        let r = begin_session(&cfg, &truth(), 0).unwrap().report();
        assert_eq!(r.epsilons[0].epsilon, 2.0);
    }

    #[test]
    fn process_frame_rejects_non_monotonic() {
        let mut s = begin_session(&DefenseConfig::new(PrivacyLevel::Low, 1), &truth(), 0).unwrap();
        let f = |t| {
            TelemetryFrame::new(t, Vec3::new(0.0, 1.7, 0.0), Vec3::new(0.3, 1.2, 0.0), Vec3::new(-0.3, 1.2, 0.0))
        };
        s.process_frame(&f(0.0)).unwrap();
        s.process_frame(&f(11.0)).unwrap();
        assert!(matches!(s.process_frame(&f(11.0)), Err(SessionError::NonMonotonic { .. })));
        assert_eq!(s.frames_processed(), 2);
    }

    #[test]
    fn only_height_endpoint() {
        let cfg = DefenseConfig::only(PrivacyLevel::High, 1, &[Feature::Height]);
        let mut s = begin_session(&cfg, &truth(), 0).unwrap();
        let f = TelemetryFrame::new(0.0, Vec3::new(0.5, 1.7, 0.2), Vec3::new(0.8, 1.3, 0.2), Vec3::new(0.2, 1.3, 0.2));
        let g = s.process_frame(&f).unwrap();
        assert!((g.head.y - s.offsets().height).abs() < 1e-12);
        assert_eq!(g.head.x, f.head.x);
    }

    #[test]
    fn config_file_round_trip() {
        let cfg = DefenseConfig::from_toml_str(
            r#"
            [level]
            privacy = "high"
            [features]
            wingspan = false
            rate_clamp = false
            [overrides]
            height = 2.5
            [seed]
            master = 42
            rerandomize_per_session = false
            "#,
        )
        .unwrap();
        assert_eq!(cfg.level, PrivacyLevel::High);
        assert!(!cfg.enabled.contains(&Feature::Wingspan));
        assert!(cfg.enabled.contains(&Feature::Height));
        assert_eq!(cfg.epsilon(Feature::Height), Some(2.5));
        assert_eq!(cfg.epsilon(Feature::Depth), Some(1.0));
        assert_eq!(cfg.master_seed, 42);
        assert!(!cfg.rerandomize_per_session);
        assert!(DefenseConfig::from_toml_str("[level]\nprivacy='extreme'\n[seed]\nmaster=1").is_err());
        assert!(DefenseConfig::from_toml_str("[level]\nprivacy='low'\n[seed]\nmaster=1\n[features]\nnose=true").is_err());
    }
}
