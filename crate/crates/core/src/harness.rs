//! Experiment orchestration: synthesize a population, replay each session
//! through the defenses at every requested level, attack the result, and
//! summarize accuracy with bootstrap confidence intervals.
//!
//! Every random stream is keyed to `(seed, user, session)`, so results do not
//! depend on thread scheduling.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{
    self, arm_reach, geolocate, identify, Anchor, AttackError, FeatureVector, GeoModel, LongerArm,
};
use crate::calibration::{calibrate, defaults_from, tpose_snapshot, CalibrationError};
use crate::netshield::{clamp_latency, NetWarning, TimedPacket};
use crate::rng::RandomSource;
use crate::session::{begin_session, DefenseConfig, Feature, PrivacyLevel, SessionError, SessionReport};
use crate::synthpop::{generate_session, sample_population, Distribution, SynthError, SyntheticUser};
use crate::telemetry::{self, TelemetryError};
use crate::transforms::{GroundTruth, TelemetryFrame};

pub const BOOTSTRAP_RESAMPLES: usize = 1000;
pub const CONFIDENCE: f64 = 0.99;
/// Fixed measurement anchors (km) for the geolocation attack.
pub const ANCHORS_KM: [[f64; 2]; 5] = [
    [0.0, 0.0],
    [4000.0, 0.0],
    [0.0, 4000.0],
    [4000.0, 4000.0],
    [2000.0, 2000.0],
];
/// Standard deviation of simulated RTT measurement noise.
pub const RTT_JITTER_MS: f64 = 0.02;
pub const MIN_SWEEP_POINTS: usize = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("cannot serialize report: {0}")]
    Serialize(String),
}

impl HarnessError {
    /// Whether the failure is a problem with the caller's input rather than the run.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HarnessError::Spec(_)
                | HarnessError::Telemetry(TelemetryError::Malformed { .. })
                | HarnessError::Session(SessionError::Config(_))
                | HarnessError::Session(SessionError::MissingTruth(_))
                | HarnessError::Session(SessionError::NonMonotonic { .. })
                | HarnessError::Synth(_)
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentAttack {
    Height,
    Depth,
    Wingspan,
    ArmRatio,
    LongerArm,
    Room,
    Ipd,
    Pitch,
    Handedness,
    Reaction,
    RefreshRate,
    Geolocation,
    Identity,
}

impl ExperimentAttack {
    pub const ALL: [ExperimentAttack; 13] = [
        ExperimentAttack::Height,
        ExperimentAttack::Depth,
        ExperimentAttack::Wingspan,
        ExperimentAttack::ArmRatio,
        ExperimentAttack::LongerArm,
        ExperimentAttack::Room,
        ExperimentAttack::Ipd,
        ExperimentAttack::Pitch,
        ExperimentAttack::Handedness,
        ExperimentAttack::Reaction,
        ExperimentAttack::RefreshRate,
        ExperimentAttack::Geolocation,
        ExperimentAttack::Identity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentAttack::Height => "height",
            ExperimentAttack::Depth => "depth",
            ExperimentAttack::Wingspan => "wingspan",
            ExperimentAttack::ArmRatio => "arm_ratio",
            ExperimentAttack::LongerArm => "longer_arm",
            ExperimentAttack::Room => "room",
            ExperimentAttack::Ipd => "ipd",
            ExperimentAttack::Pitch => "pitch",
            ExperimentAttack::Handedness => "handedness",
            ExperimentAttack::Reaction => "reaction",
            ExperimentAttack::RefreshRate => "refresh_rate",
            ExperimentAttack::Geolocation => "geolocation",
            ExperimentAttack::Identity => "identity",
        }
    }
}

impl fmt::Display for ExperimentAttack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentAttack {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ExperimentAttack::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown attack `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
}

fn default_sessions() -> u32 {
    2
}
fn default_duration() -> f64 {
    60.0
}
fn default_true() -> bool {
    true
}
fn default_jitter() -> f64 {
    crate::synthpop::DEFAULT_JITTER_M
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub users: usize,
    #[serde(default = "default_sessions")]
    pub sessions: u32,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    pub seed: u64,
    pub levels: Vec<PrivacyLevel>,
    pub attacks: Vec<ExperimentAttack>,
    #[serde(default)]
    pub distribution: Distribution,
    #[serde(default = "default_jitter")]
    pub jitter_m: f64,
    /// Enabled defenses; all when absent.
    #[serde(default)]
    pub features: Option<Vec<Feature>>,
    #[serde(default)]
    pub overrides: BTreeMap<Feature, f64>,
    #[serde(default = "default_true")]
    pub rerandomize_per_session: bool,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentSpec {
    pub fn new(users: usize, seed: u64, levels: Vec<PrivacyLevel>, attacks: Vec<ExperimentAttack>) -> Self {
        Self {
            users,
            sessions: default_sessions(),
            duration_s: default_duration(),
            seed,
            levels,
            attacks,
            distribution: Distribution::Uniform,
            jitter_m: default_jitter(),
            features: None,
            overrides: BTreeMap::new(),
            rerandomize_per_session: true,
            output: OutputPaths::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Spec(m));
        if self.users == 0 {
            return bad("users must be at least 1".into());
        }
        if self.sessions == 0 {
            return bad("sessions must be at least 1".into());
        }
        if self.levels.is_empty() {
            return bad("at least one privacy level is required".into());
        }
        if self.attacks.is_empty() {
            return bad("at least one attack is required".into());
        }
        if self.attacks.contains(&ExperimentAttack::Identity) && (self.sessions < 2 || self.users < 2) {
            return bad("identity needs at least 2 users and 2 sessions per user".into());
        }
        if !(self.duration_s >= crate::synthpop::MIN_DURATION_S) {
            return bad(format!("duration_s must be at least {} s", crate::synthpop::MIN_DURATION_S));
        }
        if !(self.jitter_m.is_finite() && self.jitter_m >= 0.0) {
            return bad("jitter_m must be non-negative".into());
        }
        self.defense_config(PrivacyLevel::High, 0).validate()?;
        Ok(())
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let is_json = path.extension().is_some_and(|e| e == "json");
        if is_json {
            serde_json::from_str(&text).map_err(|e| HarnessError::Spec(e.to_string()))
        } else {
            toml::from_str(&text).map_err(|e| HarnessError::Spec(e.message().to_string()))
        }
    }

    fn defense_config(&self, level: PrivacyLevel, master_seed: u64) -> DefenseConfig {
        let mut cfg = DefenseConfig::new(level, master_seed);
        if let Some(f) = &self.features {
            cfg.enabled = f.iter().copied().collect();
        }
        cfg.overrides = self.overrides.clone();
        cfg.rerandomize_per_session = self.rerandomize_per_session;
        cfg
    }

    fn wants(&self, a: ExperimentAttack) -> bool {
        self.attacks.contains(&a)
    }
}

fn user_seed(seed: u64, user: u64) -> u64 {
    RandomSource::derive(seed, &["defense".into(), user.into()]).seed()
}

fn trace_seed(seed: u64, session: u32) -> u64 {
    RandomSource::derive(seed, &["trace".into(), u64::from(session).into()]).seed()
}

/// An undefended recording with its ground truth and the truth the device calibrated.
#[derive(Debug, Clone)]
pub struct RawSession {
    pub user: u64,
    pub session: u32,
    pub frames: Vec<TelemetryFrame>,
    pub reaction_ms: f64,
    pub calibrated: GroundTruth,
}

fn raw_sessions(spec: &ExperimentSpec, users: &[SyntheticUser]) -> Result<Vec<RawSession>, HarnessError> {
    let jobs: Vec<(usize, u32)> = (0..users.len())
        .flat_map(|u| (0..spec.sessions).map(move |s| (u, s)))
        .collect();
    jobs.par_iter()
        .map(|&(u, s)| {
            let user = &users[u];
            let g = generate_session(user, spec.duration_s, user.device_rate_hz, trace_seed(spec.seed, s))?;
            let calibrated = calibrate(&tpose_snapshot(&user.truth), &defaults_from(&user.truth))?;
            Ok(RawSession {
                user: user.id,
                session: s,
                frames: g.frames,
                reaction_ms: g.reaction_ms,
                calibrated,
            })
        })
        .collect()
}

/// What the attacker learned from one defended session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub user: u64,
    pub session: u32,
    pub height: Option<f64>,
    pub depth: Option<f64>,
    pub wingspan: Option<f64>,
    pub arm_ratio: Option<f64>,
    pub longer_arm: Option<LongerArm>,
    pub room: Option<(f64, f64)>,
    pub ipd: Option<f64>,
    pub pitch: Option<f64>,
    pub right_handed: Option<bool>,
    pub reaction: Option<f64>,
    pub refresh_rate: Option<f64>,
    pub geo_error_km: Option<f64>,
    pub features: FeatureVector,
}

fn rtt_noise(seed: u64, user: u64, session: u32) -> RandomSource {
    RandomSource::derive(seed, &["rtt".into(), user.into(), u64::from(session).into()])
}

/// Observed RTTs from `location` to each anchor after an optional latency clamp.
pub fn observed_anchor_rtts(
    location_km: [f64; 2],
    model: &GeoModel,
    clamp_ms: Option<f64>,
    noise: &mut RandomSource,
) -> Result<Vec<Anchor>, HarnessError> {
    let packets: Vec<TimedPacket> = ANCHORS_KM
        .iter()
        .map(|a| {
            let d = (a[0] - location_km[0]).hypot(a[1] - location_km[1]);
            let rtt = (model.rtt_for_distance(d) + RTT_JITTER_MS * noise.standard_normal()).max(1e-3);
            TimedPacket::new(
                TelemetryFrame::new(0.0, Default::default(), Default::default(), Default::default()),
                0.0,
                rtt,
            )
        })
        .collect();
    let packets = match clamp_ms {
        Some(c) => clamp_latency(packets, c).map_err(SessionError::from)?,
        None => packets,
    };
    Ok(ANCHORS_KM
        .iter()
        .zip(packets)
        .map(|(a, p)| Anchor {
            position_km: *a,
            rtt_ms: p.observed_rtt_ms(),
        })
        .collect())
}

fn attack_session(
    spec: &ExperimentSpec,
    user: &SyntheticUser,
    raw: &RawSession,
    level: PrivacyLevel,
) -> Result<SessionOutcome, HarnessError> {
    let cfg = spec.defense_config(level, user_seed(spec.seed, raw.user));
    let mut session = begin_session(&cfg, &raw.calibrated, u64::from(raw.session))?;
    let frames = session.process_stream(&raw.frames)?.frames;
    let f = &frames;
    let height = adversary::estimate_height(f).ok();
    let geo_error_km = if spec.wants(ExperimentAttack::Geolocation) {
        let model = GeoModel::default();
        let mut noise = rtt_noise(spec.seed, raw.user, raw.session);
        let anchors = observed_anchor_rtts(
            user.location_km,
            &model,
            session.network_policy().latency_clamp_ms,
            &mut noise,
        )?;
        geolocate(&anchors, &model).ok().map(|fix| {
            (fix.position_km[0] - user.location_km[0]).hypot(fix.position_km[1] - user.location_km[1])
        })
    } else {
        None
    };
    Ok(SessionOutcome {
        user: raw.user,
        session: raw.session,
        height,
        depth: height.and_then(|h| adversary::estimate_depth(f, h).ok()),
        wingspan: adversary::estimate_wingspan(f).ok(),
        arm_ratio: adversary::estimate_arm_ratio(f).ok(),
        longer_arm: adversary::estimate_longer_arm(f).ok(),
        room: adversary::estimate_room(f).ok(),
        ipd: adversary::estimate_ipd(f).ok(),
        pitch: adversary::estimate_pitch(f).ok(),
        right_handed: adversary::estimate_handedness(f).ok(),
        reaction: adversary::estimate_reaction(f).ok(),
        refresh_rate: adversary::estimate_refresh_rate(f).ok(),
        geo_error_km,
        features: FeatureVector::from_stream(f),
    })
}

/// Coefficient of determination of `predicted` against `actual`.
/// Negative when the predictions are worse than the mean.
pub fn r_squared(actual: &[f64], predicted: &[f64]) -> f64 {
    let n = actual.len().min(predicted.len());
    if n == 0 {
        return f64::NAN;
    }
    let mean = actual[..n].iter().sum::<f64>() / n as f64;
    let ss_tot: f64 = actual[..n].iter().map(|a| (a - mean).powi(2)).sum();
    let ss_res: f64 = actual[..n]
        .iter()
        .zip(&predicted[..n])
        .map(|(a, p)| (a - p).powi(2))
        .sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NEG_INFINITY };
    }
    1.0 - ss_res / ss_tot
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub attack: String,
    pub metric: String,
    pub level: PrivacyLevel,
    pub value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackReport {
    pub spec: ExperimentSpec,
    pub rows: Vec<ReportRow>,
}

impl AttackReport {
    pub fn get(&self, attack: &str, metric: &str, level: PrivacyLevel) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.attack == attack && r.metric == metric && r.level == level)
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["attack", "metric", "level", "value", "ci_low", "ci_high", "n"])
            .map_err(|e| HarnessError::Serialize(e.to_string()))?;
        for r in &self.rows {
            w.write_record([
                r.attack.clone(),
                r.metric.clone(),
                r.level.to_string(),
                r.value.to_string(),
                r.ci_low.to_string(),
                r.ci_high.to_string(),
                r.n.to_string(),
            ])
            .map_err(|e| HarnessError::Serialize(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| HarnessError::Serialize(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        serde_json::to_string_pretty(self).map_err(|e| HarnessError::Serialize(e.to_string()))
    }

    pub fn write_outputs(&self, paths: &OutputPaths) -> Result<(), HarnessError> {
        if let Some(p) = &paths.csv {
            fs::write(p, self.to_csv()?).map_err(io_err(p))?;
        }
        if let Some(p) = &paths.json {
            fs::write(p, self.to_json()? + "\n").map_err(io_err(p))?;
        }
        Ok(())
    }
}

/// A metric evaluated on one sample of units.
type Statistic = Box<dyn Fn(&[usize]) -> f64 + Sync>;

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Point estimate and percentile bootstrap interval over `n` resampled units.
fn bootstrap(n: usize, stat: &Statistic, rng: &mut RandomSource) -> (f64, f64, f64) {
    let all: Vec<usize> = (0..n).collect();
    let point = stat(&all);
    if n < 2 {
        return (point, point, point);
    }
    let mut reps: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| {
            let idx: Vec<usize> = (0..n).map(|_| rng.index(n)).collect();
            stat(&idx)
        })
        .filter(|v| v.is_finite())
        .collect();
    if reps.is_empty() {
        return (point, point, point);
    }
    reps.sort_by(f64::total_cmp);
    let tail = (1.0 - CONFIDENCE) / 2.0;
    (point, quantile_sorted(&reps, tail), quantile_sorted(&reps, 1.0 - tail))
}

fn pct(hits: impl Iterator<Item = bool>) -> f64 {
    let (mut k, mut n) = (0usize, 0usize);
    for h in hits {
        n += 1;
        k += usize::from(h);
    }
    if n == 0 {
        f64::NAN
    } else {
        100.0 * k as f64 / n as f64
    }
}

struct MetricSpec {
    metric: String,
    n: usize,
    stat: Statistic,
}

fn within(metric: &str, pairs: Vec<(f64, f64)>, tol: f64) -> MetricSpec {
    let n = pairs.len();
    MetricSpec {
        metric: metric.into(),
        n,
        stat: Box::new(move |idx| pct(idx.iter().map(|&i| (pairs[i].0 - pairs[i].1).abs() <= tol + 1e-12))),
    }
}

fn r2_metric(pairs: Vec<(f64, f64)>) -> MetricSpec {
    let n = pairs.len();
    MetricSpec {
        metric: "r2".into(),
        n,
        stat: Box::new(move |idx| {
            let a: Vec<f64> = idx.iter().map(|&i| pairs[i].0).collect();
            let p: Vec<f64> = idx.iter().map(|&i| pairs[i].1).collect();
            r_squared(&a, &p)
        }),
    }
}

fn accuracy(metric: &str, hits: Vec<bool>) -> MetricSpec {
    let n = hits.len();
    MetricSpec {
        metric: metric.into(),
        n,
        stat: Box::new(move |idx| pct(idx.iter().map(|&i| hits[i]))),
    }
}

fn metrics_for(
    attack: ExperimentAttack,
    outcomes: &[SessionOutcome],
    users: &[SyntheticUser],
    raws: &[RawSession],
) -> Vec<MetricSpec> {
    let truth = |o: &SessionOutcome| &users[o.user as usize].truth;
    let pairs = |get: &dyn Fn(&SessionOutcome) -> Option<(f64, f64)>| -> Vec<(f64, f64)> {
        outcomes.iter().filter_map(get).collect()
    };
    use ExperimentAttack as A;
    match attack {
        A::Height => {
            let p = pairs(&|o| o.height.map(|e| (truth(o).height, e)));
            vec![within("within_5cm", p.clone(), 0.05), within("within_7cm", p.clone(), 0.07), r2_metric(p)]
        }
        A::Depth => {
            let p = pairs(&|o| o.depth.map(|e| (truth(o).squat_depth, e)));
            vec![within("within_5cm", p.clone(), 0.05), r2_metric(p)]
        }
        A::Wingspan => {
            let p = pairs(&|o| o.wingspan.map(|e| (truth(o).wingspan, e)));
            vec![within("within_7cm", p.clone(), 0.07), within("within_12cm", p.clone(), 0.12), r2_metric(p)]
        }
        A::ArmRatio => vec![r2_metric(pairs(&|o| o.arm_ratio.map(|e| (truth(o).arm_ratio, e))))],
        A::LongerArm => {
            let hits = |min_diff: f64| -> Vec<bool> {
                outcomes
                    .iter()
                    .filter(|o| (truth(o).arm_r - truth(o).arm_l).abs() >= min_diff)
                    .map(|o| o.longer_arm == Some(LongerArm::from_lengths(truth(o).arm_r, truth(o).arm_l)))
                    .collect()
            };
            vec![accuracy("diff_ge_1cm", hits(0.01)), accuracy("diff_ge_3cm", hits(0.03))]
        }
        A::Room => {
            let p = pairs(&|o| o.room.map(|(w, l)| (truth(o).room_width * truth(o).room_length, w * l)));
            vec![within("area_within_2m2", p.clone(), 2.0), within("area_within_3m2", p.clone(), 3.0), r2_metric(p)]
        }
        A::Ipd => {
            let p = pairs(&|o| o.ipd.map(|e| (truth(o).ipd_mm, e)));
            vec![within("within_0.5mm", p.clone(), 0.5), r2_metric(p)]
        }
        A::Pitch => {
            let p = pairs(&|o| o.pitch.map(|e| (truth(o).pitch_hz, e)));
            vec![within("within_5hz", p.clone(), 5.0), r2_metric(p)]
        }
        A::Handedness => vec![accuracy(
            "accuracy",
            outcomes.iter().map(|o| o.right_handed == Some(truth(o).right_handed)).collect(),
        )],
        A::Reaction => {
            let p = outcomes
                .iter()
                .zip(raws)
                .filter_map(|(o, r)| o.reaction.map(|e| (r.reaction_ms, e)))
                .collect();
            vec![within("within_25ms", p, 25.0)]
        }
        A::RefreshRate => {
            let p = pairs(&|o| o.refresh_rate.map(|e| (users[o.user as usize].device_rate_hz, e)));
            vec![within("within_3hz", p, 3.0)]
        }
        A::Geolocation => {
            let hits = |km: f64| outcomes.iter().map(|o| o.geo_error_km.is_some_and(|e| e <= km)).collect();
            vec![accuracy("within_400km", hits(400.0)), accuracy("within_500km", hits(500.0))]
        }
        A::Identity => {
            let enrolled: Vec<(u64, FeatureVector)> = outcomes
                .iter()
                .filter(|o| o.session == 0)
                .map(|o| (o.user, o.features))
                .collect();
            let hits: Vec<bool> = outcomes
                .par_iter()
                .filter(|o| o.session == 1)
                .map(|o| identify(&enrolled, &o.features).is_ok_and(|id| id == o.user))
                .collect();
            vec![accuracy("accuracy", hits)]
        }
    }
}

/// Run every attack at every level and summarize.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<AttackReport, HarnessError> {
    spec.validate()?;
    let mut users = sample_population(spec.users, spec.seed, spec.distribution);
    for u in users.iter_mut() {
        u.jitter_m = spec.jitter_m;
    }
    let raws = raw_sessions(spec, &users)?;
    let mut rows = Vec::new();
    for &level in &spec.levels {
        let outcomes: Vec<SessionOutcome> = raws
            .par_iter()
            .map(|r| attack_session(spec, &users[r.user as usize], r, level))
            .collect::<Result<_, _>>()?;
        for &attack in &spec.attacks {
            for m in metrics_for(attack, &outcomes, &users, &raws) {
                let mut rng = RandomSource::derive(
                    spec.seed,
                    &["bootstrap".into(), attack.as_str().into(), level.as_str().into(), m.metric.as_str().into()],
                );
                let (value, lo, hi) = bootstrap(m.n, &m.stat, &mut rng);
                rows.push(ReportRow {
                    attack: attack.as_str().into(),
                    metric: m.metric,
                    level,
                    value,
                    ci_low: lo,
                    ci_high: hi,
                    n: m.n,
                });
            }
        }
    }
    Ok(AttackReport {
        spec: spec.clone(),
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub r2: f64,
}

/// Attacker estimate and true value of one continuous attribute.
fn sweep_pair(attribute: Feature, frames: &[TelemetryFrame], truth: &GroundTruth) -> Option<(f64, f64)> {
    let est = match attribute {
        Feature::Height => adversary::estimate_height(frames).ok()?,
        Feature::Depth => {
            let h = adversary::estimate_height(frames).ok()?;
            adversary::estimate_depth(frames, h).ok()?
        }
        Feature::Wingspan => adversary::estimate_wingspan(frames).ok()?,
        Feature::ArmRatio => {
            let (r, l) = arm_reach(frames).ok()?;
            r / (r + l)
        }
        Feature::Room => {
            let (w, l) = adversary::estimate_room(frames).ok()?;
            w * l
        }
        Feature::Ipd => adversary::estimate_ipd(frames).ok()?,
        Feature::Pitch => adversary::estimate_pitch(frames).ok()?,
        _ => return None,
    };
    let actual = match attribute {
        Feature::Height => truth.height,
        Feature::Depth => truth.squat_depth,
        Feature::Wingspan => truth.wingspan,
        Feature::ArmRatio => truth.arm_ratio,
        Feature::Room => truth.room_width * truth.room_length,
        Feature::Ipd => truth.ipd_mm,
        Feature::Pitch => truth.pitch_hz,
        _ => return None,
    };
    Some((actual, est))
}

/// R² of the attacker's estimate against truth as epsilon varies, with only
/// `attribute` defended. Undefended recordings are generated once and reused.
pub fn epsilon_sweep(
    attribute: Feature,
    epsilons: &[f64],
    spec: &ExperimentSpec,
) -> Result<Vec<SweepPoint>, HarnessError> {
    if epsilons.len() < MIN_SWEEP_POINTS {
        return Err(HarnessError::Spec(format!("sweep needs at least {MIN_SWEEP_POINTS} epsilon values")));
    }
    if let Some(e) = epsilons.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(HarnessError::Spec(format!("epsilon must be positive, got {e}")));
    }
    if !attribute.consumes_epsilon() || attribute == Feature::Handedness {
        return Err(HarnessError::Spec(format!("`{attribute}` is not a continuous noisy attribute")));
    }
    if spec.users < 2 {
        return Err(HarnessError::Spec("sweep needs at least 2 users".into()));
    }
    let mut users = sample_population(spec.users, spec.seed, spec.distribution);
    for u in users.iter_mut() {
        u.jitter_m = spec.jitter_m;
    }
    let one = ExperimentSpec {
        sessions: 1,
        ..spec.clone()
    };
    let raws = raw_sessions(&one, &users)?;
    epsilons
        .iter()
        .map(|&eps| {
            let pairs: Vec<(f64, f64)> = raws
                .par_iter()
                .map(|r| {
                    let mut cfg = DefenseConfig::only(PrivacyLevel::High, user_seed(spec.seed, r.user), &[attribute]);
                    cfg.overrides.insert(attribute, eps);
                    let mut s = begin_session(&cfg, &r.calibrated, 0)?;
                    let out = s.process_stream(&r.frames)?;
                    Ok(sweep_pair(attribute, &out.frames, &users[r.user as usize].truth))
                })
                .collect::<Result<Vec<_>, HarnessError>>()?
                .into_iter()
                .flatten()
                .collect();
            let (a, p): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            Ok(SweepPoint {
                epsilon: eps,
                r2: r_squared(&a, &p),
            })
        })
        .collect()
}

pub fn sweep_to_csv(points: &[SweepPoint]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["epsilon", "r2"])
        .map_err(|e| HarnessError::Serialize(e.to_string()))?;
    for p in points {
        w.write_record([p.epsilon.to_string(), p.r2.to_string()])
            .map_err(|e| HarnessError::Serialize(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| HarnessError::Serialize(e.to_string()))
}

/// Ground truth inferred from a recording with the attack estimators.
/// Fields that cannot be estimated are left as NaN.
pub fn self_calibrate(frames: &[TelemetryFrame]) -> GroundTruth {
    let height = adversary::estimate_height_with(frames, adversary::HeightMethod::Max).unwrap_or(f64::NAN);
    let (arm_r, arm_l) = arm_reach(frames).unwrap_or((f64::NAN, f64::NAN));
    let (w, l) = adversary::estimate_room(frames).unwrap_or((f64::NAN, f64::NAN));
    GroundTruth::new(
        height,
        arm_r,
        arm_l,
        adversary::estimate_ipd(frames).unwrap_or(f64::NAN),
        adversary::estimate_pitch(frames).unwrap_or(f64::NAN),
        adversary::estimate_depth(frames, height).unwrap_or(f64::NAN),
        w,
        l,
        adversary::estimate_handedness(frames).unwrap_or(true),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplaySummary {
    pub frames_in: usize,
    pub frames_out: usize,
    pub warnings: Vec<NetWarning>,
    pub report: SessionReport,
}

/// Path of the session report written next to a replay output.
pub fn report_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".report.json");
    PathBuf::from(name)
}

/// Defend a recording and write it out, with the session report alongside.
///
/// Without `truth` the ground truth is inferred from the recording itself.
/// With the defenses off the input bytes are copied through unchanged.
pub fn replay_file(
    input: &Path,
    config: &DefenseConfig,
    output: &Path,
    truth: Option<&GroundTruth>,
    session_id: u64,
) -> Result<ReplaySummary, HarnessError> {
    let bytes = fs::read(input).map_err(io_err(input))?;
    let text = String::from_utf8(bytes.clone()).map_err(|e| TelemetryError::Malformed {
        line: 0,
        message: format!("not UTF-8: {e}"),
    })?;
    let frames = telemetry::parse_str(&text)?;
    let truth = truth.copied().unwrap_or_else(|| self_calibrate(&frames));
    let mut session = begin_session(config, &truth, session_id)?;
    let out = session.process_stream(&frames)?;
    if config.level == PrivacyLevel::Off {
        fs::write(output, &bytes).map_err(io_err(output))?;
    } else {
        telemetry::write_file(output, &out.frames)?;
    }
    let summary = ReplaySummary {
        frames_in: frames.len(),
        frames_out: out.frames.len(),
        warnings: out.warnings,
        report: session.report(),
    };
    let rp = report_path(output);
    let json = serde_json::to_string_pretty(&summary).map_err(|e| HarnessError::Serialize(e.to_string()))?;
    fs::write(&rp, json + "\n").map_err(io_err(&rp))?;
    Ok(summary)
}
