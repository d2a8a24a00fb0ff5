//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rayon::prelude::*;

use vr_incognito::adversary::{self, geolocate, Anchor, GeoModel};
use vr_incognito::harness::{
    epsilon_sweep, observed_anchor_rtts, run_experiment, ExperimentAttack, ExperimentSpec, ANCHORS_KM,
};
use vr_incognito::mechanisms::{
    epsilon_for_bias, randomized_response, rr_bias_for_epsilon, BoundedLaplace,
};
use vr_incognito::netshield::{clamp_latency, clamp_rate, TimedPacket, TIME_RESOLUTION_MS};
use vr_incognito::rng::RandomSource;
use vr_incognito::session::{begin_session, DefenseConfig, Feature, PrivacyLevel, Presets};
use vr_incognito::synthpop::{generate_session, sample_population, Distribution};
use vr_incognito::transforms::{
    apply_arm_ratio, apply_depth, apply_height, apply_room, apply_wingspan, ArmRatioMode, RetainedTruth,
    SessionOffsets, TelemetryFrame, Vec3,
};

use common::{ks_critical_001, ks_uniform, rel_err, truncated_laplace_cdf};

// Pinned tolerances and budgets.
const BOUNDS_DRAWS: usize = 100_000;
const BOUNDS_BUDGET: Duration = Duration::from_secs(10);
const RR_TRIALS: usize = 100_000;
const RR_TARGET: f64 = 0.75;
const RR_TOL: f64 = 0.01;
const RR_INVERSION_TOL: f64 = 1e-12;
const TRANSFORM_PAIRS: usize = 1000;
const TRANSFORM_REL_TOL: f64 = 1e-9;
const WORKED_EXAMPLE_TOL: f64 = 1e-12;
const SWEEP_USERS: usize = 300;
const SWEEP_EPSILONS: [f64; 4] = [0.1, 1.0, 3.0, 5.0];
const SWEEP_SLACK: f64 = 0.02;
const SWEEP_R2_AT_1: f64 = 0.5;
const SWEEP_BUDGET: Duration = Duration::from_secs(60);
const IDENT_USERS: usize = 100;
const IDENT_OFF_MIN: f64 = 90.0;
const IDENT_HIGH_MAX: f64 = 30.0;
const IDENT_BUDGET: Duration = Duration::from_secs(120);
const GEO_NOISELESS_KM: f64 = 1.0;
const GEO_CLAMPED_MIN_KM: f64 = 100.0;
const RECOVERY_REL_TOL: f64 = 0.01;
const RECOVERY_SESSIONS: usize = 200;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn frame(head: [f64; 3], right: [f64; 3], left: [f64; 3]) -> TelemetryFrame {
    TelemetryFrame::new(0.0, head.into(), right.into(), left.into())
}

fn bounds_guarantee() -> Outcome {
    let start = Instant::now();
    let presets = Presets::builtin();
    let mut total = 0usize;
    let mut outside = 0usize;
    for (&feature, attr) in &presets.attributes {
        if feature == Feature::Handedness {
            continue;
        }
        for level in [PrivacyLevel::Low, PrivacyLevel::Medium, PrivacyLevel::High] {
            let eps = attr.epsilon.get(level).unwrap();
            let params = presets.params(feature, eps).unwrap();
            let mut rng = RandomSource::derive(1, &["bounds".into(), feature.as_str().into(), level.as_str().into()]);
            let mut truth_rng = RandomSource::derive(2, &["bounds".into(), feature.as_str().into()]);
            let mut sampler = BoundedLaplace::new();
            for i in 0..BOUNDS_DRAWS {
                // include the bounds themselves and values just outside them
                let truth = match i % 50 {
                    0 => attr.lower,
                    1 => attr.upper,
                    2 => attr.upper + 0.1 * (attr.upper - attr.lower),
                    _ => truth_rng.uniform_in(attr.lower, attr.upper),
                };
                let y = sampler.sample(truth, &params, &mut rng).unwrap();
                total += 1;
                if !(y >= attr.lower && y <= attr.upper) {
                    outside += 1;
                }
            }
        }
    }
    let elapsed = start.elapsed();
    check(
        outside == 0 && elapsed < BOUNDS_BUDGET,
        format!("{total} draws, {outside} outside bounds, {:.2?}", elapsed),
    )
}

fn fair_coin_rr() -> Outcome {
    let mut rng = RandomSource::derive(3, &["rr".into()]);
    let truthful = (0..RR_TRIALS)
        .filter(|_| randomized_response(true, 0.5, &mut rng).unwrap())
        .count();
    let freq = truthful as f64 / RR_TRIALS as f64;
    let bias = rr_bias_for_epsilon(3f64.ln()).unwrap();
    let back = epsilon_for_bias(bias);
    let inv_err = (bias - 0.5).abs().max((back - 3f64.ln()).abs());
    check(
        (freq - RR_TARGET).abs() <= RR_TOL && inv_err <= RR_INVERSION_TOL,
        format!("truthful frequency {freq:.4}, ln 3 inversion error {inv_err:.1e}"),
    )
}

fn random_truth(rng: &mut RandomSource) -> RetainedTruth {
    let span = rng.uniform_in(1.556, 1.899);
    let q = rng.uniform_in(0.95, 1.05);
    let arm_l = span / (1.0 + q);
    RetainedTruth {
        height: rng.uniform_in(1.496, 1.826),
        squat_depth: rng.uniform_in(0.2, 0.913),
        arm_r: span - arm_l,
        arm_l,
        room_width: rng.uniform_in(1.0, 5.0),
        room_length: rng.uniform_in(1.0, 5.0),
    }
}

fn random_offsets(t: &RetainedTruth, rng: &mut RandomSource) -> SessionOffsets {
    let q = rng.uniform_in(0.95, 1.05);
    SessionOffsets {
        height: rng.uniform_in(1.496, 1.826),
        depth: rng.uniform_in(0.01, 0.913),
        span: rng.uniform_in(1.556, 1.899),
        ratio: q / (1.0 + q),
        room_width: rng.uniform_in(0.1, 5.0),
        room_length: rng.uniform_in(0.1, 5.0),
        ..SessionOffsets::identity(t)
    }
}

fn transform_exactness() -> Outcome {
    let mut rng = RandomSource::derive(4, &["transforms".into()]);
    let mut worst = [0.0f64; 5];
    let mut note = |i: usize, e: f64| worst[i] = worst[i].max(e);
    for _ in 0..TRANSFORM_PAIRS {
        let t = random_truth(&mut rng);
        let o = random_offsets(&t, &mut rng);
        let x = rng.uniform_in(-2.0, 2.0);
        let z = rng.uniform_in(-2.0, 2.0);
        let theta = rng.uniform_in(0.0, std::f64::consts::TAU);
        let dir = Vec3::new(theta.cos(), 0.0, theta.sin());
        let hands_y = rng.uniform_in(0.5, 1.6);

        // height: floor stays put, standing head reads height'
        let g = apply_height(&frame([x, 0.0, z], [x, hands_y, z], [x, hands_y, z]), &t, &o);
        note(0, g.head.y.abs() + (g.right.y - hands_y).abs());
        let g = apply_height(&frame([x, t.height, z], [x, hands_y, z], [x, hands_y, z]), &t, &o);
        note(0, rel_err(g.head.y, o.height));

        // depth: standing untouched, squat bottom reads height - depth'
        let g = apply_depth(&frame([x, t.height, z], [x, hands_y, z], [x, hands_y, z]), &t, &o);
        note(1, rel_err(g.head.y, t.height));
        let bottom = t.height - t.squat_depth;
        let g = apply_depth(&frame([x, bottom, z], [x, hands_y, z], [x, hands_y, z]), &t, &o);
        note(1, rel_err(t.height - g.head.y, o.depth));

        // wingspan: touching hands stay touching, extension reads span'
        let mid = Vec3::new(x, hands_y, z);
        let touch = frame([x, t.height, z], mid.to_array(), mid.to_array());
        let g = apply_wingspan(&touch, &t, &o);
        note(2, g.right.horizontal_distance(mid) + g.left.horizontal_distance(mid));
        let half = t.wingspan() / 2.0;
        let ext = frame(
            [x, t.height, z],
            mid.add(dir.scale(half)).to_array(),
            mid.sub(dir.scale(half)).to_array(),
        );
        let g = apply_wingspan(&ext, &t, &o);
        note(2, rel_err(g.right.horizontal_distance(g.left), o.span));

        // arm ratio: touching hands stay, each arm at its own length reads its share of span
        let g = apply_arm_ratio(&touch, &t, &o, ArmRatioMode::Corrected).unwrap();
        note(3, g.right.horizontal_distance(mid) + g.left.horizontal_distance(mid));
        let span = t.wingspan();
        for (arm, share, right) in [(t.arm_r, o.ratio, true), (t.arm_l, 1.0 - o.ratio, false)] {
            let f = frame(
                [x, t.height, z],
                mid.add(dir.scale(arm)).to_array(),
                mid.sub(dir.scale(arm)).to_array(),
            );
            let g = apply_arm_ratio(&f, &t, &o, ArmRatioMode::Corrected).unwrap();
            let reach = if right {
                g.right.horizontal_distance(mid)
            } else {
                g.left.horizontal_distance(mid)
            };
            note(3, rel_err(reach, span * share));
        }

        // room: centre fixed, corner reads (width'/2, length'/2)
        let g = apply_room(&frame([0.0, t.height, 0.0], [0.3, hands_y, 0.1], [-0.3, hands_y, 0.1]), &t, &o);
        note(4, g.head.x.abs() + g.head.z.abs() + (g.right.x - 0.3).abs());
        let corner = [t.room_width / 2.0, t.height, t.room_length / 2.0];
        let g = apply_room(&frame(corner, [0.0; 3], [0.0; 3]), &t, &o);
        note(4, rel_err(g.head.x, o.room_width / 2.0).max(rel_err(g.head.z, o.room_length / 2.0)));
    }

    let mut ex = 0.0f64;
    let base = RetainedTruth {
        height: 1.7,
        squat_depth: 0.5,
        arm_r: 0.85,
        arm_l: 0.85,
        room_width: 4.0,
        room_length: 3.0,
    };
    let mut o = SessionOffsets::identity(&base);
    o.height = 1.75;
    let g = apply_height(&frame([0.0, 0.85, 0.0], [0.2, 0.9, 0.0], [-0.2, 0.8, 0.0]), &base, &o);
    ex = ex.max((g.head.y - 0.875).abs()).max((g.right.y - 0.925).abs()).max((g.left.y - 0.825).abs());
    let mut o = SessionOffsets::identity(&base);
    o.room_width = 4.5;
    o.room_length = 2.7;
    let g = apply_room(&frame([2.0, 1.7, 1.5], [2.3, 1.2, 1.5], [1.7, 1.2, 1.5]), &base, &o);
    ex = ex.max((g.head.x - 2.25).abs()).max((g.head.z - 1.35).abs());
    let mut o = SessionOffsets::identity(&base);
    o.span = 1.8;
    let g = apply_wingspan(&frame([0.0, 1.7, 0.0], [0.85, 1.4, 0.0], [-0.85, 1.4, 0.0]), &base, &o);
    ex = ex.max((g.right.horizontal_distance(g.left) - 1.8).abs());
    let mut o = SessionOffsets::identity(&base);
    o.depth = 0.6;
    let g = apply_depth(&frame([0.0, 1.2, 0.0], [0.0; 3], [0.0; 3]), &base, &o);
    ex = ex.max((g.head.y - 1.1).abs());

    let names = ["height", "depth", "wingspan", "arm_ratio", "room"];
    let summary: Vec<String> = names
        .iter()
        .zip(worst)
        .map(|(n, w)| format!("{n} {w:.1e}"))
        .collect();
    check(
        worst.iter().all(|&w| w <= TRANSFORM_REL_TOL) && ex <= WORKED_EXAMPLE_TOL,
        format!("worst relative error: {}; worked examples {ex:.1e}", summary.join(", ")),
    )
}

fn sweep_trend() -> Outcome {
    let start = Instant::now();
    let mut spec = ExperimentSpec::new(SWEEP_USERS, 7, vec![PrivacyLevel::High], vec![ExperimentAttack::Height]);
    spec.sessions = 1;
    spec.duration_s = 20.0;
    let points = epsilon_sweep(Feature::Height, &SWEEP_EPSILONS, &spec).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let r2: Vec<f64> = points.iter().map(|p| p.r2).collect();
    let monotone = r2.windows(2).all(|w| w[1] >= w[0] - SWEEP_SLACK);
    let at_one = points.iter().find(|p| p.epsilon == 1.0).map(|p| p.r2).unwrap();
    let shown: Vec<String> = points.iter().map(|p| format!("{}:{:.3}", p.epsilon, p.r2)).collect();
    check(
        monotone && at_one < SWEEP_R2_AT_1 && elapsed < SWEEP_BUDGET,
        format!("R2 by epsilon [{}], {:.2?}", shown.join(" "), elapsed),
    )
}

fn identification() -> Outcome {
    let start = Instant::now();
    let spec = ExperimentSpec::new(
        IDENT_USERS,
        11,
        vec![PrivacyLevel::Off, PrivacyLevel::High],
        vec![ExperimentAttack::Identity],
    );
    let report = run_experiment(&spec).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let off = report.get("identity", "accuracy", PrivacyLevel::Off).unwrap().value;
    let high = report.get("identity", "accuracy", PrivacyLevel::High).unwrap().value;
    check(
        off >= IDENT_OFF_MIN && high <= IDENT_HIGH_MAX && elapsed < IDENT_BUDGET,
        format!("accuracy off {off:.1}%, high {high:.1}%, {:.2?}", elapsed),
    )
}

fn clamp_behavior() -> Outcome {
    let mut rng = RandomSource::derive(5, &["clamps".into()]);
    let presets = Presets::builtin();

    // latency: every intrinsic RTT at or under the clamp reads exactly the clamp
    let mut latency_var = 0.0f64;
    for level in [PrivacyLevel::Low, PrivacyLevel::Medium, PrivacyLevel::High] {
        let clamp = presets.clamp(Feature::LatencyGeo, level).unwrap();
        let packets = (0..1000)
            .map(|i| {
                let f = frame([0.0; 3], [0.0; 3], [0.0; 3]);
                TimedPacket::new(f, i as f64, rng.uniform_in(0.0, clamp))
            })
            .chain([TimedPacket::new(frame([0.0; 3], [0.0; 3], [0.0; 3]), 1000.0, clamp)])
            .collect();
        let out = clamp_latency(packets, clamp).map_err(|e| e.to_string())?;
        let rtts: Vec<f64> = out.iter().map(TimedPacket::observed_rtt_ms).collect();
        let mean = rtts.iter().sum::<f64>() / rtts.len() as f64;
        latency_var = latency_var.max(rtts.iter().map(|r| (r - mean).powi(2)).sum::<f64>());
    }

    // rate: output slots sit on the 1000/rate grid at clock resolution
    let mut grid_err = 0.0f64;
    for level in [PrivacyLevel::Low, PrivacyLevel::Medium, PrivacyLevel::High] {
        let hz = presets.clamp(Feature::RateClamp, level).unwrap();
        let frames: Vec<TelemetryFrame> = (0..2000)
            .map(|i| {
                let mut f = frame([0.0, 1.7, 0.0], [0.3, 1.2, 0.0], [-0.3, 1.2, 0.0]);
                f.t_ms = 3.0 + i as f64 * 1000.0 / 144.0;
                f
            })
            .collect();
        let (out, _) = clamp_rate(&frames, hz).map_err(|e| e.to_string())?;
        let t0 = out[0].t_ms;
        for (k, f) in out.iter().enumerate() {
            grid_err = grid_err.max((f.t_ms - (t0 + k as f64 * 1000.0 / hz)).abs());
        }
    }
    let rate_ok = grid_err <= TIME_RESOLUTION_MS / 2.0 + 1e-9;

    // geolocation on the anchor geometry
    let model = GeoModel::default();
    let mut noiseless = 0.0f64;
    let mut clamped_min = f64::INFINITY;
    for _ in 0..200 {
        let p = [rng.uniform_in(0.0, 4000.0), rng.uniform_in(0.0, 4000.0)];
        let anchors: Vec<Anchor> = ANCHORS_KM
            .iter()
            .map(|a| Anchor {
                position_km: *a,
                rtt_ms: model.rtt_for_distance((a[0] - p[0]).hypot(a[1] - p[1])),
            })
            .collect();
        let fix = geolocate(&anchors, &model).map_err(|e| e.to_string())?;
        noiseless = noiseless.max((fix.position_km[0] - p[0]).hypot(fix.position_km[1] - p[1]));

        // under the high clamp every anchor reads the same RTT; test points
        // away from the centre, where that tells the solver nothing
        if (p[0] - 2000.0).hypot(p[1] - 2000.0) < 500.0 {
            continue;
        }
        let clamp = presets.clamp(Feature::LatencyGeo, PrivacyLevel::High);
        let mut noise = RandomSource::derive(6, &["geo".into()]);
        let obs = observed_anchor_rtts(p, &model, clamp, &mut noise).map_err(|e| e.to_string())?;
        let err = match geolocate(&obs, &model) {
            Ok(fix) => (fix.position_km[0] - p[0]).hypot(fix.position_km[1] - p[1]),
            Err(_) => f64::INFINITY,
        };
        clamped_min = clamped_min.min(err);
    }
    check(
        latency_var == 0.0 && rate_ok && noiseless <= GEO_NOISELESS_KM && clamped_min >= GEO_CLAMPED_MIN_KM,
        format!(
            "latency variance {latency_var}, rate grid error {grid_err:.1e} ms, noiseless geo error {noiseless:.2e} km, clamped geo error min {clamped_min:.0} km"
        ),
    )
}

struct Recovered {
    worst_rel: f64,
    worst_attr: &'static str,
    handedness_ok: bool,
    pit: Vec<(&'static str, f64)>,
}

fn dp_recovery() -> Outcome {
    let presets = Presets::builtin();
    let users = sample_population(RECOVERY_SESSIONS, 13, Distribution::Uniform);
    let level = PrivacyLevel::High;
    let per_session: Vec<Recovered> = users
        .par_iter()
        .map(|u| {
            let g = generate_session(u, 20.0, u.device_rate_hz, 17).unwrap();
            let cfg = DefenseConfig::new(level, 1000 + u.id);
            let mut s = begin_session(&cfg, &u.truth, 0).unwrap();
            let frames = s.process_stream(&g.frames).unwrap().frames;
            let o = *s.offsets();
            let t = &u.truth;

            let h = adversary::estimate_height(&frames).unwrap();
            let (w, l) = adversary::estimate_room(&frames).unwrap();
            let (reach_r, reach_l) = adversary::arm_reach(&frames).unwrap();
            // the mirror swaps arms, so undo it before comparing quotients
            let reach_q = if o.mirrored { reach_l / reach_r } else { reach_r / reach_l };
            let est: [(&'static str, Feature, f64, f64, f64); 8] = [
                ("height", Feature::Height, h, o.height, t.height),
                ("depth", Feature::Depth, adversary::estimate_depth(&frames, h).unwrap(), o.depth, t.squat_depth),
                ("wingspan", Feature::Wingspan, adversary::estimate_wingspan(&frames).unwrap(), o.span, t.wingspan),
                ("arm_ratio", Feature::ArmRatio, reach_q, o.ratio / (1.0 - o.ratio), t.arm_r / t.arm_l),
                ("room_width", Feature::Room, w, o.room_width, t.room_width),
                ("room_length", Feature::Room, l, o.room_length, t.room_length),
                ("ipd", Feature::Ipd, adversary::estimate_ipd(&frames).unwrap(), t.ipd_mm + o.ipd_offset_mm, t.ipd_mm),
                ("pitch", Feature::Pitch, adversary::estimate_pitch(&frames).unwrap(), t.pitch_hz + o.pitch_offset_hz, t.pitch_hz),
            ];
            let mut worst_rel = 0.0;
            let mut worst_attr = "";
            let mut pit = Vec::new();
            for (name, feature, estimate, noisy, truth) in est {
                let e = rel_err(estimate, noisy);
                if e > worst_rel {
                    worst_rel = e;
                    worst_attr = name;
                }
                let attr = presets.attribute(feature);
                let eps = attr.epsilon.get(level).unwrap();
                let scale = (attr.upper - attr.lower) / eps;
                let centre = truth.clamp(attr.lower, attr.upper);
                pit.push((name, truncated_laplace_cdf(estimate, centre, scale, attr.lower, attr.upper)));
            }
            let handed = adversary::estimate_handedness(&frames).unwrap();
            Recovered {
                worst_rel,
                worst_attr,
                handedness_ok: handed == (t.right_handed != o.mirrored),
                pit,
            }
        })
        .collect();

    let worst = per_session
        .iter()
        .max_by(|a, b| a.worst_rel.total_cmp(&b.worst_rel))
        .unwrap();
    let handed_ok = per_session.iter().all(|r| r.handedness_ok);
    let crit = ks_critical_001(per_session.len());
    let mut ks_fail = Vec::new();
    let mut ks_max = 0.0f64;
    for (i, (name, _)) in per_session[0].pit.iter().enumerate() {
        let d = ks_uniform(per_session.iter().map(|r| r.pit[i].1).collect());
        ks_max = ks_max.max(d);
        if d > crit {
            ks_fail.push(format!("{name} D={d:.3}"));
        }
    }
    check(
        worst.worst_rel <= RECOVERY_REL_TOL && handed_ok && ks_fail.is_empty(),
        format!(
            "{} sessions, worst estimator error {:.2e} ({}), handedness {}, max KS D {ks_max:.3} vs {crit:.3}{}",
            per_session.len(),
            worst.worst_rel,
            worst.worst_attr,
            if handed_ok { "exact" } else { "mismatch" },
            if ks_fail.is_empty() { String::new() } else { format!(", rejected: {}", ks_fail.join(" ")) }
        ),
    )
}

fn determinism() -> Outcome {
    let spec = ExperimentSpec::new(
        24,
        19,
        PrivacyLevel::ALL.to_vec(),
        ExperimentAttack::ALL.to_vec(),
    );
    let a = run_experiment(&spec).map_err(|e| e.to_string())?;
    let b = run_experiment(&spec).map_err(|e| e.to_string())?;
    let (ja, jb) = (a.to_json().unwrap(), b.to_json().unwrap());
    let (ca, cb) = (a.to_csv().unwrap(), b.to_csv().unwrap());
    check(
        ja == jb && ca == cb,
        format!("json {} bytes, csv {} bytes, {} rows", ja.len(), ca.len(), a.rows.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("bounds guarantee", bounds_guarantee),
        ("fair-coin randomized response", fair_coin_rr),
        ("transform exactness", transform_exactness),
        ("epsilon sweep trend", sweep_trend),
        ("identification degradation", identification),
        ("clamp behavior", clamp_behavior),
        ("noisy value recovery", dp_recovery),
        ("report determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
