//! Deterministic synthetic-cohort generator.
//!
//! Produces desk-scale multi-day patient streams — minute activity counts,
//! action-unit frames, skeleton keypoints, environment samples, occupancy
//! frames — in exactly the formats the ingest parsers accept, together
//! with ground-truth sidecars (true postures, true expression events, true
//! visitor counts). Two presets encode the documented group contrasts:
//! the `delirious` profile has elevated nighttime activity, fewer immobile
//! minutes, more nighttime (and fewer daytime) visits, louder nights, and
//! brighter evenings than `non_delirious`.
//!
//! Generation is reproducible: a fixed profile seed yields byte-identical
//! files. Each patient derives an independent seed, and each stream within
//! a patient draws from its own generator, so patients can be generated in
//! parallel and streams evolve independently.

use crate::facs::{EvalConfig, Term};
use crate::ingest::{
    au_coding, AuCoding, AuFrame, EnvSample, EpochSeries, Joint, Keypoint, KeypointFrame,
    OccupancyFrame, Site, SoundReading, SLOTS_PER_DAY, SLOTS_PER_SEGMENT,
};
use crate::posture::PostureLabel;
use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma, Normal, Poisson};
use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SimulatorError {
    #[error("invalid profile: {}", .0.join("; "))]
    BadProfile(Vec<String>),
    #[error("unknown preset `{0}` (expected `delirious` or `non_delirious`)")]
    UnknownPreset(String),
    #[error("need at least one patient and one day (got {patients} patients, {days} days)")]
    BadDimensions { patients: u32, days: u32 },
}

/// Everything that parameterizes one simulated cohort.
///
/// Hourly curves are indexed by clock hour 0–23. Sampling rates are in
/// events per hour; a zero rate leaves that stream empty.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortProfile {
    pub group: String,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub anchor_hour: u32,

    /// Gamma mean of non-zero minute counts, per clock hour (wrist).
    pub hourly_activity_mean: [f64; 24],
    /// Probability a minute is immobile (count exactly zero), per clock hour.
    pub hourly_zero_prob: [f64; 24],
    /// Gamma shape of non-zero counts (scale follows from the mean).
    pub gamma_shape: f64,
    /// Multipliers applied to the activity curve per site (wrist, arm, ankle).
    pub site_scale: [f64; 3],

    pub au_frames_per_hour: f64,
    /// Probability a video frame yields a usable face detection.
    pub detection_success_rate: f64,
    /// Per-frame occurrence probability of each expression, by rule name.
    pub expression_rates: Vec<(String, f64)>,

    pub keypoint_frames_per_hour: f64,
    /// Stationary posture distribution (lying, sitting-on-bed,
    /// sitting-on-chair, standing); must sum to 1.
    pub posture_dwell: [f64; 4],
    /// Mean dwell (minutes) before the posture is redrawn.
    pub posture_dwell_mean_min: f64,
    /// Gaussian pixel jitter applied to every emitted joint.
    pub joint_jitter_px: f64,
    /// Probability an individual limb joint goes undetected in a frame.
    pub joint_drop_prob: f64,

    pub occupancy_frames_per_hour: f64,
    pub visits_per_hour_day: f64,
    pub visits_per_hour_night: f64,
    pub visit_mean_min: f64,
    /// Probability the patient's face is recognized in an occupancy frame.
    pub recognition_rate: f64,

    pub env_samples_per_hour: f64,
    pub spl_day_db: f64,
    pub spl_night_db: f64,
    pub spl_noise_db: f64,
    pub spl_events_per_hour: f64,
    /// Level added on top of the baseline while an acoustic event fires.
    pub spl_event_db: f64,
    pub hourly_lux: [f64; 24],
    pub lux_noise: f64,
}

fn hourly(day: f64, night: f64, anchor_hour: u32) -> [f64; 24] {
    let mut curve = [0.0; 24];
    for (hour, value) in curve.iter_mut().enumerate() {
        let anchored = (hour as u32 + 24 - anchor_hour) % 24;
        *value = if anchored < 12 { day } else { night };
    }
    curve
}

impl CohortProfile {
    /// Collect every validation problem at once.
    pub fn validate(&self) -> Result<(), SimulatorError> {
        let mut problems = Vec::new();
        if self.group.is_empty() || !self.group.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            problems.push("group name must be a non-empty [A-Za-z0-9_-]+ token".to_string());
        }
        if self.anchor_hour >= 24 {
            problems.push(format!("anchor_hour {} outside [0, 24)", self.anchor_hour));
        }
        if !(self.gamma_shape > 0.0) {
            problems.push(format!("gamma_shape {} must be positive", self.gamma_shape));
        }
        for (name, rate) in [
            ("au_frames_per_hour", self.au_frames_per_hour),
            ("keypoint_frames_per_hour", self.keypoint_frames_per_hour),
            ("occupancy_frames_per_hour", self.occupancy_frames_per_hour),
            ("env_samples_per_hour", self.env_samples_per_hour),
            ("visits_per_hour_day", self.visits_per_hour_day),
            ("visits_per_hour_night", self.visits_per_hour_night),
            ("spl_events_per_hour", self.spl_events_per_hour),
        ] {
            if !(rate >= 0.0) || !rate.is_finite() {
                problems.push(format!("{name} {rate} must be a finite rate >= 0"));
            }
        }
        for (name, p) in [
            ("detection_success_rate", self.detection_success_rate),
            ("recognition_rate", self.recognition_rate),
            ("joint_drop_prob", self.joint_drop_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                problems.push(format!("{name} {p} outside [0, 1]"));
            }
        }
        if self.hourly_activity_mean.iter().any(|m| !(*m >= 0.0)) {
            problems.push("hourly activity means must be >= 0".to_string());
        }
        if self.hourly_zero_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
            problems.push("hourly zero probabilities must lie in [0, 1]".to_string());
        }
        for (name, rate) in self.expression_rates.iter() {
            if !(0.0..=1.0).contains(rate) {
                problems.push(format!("expression rate for `{name}` outside [0, 1]"));
            }
        }
        let dwell_sum: f64 = self.posture_dwell.iter().sum();
        if self.posture_dwell.iter().any(|p| *p < 0.0) || (dwell_sum - 1.0).abs() > 1e-9 {
            problems.push(format!(
                "posture dwell distribution must be nonnegative and sum to 1 (sum {dwell_sum})"
            ));
        }
        if !(self.posture_dwell_mean_min > 0.0) {
            problems.push("posture_dwell_mean_min must be positive".to_string());
        }
        if !(self.visit_mean_min > 0.0) {
            problems.push("visit_mean_min must be positive".to_string());
        }
        if !(self.joint_jitter_px >= 0.0) {
            problems.push("joint_jitter_px must be >= 0".to_string());
        }
        if !(self.spl_noise_db >= 0.0) || !(self.lux_noise >= 0.0) {
            problems.push("noise scales must be >= 0".to_string());
        }
        if self.hourly_lux.iter().any(|l| !(*l >= 0.0)) {
            problems.push("hourly lux must be >= 0".to_string());
        }
        if self.site_scale.iter().any(|s| !(*s >= 0.0)) {
            problems.push("site scales must be >= 0".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(SimulatorError::BadProfile(problems))
        }
    }
}

/// Named cohort presets. Directions of every contrast between the two
/// (night activity, immobile minutes, visit timing, night SPL, evening
/// lux, expression suppression) follow the documented group differences.
pub fn preset(name: &str) -> Result<CohortProfile, SimulatorError> {
    let anchor = crate::ingest::DEFAULT_ANCHOR_HOUR;
    let expression_rates = |scale: f64, pain: f64| {
        vec![
            ("Happiness".to_string(), 0.080 * scale),
            ("Sadness".to_string(), 0.030 * scale),
            ("Surprise".to_string(), 0.020 * scale),
            ("Fear".to_string(), 0.012 * scale),
            ("Anger".to_string(), 0.015 * scale),
            ("Disgust".to_string(), 0.018 * scale),
            ("Contempt".to_string(), 0.025 * scale),
            ("Pain".to_string(), pain),
        ]
    };
    let mut lux = [0.0; 24];
    for (hour, value) in lux.iter_mut().enumerate() {
        *value = match hour {
            7..=18 => 250.0,
            19..=22 => 30.0, // evening
            _ => 5.0,        // deep night
        };
    }
    match name {
        "non_delirious" => Ok(CohortProfile {
            group: "non_delirious".to_string(),
            seed: 0,
            start_date: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
            anchor_hour: anchor,
            hourly_activity_mean: hourly(317.0, 283.0, anchor),
            hourly_zero_prob: hourly(0.78, 0.84, anchor),
            gamma_shape: 0.6,
            site_scale: [1.0, 0.5, 0.35],
            au_frames_per_hour: 120.0,
            detection_success_rate: 0.70,
            expression_rates: expression_rates(1.0, 0.02),
            keypoint_frames_per_hour: 60.0,
            posture_dwell: [0.55, 0.18, 0.07, 0.20],
            posture_dwell_mean_min: 45.0,
            joint_jitter_px: 2.5,
            joint_drop_prob: 0.04,
            occupancy_frames_per_hour: 60.0,
            visits_per_hour_day: 2.2,
            visits_per_hour_night: 0.3,
            visit_mean_min: 14.0,
            recognition_rate: 0.8,
            env_samples_per_hour: 60.0,
            spl_day_db: 52.0,
            spl_night_db: 44.0,
            spl_noise_db: 2.0,
            spl_events_per_hour: 0.5,
            spl_event_db: 12.0,
            hourly_lux: lux,
            lux_noise: 3.0,
        }),
        "delirious" => {
            let mut evening_lux = lux;
            for hour in 19..=22 {
                evening_lux[hour] = 130.0; // brighter evenings
            }
            for hour in [23, 0, 1, 2, 3, 4, 5, 6] {
                evening_lux[hour] = 15.0;
            }
            Ok(CohortProfile {
                group: "delirious".to_string(),
                seed: 0,
                start_date: NaiveDate::from_ymd_opt(2024, 3, 1).unwrap(),
                anchor_hour: anchor,
                hourly_activity_mean: hourly(680.0, 643.0, anchor),
                hourly_zero_prob: hourly(0.51, 0.50, anchor),
                gamma_shape: 0.6,
                site_scale: [1.0, 0.5, 0.35],
                au_frames_per_hour: 120.0,
                detection_success_rate: 0.70,
                // Expression suppressed for seven of eight; pain elevated.
                expression_rates: expression_rates(0.4, 0.035),
                keypoint_frames_per_hour: 60.0,
                posture_dwell: [0.72, 0.10, 0.12, 0.06],
                posture_dwell_mean_min: 45.0,
                joint_jitter_px: 2.5,
                joint_drop_prob: 0.04,
                occupancy_frames_per_hour: 60.0,
                visits_per_hour_day: 0.9,
                visits_per_hour_night: 1.1,
                visit_mean_min: 14.0,
                recognition_rate: 0.8,
                env_samples_per_hour: 60.0,
                spl_day_db: 54.0,
                spl_night_db: 52.0,
                spl_noise_db: 2.0,
                spl_events_per_hour: 1.0,
                spl_event_db: 12.0,
                hourly_lux: evening_lux,
                lux_noise: 3.0,
            })
        }
        other => Err(SimulatorError::UnknownPreset(other.to_string())),
    }
}

/// Ground-truth record of what the generator injected.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PatientTruth {
    /// True posture at every emitted keypoint frame.
    pub postures: Vec<(NaiveDateTime, PostureLabel)>,
    /// Expression events injected into successful AU frames.
    pub expressions: Vec<(NaiveDateTime, String)>,
    /// True visitor count at every emitted occupancy frame.
    pub visitor_frames: Vec<(NaiveDateTime, u32)>,
}

/// All streams for one simulated patient, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PatientStreams {
    pub patient_id: String,
    pub group: String,
    /// One series per day per site.
    pub epochs: BTreeMap<Site, Vec<EpochSeries>>,
    pub au_frames: Vec<AuFrame>,
    pub keypoints: Vec<KeypointFrame>,
    pub env: Vec<EnvSample>,
    pub occupancy: Vec<OccupancyFrame>,
    pub truth: PatientTruth,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a salt into a base seed; use to give each cohort of a multi-group
/// run an independent profile seed.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    splitmix64(base ^ splitmix64(salt))
}

/// Independent generator for one stream of one patient.
fn stream_rng(patient_seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(patient_seed ^ splitmix64(stream)))
}

const STREAM_EPOCHS: u64 = 1;
const STREAM_AU: u64 = 2;
const STREAM_POSE: u64 = 3;
const STREAM_ENV: u64 = 4;
const STREAM_OCCUPANCY: u64 = 5;

/// Canvas for synthetic keypoint frames.
pub const POSE_CANVAS_W: u32 = 368;
pub const POSE_CANVAS_H: u32 = 654;

/// Clock hour (0–23) of a minute slot within the anchored day.
fn clock_hour(slot: usize, anchor_hour: u32) -> usize {
    ((slot / 60) + anchor_hour as usize) % 24
}

/// Which action units a simulated expression activates, limited to the
/// registry the wire format can carry; unavailable rule terms are left
/// unexpressed (the lenient evaluator skips them).
fn activation_terms(expression: &str) -> &'static [Term] {
    const fn plain(au: u8) -> Term {
        Term {
            au,
            side: None,
            trace: false,
        }
    }
    const fn trace(au: u8) -> Term {
        Term {
            au,
            side: None,
            trace: true,
        }
    }
    const HAPPINESS: &[Term] = &[plain(6), plain(12)];
    const SADNESS: &[Term] = &[plain(1), plain(4), plain(15)];
    const SURPRISE: &[Term] = &[plain(1), plain(2), plain(5)];
    const FEAR: &[Term] = &[plain(1), plain(2), plain(4), plain(5), plain(20)];
    const ANGER: &[Term] = &[plain(4), plain(5), plain(23)];
    const DISGUST: &[Term] = &[plain(9), plain(15)];
    const CONTEMPT: &[Term] = &[trace(12), trace(14)];
    const PAIN: &[Term] = &[plain(4), plain(6), plain(9)];
    match expression {
        "Happiness" => HAPPINESS,
        "Sadness" => SADNESS,
        "Surprise" => SURPRISE,
        "Fear" => FEAR,
        "Anger" => ANGER,
        "Disgust" => DISGUST,
        "Contempt" => CONTEMPT,
        "Pain" => PAIN,
        _ => &[],
    }
}

/// Write an activation into the frame's channels, respecting the AU's
/// coding: binary AUs get presence, intensity AUs get a graded value, and
/// dual-coded AUs get both (presence thresholded at the standard level).
fn activate_au(frame: &mut AuFrame, term: &Term, cfg: &EvalConfig, rng: &mut ChaCha8Rng) {
    let intensity = if term.trace {
        // Weak activation: at the trace level, below the standard level.
        rng.gen_range(cfg.trace_threshold..cfg.intensity_threshold)
    } else {
        rng.gen_range(cfg.intensity_threshold + 0.2..3.5)
    };
    match au_coding(term.au) {
        Some(AuCoding::Binary) => {
            frame.presence.insert(term.au, 1);
        }
        Some(AuCoding::Intensity) => {
            let v = frame.intensity.entry(term.au).or_insert(0.0);
            *v = v.max(intensity);
        }
        Some(AuCoding::Both) => {
            let v = frame.intensity.entry(term.au).or_insert(0.0);
            *v = v.max(intensity);
            let present = u8::from(*v >= cfg.intensity_threshold);
            let p = frame.presence.entry(term.au).or_insert(0);
            *p = (*p).max(present);
        }
        None => {}
    }
}

fn simulate_epochs(profile: &CohortProfile, n_days: u32, patient_seed: u64) -> BTreeMap<Site, Vec<EpochSeries>> {
    let mut rng = stream_rng(patient_seed, STREAM_EPOCHS);
    let mut out: BTreeMap<Site, Vec<EpochSeries>> = BTreeMap::new();
    for day in 0..n_days {
        let anchor = day_anchor_ts(profile, day);
        for (site_idx, site) in Site::ALL.iter().enumerate() {
            let scale = profile.site_scale[site_idx];
            let mut series = EpochSeries::new(*site, anchor);
            for slot in 0..SLOTS_PER_DAY {
                let hour = clock_hour(slot, profile.anchor_hour);
                let mean = profile.hourly_activity_mean[hour] * scale;
                let zero_p = profile.hourly_zero_prob[hour];
                let count = if mean <= 0.0 || rng.gen_bool(zero_p) {
                    0.0
                } else {
                    let gamma = Gamma::new(profile.gamma_shape, mean / profile.gamma_shape)
                        .expect("validated shape/scale");
                    gamma.sample(&mut rng).round().max(0.0)
                };
                series.set(slot, count);
            }
            out.entry(*site).or_default().push(series);
        }
    }
    out
}

fn day_anchor_ts(profile: &CohortProfile, day: u32) -> NaiveDateTime {
    (profile.start_date + Duration::days(i64::from(day)))
        .and_hms_opt(profile.anchor_hour, 0, 0)
        .expect("validated anchor hour")
}

/// Sample times for a per-hour rate over one day: evenly spaced from the
/// anchor, `rate` per hour.
fn sample_times(profile: &CohortProfile, day: u32, per_hour: f64) -> Vec<NaiveDateTime> {
    if per_hour <= 0.0 {
        return Vec::new();
    }
    let interval_s = (3600.0 / per_hour).round().max(1.0) as i64;
    let anchor = day_anchor_ts(profile, day);
    let mut times = Vec::new();
    let mut offset = 0i64;
    while offset < 24 * 3600 {
        times.push(anchor + Duration::seconds(offset));
        offset += interval_s;
    }
    times
}

fn simulate_au(
    profile: &CohortProfile,
    n_days: u32,
    patient_seed: u64,
) -> (Vec<AuFrame>, Vec<(NaiveDateTime, String)>) {
    let mut rng = stream_rng(patient_seed, STREAM_AU);
    let eval_cfg = EvalConfig::default();
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    for day in 0..n_days {
        for ts in sample_times(profile, day, profile.au_frames_per_hour) {
            let success = rng.gen_bool(profile.detection_success_rate);
            let mut frame = AuFrame::new(ts, success);
            if success {
                // Low-level channel noise below every activation threshold.
                for &(au, coding) in crate::ingest::AU_REGISTRY {
                    match coding {
                        AuCoding::Binary => {
                            if rng.gen_bool(0.01) {
                                frame.presence.insert(au, 1);
                            }
                        }
                        AuCoding::Intensity | AuCoding::Both => {
                            if rng.gen_bool(0.3) {
                                frame.intensity.insert(au, rng.gen_range(0.0..0.4));
                            }
                            if coding == AuCoding::Both {
                                frame.presence.insert(au, 0);
                            }
                        }
                    }
                }
                for (name, rate) in &profile.expression_rates {
                    if *rate > 0.0 && rng.gen_bool(*rate) {
                        for term in activation_terms(name) {
                            activate_au(&mut frame, term, &eval_cfg, &mut rng);
                        }
                        truth.push((ts, name.clone()));
                    }
                }
            }
            frames.push(frame);
        }
    }
    (frames, truth)
}

/// Reference skeletons: joint positions per posture on the fixed canvas.
/// The four are geometrically separable through the poselet features
/// (torso-vertical angle, knee/hip angles, normalized limb lengths).
fn base_pose(label: PostureLabel) -> [(Joint, (f64, f64)); 14] {
    use Joint::*;
    match label {
        PostureLabel::Standing => [
            (Nose, (184.0, 120.0)),
            (Neck, (184.0, 150.0)),
            (LShoulder, (154.0, 158.0)),
            (RShoulder, (214.0, 158.0)),
            (LElbow, (146.0, 230.0)),
            (RElbow, (222.0, 230.0)),
            (LWrist, (142.0, 300.0)),
            (RWrist, (226.0, 300.0)),
            (LHip, (166.0, 330.0)),
            (RHip, (202.0, 330.0)),
            (LKnee, (164.0, 450.0)),
            (RKnee, (204.0, 450.0)),
            (LAnkle, (162.0, 570.0)),
            (RAnkle, (206.0, 570.0)),
        ],
        PostureLabel::Lying => [
            (Nose, (48.0, 392.0)),
            (Neck, (78.0, 400.0)),
            (LShoulder, (88.0, 382.0)),
            (RShoulder, (88.0, 418.0)),
            (LElbow, (128.0, 378.0)),
            (RElbow, (128.0, 422.0)),
            (LWrist, (168.0, 376.0)),
            (RWrist, (168.0, 424.0)),
            (LHip, (238.0, 390.0)),
            (RHip, (238.0, 410.0)),
            (LKnee, (296.0, 388.0)),
            (RKnee, (296.0, 412.0)),
            (LAnkle, (348.0, 386.0)),
            (RAnkle, (348.0, 414.0)),
        ],
        PostureLabel::SittingOnBed => [
            (Nose, (120.0, 268.0)),
            (Neck, (120.0, 298.0)),
            (LShoulder, (95.0, 308.0)),
            (RShoulder, (145.0, 308.0)),
            (LElbow, (88.0, 368.0)),
            (RElbow, (152.0, 368.0)),
            (LWrist, (86.0, 424.0)),
            (RWrist, (154.0, 424.0)),
            (LHip, (106.0, 420.0)),
            (RHip, (134.0, 420.0)),
            (LKnee, (196.0, 428.0)),
            (RKnee, (208.0, 432.0)),
            (LAnkle, (278.0, 432.0)),
            (RAnkle, (290.0, 438.0)),
        ],
        PostureLabel::SittingOnChair => [
            (Nose, (248.0, 248.0)),
            (Neck, (248.0, 278.0)),
            (LShoulder, (223.0, 288.0)),
            (RShoulder, (273.0, 288.0)),
            (LElbow, (218.0, 348.0)),
            (RElbow, (278.0, 348.0)),
            (LWrist, (216.0, 404.0)),
            (RWrist, (280.0, 404.0)),
            (LHip, (234.0, 398.0)),
            (RHip, (262.0, 398.0)),
            (LKnee, (304.0, 408.0)),
            (RKnee, (316.0, 412.0)),
            (LAnkle, (306.0, 528.0)),
            (RAnkle, (318.0, 532.0)),
        ],
    }
}

/// Render one keypoint frame of a posture with Gaussian jitter and random
/// limb dropouts (torso joints are always kept so features stay anchored).
pub fn pose_frame(
    label: PostureLabel,
    ts: NaiveDateTime,
    jitter_px: f64,
    drop_prob: f64,
    rng: &mut ChaCha8Rng,
) -> KeypointFrame {
    let mut frame = KeypointFrame::new(ts, POSE_CANVAS_W, POSE_CANVAS_H);
    let jitter = Normal::new(0.0, jitter_px.max(f64::MIN_POSITIVE)).unwrap();
    for (joint, (x, y)) in base_pose(label) {
        let core = matches!(joint, Joint::Neck | Joint::LHip | Joint::RHip);
        if !core && drop_prob > 0.0 && rng.gen_bool(drop_prob) {
            continue;
        }
        let (dx, dy) = if jitter_px > 0.0 {
            (jitter.sample(rng), jitter.sample(rng))
        } else {
            (0.0, 0.0)
        };
        frame.set_joint(
            joint,
            Keypoint {
                x: (x + dx).clamp(1.0, POSE_CANVAS_W as f64 - 1.0),
                y: (y + dy).clamp(1.0, POSE_CANVAS_H as f64 - 1.0),
                confidence: rng.gen_range(0.6..1.0),
            },
        );
    }
    frame
}

fn sample_posture(dwell: &[f64; 4], rng: &mut ChaCha8Rng) -> PostureLabel {
    let draw: f64 = rng.gen_range(0.0..1.0);
    let mut acc = 0.0;
    for (i, p) in dwell.iter().enumerate() {
        acc += p;
        if draw < acc {
            return PostureLabel::ALL[i];
        }
    }
    PostureLabel::ALL[3]
}

fn simulate_pose(
    profile: &CohortProfile,
    n_days: u32,
    patient_seed: u64,
) -> (Vec<KeypointFrame>, Vec<(NaiveDateTime, PostureLabel)>) {
    let mut rng = stream_rng(patient_seed, STREAM_POSE);
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    if profile.keypoint_frames_per_hour <= 0.0 {
        return (frames, truth);
    }
    let dwell = Exp::new(1.0 / profile.posture_dwell_mean_min).expect("validated dwell mean");
    for day in 0..n_days {
        let mut current = sample_posture(&profile.posture_dwell, &mut rng);
        let mut until_min = dwell.sample(&mut rng).max(1.0);
        let anchor = day_anchor_ts(profile, day);
        for ts in sample_times(profile, day, profile.keypoint_frames_per_hour) {
            let elapsed_min = (ts - anchor).num_seconds() as f64 / 60.0;
            while elapsed_min >= until_min {
                current = sample_posture(&profile.posture_dwell, &mut rng);
                until_min += dwell.sample(&mut rng).max(1.0);
            }
            frames.push(pose_frame(
                current,
                ts,
                profile.joint_jitter_px,
                profile.joint_drop_prob,
                &mut rng,
            ));
            truth.push((ts, current));
        }
    }
    (frames, truth)
}

fn simulate_env(profile: &CohortProfile, n_days: u32, patient_seed: u64) -> Vec<EnvSample> {
    let mut rng = stream_rng(patient_seed, STREAM_ENV);
    let mut samples = Vec::new();
    if profile.env_samples_per_hour <= 0.0 {
        return samples;
    }
    let noise = Normal::new(0.0, profile.spl_noise_db.max(f64::MIN_POSITIVE)).unwrap();
    let lux_noise = Normal::new(0.0, profile.lux_noise.max(f64::MIN_POSITIVE)).unwrap();
    let event_prob =
        (profile.spl_events_per_hour / profile.env_samples_per_hour).clamp(0.0, 1.0);
    for day in 0..n_days {
        let anchor = day_anchor_ts(profile, day);
        for ts in sample_times(profile, day, profile.env_samples_per_hour) {
            let slot = ((ts - anchor).num_seconds() / 60) as usize;
            let base = if slot < SLOTS_PER_SEGMENT {
                profile.spl_day_db
            } else {
                profile.spl_night_db
            };
            let mut level = base + if profile.spl_noise_db > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            if event_prob > 0.0 && rng.gen_bool(event_prob) {
                level += profile.spl_event_db;
            }
            let lux_base = profile.hourly_lux[clock_hour(slot.min(SLOTS_PER_DAY - 1), profile.anchor_hour)];
            let lux = (lux_base
                + if profile.lux_noise > 0.0 { lux_noise.sample(&mut rng) } else { 0.0 })
            .max(0.0);
            samples.push(EnvSample {
                ts,
                sound: SoundReading::LevelDb(level),
                lux: Some(lux),
            });
        }
    }
    samples
}

fn simulate_occupancy(
    profile: &CohortProfile,
    n_days: u32,
    patient_seed: u64,
) -> (Vec<OccupancyFrame>, Vec<(NaiveDateTime, u32)>) {
    let mut rng = stream_rng(patient_seed, STREAM_OCCUPANCY);
    let mut frames = Vec::new();
    let mut truth = Vec::new();
    if profile.occupancy_frames_per_hour <= 0.0 {
        return (frames, truth);
    }

    // Visit intervals, as minute offsets from the simulation start.
    let mut visits: Vec<(f64, f64)> = Vec::new();
    let total_hours = n_days as usize * 24;
    for hour in 0..total_hours {
        let slot_in_day = (hour % 24) * 60;
        let rate = if slot_in_day < SLOTS_PER_SEGMENT {
            profile.visits_per_hour_day
        } else {
            profile.visits_per_hour_night
        };
        if rate <= 0.0 {
            continue;
        }
        let arrivals = Poisson::new(rate).expect("validated rate").sample(&mut rng) as usize;
        for _ in 0..arrivals {
            let start = hour as f64 * 60.0 + rng.gen_range(0.0..60.0);
            let duration = Exp::new(1.0 / profile.visit_mean_min)
                .expect("validated mean")
                .sample(&mut rng)
                .max(1.0);
            visits.push((start, start + duration));
        }
    }

    let start_ts = day_anchor_ts(profile, 0);
    for day in 0..n_days {
        for ts in sample_times(profile, day, profile.occupancy_frames_per_hour) {
            let minute = (ts - start_ts).num_seconds() as f64 / 60.0;
            let visitors = visits
                .iter()
                .filter(|(a, b)| *a <= minute && minute < *b)
                .count() as u32;
            frames.push(OccupancyFrame {
                ts,
                count: 1 + visitors, // the patient plus anyone visiting
                patient_recognized: rng.gen_bool(profile.recognition_rate),
            });
            truth.push((ts, visitors));
        }
    }
    (frames, truth)
}

/// Generate one patient deterministically from the profile seed and the
/// patient's index within the cohort.
pub fn simulate_patient(
    profile: &CohortProfile,
    patient_index: u32,
    n_days: u32,
) -> Result<PatientStreams, SimulatorError> {
    profile.validate()?;
    if n_days == 0 {
        return Err(SimulatorError::BadDimensions {
            patients: 1,
            days: n_days,
        });
    }
    let patient_seed = splitmix64(profile.seed ^ splitmix64(u64::from(patient_index) + 1));
    let patient_id = format!("{}_{:02}", profile.group, patient_index + 1);

    let epochs = simulate_epochs(profile, n_days, patient_seed);
    let (au_frames, expressions) = simulate_au(profile, n_days, patient_seed);
    let (keypoints, postures) = simulate_pose(profile, n_days, patient_seed);
    let env = simulate_env(profile, n_days, patient_seed);
    let (occupancy, visitor_frames) = simulate_occupancy(profile, n_days, patient_seed);

    Ok(PatientStreams {
        patient_id,
        group: profile.group.clone(),
        epochs,
        au_frames,
        keypoints,
        env,
        occupancy,
        truth: PatientTruth {
            postures,
            expressions,
            visitor_frames,
        },
    })
}

/// Generate a whole cohort; patient `i` is independent of cohort size.
pub fn simulate_cohort(
    profile: &CohortProfile,
    n_patients: u32,
    n_days: u32,
) -> Result<Vec<PatientStreams>, SimulatorError> {
    if n_patients == 0 || n_days == 0 {
        return Err(SimulatorError::BadDimensions {
            patients: n_patients,
            days: n_days,
        });
    }
    (0..n_patients)
        .map(|i| simulate_patient(profile, i, n_days))
        .collect()
}

impl PatientStreams {
    /// Render every stream and truth sidecar as `(relative path, bytes)`
    /// pairs in the canonical ingest formats. Streams live under
    /// `<patient_id>/`, truth sidecars under `truth/<patient_id>/`.
    pub fn rendered_files(&self) -> io::Result<Vec<(String, Vec<u8>)>> {
        use crate::ingest::{
            format_timestamp, write_au_jsonl, write_env_csv, write_epoch_csv,
            write_keypoints_jsonl, write_occupancy_csv,
        };
        let mut files = Vec::new();
        let prefix = &self.patient_id;
        for (site, days) in &self.epochs {
            let mut buf = Vec::new();
            write_epoch_csv(&mut buf, days)?;
            files.push((format!("{prefix}/{}.csv", site.as_str()), buf));
        }
        let mut buf = Vec::new();
        write_au_jsonl(&mut buf, &self.au_frames)?;
        files.push((format!("{prefix}/au.jsonl"), buf));
        let mut buf = Vec::new();
        write_keypoints_jsonl(&mut buf, &self.keypoints)?;
        files.push((format!("{prefix}/keypoints.jsonl"), buf));
        let mut buf = Vec::new();
        write_env_csv(&mut buf, &self.env)?;
        files.push((format!("{prefix}/env.csv"), buf));
        let mut buf = Vec::new();
        write_occupancy_csv(&mut buf, &self.occupancy)?;
        files.push((format!("{prefix}/occupancy.csv"), buf));

        let mut buf = Vec::new();
        writeln!(buf, "timestamp,label")?;
        for (ts, label) in &self.truth.postures {
            writeln!(buf, "{},{}", format_timestamp(*ts), label.as_str())?;
        }
        files.push((format!("truth/{prefix}/postures.csv"), buf));
        let mut buf = Vec::new();
        writeln!(buf, "timestamp,expression")?;
        for (ts, name) in &self.truth.expressions {
            writeln!(buf, "{},{}", format_timestamp(*ts), name)?;
        }
        files.push((format!("truth/{prefix}/expressions.csv"), buf));
        let mut buf = Vec::new();
        writeln!(buf, "timestamp,visitors")?;
        for (ts, visitors) in &self.truth.visitor_frames {
            writeln!(buf, "{},{}", format_timestamp(*ts), visitors)?;
        }
        files.push((format!("truth/{prefix}/visits.csv"), buf));
        Ok(files)
    }

    /// Write every stream under `data_dir/<patient_id>/` and the truth
    /// sidecars under `data_dir/truth/<patient_id>/`.
    pub fn write_into(&self, data_dir: &Path) -> io::Result<()> {
        for (rel, bytes) in self.rendered_files()? {
            let path = data_dir.join(rel);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, bytes)?;
        }
        Ok(())
    }
}

/// Write the cohort membership table (`patient,group`).
pub fn write_groups_csv<W: Write>(
    w: &mut W,
    entries: impl IntoIterator<Item = (String, String)>,
) -> io::Result<()> {
    writeln!(w, "patient,group")?;
    for (patient, group) in entries {
        writeln!(w, "{patient},{group}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::facs::{builtin_rules, detect_expressions};
    use crate::ingest::Segment;
    use crate::posture::extract_poselet;

    fn small(profile: &mut CohortProfile) {
        profile.au_frames_per_hour = 6.0;
        profile.keypoint_frames_per_hour = 4.0;
        profile.occupancy_frames_per_hour = 6.0;
        profile.env_samples_per_hour = 6.0;
    }

    #[test]
    fn presets_encode_the_documented_group_contrasts() {
        let del = preset("delirious").unwrap();
        let non = preset("non_delirious").unwrap();
        del.validate().unwrap();
        non.validate().unwrap();

        let night_mean = |p: &CohortProfile| {
            (12..24)
                .map(|h| p.hourly_activity_mean[clock_hour(h * 60, p.anchor_hour)])
                .sum::<f64>()
                / 12.0
        };
        assert!(night_mean(&del) > night_mean(&non), "night activity");
        let night_zero = |p: &CohortProfile| p.hourly_zero_prob[clock_hour(800, p.anchor_hour)];
        assert!(night_zero(&del) < night_zero(&non), "immobility");
        assert!(del.visits_per_hour_day < non.visits_per_hour_day);
        assert!(del.visits_per_hour_night > non.visits_per_hour_night);
        assert!(del.spl_night_db > non.spl_night_db);
        assert!(del.hourly_lux[20] > non.hourly_lux[20], "evening lux");
        // Expression suppression for seven of the eight.
        let rate = |p: &CohortProfile, name: &str| {
            p.expression_rates
                .iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
        };
        for name in ["Happiness", "Sadness", "Surprise", "Fear", "Anger", "Disgust", "Contempt"] {
            assert!(rate(&del, name) < rate(&non, name), "{name}");
        }
        assert!(rate(&del, "Pain") > rate(&non, "Pain"));

        assert!(matches!(preset("bogus"), Err(SimulatorError::UnknownPreset(_))));
    }

    #[test]
    fn invalid_profiles_report_every_problem_at_once() {
        let mut profile = preset("delirious").unwrap();
        profile.posture_dwell = [0.5, 0.5, 0.5, 0.5];
        profile.detection_success_rate = 1.5;
        profile.gamma_shape = 0.0;
        match profile.validate() {
            Err(SimulatorError::BadProfile(problems)) => {
                assert_eq!(problems.len(), 3, "{problems:?}");
            }
            other => panic!("expected BadProfile, got {other:?}"),
        }
    }

    #[test]
    fn generation_is_deterministic_per_seed_and_varies_across_seeds() {
        let mut profile = preset("non_delirious").unwrap();
        small(&mut profile);
        profile.seed = 42;
        let a = simulate_patient(&profile, 0, 2).unwrap();
        let b = simulate_patient(&profile, 0, 2).unwrap();
        assert_eq!(a, b);

        profile.seed = 43;
        let c = simulate_patient(&profile, 0, 2).unwrap();
        assert_ne!(a, c);

        // Different patients from the same seed differ too.
        profile.seed = 42;
        let d = simulate_patient(&profile, 1, 2).unwrap();
        assert_ne!(a.au_frames, d.au_frames);
    }

    #[test]
    fn zero_rate_profile_yields_zero_activity_and_empty_streams() {
        let mut profile = preset("non_delirious").unwrap();
        profile.hourly_activity_mean = [0.0; 24];
        profile.hourly_zero_prob = [1.0; 24];
        profile.au_frames_per_hour = 0.0;
        profile.keypoint_frames_per_hour = 0.0;
        profile.occupancy_frames_per_hour = 0.0;
        profile.env_samples_per_hour = 0.0;
        profile.visits_per_hour_day = 0.0;
        profile.visits_per_hour_night = 0.0;
        let p = simulate_patient(&profile, 0, 1).unwrap();
        assert!(p.au_frames.is_empty());
        assert!(p.keypoints.is_empty());
        assert!(p.env.is_empty());
        assert!(p.occupancy.is_empty());
        for days in p.epochs.values() {
            for series in days {
                assert_eq!(series.observed_len(Segment::All), SLOTS_PER_DAY);
                assert!(series.observed(Segment::All).all(|(_, c)| c == 0.0));
            }
        }
    }

    #[test]
    fn truth_sidecar_is_consistent_with_emitted_streams() {
        let mut profile = preset("delirious").unwrap();
        small(&mut profile);
        profile.seed = 7;
        let p = simulate_patient(&profile, 0, 2).unwrap();

        // Visitor truth aligns one-to-one with occupancy frames.
        assert_eq!(p.truth.visitor_frames.len(), p.occupancy.len());
        for ((truth_ts, visitors), frame) in p.truth.visitor_frames.iter().zip(&p.occupancy) {
            assert_eq!(*truth_ts, frame.ts);
            assert_eq!(frame.count, 1 + visitors);
            if *visitors >= 1 {
                assert!(frame.count >= 2);
            }
        }

        // Posture truth aligns with keypoint frames.
        assert_eq!(p.truth.postures.len(), p.keypoints.len());
        for ((ts, _), frame) in p.truth.postures.iter().zip(&p.keypoints) {
            assert_eq!(*ts, frame.ts);
            assert!(frame.in_bounds());
        }

        // Every injected expression is detectable in its frame.
        let rules = builtin_rules();
        let index: std::collections::BTreeMap<&str, usize> = rules
            .iter()
            .enumerate()
            .map(|(i, r)| (r.name.as_str(), i))
            .collect();
        let by_ts: std::collections::BTreeMap<_, _> =
            p.au_frames.iter().map(|f| (f.ts, f)).collect();
        assert!(!p.truth.expressions.is_empty());
        for (ts, name) in &p.truth.expressions {
            let frame = by_ts[ts];
            assert!(frame.success);
            let hits = detect_expressions(frame, &rules, &EvalConfig::default()).unwrap();
            assert!(hits[index[name.as_str()]], "{name} not detected at {ts}");
        }
    }

    #[test]
    fn noiseless_poses_reproduce_separable_geometry() {
        let ts = day_anchor_ts(&preset("delirious").unwrap(), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let standing = pose_frame(PostureLabel::Standing, ts, 0.0, 0.0, &mut rng);
        let lying = pose_frame(PostureLabel::Lying, ts, 0.0, 0.0, &mut rng);
        let stand_features = extract_poselet(&standing);
        let lie_features = extract_poselet(&lying);
        // Torso-vertical angle separates the two sharply.
        assert!(stand_features.values[20].unwrap() < 0.1);
        assert!(lie_features.values[20].unwrap() > 1.2);
        for label in PostureLabel::ALL {
            let frame = pose_frame(label, ts, 0.0, 0.0, &mut rng);
            assert_eq!(frame.present_count(), 14);
            assert!(frame.in_bounds());
        }
    }

    #[test]
    fn epoch_days_cover_every_minute_and_respect_site_scaling() {
        let mut profile = preset("non_delirious").unwrap();
        small(&mut profile);
        let p = simulate_patient(&profile, 0, 3).unwrap();
        assert_eq!(p.epochs.len(), 3);
        for days in p.epochs.values() {
            assert_eq!(days.len(), 3);
            for series in days {
                assert_eq!(series.observed_len(Segment::All), SLOTS_PER_DAY);
            }
        }
        let total = |site: Site| -> f64 {
            p.epochs[&site]
                .iter()
                .flat_map(|s| s.observed(Segment::All))
                .map(|(_, c)| c)
                .sum()
        };
        // Wrist outweighs the scaled-down arm and ankle streams.
        assert!(total(Site::Wrist) > total(Site::Arm));
        assert!(total(Site::Arm) > total(Site::Ankle));
    }

    #[test]
    fn written_files_round_trip_through_the_strict_parsers() {
        use crate::ingest::{
            parse_au_jsonl, parse_env_csv, parse_epoch_csv, parse_keypoints_jsonl,
            parse_occupancy_csv, ParsePolicy,
        };
        let mut profile = preset("delirious").unwrap();
        small(&mut profile);
        profile.seed = 11;
        let p = simulate_patient(&profile, 0, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        p.write_into(dir.path()).unwrap();
        let pdir = dir.path().join(&p.patient_id);

        let wrist = parse_epoch_csv(pdir.join("wrist.csv"), Site::Wrist, profile.anchor_hour, ParsePolicy::Strict).unwrap();
        assert_eq!(wrist, p.epochs[&Site::Wrist]);
        let au = parse_au_jsonl(pdir.join("au.jsonl"), ParsePolicy::Strict).unwrap();
        assert_eq!(au, p.au_frames);
        let kp = parse_keypoints_jsonl(pdir.join("keypoints.jsonl"), ParsePolicy::Strict).unwrap();
        assert_eq!(kp, p.keypoints);
        let env = parse_env_csv(pdir.join("env.csv"), ParsePolicy::Strict).unwrap();
        assert_eq!(env, p.env);
        let occ = parse_occupancy_csv(pdir.join("occupancy.csv"), ParsePolicy::Strict).unwrap();
        assert_eq!(occ, p.occupancy);

        assert!(dir.path().join("truth").join(&p.patient_id).join("postures.csv").exists());
    }
}
