//! Stream schemas, temporal bucketing, and patient-day assembly.
//!
//! All timestamps are naive local civil time (no timezone arithmetic).
//! Activity epochs live on a 1-minute grid; camera frames carry millisecond
//! precision. A *patient-day* is the 1440-minute window starting at the
//! anchor hour (07:00 by default): slots `[0, 720)` are the day segment,
//! `[720, 1440)` the night segment. Missing epochs stay explicitly missing —
//! a zero count means "observed immobile", never "no data".

mod io;

pub use io::{
    au_frames_from_path, format_timestamp, parse_au_jsonl, parse_env_csv, parse_epoch_csv,
    parse_keypoints_jsonl, parse_occupancy_csv, parse_timestamp, write_au_jsonl, write_env_csv,
    write_epoch_csv, write_keypoints_jsonl, write_occupancy_csv, AuFrameReader,
};

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use thiserror::Error;

/// Minutes in one patient-day.
pub const SLOTS_PER_DAY: usize = 1440;
/// Minutes in one segment (day or night half).
pub const SLOTS_PER_SEGMENT: usize = 720;
/// Default wall-clock hour at which a patient-day starts.
pub const DEFAULT_ANCHOR_HOUR: u32 = 7;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}:{line}: malformed row: {problem}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        problem: String,
    },
    #[error("{path}:{line}: negative count {value}")]
    NegativeCount { path: PathBuf, line: u64, value: f64 },
    #[error("{path}:{line}: timestamp is not minute-aligned")]
    NotMinuteAligned { path: PathBuf, line: u64 },
    #[error("{path}:{line}: timestamps must be non-decreasing")]
    NonMonotonic { path: PathBuf, line: u64 },
    #[error("{path}:{line}: duplicate timestamp")]
    DuplicateTimestamp { path: PathBuf, line: u64 },
    #[error("{path}:{line}: unknown action unit `{name}`")]
    UnknownAu {
        path: PathBuf,
        line: u64,
        name: String,
    },
    #[error("{path}:{line}: unknown joint `{name}`")]
    UnknownJoint {
        path: PathBuf,
        line: u64,
        name: String,
    },
    #[error("{path}:{line}: {what} out of range: {value}")]
    OutOfRange {
        path: PathBuf,
        line: u64,
        what: String,
        value: f64,
    },
    #[error("{path}:{line}: {problem}")]
    InvariantViolation {
        path: PathBuf,
        line: u64,
        problem: String,
    },
    #[error("no data in any stream for patient `{patient}`")]
    NoData { patient: String },
    #[error("duplicate {site} epoch series anchored at {anchor}")]
    DuplicateSeries { site: Site, anchor: NaiveDateTime },
}

/// How parsers treat recoverable schema violations.
///
/// Strict (the default) turns every violation into an error. Lenient drops
/// the offending field or row with a `log::warn!` so long multi-day sensor
/// dumps survive isolated glitches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParsePolicy {
    Strict,
    Lenient,
}

impl Default for ParsePolicy {
    fn default() -> Self {
        ParsePolicy::Strict
    }
}

/// Wear site of an actigraphy sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Site {
    Wrist,
    Arm,
    Ankle,
}

impl Site {
    pub const ALL: [Site; 3] = [Site::Wrist, Site::Arm, Site::Ankle];

    pub fn as_str(self) -> &'static str {
        match self {
            Site::Wrist => "wrist",
            Site::Arm => "arm",
            Site::Ankle => "ankle",
        }
    }

    pub fn from_str(s: &str) -> Option<Site> {
        match s {
            "wrist" => Some(Site::Wrist),
            "arm" => Some(Site::Arm),
            "ankle" => Some(Site::Ankle),
            _ => None,
        }
    }
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Portion of a patient-day.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    /// All 1440 slots.
    All,
    /// First 720 slots (anchor hour to anchor hour + 12 h).
    Day,
    /// Last 720 slots.
    Night,
}

impl Segment {
    pub fn slot_range(self) -> std::ops::Range<usize> {
        match self {
            Segment::All => 0..SLOTS_PER_DAY,
            Segment::Day => 0..SLOTS_PER_SEGMENT,
            Segment::Night => SLOTS_PER_SEGMENT..SLOTS_PER_DAY,
        }
    }

    pub fn contains_slot(self, slot: usize) -> bool {
        self.slot_range().contains(&slot)
    }

    pub fn len(self) -> usize {
        self.slot_range().len()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Segment::All => "all",
            Segment::Day => "day",
            Segment::Night => "night",
        }
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Anchor (start timestamp) of the patient-day containing `ts`.
///
/// A timestamp before the anchor hour belongs to the *previous* civil date's
/// window: with the default anchor, 06:59 maps to yesterday 07:00.
pub fn day_anchor(ts: NaiveDateTime, anchor_hour: u32) -> NaiveDateTime {
    debug_assert!(anchor_hour < 24);
    let shifted = ts - Duration::hours(i64::from(anchor_hour));
    shifted
        .date()
        .and_hms_opt(anchor_hour, 0, 0)
        .expect("anchor hour < 24")
}

/// Minute slot of `ts` within the patient-day starting at `anchor`, or
/// `None` when `ts` falls outside that window.
pub fn slot_within(anchor: NaiveDateTime, ts: NaiveDateTime) -> Option<usize> {
    if ts < anchor {
        return None;
    }
    let minutes = (ts - anchor).num_minutes();
    if (0..SLOTS_PER_DAY as i64).contains(&minutes) {
        Some(minutes as usize)
    } else {
        None
    }
}

/// Is `ts` a whole minute (zero seconds, zero subseconds)?
pub fn minute_aligned(ts: NaiveDateTime) -> bool {
    ts.second() == 0 && ts.nanosecond() == 0
}

/// Day/night segment of an arbitrary timestamp under the given anchor.
pub fn segment_of_time(ts: NaiveDateTime, anchor_hour: u32) -> Segment {
    let slot = slot_within(day_anchor(ts, anchor_hour), ts).expect("ts lies in its own day");
    if slot < SLOTS_PER_SEGMENT {
        Segment::Day
    } else {
        Segment::Night
    }
}

// ---------------------------------------------------------------------------
// Action-unit registry
// ---------------------------------------------------------------------------

/// How the upstream extractor codes an action unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuCoding {
    /// Presence channel only (0/1).
    Binary,
    /// Intensity channel only (0–5).
    Intensity,
    /// Both channels.
    Both,
}

/// The 15 action units emitted by the face pipeline, with their coding.
pub const AU_REGISTRY: &[(u8, AuCoding)] = &[
    (1, AuCoding::Intensity),
    (2, AuCoding::Intensity),
    (4, AuCoding::Both),
    (5, AuCoding::Intensity),
    (6, AuCoding::Intensity),
    (9, AuCoding::Intensity),
    (12, AuCoding::Both),
    (14, AuCoding::Intensity),
    (15, AuCoding::Both),
    (17, AuCoding::Intensity),
    (20, AuCoding::Intensity),
    (23, AuCoding::Binary),
    (25, AuCoding::Intensity),
    (28, AuCoding::Binary),
    (45, AuCoding::Binary),
];

/// Coding of action unit `n`, or `None` when the pipeline does not emit it.
pub fn au_coding(n: u8) -> Option<AuCoding> {
    AU_REGISTRY
        .iter()
        .find(|(au, _)| *au == n)
        .map(|(_, coding)| *coding)
}

/// Canonical zero-padded name (`4` → `"AU04"`).
pub fn au_name(n: u8) -> String {
    format!("AU{n:02}")
}

/// Parse `"AU04"` / `"AU4"` → `4`. Case-sensitive, no registry check.
pub fn parse_au_name(s: &str) -> Option<u8> {
    let digits = s.strip_prefix("AU")?;
    if digits.is_empty() || digits.len() > 2 {
        return None;
    }
    digits.parse().ok()
}

// ---------------------------------------------------------------------------
// Stream records
// ---------------------------------------------------------------------------

/// One minute-epoch actigraphy series inside a single patient-day.
///
/// Exactly [`SLOTS_PER_DAY`] slots; unobserved slots are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochSeries {
    pub site: Site,
    pub anchor: NaiveDateTime,
    slots: Vec<Option<f64>>,
}

impl EpochSeries {
    pub fn new(site: Site, anchor: NaiveDateTime) -> Self {
        EpochSeries {
            site,
            anchor,
            slots: vec![None; SLOTS_PER_DAY],
        }
    }

    /// Build from explicit (slot, count) pairs. Panics on out-of-range slots.
    pub fn from_pairs(
        site: Site,
        anchor: NaiveDateTime,
        pairs: impl IntoIterator<Item = (usize, f64)>,
    ) -> Self {
        let mut series = EpochSeries::new(site, anchor);
        for (slot, count) in pairs {
            series.set(slot, count);
        }
        series
    }

    pub fn set(&mut self, slot: usize, count: f64) {
        self.slots[slot] = Some(count);
    }

    pub fn get(&self, slot: usize) -> Option<f64> {
        self.slots[slot]
    }

    /// All slots in order (length [`SLOTS_PER_DAY`]).
    pub fn slots(&self) -> &[Option<f64>] {
        &self.slots
    }

    /// Observed `(slot, count)` pairs within `segment`, in slot order.
    pub fn observed(&self, segment: Segment) -> impl Iterator<Item = (usize, f64)> + '_ {
        segment
            .slot_range()
            .filter_map(move |slot| self.slots[slot].map(|v| (slot, v)))
    }

    pub fn observed_len(&self, segment: Segment) -> usize {
        self.observed(segment).count()
    }

    /// Missing slots strictly between the first and last observation
    /// (interior gaps — leading and trailing absence is not counted).
    pub fn interior_missing(&self) -> usize {
        let mut first = None;
        let mut last = 0;
        for (slot, value) in self.slots.iter().enumerate() {
            if value.is_some() {
                first.get_or_insert(slot);
                last = slot;
            }
        }
        match first {
            Some(first) => (first..=last).filter(|&s| self.slots[s].is_none()).count(),
            None => 0,
        }
    }
}

/// One face-pipeline frame: detection success plus per-AU channels.
///
/// Keys are action-unit numbers; canonical wire names are zero-padded
/// (see [`au_name`]). `success == false` frames carry whatever channels the
/// extractor produced, but downstream expression counting ignores them.
#[derive(Debug, Clone, PartialEq)]
pub struct AuFrame {
    pub ts: NaiveDateTime,
    pub success: bool,
    pub intensity: BTreeMap<u8, f64>,
    pub presence: BTreeMap<u8, u8>,
}

impl AuFrame {
    pub fn new(ts: NaiveDateTime, success: bool) -> Self {
        AuFrame {
            ts,
            success,
            intensity: BTreeMap::new(),
            presence: BTreeMap::new(),
        }
    }
}

/// Named skeleton joints emitted by the pose pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    Nose,
    Neck,
    LShoulder,
    RShoulder,
    LElbow,
    RElbow,
    LWrist,
    RWrist,
    LHip,
    RHip,
    LKnee,
    RKnee,
    LAnkle,
    RAnkle,
    LEye,
    REye,
    LEar,
    REar,
}

pub const JOINT_COUNT: usize = 18;

impl Joint {
    pub const ALL: [Joint; JOINT_COUNT] = [
        Joint::Nose,
        Joint::Neck,
        Joint::LShoulder,
        Joint::RShoulder,
        Joint::LElbow,
        Joint::RElbow,
        Joint::LWrist,
        Joint::RWrist,
        Joint::LHip,
        Joint::RHip,
        Joint::LKnee,
        Joint::RKnee,
        Joint::LAnkle,
        Joint::RAnkle,
        Joint::LEye,
        Joint::REye,
        Joint::LEar,
        Joint::REar,
    ];

    pub fn index(self) -> usize {
        Joint::ALL.iter().position(|j| *j == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Joint::Nose => "nose",
            Joint::Neck => "neck",
            Joint::LShoulder => "l_shoulder",
            Joint::RShoulder => "r_shoulder",
            Joint::LElbow => "l_elbow",
            Joint::RElbow => "r_elbow",
            Joint::LWrist => "l_wrist",
            Joint::RWrist => "r_wrist",
            Joint::LHip => "l_hip",
            Joint::RHip => "r_hip",
            Joint::LKnee => "l_knee",
            Joint::RKnee => "r_knee",
            Joint::LAnkle => "l_ankle",
            Joint::RAnkle => "r_ankle",
            Joint::LEye => "l_eye",
            Joint::REye => "r_eye",
            Joint::LEar => "l_ear",
            Joint::REar => "r_ear",
        }
    }

    pub fn from_str(s: &str) -> Option<Joint> {
        Joint::ALL.iter().copied().find(|j| j.as_str() == s)
    }
}

/// A 2-D joint observation in pixel coordinates plus detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// One pose frame: detected joints on a `width` × `height` pixel canvas.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub ts: NaiveDateTime,
    pub width: u32,
    pub height: u32,
    joints: [Option<Keypoint>; JOINT_COUNT],
}

impl KeypointFrame {
    pub fn new(ts: NaiveDateTime, width: u32, height: u32) -> Self {
        KeypointFrame {
            ts,
            width,
            height,
            joints: [None; JOINT_COUNT],
        }
    }

    pub fn joint(&self, joint: Joint) -> Option<Keypoint> {
        self.joints[joint.index()]
    }

    pub fn set_joint(&mut self, joint: Joint, kp: Keypoint) {
        self.joints[joint.index()] = Some(kp);
    }

    pub fn joints(&self) -> impl Iterator<Item = (Joint, Keypoint)> + '_ {
        Joint::ALL
            .iter()
            .filter_map(move |&j| self.joints[j.index()].map(|kp| (j, kp)))
    }

    pub fn present_count(&self) -> usize {
        self.joints.iter().filter(|j| j.is_some()).count()
    }

    /// Check that every present joint lies inside the frame and carries a
    /// confidence in `[0, 1]`.
    pub fn in_bounds(&self) -> bool {
        self.joints().all(|(_, kp)| {
            kp.x >= 0.0
                && kp.x <= f64::from(self.width)
                && kp.y >= 0.0
                && kp.y <= f64::from(self.height)
                && (0.0..=1.0).contains(&kp.confidence)
        })
    }
}

/// Exactly one sound representation per sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SoundReading {
    /// Acoustic pressure in pascals (must be positive).
    PressurePa(f64),
    /// Already-converted sound pressure level in dB.
    LevelDb(f64),
}

/// Ambient sample: sound plus optional illuminance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSample {
    pub ts: NaiveDateTime,
    pub sound: SoundReading,
    pub lux: Option<f64>,
}

/// Room-occupancy frame from the person detector.
///
/// `count` includes the patient whenever they were recognized, so
/// `patient_recognized` implies `count >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyFrame {
    pub ts: NaiveDateTime,
    pub count: u32,
    pub patient_recognized: bool,
}

// ---------------------------------------------------------------------------
// Patient-day assembly
// ---------------------------------------------------------------------------

/// Every stream of one patient clipped to a single 1440-minute window.
#[derive(Debug, Clone, Default)]
pub struct PatientDayStreams {
    pub epochs: BTreeMap<Site, EpochSeries>,
    pub au_frames: Vec<AuFrame>,
    pub keypoints: Vec<KeypointFrame>,
    pub env: Vec<EnvSample>,
    pub occupancy: Vec<OccupancyFrame>,
}

impl PatientDayStreams {
    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
            && self.au_frames.is_empty()
            && self.keypoints.is_empty()
            && self.env.is_empty()
            && self.occupancy.is_empty()
    }
}

/// One patient-day: anchor timestamp plus all clipped streams.
#[derive(Debug, Clone)]
pub struct PatientDay {
    pub patient: String,
    pub anchor: NaiveDateTime,
    pub streams: PatientDayStreams,
}

impl PatientDay {
    /// Minute slot of `ts` within this window.
    pub fn slot_of(&self, ts: NaiveDateTime) -> Option<usize> {
        slot_within(self.anchor, ts)
    }

    /// Day/night segment of `ts` within this window.
    pub fn segment_of(&self, ts: NaiveDateTime) -> Option<Segment> {
        self.slot_of(ts).map(|slot| {
            if slot < SLOTS_PER_SEGMENT {
                Segment::Day
            } else {
                Segment::Night
            }
        })
    }

    /// Civil date of the anchor, used as the day identifier in artifacts.
    pub fn day_id(&self) -> String {
        self.anchor.date().format("%Y-%m-%d").to_string()
    }
}

/// Bucket parsed streams into per-anchor [`PatientDay`]s.
///
/// Epoch series are already day-bucketed by the parser; frames and samples
/// are assigned by timestamp. Days are returned in anchor order; a day is
/// emitted as soon as any stream touches it. Errors when every stream is
/// empty, or when two epoch series collide on (site, anchor).
pub fn assemble_patient_days(
    patient: &str,
    anchor_hour: u32,
    epochs: Vec<EpochSeries>,
    au_frames: Vec<AuFrame>,
    keypoints: Vec<KeypointFrame>,
    env: Vec<EnvSample>,
    occupancy: Vec<OccupancyFrame>,
) -> Result<Vec<PatientDay>, IngestError> {
    let mut days: BTreeMap<NaiveDateTime, PatientDayStreams> = BTreeMap::new();

    for series in epochs {
        let slot = days.entry(series.anchor).or_default();
        if slot.epochs.insert(series.site, series.clone()).is_some() {
            return Err(IngestError::DuplicateSeries {
                site: series.site,
                anchor: series.anchor,
            });
        }
    }
    for frame in au_frames {
        let anchor = day_anchor(frame.ts, anchor_hour);
        days.entry(anchor).or_default().au_frames.push(frame);
    }
    for frame in keypoints {
        let anchor = day_anchor(frame.ts, anchor_hour);
        days.entry(anchor).or_default().keypoints.push(frame);
    }
    for sample in env {
        let anchor = day_anchor(sample.ts, anchor_hour);
        days.entry(anchor).or_default().env.push(sample);
    }
    for frame in occupancy {
        let anchor = day_anchor(frame.ts, anchor_hour);
        days.entry(anchor).or_default().occupancy.push(frame);
    }

    if days.is_empty() {
        return Err(IngestError::NoData {
            patient: patient.to_string(),
        });
    }

    Ok(days
        .into_iter()
        .map(|(anchor, streams)| PatientDay {
            patient: patient.to_string(),
            anchor,
            streams,
        })
        .collect())
}
