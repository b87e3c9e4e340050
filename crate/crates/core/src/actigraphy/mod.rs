//! Rest–activity features from minute-epoch actigraphy.
//!
//! The 15-feature vector per (patient-day, site): segment means and SDs,
//! the most-active 10-hour and least-active 5-hour window sums (M10/L5)
//! with their start offsets, relative amplitude, RMSSD and RMSSD/SD, and
//! immobile-minute counts. Every feature is either defined or carries an
//! explicit reason why not; sparse coverage never silently becomes zero.

mod loess;

pub use loess::{group_activity_curve, loess_smooth, LoessFit, SmoothedCurve};

use crate::ingest::{EpochSeries, PatientDay, Segment, Site};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minutes in the most-active window (M10).
pub const M10_WIDTH: usize = 600;
/// Minutes in the least-active window (L5).
pub const L5_WIDTH: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum ActigraphyError {
    #[error("segment has no observed epochs")]
    EmptySegment,
    #[error("sample SD needs at least 2 observations")]
    TooFewForSampleSd,
    #[error("window width must be in 1..=1440, got {0}")]
    BadWindowWidth(usize),
    #[error("no window meets the coverage requirement")]
    NoEligibleWindow,
    #[error("relative amplitude undefined: m10 + l5 = 0")]
    ZeroAmplitudeSum,
    #[error("relative amplitude precondition violated: m10 {m10} < l5 {l5} (per-hour means)")]
    AmplitudeOrder { m10: f64, l5: f64 },
    #[error("no adjacent observed pairs")]
    NoAdjacentPairs,
    #[error("span must be in (0, 1], got {0}")]
    BadSpan(f64),
    #[error("degree must be 0, 1, or 2, got {0}")]
    BadDegree(usize),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite coordinate at point index {0}")]
    NonFinite(usize),
    #[error("no epoch series supplied")]
    NoSeries,
}

/// Denominator convention for standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdMode {
    /// Divide by n (the default).
    Population,
    /// Divide by n − 1.
    Sample,
}

impl Default for SdMode {
    fn default() -> Self {
        SdMode::Population
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ActigraphyConfig {
    pub sd_mode: SdMode,
    /// Minimum observed fraction a segment or window needs before a feature
    /// is defined on it.
    pub coverage_fraction: f64,
}

impl Default for ActigraphyConfig {
    fn default() -> Self {
        ActigraphyConfig {
            sd_mode: SdMode::Population,
            coverage_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Mean and SD of the observed epochs in a segment. Missing slots are
/// excluded, never imputed.
pub fn mean_sd(
    series: &EpochSeries,
    segment: Segment,
    mode: SdMode,
) -> Result<MeanSd, ActigraphyError> {
    let values: Vec<f64> = series.observed(segment).map(|(_, v)| v).collect();
    let n = values.len();
    if n == 0 {
        return Err(ActigraphyError::EmptySegment);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let sd = match mode {
        SdMode::Population => (ss / n as f64).sqrt(),
        SdMode::Sample => {
            if n < 2 {
                return Err(ActigraphyError::TooFewForSampleSd);
            }
            (ss / (n - 1) as f64).sqrt()
        }
    };
    Ok(MeanSd { mean, sd, n })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowMode {
    Max,
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtremeWindow {
    /// Start offset in minutes since the anchor.
    pub start_slot: usize,
    /// Sum of observed counts inside the window.
    pub sum: f64,
    /// Observed minutes inside the window.
    pub observed: usize,
}

/// Extreme-sum sliding window over the whole patient-day.
///
/// Candidate starts step by one minute and never cross the day boundary
/// (`start + width <= 1440`). A window is eligible when it holds at least
/// one observation and at least `min_coverage × width` observed minutes.
/// Ties go to the earliest start.
pub fn extreme_window(
    series: &EpochSeries,
    width: usize,
    mode: WindowMode,
    min_coverage: f64,
) -> Result<ExtremeWindow, ActigraphyError> {
    let slots = series.slots();
    if width == 0 || width > slots.len() {
        return Err(ActigraphyError::BadWindowWidth(width));
    }

    // Prefix sums over values (missing as 0) and observation counts.
    let mut value_prefix = vec![0.0; slots.len() + 1];
    let mut count_prefix = vec![0usize; slots.len() + 1];
    for (i, slot) in slots.iter().enumerate() {
        value_prefix[i + 1] = value_prefix[i] + slot.unwrap_or(0.0);
        count_prefix[i + 1] = count_prefix[i] + usize::from(slot.is_some());
    }

    let mut best: Option<ExtremeWindow> = None;
    for start in 0..=(slots.len() - width) {
        let observed = count_prefix[start + width] - count_prefix[start];
        if observed == 0 || (observed as f64) < min_coverage * width as f64 {
            continue;
        }
        let sum = value_prefix[start + width] - value_prefix[start];
        let better = match &best {
            None => true,
            Some(b) => match mode {
                WindowMode::Max => sum > b.sum,
                WindowMode::Min => sum < b.sum,
            },
        };
        if better {
            best = Some(ExtremeWindow {
                start_slot: start,
                sum,
                observed,
            });
        }
    }
    best.ok_or(ActigraphyError::NoEligibleWindow)
}

/// Relative amplitude `(m10 − l5) / (m10 + l5)` of the *per-hour mean*
/// window activities (callers normalize the raw sums by 10 h and 5 h).
pub fn relative_amplitude(m10_hourly: f64, l5_hourly: f64) -> Result<f64, ActigraphyError> {
    if l5_hourly < 0.0 || m10_hourly < l5_hourly {
        return Err(ActigraphyError::AmplitudeOrder {
            m10: m10_hourly,
            l5: l5_hourly,
        });
    }
    let sum = m10_hourly + l5_hourly;
    if sum <= 0.0 {
        return Err(ActigraphyError::ZeroAmplitudeSum);
    }
    Ok((m10_hourly - l5_hourly) / sum)
}

/// Root mean square of successive differences over pairs of *adjacent
/// minutes* that are both observed; pairs spanning a gap are excluded.
pub fn rmssd(series: &EpochSeries, segment: Segment) -> Result<f64, ActigraphyError> {
    let range = segment.slot_range();
    let slots = series.slots();
    let mut sum_sq = 0.0;
    let mut pairs = 0usize;
    for s in range.start..range.end - 1 {
        if let (Some(a), Some(b)) = (slots[s], slots[s + 1]) {
            sum_sq += (b - a).powi(2);
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(ActigraphyError::NoAdjacentPairs);
    }
    Ok((sum_sq / pairs as f64).sqrt())
}

/// Observed minutes with a count of exactly zero. Missing minutes do not
/// count as immobile.
pub fn immobile_minutes(series: &EpochSeries, segment: Segment) -> usize {
    series.observed(segment).filter(|&(_, v)| v == 0.0).count()
}

/// Why a feature could not be computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedReason {
    /// No observed epochs in the segment.
    EmptySegment,
    /// Observed fraction below the configured coverage requirement.
    InsufficientCoverage,
    /// No sliding window met the coverage requirement.
    NoEligibleWindow,
    /// m10 + l5 = 0, so relative amplitude has no denominator.
    ZeroSum,
    /// Segment SD is zero, so a ratio against it is undefined.
    ZeroSd,
    /// No two adjacent minutes were both observed.
    NoAdjacentPairs,
    /// Window per-hour means came out inverted (only possible on very
    /// gappy days); the ratio would leave [0, 1].
    InconsistentWindows,
}

impl UndefinedReason {
    pub fn code(self) -> &'static str {
        match self {
            UndefinedReason::EmptySegment => "empty_segment",
            UndefinedReason::InsufficientCoverage => "insufficient_coverage",
            UndefinedReason::NoEligibleWindow => "no_eligible_window",
            UndefinedReason::ZeroSum => "zero_sum",
            UndefinedReason::ZeroSd => "zero_sd",
            UndefinedReason::NoAdjacentPairs => "no_adjacent_pairs",
            UndefinedReason::InconsistentWindows => "inconsistent_windows",
        }
    }
}

/// A feature value or the reason it is undefined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Feature {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl Feature {
    pub fn value(self) -> Option<f64> {
        match self {
            Feature::Defined(v) => Some(v),
            Feature::Undefined(_) => None,
        }
    }

    pub fn reason(self) -> Option<UndefinedReason> {
        match self {
            Feature::Defined(_) => None,
            Feature::Undefined(r) => Some(r),
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Feature::Defined(_))
    }
}

/// Column names of [`MovementFeatures`], in artifact order.
pub const FEATURE_NAMES: [&str; 15] = [
    "mean_24h",
    "sd_24h",
    "mean_day",
    "sd_day",
    "mean_night",
    "sd_night",
    "m10",
    "m10_start_min",
    "l5",
    "l5_start_min",
    "relative_amplitude",
    "rmssd",
    "rmssd_over_sd",
    "immobile_day",
    "immobile_night",
];

/// The per-(patient-day, site) rest–activity feature vector.
///
/// Window sums (`m10`, `l5`) are raw count sums; their start offsets are
/// minutes since the anchor (report layers may convert to hours). Relative
/// amplitude is computed on per-hour means of the two windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovementFeatures {
    pub mean_24h: Feature,
    pub sd_24h: Feature,
    pub mean_day: Feature,
    pub sd_day: Feature,
    pub mean_night: Feature,
    pub sd_night: Feature,
    pub m10: Feature,
    pub m10_start_min: Feature,
    pub l5: Feature,
    pub l5_start_min: Feature,
    pub relative_amplitude: Feature,
    pub rmssd: Feature,
    pub rmssd_over_sd: Feature,
    pub immobile_day: Feature,
    pub immobile_night: Feature,
}

impl MovementFeatures {
    /// Features in [`FEATURE_NAMES`] order.
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, Feature)> {
        let values = [
            self.mean_24h,
            self.sd_24h,
            self.mean_day,
            self.sd_day,
            self.mean_night,
            self.sd_night,
            self.m10,
            self.m10_start_min,
            self.l5,
            self.l5_start_min,
            self.relative_amplitude,
            self.rmssd,
            self.rmssd_over_sd,
            self.immobile_day,
            self.immobile_night,
        ];
        FEATURE_NAMES.into_iter().zip(values)
    }

    pub fn get(&self, name: &str) -> Option<Feature> {
        self.iter().find(|(n, _)| *n == name).map(|(_, f)| f)
    }
}

/// Compute the full feature vector for one epoch series.
pub fn feature_vector(series: &EpochSeries, cfg: &ActigraphyConfig) -> MovementFeatures {
    let gate = |segment: Segment| -> Result<(), UndefinedReason> {
        let observed = series.observed_len(segment);
        if observed == 0 {
            Err(UndefinedReason::EmptySegment)
        } else if (observed as f64) < cfg.coverage_fraction * segment.len() as f64 {
            Err(UndefinedReason::InsufficientCoverage)
        } else {
            Ok(())
        }
    };

    let stats = |segment: Segment| -> (Feature, Feature) {
        match gate(segment).map(|()| mean_sd(series, segment, cfg.sd_mode)) {
            Ok(Ok(ms)) => (Feature::Defined(ms.mean), Feature::Defined(ms.sd)),
            Ok(Err(_)) | Err(UndefinedReason::EmptySegment) => (
                Feature::Undefined(UndefinedReason::EmptySegment),
                Feature::Undefined(UndefinedReason::EmptySegment),
            ),
            Err(reason) => (Feature::Undefined(reason), Feature::Undefined(reason)),
        }
    };

    let (mean_24h, sd_24h) = stats(Segment::All);
    let (mean_day, sd_day) = stats(Segment::Day);
    let (mean_night, sd_night) = stats(Segment::Night);

    let window = |width, mode| match extreme_window(series, width, mode, cfg.coverage_fraction) {
        Ok(w) => (
            Feature::Defined(w.sum),
            Feature::Defined(w.start_slot as f64),
            Some(w.sum),
        ),
        Err(_) => (
            Feature::Undefined(UndefinedReason::NoEligibleWindow),
            Feature::Undefined(UndefinedReason::NoEligibleWindow),
            None,
        ),
    };
    let (m10, m10_start_min, m10_sum) = window(M10_WIDTH, WindowMode::Max);
    let (l5, l5_start_min, l5_sum) = window(L5_WIDTH, WindowMode::Min);

    let relative_amplitude = match (m10_sum, l5_sum) {
        (Some(m), Some(l)) => {
            match relative_amplitude(m / (M10_WIDTH as f64 / 60.0), l / (L5_WIDTH as f64 / 60.0)) {
                Ok(ra) => Feature::Defined(ra),
                Err(ActigraphyError::ZeroAmplitudeSum) => {
                    Feature::Undefined(UndefinedReason::ZeroSum)
                }
                Err(_) => Feature::Undefined(UndefinedReason::InconsistentWindows),
            }
        }
        _ => Feature::Undefined(UndefinedReason::NoEligibleWindow),
    };

    let rmssd_feature = match gate(Segment::All) {
        Ok(()) => match rmssd(series, Segment::All) {
            Ok(v) => Feature::Defined(v),
            Err(_) => Feature::Undefined(UndefinedReason::NoAdjacentPairs),
        },
        Err(reason) => Feature::Undefined(reason),
    };
    let rmssd_over_sd = match (rmssd_feature, sd_24h) {
        (Feature::Defined(r), Feature::Defined(sd)) => {
            if sd == 0.0 {
                Feature::Undefined(UndefinedReason::ZeroSd)
            } else {
                Feature::Defined(r / sd)
            }
        }
        (Feature::Undefined(reason), _) => Feature::Undefined(reason),
        (_, Feature::Undefined(reason)) => Feature::Undefined(reason),
    };

    MovementFeatures {
        mean_24h,
        sd_24h,
        mean_day,
        sd_day,
        mean_night,
        sd_night,
        m10,
        m10_start_min,
        l5,
        l5_start_min,
        relative_amplitude,
        rmssd: rmssd_feature,
        rmssd_over_sd,
        immobile_day: Feature::Defined(immobile_minutes(series, Segment::Day) as f64),
        immobile_night: Feature::Defined(immobile_minutes(series, Segment::Night) as f64),
    }
}

/// Convenience wrapper: feature vector for one wear site of a patient-day.
pub fn feature_vector_for_day(
    day: &PatientDay,
    site: Site,
    cfg: &ActigraphyConfig,
) -> Option<MovementFeatures> {
    day.streams
        .epochs
        .get(&site)
        .map(|series| feature_vector(series, cfg))
}
