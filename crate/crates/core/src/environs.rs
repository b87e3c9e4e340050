//! Sound-pressure-level and light analytics, plus visitation disruption.
//!
//! Sound readings arrive either as raw pascals or as already-computed dB
//! levels; everything downstream works in dB re 20 µPa. Averages default
//! to the energy mean (the physically meaningful way to average levels),
//! with plain arithmetic dB averaging available for comparability.

use crate::ingest::{slot_within, EnvSample, OccupancyFrame, Segment, SoundReading, SLOTS_PER_DAY};
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvironsError {
    #[error("sound pressure must be positive, got {0} Pa")]
    NonPositivePressure(f64),
    #[error("no samples to average")]
    EmptyInput,
    #[error("no occupancy frames in segment {0}")]
    EmptySegment(Segment),
}

/// Reference pressure for 0 dB: the nominal threshold of hearing.
pub const REFERENCE_PRESSURE_PA: f64 = 2e-5;

/// WHO guidance for hospital patient rooms at night: average no higher
/// than 35 dB, peaks no higher than 40 dB.
pub const WHO_NIGHT_MEAN_LIMIT_DB: f64 = 35.0;
pub const WHO_NIGHT_MAX_LIMIT_DB: f64 = 40.0;

/// Sound pressure level in dB: `20·log10(p / p0)`.
pub fn spl_from_pressure(p: f64, p0: f64) -> Result<f64, EnvironsError> {
    if !(p > 0.0) || !p.is_finite() {
        return Err(EnvironsError::NonPositivePressure(p));
    }
    if !(p0 > 0.0) || !p0.is_finite() {
        return Err(EnvironsError::NonPositivePressure(p0));
    }
    Ok(20.0 * (p / p0).log10())
}

/// How a collection of dB levels is reduced to one level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplAveraging {
    /// `10·log10(mean(10^(L/10)))`: averages acoustic energy.
    Energy,
    /// Plain mean of the dB values.
    Arithmetic,
}

impl Default for SplAveraging {
    fn default() -> Self {
        SplAveraging::Energy
    }
}

/// Average dB levels under the chosen mode.
pub fn mean_spl(levels_db: &[f64], mode: SplAveraging) -> Result<f64, EnvironsError> {
    if levels_db.is_empty() {
        return Err(EnvironsError::EmptyInput);
    }
    let n = levels_db.len() as f64;
    Ok(match mode {
        SplAveraging::Energy => {
            let energy: f64 = levels_db.iter().map(|l| 10f64.powf(l / 10.0)).sum();
            10.0 * (energy / n).log10()
        }
        SplAveraging::Arithmetic => levels_db.iter().sum::<f64>() / n,
    })
}

#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub averaging: SplAveraging,
    pub reference_pressure: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            averaging: SplAveraging::Energy,
            reference_pressure: REFERENCE_PRESSURE_PA,
        }
    }
}

/// One patient-day of sound and light context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSummary {
    /// Mean SPL per anchored hour (hour 0 starts at the day anchor).
    pub hourly_spl: Vec<Option<f64>>,
    /// Mean lux per anchored hour.
    pub hourly_lux: Vec<Option<f64>>,
    pub day_spl: Option<f64>,
    pub night_spl: Option<f64>,
    pub night_max_spl: Option<f64>,
    /// Night minutes whose mean level exceeds [`WHO_NIGHT_MEAN_LIMIT_DB`].
    pub night_minutes_above_limit: u32,
    /// Night mean above 35 dB; unknown without night samples.
    pub who_mean_exceeded: Option<bool>,
    /// Night maximum above 40 dB; unknown without night samples.
    pub who_max_exceeded: Option<bool>,
    pub spl_samples: u64,
    pub lux_samples: u64,
    /// Samples whose timestamp fell outside the patient-day (dropped).
    pub out_of_day_samples: u64,
}

fn reading_db(reading: SoundReading, cfg: &EnvConfig) -> Result<f64, EnvironsError> {
    match reading {
        SoundReading::LevelDb(db) => Ok(db),
        SoundReading::PressurePa(p) => spl_from_pressure(p, cfg.reference_pressure),
    }
}

/// Aggregate one patient-day of environment samples.
///
/// Hours and the day/night split are anchored at `anchor`; samples outside
/// the 24-hour window are counted and dropped. Hourly SPL means, the
/// day/night means, and the per-minute levels behind the
/// minutes-above-limit count all use the configured averaging mode.
pub fn env_summary(
    anchor: NaiveDateTime,
    samples: &[EnvSample],
    cfg: &EnvConfig,
) -> Result<EnvSummary, EnvironsError> {
    let mut hourly_db: Vec<Vec<f64>> = vec![Vec::new(); 24];
    let mut hourly_lux_acc: Vec<(f64, u64)> = vec![(0.0, 0); 24];
    let mut day_db = Vec::new();
    let mut night_db = Vec::new();
    let mut minute_db: Vec<Vec<f64>> = vec![Vec::new(); SLOTS_PER_DAY];
    let mut night_max: Option<f64> = None;
    let mut lux_samples = 0u64;
    let mut out_of_day = 0u64;

    for sample in samples {
        let slot = match slot_within(anchor, sample.ts) {
            Some(slot) => slot,
            None => {
                out_of_day += 1;
                continue;
            }
        };
        let db = reading_db(sample.sound, cfg)?;
        hourly_db[slot / 60].push(db);
        minute_db[slot].push(db);
        if Segment::Day.contains_slot(slot) {
            day_db.push(db);
        } else {
            night_db.push(db);
            night_max = Some(night_max.map_or(db, |m: f64| m.max(db)));
        }
        if let Some(lux) = sample.lux {
            let (sum, n) = hourly_lux_acc[slot / 60];
            hourly_lux_acc[slot / 60] = (sum + lux, n + 1);
            lux_samples += 1;
        }
    }

    let hourly_spl = hourly_db
        .iter()
        .map(|levels| (!levels.is_empty()).then(|| mean_spl(levels, cfg.averaging).unwrap()))
        .collect();
    let hourly_lux = hourly_lux_acc
        .iter()
        .map(|&(sum, n)| (n > 0).then(|| sum / n as f64))
        .collect();
    let day_spl = (!day_db.is_empty()).then(|| mean_spl(&day_db, cfg.averaging).unwrap());
    let night_spl = (!night_db.is_empty()).then(|| mean_spl(&night_db, cfg.averaging).unwrap());

    let night_minutes_above_limit = minute_db[crate::ingest::SLOTS_PER_SEGMENT..]
        .iter()
        .filter(|levels| {
            !levels.is_empty() && mean_spl(levels, cfg.averaging).unwrap() > WHO_NIGHT_MEAN_LIMIT_DB
        })
        .count() as u32;

    Ok(EnvSummary {
        hourly_spl,
        hourly_lux,
        day_spl,
        night_spl,
        night_max_spl: night_max,
        night_minutes_above_limit,
        who_mean_exceeded: night_spl.map(|m| m > WHO_NIGHT_MEAN_LIMIT_DB),
        who_max_exceeded: night_max.map(|m| m > WHO_NIGHT_MAX_LIMIT_DB),
        spl_samples: (day_db.len() + night_db.len()) as u64,
        lux_samples,
        out_of_day_samples: out_of_day,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct DisruptionConfig {
    /// Count the patient as present even when face recognition misses
    /// them (occlusion is common; the patient rarely leaves the room).
    pub assume_patient_present: bool,
    pub anchor_hour: u32,
}

impl Default for DisruptionConfig {
    fn default() -> Self {
        DisruptionConfig {
            assume_patient_present: true,
            anchor_hour: crate::ingest::DEFAULT_ANCHOR_HOUR,
        }
    }
}

/// Fraction of frames in which at least one visitor is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisruptionSummary {
    pub segment: Segment,
    pub frames: u64,
    pub disrupted_frames: u64,
    /// disrupted / frames.
    pub rate: f64,
}

/// Visitors in one frame: detected people minus the patient when the
/// patient is recognized (or assumed present).
pub fn visitor_count(frame: &OccupancyFrame, assume_patient_present: bool) -> u32 {
    let patient_present = frame.patient_recognized || assume_patient_present;
    if patient_present {
        frame.count.saturating_sub(1)
    } else {
        frame.count
    }
}

/// Disruption rate over the frames falling in `segment`. Frame order is
/// irrelevant. Errors when the segment holds no frames.
pub fn disruption_rate(
    frames: &[OccupancyFrame],
    segment: Segment,
    cfg: &DisruptionConfig,
) -> Result<DisruptionSummary, EnvironsError> {
    let mut total = 0u64;
    let mut disrupted = 0u64;
    for frame in frames {
        let in_segment = segment == Segment::All
            || crate::ingest::segment_of_time(frame.ts, cfg.anchor_hour) == segment;
        if !in_segment {
            continue;
        }
        total += 1;
        if visitor_count(frame, cfg.assume_patient_present) >= 1 {
            disrupted += 1;
        }
    }
    if total == 0 {
        return Err(EnvironsError::EmptySegment(segment));
    }
    Ok(DisruptionSummary {
        segment,
        frames: total,
        disrupted_frames: disrupted,
        rate: disrupted as f64 / total as f64,
    })
}
