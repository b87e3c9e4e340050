//! Parsers and canonical writers for the five wire formats.
//!
//! Parsing is streaming (line-at-a-time) and reports 1-based line numbers in
//! every error. Writers emit the canonical rendering: ISO-8601 local
//! timestamps (milliseconds only when nonzero), shortest-round-trip floats,
//! sorted JSON maps. `write(parse(file))` reproduces canonical fixture files
//! byte for byte.

use super::*;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

const EPOCH_HEADER: &str = "timestamp,count";
const OCCUPANCY_HEADER: &str = "timestamp,count,patient_recognized";
const ENV_HEADER_PA: &str = "timestamp,sound_pa,lux";
const ENV_HEADER_DB: &str = "timestamp,sound_db,lux";

const TS_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M:%S%.f",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S%.f",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

/// Parse an ISO-8601 local timestamp (`T` or space separator, seconds and
/// fractional seconds optional).
pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    TS_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
}

/// Canonical rendering: seconds resolution, plus `.mmm` when subseconds are
/// present. Inverse of [`parse_timestamp`] for millisecond-grid timestamps.
pub fn format_timestamp(ts: NaiveDateTime) -> String {
    if ts.nanosecond() == 0 {
        ts.format("%Y-%m-%dT%H:%M:%S").to_string()
    } else {
        ts.format("%Y-%m-%dT%H:%M:%S%.3f").to_string()
    }
}

fn io_error(path: &Path, source: io::Error) -> IngestError {
    IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn malformed(path: &Path, line: u64, problem: impl Into<String>) -> IngestError {
    IngestError::MalformedRow {
        path: path.to_path_buf(),
        line,
        problem: problem.into(),
    }
}

/// Frame timestamps are carried on a millisecond grid; finer precision is a
/// schema violation.
fn check_millisecond_grid(path: &Path, line: u64, ts: NaiveDateTime) -> Result<(), IngestError> {
    if ts.nanosecond() % 1_000_000 == 0 {
        Ok(())
    } else {
        Err(malformed(path, line, "sub-millisecond timestamp precision"))
    }
}

fn read_header<R: BufRead>(
    lines: &mut io::Lines<R>,
    path: &Path,
    expected: &[&str],
) -> Result<String, IngestError> {
    let found = match lines.next() {
        Some(Ok(line)) => line,
        Some(Err(e)) => return Err(io_error(path, e)),
        None => String::new(),
    };
    if expected.contains(&found.as_str()) {
        Ok(found)
    } else {
        Err(IngestError::BadHeader {
            path: path.to_path_buf(),
            expected: expected.join("` or `"),
            found,
        })
    }
}

fn finite_field(path: &Path, line: u64, what: &str, s: &str) -> Result<f64, IngestError> {
    let value: f64 = s
        .parse()
        .map_err(|_| malformed(path, line, format!("unparseable {what} `{s}`")))?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(malformed(path, line, format!("non-finite {what} `{s}`")))
    }
}

// ---------------------------------------------------------------------------
// Activity epochs
// ---------------------------------------------------------------------------

/// Parse a minute-epoch activity file into per-patient-day series.
///
/// Timestamps must be minute-aligned and strictly increasing; counts must be
/// finite and non-negative. Rows are bucketed into patient-days anchored at
/// `anchor_hour`. Under [`ParsePolicy::Lenient`], malformed or out-of-range
/// rows are skipped with a warning; ordering violations stay fatal.
pub fn parse_epoch_csv(
    path: impl AsRef<Path>,
    site: Site,
    anchor_hour: u32,
    policy: ParsePolicy,
) -> Result<Vec<EpochSeries>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    parse_epoch_reader(BufReader::new(file), path, site, anchor_hour, policy)
}

pub(crate) fn parse_epoch_reader<R: BufRead>(
    reader: R,
    path: &Path,
    site: Site,
    anchor_hour: u32,
    policy: ParsePolicy,
) -> Result<Vec<EpochSeries>, IngestError> {
    let mut lines = reader.lines();
    read_header(&mut lines, path, &[EPOCH_HEADER])?;

    let mut out: Vec<EpochSeries> = Vec::new();
    let mut current: Option<EpochSeries> = None;
    let mut prev: Option<NaiveDateTime> = None;

    for (idx, line) in lines.enumerate() {
        let lineno = idx as u64 + 2;
        let line = line.map_err(|e| io_error(path, e))?;
        let row = match parse_epoch_row(&line, path, lineno) {
            Ok(row) => row,
            Err(e) if policy == ParsePolicy::Lenient && !line.is_empty() => {
                log::warn!("skipping row: {e}");
                continue;
            }
            Err(e) => return Err(e),
        };
        let (ts, count) = row;

        match prev {
            Some(p) if ts == p => {
                return Err(IngestError::DuplicateTimestamp {
                    path: path.to_path_buf(),
                    line: lineno,
                })
            }
            Some(p) if ts < p => {
                return Err(IngestError::NonMonotonic {
                    path: path.to_path_buf(),
                    line: lineno,
                })
            }
            _ => {}
        }
        prev = Some(ts);

        let anchor = day_anchor(ts, anchor_hour);
        if current.as_ref().map(|s| s.anchor) != Some(anchor) {
            out.extend(current.take());
            current = Some(EpochSeries::new(site, anchor));
        }
        let slot = slot_within(anchor, ts).expect("slot follows from anchor");
        current.as_mut().unwrap().set(slot, count);
    }
    out.extend(current);
    Ok(out)
}

fn parse_epoch_row(
    line: &str,
    path: &Path,
    lineno: u64,
) -> Result<(NaiveDateTime, f64), IngestError> {
    let mut fields = line.split(',');
    let (Some(ts_s), Some(count_s), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(malformed(path, lineno, "expected `timestamp,count`"));
    };
    let ts = parse_timestamp(ts_s)
        .ok_or_else(|| malformed(path, lineno, format!("unparseable timestamp `{ts_s}`")))?;
    if !minute_aligned(ts) {
        return Err(IngestError::NotMinuteAligned {
            path: path.to_path_buf(),
            line: lineno,
        });
    }
    let count = finite_field(path, lineno, "count", count_s)?;
    if count < 0.0 {
        return Err(IngestError::NegativeCount {
            path: path.to_path_buf(),
            line: lineno,
            value: count,
        });
    }
    Ok((ts, count))
}

/// Canonical inverse of [`parse_epoch_csv`].
pub fn write_epoch_csv<W: Write>(w: &mut W, series: &[EpochSeries]) -> io::Result<()> {
    writeln!(w, "{EPOCH_HEADER}")?;
    for s in series {
        for (slot, count) in s.observed(Segment::All) {
            let ts = s.anchor + Duration::minutes(slot as i64);
            writeln!(w, "{},{}", format_timestamp(ts), count)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Action-unit frames (JSONL)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuRecordWire {
    ts: String,
    success: bool,
    #[serde(default)]
    intensity: BTreeMap<String, f64>,
    #[serde(default)]
    presence: BTreeMap<String, u8>,
}

/// Streaming reader over an action-unit JSONL file.
///
/// Yields frames in file order without buffering the file; multi-million-line
/// streams are consumed in constant memory.
pub struct AuFrameReader<R> {
    lines: io::Lines<R>,
    path: std::path::PathBuf,
    policy: ParsePolicy,
    lineno: u64,
    prev: Option<NaiveDateTime>,
    fused: bool,
}

impl<R: BufRead> AuFrameReader<R> {
    pub fn new(reader: R, label: impl Into<std::path::PathBuf>, policy: ParsePolicy) -> Self {
        AuFrameReader {
            lines: reader.lines(),
            path: label.into(),
            policy,
            lineno: 0,
            prev: None,
            fused: false,
        }
    }
}

impl<R: BufRead> Iterator for AuFrameReader<R> {
    type Item = Result<AuFrame, IngestError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.fused {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.fused = true;
                    return Some(Err(io_error(&self.path, e)));
                }
            };
            self.lineno += 1;

            let frame = match parse_au_line(&line, &self.path, self.lineno, self.policy) {
                Ok(Some(frame)) => frame,
                Ok(None) => continue,
                Err(e) => {
                    self.fused = true;
                    return Some(Err(e));
                }
            };

            if let Some(p) = self.prev {
                if frame.ts < p {
                    self.fused = true;
                    return Some(Err(IngestError::NonMonotonic {
                        path: self.path.clone(),
                        line: self.lineno,
                    }));
                }
            }
            self.prev = Some(frame.ts);
            return Some(Ok(frame));
        }
    }
}

/// Open an action-unit JSONL file as a streaming reader.
pub fn au_frames_from_path(
    path: impl AsRef<Path>,
    policy: ParsePolicy,
) -> Result<AuFrameReader<BufReader<File>>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    Ok(AuFrameReader::new(BufReader::new(file), path, policy))
}

/// Parse a whole action-unit JSONL file into memory.
pub fn parse_au_jsonl(
    path: impl AsRef<Path>,
    policy: ParsePolicy,
) -> Result<Vec<AuFrame>, IngestError> {
    au_frames_from_path(path, policy)?.collect()
}

/// Returns `Ok(None)` when a lenient policy drops the record.
fn parse_au_line(
    line: &str,
    path: &Path,
    lineno: u64,
    policy: ParsePolicy,
) -> Result<Option<AuFrame>, IngestError> {
    let lenient = policy == ParsePolicy::Lenient;
    let rec: AuRecordWire = match serde_json::from_str(line) {
        Ok(rec) => rec,
        Err(e) if lenient => {
            log::warn!("{}:{lineno}: skipping malformed record: {e}", path.display());
            return Ok(None);
        }
        Err(e) => return Err(malformed(path, lineno, e.to_string())),
    };

    let Some(ts) = parse_timestamp(&rec.ts) else {
        let err = malformed(path, lineno, format!("unparseable timestamp `{}`", rec.ts));
        if lenient {
            log::warn!("skipping record: {err}");
            return Ok(None);
        }
        return Err(err);
    };
    check_millisecond_grid(path, lineno, ts)?;

    let mut frame = AuFrame::new(ts, rec.success);
    for (name, value) in rec.intensity {
        let Some(au) = parse_au_name(&name).filter(|n| au_coding(*n).is_some()) else {
            if lenient {
                log::warn!("{}:{lineno}: dropping unknown AU `{name}`", path.display());
                continue;
            }
            return Err(IngestError::UnknownAu {
                path: path.to_path_buf(),
                line: lineno,
                name,
            });
        };
        if !value.is_finite() || !(0.0..=5.0).contains(&value) {
            if lenient {
                log::warn!(
                    "{}:{lineno}: dropping out-of-range intensity {name}={value}",
                    path.display()
                );
                continue;
            }
            return Err(IngestError::OutOfRange {
                path: path.to_path_buf(),
                line: lineno,
                what: format!("intensity {name}"),
                value,
            });
        }
        frame.intensity.insert(au, value);
    }
    for (name, value) in rec.presence {
        let Some(au) = parse_au_name(&name).filter(|n| au_coding(*n).is_some()) else {
            if lenient {
                log::warn!("{}:{lineno}: dropping unknown AU `{name}`", path.display());
                continue;
            }
            return Err(IngestError::UnknownAu {
                path: path.to_path_buf(),
                line: lineno,
                name,
            });
        };
        if value > 1 {
            if lenient {
                log::warn!(
                    "{}:{lineno}: dropping non-binary presence {name}={value}",
                    path.display()
                );
                continue;
            }
            return Err(IngestError::OutOfRange {
                path: path.to_path_buf(),
                line: lineno,
                what: format!("presence {name}"),
                value: f64::from(value),
            });
        }
        frame.presence.insert(au, value);
    }
    Ok(Some(frame))
}

/// Canonical inverse of [`parse_au_jsonl`].
pub fn write_au_jsonl<'a, W: Write>(
    w: &mut W,
    frames: impl IntoIterator<Item = &'a AuFrame>,
) -> io::Result<()> {
    for frame in frames {
        let wire = AuRecordWire {
            ts: format_timestamp(frame.ts),
            success: frame.success,
            intensity: frame
                .intensity
                .iter()
                .map(|(&au, &v)| (au_name(au), v))
                .collect(),
            presence: frame
                .presence
                .iter()
                .map(|(&au, &v)| (au_name(au), v))
                .collect(),
        };
        serde_json::to_writer(&mut *w, &wire)?;
        writeln!(w)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Keypoint frames (JSONL)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KpRecordWire {
    ts: String,
    w: u32,
    h: u32,
    #[serde(default)]
    joints: BTreeMap<String, [f64; 3]>,
}

/// Parse a pose-keypoint JSONL file.
///
/// Joint coordinates must lie within the frame and confidences in `[0, 1]`.
/// Under a lenient policy, unknown or out-of-range joints are dropped.
pub fn parse_keypoints_jsonl(
    path: impl AsRef<Path>,
    policy: ParsePolicy,
) -> Result<Vec<KeypointFrame>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    parse_keypoints_reader(BufReader::new(file), path, policy)
}

pub(crate) fn parse_keypoints_reader<R: BufRead>(
    reader: R,
    path: &Path,
    policy: ParsePolicy,
) -> Result<Vec<KeypointFrame>, IngestError> {
    let lenient = policy == ParsePolicy::Lenient;
    let mut out = Vec::new();
    let mut prev: Option<NaiveDateTime> = None;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx as u64 + 1;
        let line = line.map_err(|e| io_error(path, e))?;
        let rec: KpRecordWire = match serde_json::from_str(&line) {
            Ok(rec) => rec,
            Err(e) if lenient => {
                log::warn!("{}:{lineno}: skipping malformed record: {e}", path.display());
                continue;
            }
            Err(e) => return Err(malformed(path, lineno, e.to_string())),
        };

        let Some(ts) = parse_timestamp(&rec.ts) else {
            let err = malformed(path, lineno, format!("unparseable timestamp `{}`", rec.ts));
            if lenient {
                log::warn!("skipping record: {err}");
                continue;
            }
            return Err(err);
        };
        check_millisecond_grid(path, lineno, ts)?;
        if rec.w == 0 || rec.h == 0 {
            return Err(malformed(path, lineno, "zero frame dimensions"));
        }

        let mut frame = KeypointFrame::new(ts, rec.w, rec.h);
        for (name, [x, y, confidence]) in rec.joints {
            let Some(joint) = Joint::from_str(&name) else {
                if lenient {
                    log::warn!("{}:{lineno}: dropping unknown joint `{name}`", path.display());
                    continue;
                }
                return Err(IngestError::UnknownJoint {
                    path: path.to_path_buf(),
                    line: lineno,
                    name,
                });
            };
            let kp = Keypoint { x, y, confidence };
            let ok = x.is_finite()
                && y.is_finite()
                && confidence.is_finite()
                && x >= 0.0
                && x <= f64::from(rec.w)
                && y >= 0.0
                && y <= f64::from(rec.h)
                && (0.0..=1.0).contains(&confidence);
            if !ok {
                if lenient {
                    log::warn!(
                        "{}:{lineno}: dropping out-of-bounds joint `{name}`",
                        path.display()
                    );
                    continue;
                }
                return Err(IngestError::InvariantViolation {
                    path: path.to_path_buf(),
                    line: lineno,
                    problem: format!("joint `{name}` outside frame bounds or confidence range"),
                });
            }
            frame.set_joint(joint, kp);
        }

        if let Some(p) = prev {
            if ts < p {
                return Err(IngestError::NonMonotonic {
                    path: path.to_path_buf(),
                    line: lineno,
                });
            }
        }
        prev = Some(ts);
        out.push(frame);
    }
    Ok(out)
}

/// Canonical inverse of [`parse_keypoints_jsonl`].
pub fn write_keypoints_jsonl<'a, W: Write>(
    w: &mut W,
    frames: impl IntoIterator<Item = &'a KeypointFrame>,
) -> io::Result<()> {
    for frame in frames {
        let wire = KpRecordWire {
            ts: format_timestamp(frame.ts),
            w: frame.width,
            h: frame.height,
            joints: frame
                .joints()
                .map(|(j, kp)| (j.as_str().to_string(), [kp.x, kp.y, kp.confidence]))
                .collect(),
        };
        serde_json::to_writer(&mut *w, &wire)?;
        writeln!(w)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Ambient environment (CSV)
// ---------------------------------------------------------------------------

/// Parse an ambient CSV. The header declares the sound representation
/// (`sound_pa` or `sound_db`); the lux column may be empty.
pub fn parse_env_csv(
    path: impl AsRef<Path>,
    policy: ParsePolicy,
) -> Result<Vec<EnvSample>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    parse_env_reader(BufReader::new(file), path, policy)
}

pub(crate) fn parse_env_reader<R: BufRead>(
    reader: R,
    path: &Path,
    policy: ParsePolicy,
) -> Result<Vec<EnvSample>, IngestError> {
    let mut lines = reader.lines();
    let header = read_header(&mut lines, path, &[ENV_HEADER_PA, ENV_HEADER_DB])?;
    let is_pressure = header == ENV_HEADER_PA;

    let mut out = Vec::new();
    let mut prev: Option<NaiveDateTime> = None;
    for (idx, line) in lines.enumerate() {
        let lineno = idx as u64 + 2;
        let line = line.map_err(|e| io_error(path, e))?;
        match parse_env_row(&line, path, lineno, is_pressure) {
            Ok(sample) => {
                if let Some(p) = prev {
                    if sample.ts < p {
                        return Err(IngestError::NonMonotonic {
                            path: path.to_path_buf(),
                            line: lineno,
                        });
                    }
                }
                prev = Some(sample.ts);
                out.push(sample);
            }
            Err(e) if policy == ParsePolicy::Lenient => {
                log::warn!("skipping row: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn parse_env_row(
    line: &str,
    path: &Path,
    lineno: u64,
    is_pressure: bool,
) -> Result<EnvSample, IngestError> {
    let mut fields = line.split(',');
    let (Some(ts_s), Some(sound_s), Some(lux_s), None) = (
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
    ) else {
        return Err(malformed(path, lineno, "expected `timestamp,sound,lux`"));
    };
    let ts = parse_timestamp(ts_s)
        .ok_or_else(|| malformed(path, lineno, format!("unparseable timestamp `{ts_s}`")))?;
    check_millisecond_grid(path, lineno, ts)?;

    if sound_s.is_empty() {
        return Err(malformed(path, lineno, "missing sound value"));
    }
    let sound = if is_pressure {
        let pa = finite_field(path, lineno, "sound_pa", sound_s)?;
        if pa <= 0.0 {
            return Err(IngestError::OutOfRange {
                path: path.to_path_buf(),
                line: lineno,
                what: "sound_pa".into(),
                value: pa,
            });
        }
        SoundReading::PressurePa(pa)
    } else {
        SoundReading::LevelDb(finite_field(path, lineno, "sound_db", sound_s)?)
    };

    let lux = if lux_s.is_empty() {
        None
    } else {
        let lux = finite_field(path, lineno, "lux", lux_s)?;
        if lux < 0.0 {
            return Err(IngestError::OutOfRange {
                path: path.to_path_buf(),
                line: lineno,
                what: "lux".into(),
                value: lux,
            });
        }
        Some(lux)
    };

    Ok(EnvSample { ts, sound, lux })
}

/// Canonical inverse of [`parse_env_csv`]. All samples must share one sound
/// representation; the header is derived from the first sample (pressure
/// when empty).
pub fn write_env_csv<W: Write>(w: &mut W, samples: &[EnvSample]) -> io::Result<()> {
    let is_pressure = matches!(
        samples.first().map(|s| s.sound),
        Some(SoundReading::PressurePa(_)) | None
    );
    writeln!(w, "{}", if is_pressure { ENV_HEADER_PA } else { ENV_HEADER_DB })?;
    for sample in samples {
        let sound = match (is_pressure, sample.sound) {
            (true, SoundReading::PressurePa(v)) | (false, SoundReading::LevelDb(v)) => v,
            _ => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    "mixed sound representations in one file",
                ))
            }
        };
        let lux = sample.lux.map(|v| v.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{}", format_timestamp(sample.ts), sound, lux)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Occupancy (CSV)
// ---------------------------------------------------------------------------

/// Parse a room-occupancy CSV. A recognized patient implies `count >= 1`;
/// violating rows are errors (strict) or skipped (lenient).
pub fn parse_occupancy_csv(
    path: impl AsRef<Path>,
    policy: ParsePolicy,
) -> Result<Vec<OccupancyFrame>, IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    parse_occupancy_reader(BufReader::new(file), path, policy)
}

pub(crate) fn parse_occupancy_reader<R: BufRead>(
    reader: R,
    path: &Path,
    policy: ParsePolicy,
) -> Result<Vec<OccupancyFrame>, IngestError> {
    let mut lines = reader.lines();
    read_header(&mut lines, path, &[OCCUPANCY_HEADER])?;

    let mut out = Vec::new();
    let mut prev: Option<NaiveDateTime> = None;
    for (idx, line) in lines.enumerate() {
        let lineno = idx as u64 + 2;
        let line = line.map_err(|e| io_error(path, e))?;
        match parse_occupancy_row(&line, path, lineno) {
            Ok(frame) => {
                if let Some(p) = prev {
                    if frame.ts < p {
                        return Err(IngestError::NonMonotonic {
                            path: path.to_path_buf(),
                            line: lineno,
                        });
                    }
                }
                prev = Some(frame.ts);
                out.push(frame);
            }
            Err(e) if policy == ParsePolicy::Lenient => {
                log::warn!("skipping row: {e}");
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn parse_occupancy_row(
    line: &str,
    path: &Path,
    lineno: u64,
) -> Result<OccupancyFrame, IngestError> {
    let mut fields = line.split(',');
    let (Some(ts_s), Some(count_s), Some(flag_s), None) = (
        fields.next(),
        fields.next(),
        fields.next(),
        fields.next(),
    ) else {
        return Err(malformed(
            path,
            lineno,
            "expected `timestamp,count,patient_recognized`",
        ));
    };
    let ts = parse_timestamp(ts_s)
        .ok_or_else(|| malformed(path, lineno, format!("unparseable timestamp `{ts_s}`")))?;
    check_millisecond_grid(path, lineno, ts)?;
    let count: u32 = count_s
        .parse()
        .map_err(|_| malformed(path, lineno, format!("unparseable count `{count_s}`")))?;
    let patient_recognized = match flag_s {
        "true" => true,
        "false" => false,
        other => {
            return Err(malformed(
                path,
                lineno,
                format!("unparseable patient_recognized `{other}`"),
            ))
        }
    };
    if patient_recognized && count == 0 {
        return Err(IngestError::InvariantViolation {
            path: path.to_path_buf(),
            line: lineno,
            problem: "patient recognized but count is 0".into(),
        });
    }
    Ok(OccupancyFrame {
        ts,
        count,
        patient_recognized,
    })
}

/// Canonical inverse of [`parse_occupancy_csv`].
pub fn write_occupancy_csv<W: Write>(w: &mut W, frames: &[OccupancyFrame]) -> io::Result<()> {
    writeln!(w, "{OCCUPANCY_HEADER}")?;
    for f in frames {
        writeln!(
            w,
            "{},{},{}",
            format_timestamp(f.ts),
            f.count,
            f.patient_recognized
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_epochs(text: &str, policy: ParsePolicy) -> Result<Vec<EpochSeries>, IngestError> {
        parse_epoch_reader(text.as_bytes(), Path::new("t.csv"), Site::Wrist, 7, policy)
    }

    #[test]
    fn epoch_rows_bucket_across_the_anchor() {
        let text = "timestamp,count\n\
                    2024-03-02T06:59:00,5\n\
                    2024-03-02T07:00:00,6\n";
        let series = parse_epochs(text, ParsePolicy::Strict).unwrap();
        assert_eq!(series.len(), 2);
        assert_eq!(series[0].anchor, parse_timestamp("2024-03-01T07:00:00").unwrap());
        assert_eq!(series[0].get(1439), Some(5.0));
        assert_eq!(series[1].anchor, parse_timestamp("2024-03-02T07:00:00").unwrap());
        assert_eq!(series[1].get(0), Some(6.0));
    }

    #[test]
    fn epoch_gap_stays_explicitly_missing() {
        let mut text = String::from("timestamp,count\n");
        let mut written = 0;
        for minute in 0..120 {
            if (50..60).contains(&minute) {
                continue;
            }
            text.push_str(&format!("2024-03-01T{:02}:{:02}:00,1\n", 8 + minute / 60, minute % 60));
            written += 1;
        }
        let series = parse_epochs(&text, ParsePolicy::Strict).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].observed_len(Segment::All), written);
        assert_eq!(series[0].interior_missing(), 10);
    }

    #[test]
    fn epoch_errors_carry_line_numbers() {
        let dup = "timestamp,count\n2024-03-01T08:00:00,1\n2024-03-01T08:00:00,2\n";
        assert!(matches!(
            parse_epochs(dup, ParsePolicy::Strict),
            Err(IngestError::DuplicateTimestamp { line: 3, .. })
        ));

        let backwards = "timestamp,count\n2024-03-01T08:01:00,1\n2024-03-01T08:00:00,2\n";
        assert!(matches!(
            parse_epochs(backwards, ParsePolicy::Strict),
            Err(IngestError::NonMonotonic { line: 3, .. })
        ));

        let negative = "timestamp,count\n2024-03-01T08:00:00,-1\n";
        assert!(matches!(
            parse_epochs(negative, ParsePolicy::Strict),
            Err(IngestError::NegativeCount { line: 2, .. })
        ));

        let misaligned = "timestamp,count\n2024-03-01T08:00:30,1\n";
        assert!(matches!(
            parse_epochs(misaligned, ParsePolicy::Strict),
            Err(IngestError::NotMinuteAligned { line: 2, .. })
        ));

        let header = "time,count\n";
        assert!(matches!(
            parse_epochs(header, ParsePolicy::Strict),
            Err(IngestError::BadHeader { .. })
        ));
    }

    #[test]
    fn lenient_epoch_parse_skips_bad_values_not_bad_order() {
        let text = "timestamp,count\n\
                    2024-03-01T08:00:00,1\n\
                    2024-03-01T08:01:00,-3\n\
                    2024-03-01T08:02:00,2\n";
        let series = parse_epochs(text, ParsePolicy::Lenient).unwrap();
        assert_eq!(series[0].observed_len(Segment::All), 2);

        let backwards = "timestamp,count\n2024-03-01T08:01:00,1\n2024-03-01T08:00:00,2\n";
        assert!(parse_epochs(backwards, ParsePolicy::Lenient).is_err());
    }

    #[test]
    fn epoch_round_trip_is_byte_identical() {
        let text = "timestamp,count\n\
                    2024-03-01T07:00:00,0\n\
                    2024-03-01T07:02:00,12.5\n\
                    2024-03-02T06:59:00,3\n";
        let series = parse_epochs(text, ParsePolicy::Strict).unwrap();
        let mut out = Vec::new();
        write_epoch_csv(&mut out, &series).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);
    }

    #[test]
    fn au_line_parses_and_round_trips() {
        let text = concat!(
            r#"{"ts":"2024-03-01T12:00:00.250","success":true,"intensity":{"AU01":0.5,"AU12":3},"presence":{"AU04":1}}"#,
            "\n",
            r#"{"ts":"2024-03-01T12:00:01.250","success":false,"intensity":{},"presence":{}}"#,
            "\n"
        );
        let reader = AuFrameReader::new(text.as_bytes(), "t.jsonl", ParsePolicy::Strict);
        let frames: Vec<AuFrame> = reader.collect::<Result<_, _>>().unwrap();
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].intensity[&1], 0.5);
        assert_eq!(frames[0].presence[&4], 1);
        assert!(!frames[1].success);

        let mut out = Vec::new();
        write_au_jsonl(&mut out, &frames).unwrap();
        // `3` re-renders as `3.0` (JSON float); everything else is canonical.
        let expected = text.replace("\"AU12\":3}", "\"AU12\":3.0}");
        assert_eq!(String::from_utf8(out).unwrap(), expected);
    }

    #[test]
    fn unknown_au_is_fatal_only_under_strict() {
        let text = r#"{"ts":"2024-03-01T12:00:00","success":true,"intensity":{"AU99":1.0},"presence":{}}"#;
        let reader = AuFrameReader::new(text.as_bytes(), "t.jsonl", ParsePolicy::Strict);
        let err = reader.collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(matches!(err, IngestError::UnknownAu { line: 1, .. }));

        let reader = AuFrameReader::new(text.as_bytes(), "t.jsonl", ParsePolicy::Lenient);
        let frames: Vec<AuFrame> = reader.collect::<Result<_, _>>().unwrap();
        assert!(frames[0].intensity.is_empty());
    }

    #[test]
    fn au_intensity_range_is_enforced() {
        let text = r#"{"ts":"2024-03-01T12:00:00","success":true,"intensity":{"AU01":5.5},"presence":{}}"#;
        let reader = AuFrameReader::new(text.as_bytes(), "t.jsonl", ParsePolicy::Strict);
        let err = reader.collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(matches!(err, IngestError::OutOfRange { .. }));
    }

    #[test]
    fn au_frames_must_be_time_ordered() {
        let text = concat!(
            r#"{"ts":"2024-03-01T12:00:01","success":true,"intensity":{},"presence":{}}"#,
            "\n",
            r#"{"ts":"2024-03-01T12:00:00","success":true,"intensity":{},"presence":{}}"#,
            "\n"
        );
        let reader = AuFrameReader::new(text.as_bytes(), "t.jsonl", ParsePolicy::Strict);
        let err = reader.collect::<Result<Vec<_>, _>>().unwrap_err();
        assert!(matches!(err, IngestError::NonMonotonic { line: 2, .. }));
    }

    #[test]
    fn keypoints_round_trip_and_validate_bounds() {
        let text = concat!(
            r#"{"ts":"2024-03-01T12:00:00","w":368,"h":654,"joints":{"l_hip":[100.0,400.0,0.9],"neck":[184.0,200.5,0.97]}}"#,
            "\n"
        );
        let frames =
            parse_keypoints_reader(text.as_bytes(), Path::new("t.jsonl"), ParsePolicy::Strict)
                .unwrap();
        assert_eq!(frames[0].present_count(), 2);
        assert!(frames[0].in_bounds());
        let mut out = Vec::new();
        write_keypoints_jsonl(&mut out, &frames).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), text);

        let oob = r#"{"ts":"2024-03-01T12:00:00","w":368,"h":654,"joints":{"neck":[400.0,200.0,0.9]}}"#;
        let err = parse_keypoints_reader(oob.as_bytes(), Path::new("t.jsonl"), ParsePolicy::Strict)
            .unwrap_err();
        assert!(matches!(err, IngestError::InvariantViolation { .. }));
    }

    #[test]
    fn env_headers_select_sound_representation() {
        let pa = "timestamp,sound_pa,lux\n2024-03-01T07:00:00,0.02,150\n2024-03-01T07:01:00,0.002,\n";
        let samples = parse_env_reader(pa.as_bytes(), Path::new("t.csv"), ParsePolicy::Strict)
            .unwrap();
        assert_eq!(samples[0].sound, SoundReading::PressurePa(0.02));
        assert_eq!(samples[1].lux, None);
        let mut out = Vec::new();
        write_env_csv(&mut out, &samples).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), pa);

        let db = "timestamp,sound_db,lux\n2024-03-01T07:00:00,60,\n";
        let samples = parse_env_reader(db.as_bytes(), Path::new("t.csv"), ParsePolicy::Strict)
            .unwrap();
        assert_eq!(samples[0].sound, SoundReading::LevelDb(60.0));

        let zero_pa = "timestamp,sound_pa,lux\n2024-03-01T07:00:00,0,\n";
        assert!(matches!(
            parse_env_reader(zero_pa.as_bytes(), Path::new("t.csv"), ParsePolicy::Strict),
            Err(IngestError::OutOfRange { .. })
        ));
    }

    #[test]
    fn occupancy_recognized_patient_requires_count() {
        let bad = "timestamp,count,patient_recognized\n2024-03-01T07:00:00,0,true\n";
        assert!(matches!(
            parse_occupancy_reader(bad.as_bytes(), Path::new("t.csv"), ParsePolicy::Strict),
            Err(IngestError::InvariantViolation { line: 2, .. })
        ));
        let frames =
            parse_occupancy_reader(bad.as_bytes(), Path::new("t.csv"), ParsePolicy::Lenient)
                .unwrap();
        assert!(frames.is_empty());

        let good = "timestamp,count,patient_recognized\n\
                    2024-03-01T07:00:00,2,true\n\
                    2024-03-01T07:01:00,0,false\n";
        let frames =
            parse_occupancy_reader(good.as_bytes(), Path::new("t.csv"), ParsePolicy::Strict)
                .unwrap();
        assert_eq!(frames.len(), 2);
        let mut out = Vec::new();
        write_occupancy_csv(&mut out, &frames).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), good);
    }

    #[test]
    fn timestamp_variants_parse_to_the_same_instant() {
        let expected = parse_timestamp("2024-03-01T07:05:00").unwrap();
        for s in [
            "2024-03-01T07:05",
            "2024-03-01 07:05:00",
            "2024-03-01T07:05:00.000",
        ] {
            assert_eq!(parse_timestamp(s), Some(expected), "variant `{s}`");
        }
        assert_eq!(parse_timestamp("not-a-time"), None);
        assert_eq!(
            format_timestamp(parse_timestamp("2024-03-01T07:05:00.250").unwrap()),
            "2024-03-01T07:05:00.250"
        );
    }
}
