//! Data-tree navigation and the small auxiliary CSV formats (cohort
//! membership, truth sidecars) shared by several subcommands.

use crate::failure::Failure;
use chrono::{Duration, NaiveDateTime, Timelike};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use wardsense_core::ingest::parse_timestamp;
use wardsense_core::posture::PostureLabel;

/// Names a data-tree subdirectory that is not a patient.
const RESERVED_DIRS: &[&str] = &["truth", "report"];

/// Patient directories under the data root, sorted by id.
pub fn discover_patients(data_dir: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let entries = std::fs::read_dir(data_dir)
        .map_err(|e| Failure::data(format!("cannot read data directory {}: {e}", data_dir.display())))?;
    let mut patients = Vec::new();
    for entry in entries {
        let entry = entry
            .map_err(|e| Failure::data(format!("cannot scan {}: {e}", data_dir.display())))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || RESERVED_DIRS.contains(&name.as_str()) {
            continue;
        }
        patients.push((name, path));
    }
    patients.sort();
    if patients.is_empty() {
        return Err(Failure::data(format!(
            "no patient directories under {}",
            data_dir.display()
        )));
    }
    Ok(patients)
}

/// Read a comma-separated table with an exact expected header. Returns the
/// data rows split into fields; the format never quotes or escapes.
pub fn read_csv_rows(path: &Path, expected_header: &str) -> Result<Vec<Vec<String>>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == expected_header => {}
        Some(header) => {
            return Err(Failure::data(format!(
                "{}: expected header `{expected_header}`, got `{header}`",
                path.display()
            )))
        }
        None => {
            return Err(Failure::data(format!(
                "{}: empty file (expected header `{expected_header}`)",
                path.display()
            )))
        }
    }
    let want = expected_header.split(',').count();
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != want {
            return Err(Failure::data(format!(
                "{}:{}: expected {want} fields, got {}",
                path.display(),
                idx + 2,
                fields.len()
            )));
        }
        rows.push(fields);
    }
    Ok(rows)
}

/// Cohort membership from `groups.csv` (`patient,group`); an absent file
/// yields an empty map and every patient lands in the `all` group.
pub fn load_groups(
    data_dir: &Path,
    groups_file: Option<&Path>,
) -> Result<BTreeMap<String, String>, Failure> {
    let default_path = data_dir.join("groups.csv");
    let path = groups_file.unwrap_or(&default_path);
    if !path.exists() {
        if groups_file.is_some() {
            return Err(Failure::data(format!(
                "groups file {} does not exist",
                path.display()
            )));
        }
        return Ok(BTreeMap::new());
    }
    let mut map = BTreeMap::new();
    for row in read_csv_rows(path, "patient,group")? {
        map.insert(row[0].clone(), row[1].clone());
    }
    Ok(map)
}

pub fn group_of<'a>(groups: &'a BTreeMap<String, String>, patient: &str) -> &'a str {
    groups.get(patient).map_or("all", String::as_str)
}

/// True posture labels for one patient from the labeled sidecar.
pub fn load_truth_postures(
    data_dir: &Path,
    patient: &str,
) -> Result<Vec<(NaiveDateTime, PostureLabel)>, Failure> {
    let path = data_dir.join("truth").join(patient).join("postures.csv");
    if !path.exists() {
        return Err(Failure::data(format!(
            "patient {patient}: no posture labels at {}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in read_csv_rows(&path, "timestamp,label")? {
        let ts = parse_timestamp(&row[0])
            .ok_or_else(|| Failure::data(format!("{}: bad timestamp `{}`", path.display(), row[0])))?;
        let label = PostureLabel::from_str(&row[1])
            .ok_or_else(|| Failure::data(format!("{}: unknown posture `{}`", path.display(), row[1])))?;
        out.push((ts, label));
    }
    Ok(out)
}

/// The patient-day anchor (most recent `anchor_hour` o'clock) containing `ts`.
pub fn day_anchor_of(ts: NaiveDateTime, anchor_hour: u32) -> NaiveDateTime {
    let anchored = ts
        .date()
        .and_hms_opt(anchor_hour, 0, 0)
        .expect("validated anchor hour");
    if ts.time().hour() >= anchor_hour {
        anchored
    } else {
        anchored - Duration::days(1)
    }
}

/// Render an optional number as a CSV cell (empty when absent).
pub fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Render an optional flag as a CSV cell (empty when unknown).
pub fn flag_cell(x: Option<bool>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Mean of the defined values, if any.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0u32;
    for v in values.into_iter().flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / f64::from(n))
}

/// Mean and standard error of the mean (0 for singleton samples).
pub fn mean_se(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, (var / n).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn day_anchor_wraps_before_the_anchor_hour() {
        let ts = parse_timestamp("2024-03-02T06:59:00").unwrap();
        assert_eq!(
            day_anchor_of(ts, 7),
            parse_timestamp("2024-03-01T07:00:00").unwrap()
        );
        let ts = parse_timestamp("2024-03-02T07:00:00").unwrap();
        assert_eq!(
            day_anchor_of(ts, 7),
            parse_timestamp("2024-03-02T07:00:00").unwrap()
        );
    }

    #[test]
    fn csv_reader_enforces_header_and_field_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "a,b\n1,2\n3\n").unwrap();
        let err = read_csv_rows(&path, "a,b").unwrap_err();
        assert!(err.to_string().contains(":3"), "{err}");
        std::fs::write(&path, "x,y\n").unwrap();
        let err = read_csv_rows(&path, "a,b").unwrap_err();
        assert!(err.to_string().contains("expected header"), "{err}");
    }

    #[test]
    fn mean_se_handles_singletons() {
        assert_eq!(mean_se(&[2.0]), Some((2.0, 0.0)));
        let (m, se) = mean_se(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-12);
        assert_eq!(mean_se(&[]), None);
    }

    #[test]
    fn groups_default_to_all_when_absent() {
        let dir = tempfile::tempdir().unwrap();
        let groups = load_groups(dir.path(), None).unwrap();
        assert_eq!(group_of(&groups, "p1"), "all");
        std::fs::write(dir.path().join("groups.csv"), "patient,group\np1,alpha\n").unwrap();
        let groups = load_groups(dir.path(), None).unwrap();
        assert_eq!(group_of(&groups, "p1"), "alpha");
        let err = load_groups(dir.path(), Some(Path::new("/nope/groups.csv"))).unwrap_err();
        assert!(err.to_string().contains("does not exist"));
    }
}
