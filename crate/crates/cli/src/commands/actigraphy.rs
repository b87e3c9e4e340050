//! `actigraphy`: the 15 rest–activity features per patient-day and site
//! (`features.csv`) plus LOESS-smoothed group activity curves over the
//! configured curve site (`curves.csv`).

use super::{data_label, per_patient};
use crate::artifacts::{absorb_inputs, digest_file, ArtifactSet};
use crate::config::Config;
use crate::data::{cell, discover_patients, group_of, load_groups};
use crate::failure::Failure;
use std::collections::BTreeMap;
use std::path::PathBuf;
use wardsense_core::actigraphy::{feature_vector, group_activity_curve, FEATURE_NAMES};
use wardsense_core::ingest::{parse_epoch_csv, EpochSeries, Site};

struct PatientResult {
    group: String,
    rows: Vec<String>,
    curve_series: Vec<EpochSeries>,
    inputs: Vec<(String, String)>,
}

pub fn run(cfg: &Config, data_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let patients = discover_patients(&data_dir)?;
    let groups = load_groups(&data_dir, cfg.groups_file.as_deref())?;
    let policy = cfg.parse_policy();
    let acfg = cfg.actigraphy_config();
    let anchor = cfg.anchor_hour;

    let results = per_patient(&patients, |id, dir| {
        let group = group_of(&groups, id).to_string();
        let mut rows = Vec::new();
        let mut curve_series = Vec::new();
        let mut inputs = Vec::new();
        for site in Site::ALL {
            let path = dir.join(format!("{}.csv", site.as_str()));
            if !path.exists() {
                continue;
            }
            let series = parse_epoch_csv(&path, site, anchor, policy)?;
            inputs.push((data_label(&data_dir, &path), digest_file(&path)?));
            for (day, one_day) in series.iter().enumerate() {
                let features = feature_vector(one_day, &acfg);
                let mut row = format!("{id},{group},{site},{day}");
                for (_, feature) in features.iter() {
                    row.push(',');
                    row.push_str(&cell(feature.value()));
                }
                rows.push(row);
            }
            if site == cfg.curve_site {
                curve_series.extend(series);
            }
        }
        Ok(PatientResult {
            group,
            rows,
            curve_series,
            inputs,
        })
    })?;

    if results.iter().all(|r| r.rows.is_empty()) {
        return Err(Failure::data(format!(
            "no activity-count streams found under {}",
            data_dir.display()
        )));
    }

    let mut features_csv = format!("patient,group,site,day,{}\n", FEATURE_NAMES.join(","));
    for result in &results {
        for row in &result.rows {
            features_csv.push_str(row);
            features_csv.push('\n');
        }
    }

    let mut by_group: BTreeMap<&str, Vec<&EpochSeries>> = BTreeMap::new();
    for result in &results {
        by_group
            .entry(&result.group)
            .or_default()
            .extend(&result.curve_series);
    }
    let mut curves_csv = String::from("group,minute,smoothed,n\n");
    for (group, series) in &by_group {
        if series.is_empty() {
            continue;
        }
        let curve = group_activity_curve(series.iter().copied(), cfg.loess_span, cfg.loess_degree)?;
        for ((minute, smoothed), n) in curve.minutes.iter().zip(&curve.smoothed).zip(&curve.n) {
            curves_csv.push_str(&format!("{group},{minute},{smoothed},{n}\n"));
        }
    }

    absorb_inputs(&mut set, results.into_iter().map(|r| r.inputs));
    let groups_path = cfg
        .groups_file
        .clone()
        .unwrap_or_else(|| data_dir.join("groups.csv"));
    if groups_path.exists() {
        set.record_input_file(data_label(&data_dir, &groups_path), &groups_path)?;
    }
    set.write("features.csv", features_csv.as_bytes())?;
    set.write("curves.csv", curves_csv.as_bytes())?;
    Ok(set)
}
