//! `env` and `visitation`: sound/light context per patient-day and
//! visitor-disruption rates per patient segment.

use super::{data_label, per_patient};
use crate::artifacts::{absorb_inputs, ArtifactSet};
use crate::config::Config;
use crate::data::{cell, discover_patients, flag_cell, group_of, load_groups};
use crate::failure::Failure;
use std::collections::BTreeMap;
use std::path::PathBuf;
use wardsense_core::environs::{disruption_rate, env_summary, EnvSummary, EnvironsError};
use wardsense_core::ingest::{parse_env_csv, parse_occupancy_csv, EnvSample, Segment};

pub fn env(cfg: &Config, data_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let patients = discover_patients(&data_dir)?;
    let groups = load_groups(&data_dir, cfg.groups_file.as_deref())?;
    let policy = cfg.parse_policy();
    let env_cfg = cfg.env_config();
    let anchor_hour = cfg.anchor_hour;

    struct PatientDays {
        id: String,
        days: Vec<EnvSummary>,
        input: (String, String),
    }

    let per = per_patient(&patients, |id, dir| {
        let path = dir.join("env.csv");
        if !path.exists() {
            log::warn!("patient {id}: no env.csv, skipped");
            return Ok(None);
        }
        let samples = parse_env_csv(&path, policy)?;
        let mut by_day: BTreeMap<chrono::NaiveDateTime, Vec<EnvSample>> = BTreeMap::new();
        for sample in samples {
            by_day
                .entry(crate::data::day_anchor_of(sample.ts, anchor_hour))
                .or_default()
                .push(sample);
        }
        let mut days = Vec::new();
        for (anchor, day_samples) in by_day {
            days.push(env_summary(anchor, &day_samples, &env_cfg)?);
        }
        let input = (
            data_label(&data_dir, &path),
            crate::artifacts::digest_file(&path)?,
        );
        Ok(Some(PatientDays {
            id: id.to_string(),
            days,
            input,
        }))
    })?;
    let per: Vec<PatientDays> = per.into_iter().flatten().collect();
    if per.is_empty() {
        return Err(Failure::data(format!(
            "no environment streams found under {}",
            data_dir.display()
        )));
    }

    let mut summary_csv = String::from(
        "patient,group,day,day_spl,night_spl,night_max_spl,night_minutes_above_limit,\
         who_mean_exceeded,who_max_exceeded,spl_samples,lux_samples,out_of_day_samples\n",
    );
    let mut hourly_csv = String::from("patient,day,hour,spl,lux\n");
    for patient in &per {
        let group = group_of(&groups, &patient.id);
        for (day, summary) in patient.days.iter().enumerate() {
            summary_csv.push_str(&format!(
                "{},{group},{day},{},{},{},{},{},{},{},{},{}\n",
                patient.id,
                cell(summary.day_spl),
                cell(summary.night_spl),
                cell(summary.night_max_spl),
                summary.night_minutes_above_limit,
                flag_cell(summary.who_mean_exceeded),
                flag_cell(summary.who_max_exceeded),
                summary.spl_samples,
                summary.lux_samples,
                summary.out_of_day_samples,
            ));
            for hour in 0..24 {
                hourly_csv.push_str(&format!(
                    "{},{day},{hour},{},{}\n",
                    patient.id,
                    cell(summary.hourly_spl[hour]),
                    cell(summary.hourly_lux[hour]),
                ));
            }
        }
    }

    absorb_inputs(&mut set, per.into_iter().map(|p| vec![p.input]));
    set.write("env_summary.csv", summary_csv.as_bytes())?;
    set.write("env_hourly.csv", hourly_csv.as_bytes())?;
    Ok(set)
}

pub fn visitation(cfg: &Config, data_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let patients = discover_patients(&data_dir)?;
    let groups = load_groups(&data_dir, cfg.groups_file.as_deref())?;
    let policy = cfg.parse_policy();
    let dis_cfg = cfg.disruption_config();

    struct PatientRates {
        id: String,
        rows: Vec<String>,
        input: (String, String),
    }

    let per = per_patient(&patients, |id, dir| {
        let path = dir.join("occupancy.csv");
        if !path.exists() {
            log::warn!("patient {id}: no occupancy.csv, skipped");
            return Ok(None);
        }
        let frames = parse_occupancy_csv(&path, policy)?;
        let mut rows = Vec::new();
        for segment in [Segment::Day, Segment::Night, Segment::All] {
            match disruption_rate(&frames, segment, &dis_cfg) {
                Ok(s) => rows.push(format!(
                    "{segment},{},{},{}",
                    s.frames, s.disrupted_frames, s.rate
                )),
                Err(EnvironsError::EmptySegment(_)) => continue,
                Err(e) => return Err(e.into()),
            }
        }
        let input = (
            data_label(&data_dir, &path),
            crate::artifacts::digest_file(&path)?,
        );
        Ok(Some(PatientRates {
            id: id.to_string(),
            rows,
            input,
        }))
    })?;
    let per: Vec<PatientRates> = per.into_iter().flatten().collect();
    if per.is_empty() {
        return Err(Failure::data(format!(
            "no occupancy streams found under {}",
            data_dir.display()
        )));
    }

    let mut csv = String::from("patient,group,segment,frames,disrupted_frames,rate\n");
    for patient in &per {
        let group = group_of(&groups, &patient.id);
        for row in &patient.rows {
            csv.push_str(&format!("{},{group},{row}\n", patient.id));
        }
    }

    absorb_inputs(&mut set, per.into_iter().map(|p| vec![p.input]));
    set.write("disruption.csv", csv.as_bytes())?;
    Ok(set)
}
