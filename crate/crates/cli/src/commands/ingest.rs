//! `ingest`: parse every recognized stream under the data tree and emit a
//! per-patient record-count summary. Under `--strict` any malformed row is
//! fatal, making this the canonical data validation pass.

use super::{data_label, per_patient};
use crate::artifacts::{absorb_inputs, digest_file, ArtifactSet};
use crate::config::Config;
use crate::data::discover_patients;
use crate::failure::Failure;
use std::path::PathBuf;
use wardsense_core::ingest::{
    parse_au_jsonl, parse_env_csv, parse_epoch_csv, parse_keypoints_jsonl, parse_occupancy_csv,
    Segment, Site,
};

pub fn run(cfg: &Config, data_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let patients = discover_patients(&data_dir)?;
    let policy = cfg.parse_policy();
    let anchor = cfg.anchor_hour;

    let results = per_patient(&patients, |id, dir| {
        let mut rows = Vec::new();
        let mut inputs = Vec::new();
        let mut record = |path: &std::path::Path| -> Result<(), Failure> {
            inputs.push((data_label(&data_dir, path), digest_file(path)?));
            Ok(())
        };

        for site in Site::ALL {
            let path = dir.join(format!("{}.csv", site.as_str()));
            if !path.exists() {
                continue;
            }
            let series = parse_epoch_csv(&path, site, anchor, policy)?;
            let records: usize = series.iter().map(|s| s.observed_len(Segment::All)).sum();
            rows.push(format!("{id},{site},{records},{}", series.len()));
            record(&path)?;
        }
        let path = dir.join("au.jsonl");
        if path.exists() {
            let frames = parse_au_jsonl(&path, policy)?;
            rows.push(format!("{id},au,{},", frames.len()));
            record(&path)?;
        }
        let path = dir.join("keypoints.jsonl");
        if path.exists() {
            let frames = parse_keypoints_jsonl(&path, policy)?;
            rows.push(format!("{id},keypoints,{},", frames.len()));
            record(&path)?;
        }
        let path = dir.join("env.csv");
        if path.exists() {
            let samples = parse_env_csv(&path, policy)?;
            rows.push(format!("{id},env,{},", samples.len()));
            record(&path)?;
        }
        let path = dir.join("occupancy.csv");
        if path.exists() {
            let frames = parse_occupancy_csv(&path, policy)?;
            rows.push(format!("{id},occupancy,{},", frames.len()));
            record(&path)?;
        }
        if rows.is_empty() {
            return Err(Failure::data(format!(
                "patient {id}: no recognized stream files in {}",
                dir.display()
            )));
        }
        Ok((rows, inputs))
    })?;

    let mut csv = String::from("patient,stream,records,days\n");
    for (rows, _) in &results {
        for row in rows {
            csv.push_str(row);
            csv.push('\n');
        }
    }
    absorb_inputs(&mut set, results.into_iter().map(|(_, inputs)| inputs));
    set.write("ingest_summary.csv", csv.as_bytes())?;
    Ok(set)
}
