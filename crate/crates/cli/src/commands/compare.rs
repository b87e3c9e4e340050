//! `compare`: two-cohort contrasts of per-patient movement features and
//! visitor-disruption rates (median/IQR plus a two-sided rank test).

use super::{data_label, per_patient};
use crate::artifacts::{absorb_inputs, digest_file, ArtifactSet};
use crate::config::Config;
use crate::data::{discover_patients, group_of, load_groups, mean_defined};
use crate::failure::Failure;
use std::collections::BTreeSet;
use std::path::PathBuf;
use wardsense_core::actigraphy::{feature_vector, FEATURE_NAMES};
use wardsense_core::environs::{disruption_rate, EnvironsError};
use wardsense_core::ingest::{parse_epoch_csv, parse_occupancy_csv, Segment};
use wardsense_core::stats::{cohort_compare, CohortVariable, MwuMethod};

/// Feature count plus day/night disruption rates.
const VARIABLE_COUNT: usize = FEATURE_NAMES.len() + 2;

struct PatientValues {
    group: String,
    values: Vec<Option<f64>>,
    inputs: Vec<(String, String)>,
}

fn variable_names() -> Vec<String> {
    let mut names: Vec<String> = FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    names.push("disruption_day".into());
    names.push("disruption_night".into());
    names
}

pub fn run(cfg: &Config, data_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let patients = discover_patients(&data_dir)?;
    let groups = load_groups(&data_dir, cfg.groups_file.as_deref())?;
    let policy = cfg.parse_policy();
    let acfg = cfg.actigraphy_config();
    let dis_cfg = cfg.disruption_config();
    let site = cfg.compare_site;
    let anchor = cfg.anchor_hour;

    let per = per_patient(&patients, |id, dir| {
        let mut values: Vec<Option<f64>> = vec![None; VARIABLE_COUNT];
        let mut inputs = Vec::new();

        let epoch_path = dir.join(format!("{site}.csv"));
        if epoch_path.exists() {
            let series = parse_epoch_csv(&epoch_path, site, anchor, policy)?;
            // One value per feature: that patient's mean over their days.
            let mut per_day: Vec<Vec<Option<f64>>> = vec![Vec::new(); FEATURE_NAMES.len()];
            for one_day in series.iter() {
                for (f, (_, feature)) in feature_vector(one_day, &acfg).iter().enumerate() {
                    per_day[f].push(feature.value());
                }
            }
            for (f, days) in per_day.into_iter().enumerate() {
                values[f] = mean_defined(days);
            }
            inputs.push((data_label(&data_dir, &epoch_path), digest_file(&epoch_path)?));
        }

        let occupancy_path = dir.join("occupancy.csv");
        if occupancy_path.exists() {
            let frames = parse_occupancy_csv(&occupancy_path, policy)?;
            for (offset, segment) in [Segment::Day, Segment::Night].into_iter().enumerate() {
                match disruption_rate(&frames, segment, &dis_cfg) {
                    Ok(s) => values[FEATURE_NAMES.len() + offset] = Some(s.rate),
                    Err(EnvironsError::EmptySegment(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            inputs.push((
                data_label(&data_dir, &occupancy_path),
                digest_file(&occupancy_path)?,
            ));
        }

        if inputs.is_empty() {
            log::warn!("patient {id}: no comparable streams, skipped");
            return Ok(None);
        }
        Ok(Some(PatientValues {
            group: group_of(&groups, id).to_string(),
            values,
            inputs,
        }))
    })?;
    let per: Vec<PatientValues> = per.into_iter().flatten().collect();
    if per.is_empty() {
        return Err(Failure::data(format!(
            "no comparable streams found under {}",
            data_dir.display()
        )));
    }

    let names: BTreeSet<String> = per.iter().map(|p| p.group.clone()).collect();
    if names.len() != 2 {
        return Err(Failure::data(format!(
            "cohort comparison needs exactly two groups, found {}: {}",
            names.len(),
            names.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    let mut names = names.into_iter();
    let (group_a, group_b) = (names.next().unwrap(), names.next().unwrap());

    let mut variables = Vec::new();
    for (v, name) in variable_names().into_iter().enumerate() {
        let pick = |g: &str| -> Vec<Option<f64>> {
            per.iter()
                .filter(|p| p.group == g)
                .map(|p| p.values[v])
                .collect()
        };
        let var = CohortVariable {
            name,
            group_a: pick(&group_a),
            group_b: pick(&group_b),
        };
        // A variable nobody in one cohort defines carries no contrast.
        if var.group_a.iter().all(Option::is_none) || var.group_b.iter().all(Option::is_none) {
            log::warn!("variable {}: undefined in one group, dropped", var.name);
            continue;
        }
        variables.push(var);
    }
    if variables.is_empty() {
        return Err(Failure::data(
            "no variable is defined in both groups".to_string(),
        ));
    }

    let rows = cohort_compare(&variables, &cfg.compare_config())?;
    let mut csv = String::from(
        "variable,group_a,group_b,n_a,n_b,excluded_a,excluded_b,\
         median_a,q25_a,q75_a,median_b,q25_b,q75_b,\
         u,p,annotation,method,degenerate,significant\n",
    );
    for row in &rows {
        let method = match row.method {
            MwuMethod::Exact => "exact",
            MwuMethod::Normal => "normal",
        };
        csv.push_str(&format!(
            "{},{group_a},{group_b},{},{},{},{},{},{},{},{},{},{},{},{},{},{method},{},{}\n",
            row.variable,
            row.n_a,
            row.n_b,
            row.excluded_a,
            row.excluded_b,
            row.summary_a.median,
            row.summary_a.q25,
            row.summary_a.q75,
            row.summary_b.median,
            row.summary_b.q25,
            row.summary_b.q75,
            row.u,
            row.p,
            wardsense_core::stats::p_annotation(row.p),
            row.degenerate,
            row.significant,
        ));
    }

    let groups_path = cfg
        .groups_file
        .clone()
        .unwrap_or_else(|| data_dir.join("groups.csv"));
    if groups_path.exists() {
        set.record_input_file(data_label(&data_dir, &groups_path), &groups_path)?;
    }
    absorb_inputs(&mut set, per.into_iter().map(|p| p.inputs));
    set.write("comparison.csv", csv.as_bytes())?;
    Ok(set)
}
