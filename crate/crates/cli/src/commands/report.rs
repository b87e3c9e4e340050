//! `report`: turn analysis artifacts into presentation-ready tables
//! (box-plot five-number summaries, rate means with standard errors) plus
//! an index of what was produced from what.

use crate::artifacts::ArtifactSet;
use crate::config::Config;
use crate::data::{mean_se, read_csv_rows};
use crate::failure::Failure;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use wardsense_core::actigraphy::FEATURE_NAMES;
use wardsense_core::stats::median_iqr;

#[derive(Serialize)]
struct Section {
    name: &'static str,
    source: &'static str,
    artifact: &'static str,
}

#[derive(Serialize)]
struct Index {
    sections: Vec<Section>,
    version: &'static str,
}

fn parse_number(source: &Path, value: &str) -> Result<f64, Failure> {
    value
        .parse::<f64>()
        .map_err(|_| Failure::data(format!("{}: bad number `{value}`", source.display())))
}

fn parse_optional(source: &Path, value: &str) -> Result<Option<f64>, Failure> {
    if value.is_empty() {
        return Ok(None);
    }
    parse_number(source, value).map(Some)
}

/// `min,q25,median,q75,max` of a non-empty sample.
fn five_numbers(values: &[f64]) -> Result<String, Failure> {
    let summary = median_iqr(values)?;
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(format!(
        "{min},{},{},{},{max}",
        summary.q25, summary.median, summary.q75
    ))
}

/// Mean over each patient's defined values, keyed by (group key, patient).
type PatientSamples = BTreeMap<(String, String), Vec<f64>>;

fn patient_means(samples: PatientSamples) -> BTreeMap<String, Vec<f64>> {
    let mut by_key: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((key, _patient), values) in samples {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        by_key.entry(key).or_default().push(mean);
    }
    by_key
}

fn feature_boxplots(source: &Path) -> Result<String, Failure> {
    let header = format!("patient,group,site,day,{}", FEATURE_NAMES.join(","));
    let mut samples: PatientSamples = BTreeMap::new();
    for row in read_csv_rows(source, &header)? {
        for (f, name) in FEATURE_NAMES.iter().enumerate() {
            if let Some(value) = parse_optional(source, &row[4 + f])? {
                samples
                    .entry((format!("{},{},{name}", row[1], row[2]), row[0].clone()))
                    .or_default()
                    .push(value);
            }
        }
    }
    let mut csv = String::from("group,site,feature,min,q25,median,q75,max,patients\n");
    for (key, means) in patient_means(samples) {
        csv.push_str(&format!("{key},{},{}\n", five_numbers(&means)?, means.len()));
    }
    Ok(csv)
}

fn expression_rates(source: &Path) -> Result<(String, String), Failure> {
    let header = "patient,group,expression,detected_frames,evaluated_frames,frequency,\
                  total_frames,successful_frames,success_rate,laterality_approximated";
    let mut freq: PatientSamples = BTreeMap::new();
    let mut success: PatientSamples = BTreeMap::new();
    for row in read_csv_rows(source, header)? {
        if let Some(f) = parse_optional(source, &row[5])? {
            freq.entry((format!("{},{}", row[1], row[2]), row[0].clone()))
                .or_default()
                .push(f * 100.0);
        }
        // One success-rate sample per patient (the column repeats per rule).
        success.insert(
            (row[1].clone(), row[0].clone()),
            vec![parse_number(source, &row[8])? * 100.0],
        );
    }

    let mut rates = String::from("group,expression,mean_percent,se_percent,patients\n");
    for (key, means) in patient_means(freq) {
        let (mean, se) = mean_se(&means).expect("non-empty by construction");
        rates.push_str(&format!("{key},{mean},{se},{}\n", means.len()));
    }
    let mut detection = String::from("group,mean_percent,se_percent,patients\n");
    for (group, means) in patient_means(success) {
        let (mean, se) = mean_se(&means).expect("non-empty by construction");
        detection.push_str(&format!("{group},{mean},{se},{}\n", means.len()));
    }
    Ok((rates, detection))
}

fn disruption_rates(source: &Path) -> Result<String, Failure> {
    let header = "patient,group,segment,frames,disrupted_frames,rate";
    let mut samples: PatientSamples = BTreeMap::new();
    for row in read_csv_rows(source, header)? {
        samples
            .entry((format!("{},{}", row[1], row[2]), row[0].clone()))
            .or_default()
            .push(parse_number(source, &row[5])?);
    }
    let mut csv = String::from("group,segment,mean_rate,se_rate,patients\n");
    for (key, means) in patient_means(samples) {
        let (mean, se) = mean_se(&means).expect("non-empty by construction");
        csv.push_str(&format!("{key},{mean},{se},{}\n", means.len()));
    }
    Ok(csv)
}

fn env_boxplots(source: &Path) -> Result<String, Failure> {
    let header = "patient,group,day,day_spl,night_spl,night_max_spl,night_minutes_above_limit,\
                  who_mean_exceeded,who_max_exceeded,spl_samples,lux_samples,out_of_day_samples";
    let mut samples: PatientSamples = BTreeMap::new();
    for row in read_csv_rows(source, header)? {
        for (column, variable) in [(3, "day_spl"), (4, "night_spl")] {
            if let Some(value) = parse_optional(source, &row[column])? {
                samples
                    .entry((format!("{},{variable}", row[1]), row[0].clone()))
                    .or_default()
                    .push(value);
            }
        }
    }
    let mut csv = String::from("group,variable,min,q25,median,q75,max,patients\n");
    for (key, means) in patient_means(samples) {
        csv.push_str(&format!("{key},{},{}\n", five_numbers(&means)?, means.len()));
    }
    Ok(csv)
}

fn copy(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path)
        .map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

/// Render one source artifact into one report table, when the source
/// exists, and note the section in the index.
fn consume(
    set: &mut ArtifactSet,
    sections: &mut Vec<Section>,
    artifact_dir: &Path,
    name: &'static str,
    source: &'static str,
    artifact: &'static str,
    render: &dyn Fn(&Path) -> Result<String, Failure>,
) -> Result<(), Failure> {
    let path = artifact_dir.join(source);
    if !path.exists() {
        return Ok(());
    }
    let table = render(&path)?;
    set.record_input_file(format!("artifact:{source}"), &path)?;
    set.write(artifact, table.as_bytes())?;
    sections.push(Section {
        name,
        source,
        artifact,
    });
    Ok(())
}

pub fn run(cfg: &Config, artifact_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let out_dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| artifact_dir.join("report"));
    let mut set = ArtifactSet::new(&out_dir)?;
    let mut sections = Vec::new();
    let dir = artifact_dir.as_path();

    consume(
        &mut set,
        &mut sections,
        dir,
        "activity_curves",
        "curves.csv",
        "activity_curves.csv",
        &copy,
    )?;
    consume(
        &mut set,
        &mut sections,
        dir,
        "feature_boxplots",
        "features.csv",
        "feature_boxplots.csv",
        &feature_boxplots,
    )?;
    let expressions_path = artifact_dir.join("expressions.csv");
    if expressions_path.exists() {
        let (rates, detection) = expression_rates(&expressions_path)?;
        set.record_input_file("artifact:expressions.csv".to_string(), &expressions_path)?;
        set.write("expression_rates.csv", rates.as_bytes())?;
        set.write("detection_success.csv", detection.as_bytes())?;
        sections.push(Section {
            name: "expression_rates",
            source: "expressions.csv",
            artifact: "expression_rates.csv",
        });
        sections.push(Section {
            name: "detection_success",
            source: "expressions.csv",
            artifact: "detection_success.csv",
        });
    }
    consume(
        &mut set,
        &mut sections,
        dir,
        "disruption_rates",
        "disruption.csv",
        "disruption_rates.csv",
        &disruption_rates,
    )?;
    consume(
        &mut set,
        &mut sections,
        dir,
        "env_boxplots",
        "env_summary.csv",
        "env_boxplots.csv",
        &env_boxplots,
    )?;
    consume(
        &mut set,
        &mut sections,
        dir,
        "cohort_comparison",
        "comparison.csv",
        "comparison.csv",
        &copy,
    )?;
    consume(
        &mut set,
        &mut sections,
        dir,
        "posture_confusion",
        "confusion_matrix.csv",
        "posture_confusion.csv",
        &copy,
    )?;

    if sections.is_empty() {
        return Err(Failure::data(format!(
            "nothing to report in {}: expected curves.csv, features.csv, expressions.csv, \
             disruption.csv, env_summary.csv, comparison.csv, or confusion_matrix.csv",
            artifact_dir.display()
        )));
    }
    sections.sort_by_key(|s| s.name);
    let index = Index {
        sections,
        version: env!("CARGO_PKG_VERSION"),
    };
    let mut bytes = serde_json::to_vec_pretty(&index)
        .map_err(|e| Failure::internal(format!("cannot encode index: {e}")))?;
    bytes.push(b'\n');
    set.write("index.json", &bytes)?;
    Ok(set)
}
