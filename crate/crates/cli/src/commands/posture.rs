//! `posture-train` / `posture-eval` / `posture-predict`: poselet
//! featurization of keypoint frames, KNN imputation, and a saved nearest-
//! neighbor classifier. Training labels come from the per-patient
//! `truth/<patient>/postures.csv` sidecar (timestamp-matched to frames).

use super::{data_label, per_patient};
use crate::artifacts::{absorb_inputs, digest_file, ArtifactSet};
use crate::config::Config;
use crate::data::{discover_patients, group_of, load_groups, load_truth_postures};
use crate::failure::Failure;
use chrono::NaiveDateTime;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use wardsense_core::ingest::{format_timestamp, parse_keypoints_jsonl, Segment};
use wardsense_core::posture::{
    evaluation_from_pairs, extract_poselet, impute_knn, knn_train, load_model, posture_fractions,
    save_model, stratified_split, Evaluation, KnnModel, PostureLabel, POSELET_FEATURE_NAMES,
};

/// Frames are classified independently, so spread them over the pool.
fn par_classify(model: &KnnModel, rows: &[Vec<f64>]) -> Result<Vec<PostureLabel>, Failure> {
    rows.par_iter()
        .map(|row| model.classify(row).map_err(Failure::from))
        .collect()
}

struct LabeledRows {
    rows: Vec<Vec<f64>>,
    labels: Vec<PostureLabel>,
    inputs: Vec<(String, String)>,
}

/// Completed poselet rows for every truth-labeled keypoint frame, pooled
/// across patients. Imputation donors are restricted to the same patient:
/// their other frames share the subject's body geometry, and the search
/// stays linear in cohort size.
fn collect_labeled(
    cfg: &Config,
    data_dir: &Path,
    patients: &[(String, PathBuf)],
) -> Result<LabeledRows, Failure> {
    let policy = cfg.parse_policy();
    let impute_k = cfg.impute_k;
    let per = per_patient(patients, |id, dir| {
        let path = dir.join("keypoints.jsonl");
        if !path.exists() {
            log::warn!("patient {id}: no keypoints.jsonl, skipped");
            return Ok(None);
        }
        let truth_file = data_dir.join("truth").join(id).join("postures.csv");
        if !truth_file.exists() {
            log::warn!("patient {id}: no posture labels, excluded from training");
            return Ok(None);
        }
        let truth: BTreeMap<NaiveDateTime, PostureLabel> =
            load_truth_postures(data_dir, id)?.into_iter().collect();
        let frames = parse_keypoints_jsonl(&path, policy)?;
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for frame in &frames {
            if let Some(&label) = truth.get(&frame.ts) {
                rows.push(extract_poselet(frame).values.to_vec());
                labels.push(label);
            }
        }
        let complete = impute_knn(&rows, impute_k)
            .map_err(|e| Failure::data(format!("patient {id}: {e}")))?;
        let inputs = vec![
            (data_label(data_dir, &path), digest_file(&path)?),
            (data_label(data_dir, &truth_file), digest_file(&truth_file)?),
        ];
        Ok(Some((complete, labels, inputs)))
    })?;

    let mut out = LabeledRows {
        rows: Vec::new(),
        labels: Vec::new(),
        inputs: Vec::new(),
    };
    for item in per.into_iter().flatten() {
        out.rows.extend(item.0);
        out.labels.extend(item.1);
        out.inputs.extend(item.2);
    }
    if out.rows.is_empty() {
        return Err(Failure::data(format!(
            "no labeled keypoint frames under {}",
            data_dir.display()
        )));
    }
    Ok(out)
}

#[derive(Serialize)]
struct Metrics {
    overall_accuracy: f64,
    macro_f1: f64,
    per_class_accuracy: BTreeMap<&'static str, Option<f64>>,
    train_rows: usize,
    test_rows: usize,
}

fn confusion_csv(eval: &Evaluation) -> String {
    let mut csv = String::from("true_label");
    for label in PostureLabel::ALL {
        csv.push(',');
        csv.push_str(label.as_str());
    }
    csv.push_str(",support\n");
    for (t, label) in PostureLabel::ALL.into_iter().enumerate() {
        csv.push_str(label.as_str());
        for p in 0..PostureLabel::ALL.len() {
            csv.push(',');
            if let Some(percent) = eval.percent[t][p] {
                csv.push_str(&format!("{percent:.2}"));
            }
        }
        let support: u64 = eval.counts[t].iter().sum();
        csv.push_str(&format!(",{support}\n"));
    }
    csv
}

fn write_evaluation(
    set: &mut ArtifactSet,
    eval: &Evaluation,
    train_rows: usize,
    test_rows: usize,
) -> Result<(), Failure> {
    set.write("confusion_matrix.csv", confusion_csv(eval).as_bytes())?;
    let metrics = Metrics {
        overall_accuracy: eval.overall_accuracy,
        macro_f1: eval.macro_f1,
        per_class_accuracy: PostureLabel::ALL
            .into_iter()
            .enumerate()
            .map(|(i, label)| (label.as_str(), eval.per_class_accuracy[i]))
            .collect(),
        train_rows,
        test_rows,
    };
    let mut bytes = serde_json::to_vec_pretty(&metrics)
        .map_err(|e| Failure::internal(format!("cannot encode metrics: {e}")))?;
    bytes.push(b'\n');
    set.write("posture_metrics.json", &bytes)
}

pub fn train(cfg: &Config, data_dir: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let patients = discover_patients(&data_dir)?;
    let labeled = collect_labeled(cfg, &data_dir, &patients)?;
    let (train_idx, test_idx) = stratified_split(&labeled.labels, cfg.test_fraction, cfg.seed)?;

    let pick = |indices: &[usize]| -> (Vec<Vec<f64>>, Vec<PostureLabel>) {
        (
            indices.iter().map(|&i| labeled.rows[i].clone()).collect(),
            indices.iter().map(|&i| labeled.labels[i]).collect(),
        )
    };
    let (train_rows, train_labels) = pick(&train_idx);
    let (test_rows, test_labels) = pick(&test_idx);
    let n_train = train_rows.len();
    let n_test = test_rows.len();

    let feature_names = POSELET_FEATURE_NAMES.iter().map(|s| s.to_string()).collect();
    let model = knn_train(
        train_rows,
        train_labels,
        feature_names,
        cfg.knn_k,
        cfg.minkowski_p,
    )?;
    let predictions = par_classify(&model, &test_rows)?;
    let evaluation = evaluation_from_pairs(test_labels.iter().copied().zip(predictions))?;

    let mut model_bytes = Vec::new();
    save_model(&model, &mut model_bytes)
        .map_err(|e| Failure::internal(format!("cannot encode model: {e}")))?;
    for (label, digest) in labeled.inputs {
        set.record_input(label, digest);
    }
    set.write("model.knn", &model_bytes)?;
    write_evaluation(&mut set, &evaluation, n_train, n_test)?;
    Ok(set)
}

fn read_model(set: &mut ArtifactSet, model_path: &Path) -> Result<KnnModel, Failure> {
    let file = std::fs::File::open(model_path)
        .map_err(|e| Failure::data(format!("cannot open model {}: {e}", model_path.display())))?;
    let model = load_model(std::io::BufReader::new(file))?;
    set.record_input_file(
        format!(
            "model:{}",
            model_path.file_name().unwrap_or_default().to_string_lossy()
        ),
        model_path,
    )?;
    Ok(model)
}

pub fn eval(cfg: &Config, data_dir: PathBuf, model_path: &Path) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let model = read_model(&mut set, model_path)?;
    let patients = discover_patients(&data_dir)?;
    let labeled = collect_labeled(cfg, &data_dir, &patients)?;
    let predictions = par_classify(&model, &labeled.rows)?;
    let evaluation = evaluation_from_pairs(labeled.labels.iter().copied().zip(predictions))?;
    for (label, digest) in labeled.inputs {
        set.record_input(label, digest);
    }
    write_evaluation(&mut set, &evaluation, model.len(), labeled.rows.len())?;
    Ok(set)
}

pub fn predict(cfg: &Config, data_dir: PathBuf, model_path: &Path) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let model = read_model(&mut set, model_path)?;
    let patients = discover_patients(&data_dir)?;
    let groups = load_groups(&data_dir, cfg.groups_file.as_deref())?;
    let policy = cfg.parse_policy();

    let impute_k = cfg.impute_k;
    let per = per_patient(&patients, |id, dir| {
        let path = dir.join("keypoints.jsonl");
        if !path.exists() {
            log::warn!("patient {id}: no keypoints.jsonl, skipped");
            return Ok(None);
        }
        let frames = parse_keypoints_jsonl(&path, policy)?;
        let mut timestamps = Vec::with_capacity(frames.len());
        let mut rows = Vec::with_capacity(frames.len());
        for frame in &frames {
            timestamps.push(frame.ts);
            rows.push(extract_poselet(frame).values.to_vec());
        }
        // Donors from the same patient's other frames (see collect_labeled).
        let complete = impute_knn(&rows, impute_k)
            .map_err(|e| Failure::data(format!("patient {id}: {e}")))?;
        let input = (data_label(&data_dir, &path), digest_file(&path)?);
        Ok(Some((id.to_string(), timestamps, complete, input)))
    })?;
    let per: Vec<_> = per.into_iter().flatten().collect();
    if per.is_empty() {
        return Err(Failure::data(format!(
            "no keypoint streams found under {}",
            data_dir.display()
        )));
    }

    let all_rows: Vec<Vec<f64>> = per
        .iter()
        .flat_map(|(_, _, complete, _)| complete.iter().cloned())
        .collect();
    let labels = par_classify(&model, &all_rows)?;

    let mut postures_csv = String::from("patient,timestamp,label\n");
    let mut fractions_csv = String::from(
        "patient,group,segment,lying,sitting_on_bed,sitting_on_chair,standing\n",
    );
    let mut cursor = 0;
    for (id, timestamps, _, _) in &per {
        let mut labeled_frames = Vec::new();
        for ts in timestamps {
            let label = labels[cursor];
            cursor += 1;
            postures_csv.push_str(&format!("{id},{},{}\n", format_timestamp(*ts), label));
            labeled_frames.push((*ts, label));
        }
        let group = group_of(&groups, id);
        for segment in [Segment::Day, Segment::Night, Segment::All] {
            match posture_fractions(labeled_frames.iter().copied(), segment, cfg.anchor_hour) {
                Ok(fractions) => {
                    fractions_csv.push_str(&format!("{id},{group},{segment}"));
                    for fraction in fractions {
                        fractions_csv.push_str(&format!(",{fraction}"));
                    }
                    fractions_csv.push('\n');
                }
                Err(_) => continue, // no frames in this segment
            }
        }
    }

    absorb_inputs(&mut set, per.into_iter().map(|(_, _, _, input)| vec![input]));
    set.write("postures.csv", postures_csv.as_bytes())?;
    set.write("posture_fractions.csv", fractions_csv.as_bytes())?;
    Ok(set)
}
