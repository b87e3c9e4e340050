//! `deteval`: average precision of detection boxes against ground truth,
//! per class and pooled, with optional greedy non-maximum suppression.

use crate::artifacts::ArtifactSet;
use crate::config::Config;
use crate::data::read_csv_rows;
use crate::failure::Failure;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use wardsense_core::deteval::{average_precision, mean_ap, nms_greedy, BBox, DetevalError};

/// class -> [(frame, box)] with scores when `scored` is set.
type Boxes = BTreeMap<String, Vec<(String, BBox)>>;

fn parse_f64(path: &Path, field: &str, value: &str) -> Result<f64, Failure> {
    value.parse::<f64>().map_err(|_| {
        Failure::data(format!(
            "{}: bad {field} value `{value}`",
            path.display()
        ))
    })
}

fn load_boxes(path: &Path, scored: bool) -> Result<Boxes, Failure> {
    let header = if scored {
        "class,frame,x,y,w,h,score"
    } else {
        "class,frame,x,y,w,h"
    };
    let mut by_class: Boxes = BTreeMap::new();
    for row in read_csv_rows(path, header)? {
        let x = parse_f64(path, "x", &row[2])?;
        let y = parse_f64(path, "y", &row[3])?;
        let w = parse_f64(path, "w", &row[4])?;
        let h = parse_f64(path, "h", &row[5])?;
        let bbox = if scored {
            let score = parse_f64(path, "score", &row[6])?;
            BBox::scored(x, y, w, h, score)
        } else {
            BBox::new(x, y, w, h)
        }
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        by_class
            .entry(row[0].clone())
            .or_default()
            .push((row[1].clone(), bbox));
    }
    Ok(by_class)
}

/// Suppress overlapping detections independently within each frame,
/// preserving the original frame grouping.
fn suppress(dets: &[(String, BBox)], threshold: f64) -> Result<Vec<(String, BBox)>, Failure> {
    let mut by_frame: BTreeMap<&str, Vec<BBox>> = BTreeMap::new();
    for (frame, bbox) in dets {
        by_frame.entry(frame).or_default().push(*bbox);
    }
    let mut kept = Vec::new();
    for (frame, boxes) in by_frame {
        for bbox in nms_greedy(&boxes, threshold)? {
            kept.push((frame.to_string(), bbox));
        }
    }
    Ok(kept)
}

#[derive(Serialize)]
struct Summary {
    classes: usize,
    iou_threshold: f64,
    map: f64,
    nms: &'static str,
}

pub fn run(cfg: &Config, detections: PathBuf, truths: PathBuf) -> Result<ArtifactSet, Failure> {
    let mut set = ArtifactSet::new(cfg.out_dir()?)?;
    let det_boxes = load_boxes(&detections, true)?;
    let truth_boxes = load_boxes(&truths, false)?;
    set.record_input_file(
        format!(
            "file:{}",
            detections.file_name().unwrap_or_default().to_string_lossy()
        ),
        &detections,
    )?;
    set.record_input_file(
        format!(
            "file:{}",
            truths.file_name().unwrap_or_default().to_string_lossy()
        ),
        &truths,
    )?;
    if truth_boxes.is_empty() {
        return Err(Failure::data(format!(
            "{}: no ground-truth boxes",
            truths.display()
        )));
    }
    for class in det_boxes.keys() {
        if !truth_boxes.contains_key(class) {
            return Err(Failure::data(format!(
                "class `{class}` has detections but no ground truth"
            )));
        }
    }

    let empty: Vec<(String, BBox)> = Vec::new();
    let mut rows = String::from("class,detections,kept,truths,ap\n");
    let mut aps = Vec::new();
    for (class, truth) in &truth_boxes {
        let dets = det_boxes.get(class).unwrap_or(&empty);
        let kept = match cfg.nms.threshold() {
            Some(t) => suppress(dets, t)?,
            None => dets.clone(),
        };
        let ap = match average_precision(&kept, truth, cfg.iou_threshold) {
            Ok(ap) => ap,
            Err(DetevalError::NoGroundTruth) => unreachable!("class taken from truth table"),
            Err(e) => return Err(e.into()),
        };
        rows.push_str(&format!(
            "{class},{},{},{},{ap}\n",
            dets.len(),
            kept.len(),
            truth.len()
        ));
        aps.push(ap);
    }
    let map = mean_ap(&aps)?;

    set.write("deteval.csv", rows.as_bytes())?;
    let summary = Summary {
        classes: aps.len(),
        iou_threshold: cfg.iou_threshold,
        map,
        nms: cfg.nms.as_str(),
    };
    let mut bytes = serde_json::to_vec_pretty(&summary)
        .map_err(|e| Failure::internal(format!("cannot encode summary: {e}")))?;
    bytes.push(b'\n');
    set.write("deteval_summary.json", &bytes)?;
    Ok(set)
}
