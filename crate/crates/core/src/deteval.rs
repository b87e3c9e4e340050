//! Detection-quality toolkit: box overlap, regression loss, greedy
//! non-maximum suppression, average precision, and embedding-based
//! patient matching.
//!
//! Everything here is a pure function over value types, so batch
//! evaluation can fan out across threads freely.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DetevalError {
    #[error("invalid box: w and h must be positive (w={w}, h={h})")]
    InvalidBox { w: f64, h: f64 },
    #[error("box at index {0} has no score")]
    UnscoredBox(usize),
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("no ground-truth boxes")]
    NoGroundTruth,
    #[error("no values to average")]
    NoValues,
    #[error("expected {expected} components, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot normalize a zero (or non-finite) vector")]
    ZeroVector,
    #[error("gallery is empty")]
    EmptyGallery,
}

/// Axis-aligned box: top-left corner, extent in pixels, optional
/// detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub score: Option<f64>,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, DetevalError> {
        if !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite() && x.is_finite() && y.is_finite())
        {
            return Err(DetevalError::InvalidBox { w, h });
        }
        Ok(BBox {
            x,
            y,
            w,
            h,
            score: None,
        })
    }

    pub fn scored(x: f64, y: f64, w: f64, h: f64, score: f64) -> Result<Self, DetevalError> {
        let mut b = BBox::new(x, y, w, h)?;
        b.score = Some(score);
        Ok(b)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// Intersection-over-union of two boxes; 0 when disjoint, 1 when identical.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    debug_assert!(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0);
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Squared Euclidean distance over the (x, y, w, h) coordinates.
pub fn bbox_loss(pred: &BBox, truth: &BBox) -> f64 {
    let dx = pred.x - truth.x;
    let dy = pred.y - truth.y;
    let dw = pred.w - truth.w;
    let dh = pred.h - truth.h;
    dx * dx + dy * dy + dw * dw + dh * dh
}

/// Suppression thresholds for the successive stages of a detection
/// cascade: loose dedup on raw proposals, then progressively stricter
/// passes as candidates are refined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmsPreset {
    Proposal,
    Refine,
    Output,
}

impl NmsPreset {
    pub fn threshold(self) -> f64 {
        match self {
            NmsPreset::Proposal => 0.6,
            NmsPreset::Refine => 0.7,
            NmsPreset::Output => 0.9,
        }
    }
}

/// Greedy non-maximum suppression.
///
/// Boxes are visited by descending score (ties keep input order); a box is
/// kept unless its IoU with an already-kept box exceeds `iou_threshold`.
/// Returns the kept boxes in visit order. Every box must carry a score.
pub fn nms_greedy(boxes: &[BBox], iou_threshold: f64) -> Result<Vec<BBox>, DetevalError> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(DetevalError::BadThreshold(iou_threshold));
    }
    for (i, b) in boxes.iter().enumerate() {
        if b.score.is_none() {
            return Err(DetevalError::UnscoredBox(i));
        }
    }
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .unwrap()
            .total_cmp(&boxes[a].score.unwrap())
            .then(a.cmp(&b))
    });
    let mut kept: Vec<BBox> = Vec::new();
    for i in order {
        if kept.iter().all(|k| iou(k, &boxes[i]) <= iou_threshold) {
            kept.push(boxes[i]);
        }
    }
    Ok(kept)
}

/// Average precision over scored detections, with ground-truth matching
/// restricted to detections and truths sharing a group key (frame id).
///
/// Detections are ranked by descending score (ties keep input order) and
/// matched greedily: each takes the unmatched same-group truth of highest
/// IoU when that IoU reaches `iou_threshold`, else counts as a false
/// positive. AP integrates the all-points-interpolated precision over
/// recall. Errors when `truths` is empty.
pub fn average_precision<K: Ord>(
    detections: &[(K, BBox)],
    truths: &[(K, BBox)],
    iou_threshold: f64,
) -> Result<f64, DetevalError> {
    if truths.is_empty() {
        return Err(DetevalError::NoGroundTruth);
    }
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(DetevalError::BadThreshold(iou_threshold));
    }
    for (i, (_, b)) in detections.iter().enumerate() {
        if b.score.is_none() {
            return Err(DetevalError::UnscoredBox(i));
        }
    }

    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .1
            .score
            .unwrap()
            .total_cmp(&detections[a].1.score.unwrap())
            .then(a.cmp(&b))
    });

    let mut truth_taken = vec![false; truths.len()];
    let mut is_tp = Vec::with_capacity(order.len());
    for &d in &order {
        let (group, bbox) = &detections[d];
        let mut best: Option<(f64, usize)> = None;
        for (t, (t_group, t_bbox)) in truths.iter().enumerate() {
            if truth_taken[t] || t_group != group {
                continue;
            }
            let overlap = iou(bbox, t_bbox);
            if best.map_or(true, |(b, _)| overlap > b) {
                best = Some((overlap, t));
            }
        }
        match best {
            Some((overlap, t)) if overlap >= iou_threshold => {
                truth_taken[t] = true;
                is_tp.push(true);
            }
            _ => is_tp.push(false),
        }
    }

    let n_truth = truths.len() as f64;
    let mut precisions = Vec::with_capacity(is_tp.len());
    let mut recalls = Vec::with_capacity(is_tp.len());
    let mut tp = 0u64;
    for (rank, &hit) in is_tp.iter().enumerate() {
        tp += u64::from(hit);
        precisions.push(tp as f64 / (rank + 1) as f64);
        recalls.push(tp as f64 / n_truth);
    }

    // Interpolated precision at each rank = best precision at any recall
    // from here on; recall is non-decreasing, so a suffix max suffices.
    let mut best_ahead = 0.0f64;
    let mut interp = vec![0.0; precisions.len()];
    for k in (0..precisions.len()).rev() {
        best_ahead = best_ahead.max(precisions[k]);
        interp[k] = best_ahead;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..recalls.len() {
        if recalls[k] > prev_recall {
            ap += (recalls[k] - prev_recall) * interp[k];
            prev_recall = recalls[k];
        }
    }
    Ok(ap)
}

/// Unweighted mean of per-class or per-subject AP values.
pub fn mean_ap(aps: &[f64]) -> Result<f64, DetevalError> {
    if aps.is_empty() {
        return Err(DetevalError::NoValues);
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

pub const EMBEDDING_DIM: usize = 128;

/// A unit-norm 128-component face embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(Box<[f64; EMBEDDING_DIM]>);

impl Embedding {
    pub fn components(&self) -> &[f64; EMBEDDING_DIM] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Squared Euclidean distance to another embedding; in [0, 4] for
    /// unit vectors.
    pub fn squared_distance(&self, other: &Embedding) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Scale a raw 128-component vector to unit L2 norm.
pub fn normalize(raw: &[f64]) -> Result<Embedding, DetevalError> {
    if raw.len() != EMBEDDING_DIM {
        return Err(DetevalError::DimensionMismatch {
            expected: EMBEDDING_DIM,
            got: raw.len(),
        });
    }
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(DetevalError::ZeroVector);
    }
    let mut components = Box::new([0.0; EMBEDDING_DIM]);
    for (out, v) in components.iter_mut().zip(raw) {
        *out = v / norm;
    }
    Ok(Embedding(components))
}

pub const DEFAULT_MATCH_THRESHOLD: f64 = 0.9;

/// Compare a probe face against a gallery of enrolled embeddings.
///
/// The score maps the smallest squared distance to any gallery entry from
/// its [0, 4] range (unit vectors) onto [0, 1], 1 meaning identical; the
/// probe is accepted when the score reaches `threshold`.
pub fn match_patient(
    gallery: &[Embedding],
    probe: &Embedding,
    threshold: f64,
) -> Result<(bool, f64), DetevalError> {
    if gallery.is_empty() {
        return Err(DetevalError::EmptyGallery);
    }
    let min_sq = gallery
        .iter()
        .map(|g| g.squared_distance(probe))
        .fold(f64::INFINITY, f64::min);
    let score = 1.0 - min_sq / 4.0;
    Ok((score >= threshold, score))
}
