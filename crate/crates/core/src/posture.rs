//! Posture classification from skeleton keypoints.
//!
//! Keypoint frames are reduced to *poselet* features — torso-normalized
//! limb lengths plus unsigned joint angles — which feed a K-nearest-neighbor
//! classifier over four postures. Missing features are filled by KNN
//! imputation before training or classification.

use crate::ingest::{Joint, KeypointFrame, Segment};
use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PostureError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must satisfy 1 <= k <= {max}, got {k}")]
    BadK { k: usize, max: usize },
    #[error("Minkowski order must be >= 1 and finite, got {0}")]
    BadOrder(f64),
    #[error("feature {feature} observed in only {observed} rows; imputation needs {required}")]
    FeatureTooSparse {
        feature: usize,
        observed: usize,
        required: usize,
    },
    #[error("row {row} still has missing values; impute before use")]
    IncompleteRow { row: usize },
    #[error("non-finite feature value in row {row}")]
    NonFinite { row: usize },
    #[error("no labeled frames in the requested segment")]
    EmptySegment,
    #[error("unknown posture label `{0}`")]
    UnknownLabel(String),
    #[error("rows and labels differ in length ({rows} vs {labels})")]
    LengthMismatch { rows: usize, labels: usize },
    #[error("bad split fraction {0}; need 0 < f < 1")]
    BadFraction(f64),
    #[error("need at least {folds} rows for {folds}-fold validation, got {rows}")]
    TooFewForFolds { rows: usize, folds: usize },
    #[error("model file line {line}: {problem}")]
    ModelFormat { line: usize, problem: String },
}

/// The four recognized postures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostureLabel {
    Lying,
    SittingOnBed,
    SittingOnChair,
    Standing,
}

pub const POSTURE_COUNT: usize = 4;

impl PostureLabel {
    pub const ALL: [PostureLabel; POSTURE_COUNT] = [
        PostureLabel::Lying,
        PostureLabel::SittingOnBed,
        PostureLabel::SittingOnChair,
        PostureLabel::Standing,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).unwrap()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PostureLabel::Lying => "lying",
            PostureLabel::SittingOnBed => "sitting_on_bed",
            PostureLabel::SittingOnChair => "sitting_on_chair",
            PostureLabel::Standing => "standing",
        }
    }

    pub fn from_str(s: &str) -> Option<PostureLabel> {
        Self::ALL.iter().copied().find(|l| l.as_str() == s)
    }
}

impl fmt::Display for PostureLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Number of poselet features: 12 normalized lengths + 9 angles.
pub const POSELET_DIM: usize = 21;

/// Feature order matches [`PoseletFeatures::values`].
pub const POSELET_FEATURE_NAMES: [&str; POSELET_DIM] = [
    "neck_nose",
    "neck_l_shoulder",
    "neck_r_shoulder",
    "l_upper_arm",
    "r_upper_arm",
    "l_forearm",
    "r_forearm",
    "neck_mid_hip",
    "l_thigh",
    "r_thigh",
    "l_shank",
    "r_shank",
    "l_elbow_angle",
    "r_elbow_angle",
    "l_knee_angle",
    "r_knee_angle",
    "l_hip_angle",
    "r_hip_angle",
    "l_shoulder_angle",
    "r_shoulder_angle",
    "torso_vertical_angle",
];

/// Torso-normalized limb lengths and unsigned joint angles; `None` marks a
/// feature whose joints were not all detected (or were degenerate).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseletFeatures {
    pub values: [Option<f64>; POSELET_DIM],
}

impl PoseletFeatures {
    pub fn all_missing() -> Self {
        PoseletFeatures {
            values: [None; POSELET_DIM],
        }
    }

    pub fn observed_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn to_row(&self) -> Vec<Option<f64>> {
        self.values.to_vec()
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

/// Unsigned angle between two vectors, in [0, π]. `None` for a zero vector.
fn angle_between(u: (f64, f64), v: (f64, f64)) -> Option<f64> {
    let nu = u.0.hypot(u.1);
    let nv = v.0.hypot(v.1);
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let cos = ((u.0 * v.0 + u.1 * v.1) / (nu * nv)).clamp(-1.0, 1.0);
    Some(cos.acos())
}

/// Reduce one keypoint frame to poselet features.
///
/// The torso (neck to hip midpoint) anchors normalization, so the neck and
/// at least one hip must be present; otherwise every feature is missing.
/// Lengths are divided by the torso length, which removes camera distance;
/// angles are taken at the middle joint between its two adjacent limbs and
/// are unsigned. The torso-vertical angle compares the hip→neck direction
/// with image "up" (negative y).
pub fn extract_poselet(frame: &KeypointFrame) -> PoseletFeatures {
    let at = |j: Joint| frame.joint(j).map(|kp| (kp.x, kp.y));

    let neck = match at(Joint::Neck) {
        Some(p) => p,
        None => return PoseletFeatures::all_missing(),
    };
    let mid_hip = match (at(Joint::LHip), at(Joint::RHip)) {
        (Some(l), Some(r)) => ((l.0 + r.0) / 2.0, (l.1 + r.1) / 2.0),
        (Some(l), None) => l,
        (None, Some(r)) => r,
        (None, None) => return PoseletFeatures::all_missing(),
    };
    let torso = dist(neck, mid_hip);
    if torso <= 0.0 {
        return PoseletFeatures::all_missing();
    }

    let mut values = [None; POSELET_DIM];
    let limb_ends: [(Option<(f64, f64)>, Option<(f64, f64)>); 12] = [
        (Some(neck), at(Joint::Nose)),
        (Some(neck), at(Joint::LShoulder)),
        (Some(neck), at(Joint::RShoulder)),
        (at(Joint::LShoulder), at(Joint::LElbow)),
        (at(Joint::RShoulder), at(Joint::RElbow)),
        (at(Joint::LElbow), at(Joint::LWrist)),
        (at(Joint::RElbow), at(Joint::RWrist)),
        (Some(neck), Some(mid_hip)),
        (at(Joint::LHip), at(Joint::LKnee)),
        (at(Joint::RHip), at(Joint::RKnee)),
        (at(Joint::LKnee), at(Joint::LAnkle)),
        (at(Joint::RKnee), at(Joint::RAnkle)),
    ];
    for (i, (a, b)) in limb_ends.iter().enumerate() {
        if let (Some(a), Some(b)) = (a, b) {
            let d = dist(*a, *b);
            if d > 0.0 {
                values[i] = Some(d / torso);
            }
        }
    }

    // Angle at `pivot` between the limbs toward `first` and `second`.
    let joint_angle = |first: Joint, pivot: Joint, second: Joint| -> Option<f64> {
        let (a, b, c) = (at(first)?, at(pivot)?, at(second)?);
        angle_between((a.0 - b.0, a.1 - b.1), (c.0 - b.0, c.1 - b.1))
    };
    values[12] = joint_angle(Joint::LShoulder, Joint::LElbow, Joint::LWrist);
    values[13] = joint_angle(Joint::RShoulder, Joint::RElbow, Joint::RWrist);
    values[14] = joint_angle(Joint::LHip, Joint::LKnee, Joint::LAnkle);
    values[15] = joint_angle(Joint::RHip, Joint::RKnee, Joint::RAnkle);
    values[16] = at(Joint::LHip).and_then(|hip| {
        let knee = at(Joint::LKnee)?;
        angle_between((neck.0 - hip.0, neck.1 - hip.1), (knee.0 - hip.0, knee.1 - hip.1))
    });
    values[17] = at(Joint::RHip).and_then(|hip| {
        let knee = at(Joint::RKnee)?;
        angle_between((neck.0 - hip.0, neck.1 - hip.1), (knee.0 - hip.0, knee.1 - hip.1))
    });
    values[18] = joint_angle(Joint::Neck, Joint::LShoulder, Joint::LElbow);
    values[19] = joint_angle(Joint::Neck, Joint::RShoulder, Joint::RElbow);
    values[20] = angle_between((neck.0 - mid_hip.0, neck.1 - mid_hip.1), (0.0, -1.0));

    PoseletFeatures { values }
}

fn check_rectangular(rows: &[Vec<Option<f64>>]) -> Result<usize, PostureError> {
    let dim = rows.first().map(|r| r.len()).unwrap_or(0);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(PostureError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PostureError::NonFinite { row: i });
        }
    }
    Ok(dim)
}

/// Euclidean distance over features observed in both rows; `None` when the
/// rows share no observed feature.
fn shared_distance(a: &[Option<f64>], b: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut shared = 0usize;
    for (x, y) in a.iter().zip(b) {
        if let (Some(x), Some(y)) = (x, y) {
            sum += (x - y) * (x - y);
            shared += 1;
        }
    }
    (shared > 0).then(|| sum.sqrt())
}

/// Fill missing values by K-nearest-neighbor imputation.
///
/// For each missing cell, the donors are the `k` rows nearest to the
/// incomplete row (Euclidean distance over mutually observed features,
/// ties by row order) among rows that observe that feature. The fill is
/// the inverse-distance-weighted mean of the donors' values; a
/// zero-distance donor short-circuits to a straight copy of its value.
///
/// Errors when any feature is observed in fewer than `k` rows.
pub fn impute_knn(rows: &[Vec<Option<f64>>], k: usize) -> Result<Vec<Vec<f64>>, PostureError> {
    let dim = check_rectangular(rows)?;
    if k == 0 {
        return Err(PostureError::BadK {
            k,
            max: rows.len().saturating_sub(1),
        });
    }
    for feature in 0..dim {
        let observed = rows.iter().filter(|r| r[feature].is_some()).count();
        if observed < k {
            return Err(PostureError::FeatureTooSparse {
                feature,
                observed,
                required: k,
            });
        }
    }

    let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let mut out = Vec::with_capacity(rows.len());
    let mut distances: Vec<f64> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        // The donor distance depends only on the row pair, not on which
        // feature is being filled: measure each candidate once per row.
        if row.iter().any(Option::is_none) {
            distances.clear();
            distances.extend(
                rows.iter()
                    .map(|r| shared_distance(row, r).unwrap_or(f64::INFINITY)),
            );
        }
        let mut filled = Vec::with_capacity(dim);
        for feature in 0..dim {
            if let Some(v) = row[feature] {
                filled.push(v);
                continue;
            }
            // Donors, nearest first; rows without a comparable feature set
            // sort after every measurable one.
            let mut donors: Vec<(f64, usize)> = rows
                .iter()
                .enumerate()
                .filter(|(j, r)| *j != i && r[feature].is_some())
                .map(|(j, _)| (distances[j], j))
                .collect();
            if donors.len() > k {
                donors.select_nth_unstable_by(k - 1, order);
                donors.truncate(k);
            }
            donors.sort_by(order);

            let value = if let Some(&(_, j)) = donors.iter().find(|(d, _)| *d == 0.0) {
                rows[j][feature].unwrap()
            } else {
                let weight_sum: f64 = donors
                    .iter()
                    .filter(|(d, _)| d.is_finite())
                    .map(|(d, _)| 1.0 / d)
                    .sum();
                if weight_sum > 0.0 {
                    donors
                        .iter()
                        .filter(|(d, _)| d.is_finite())
                        .map(|(d, j)| rows[*j][feature].unwrap() / d)
                        .sum::<f64>()
                        / weight_sum
                } else {
                    // No donor shares a feature with this row: unweighted mean.
                    donors.iter().map(|(_, j)| rows[*j][feature].unwrap()).sum::<f64>()
                        / donors.len() as f64
                }
            };
            filled.push(value);
        }
        out.push(filled);
    }
    Ok(out)
}

/// A trained nearest-neighbor posture classifier. Immutable after
/// training, so classification may run in parallel across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    k: usize,
    p: f64,
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<PostureLabel>,
}

pub const DEFAULT_KNN_K: usize = 1;
pub const DEFAULT_MINKOWSKI_P: f64 = 2.0;

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn minkowski_p(&self) -> f64 {
        self.p
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn minkowski(&self, a: &[f64], b: &[f64]) -> f64 {
        // Exact-exponent orders take the cheap correctly-rounded forms;
        // `powf` costs more than the rest of the distance put together.
        if self.p == 2.0 {
            let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            sum.sqrt()
        } else if self.p == 1.0 {
            a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
        } else {
            let sum: f64 = a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs().powf(self.p))
                .sum();
            sum.powf(1.0 / self.p)
        }
    }

    /// Predict the posture for one complete feature row.
    pub fn classify(&self, query: &[f64]) -> Result<PostureLabel, PostureError> {
        if query.len() != self.feature_names.len() {
            return Err(PostureError::DimensionMismatch {
                expected: self.feature_names.len(),
                got: query.len(),
            });
        }
        if query.iter().any(|v| !v.is_finite()) {
            return Err(PostureError::NonFinite { row: 0 });
        }
        // Running top-k insertion keeps the scan allocation-free; ties in
        // distance resolve to the earlier training row, as in a full sort.
        let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let mut neighbors: Vec<(f64, usize)> = Vec::with_capacity(self.k + 1);
        for (i, row) in self.rows.iter().enumerate() {
            let candidate = (self.minkowski(query, row), i);
            if neighbors.len() == self.k
                && order(&candidate, neighbors.last().unwrap()) != std::cmp::Ordering::Less
            {
                continue;
            }
            let at = neighbors
                .binary_search_by(|n| order(n, &candidate))
                .unwrap_err();
            neighbors.insert(at, candidate);
            neighbors.truncate(self.k);
        }

        // Majority vote; ties go to the label seen earliest among the
        // nearest neighbors (for k = 1 this is simply the nearest row).
        let mut votes = [0usize; POSTURE_COUNT];
        for &(_, i) in &neighbors {
            votes[self.labels[i].index()] += 1;
        }
        let best = *votes.iter().max().unwrap();
        let winner = neighbors
            .iter()
            .map(|&(_, i)| self.labels[i])
            .find(|l| votes[l.index()] == best)
            .unwrap();
        Ok(winner)
    }
}

/// Train a nearest-neighbor model on complete rows.
pub fn knn_train(
    rows: Vec<Vec<f64>>,
    labels: Vec<PostureLabel>,
    feature_names: Vec<String>,
    k: usize,
    p: f64,
) -> Result<KnnModel, PostureError> {
    if rows.is_empty() {
        return Err(PostureError::EmptyTrainingSet);
    }
    if rows.len() != labels.len() {
        return Err(PostureError::LengthMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    if k == 0 || k > rows.len() {
        return Err(PostureError::BadK { k, max: rows.len() });
    }
    if !(p >= 1.0 && p.is_finite()) {
        return Err(PostureError::BadOrder(p));
    }
    let dim = feature_names.len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(PostureError::DimensionMismatch {
                expected: dim,
                got: row.len(),
            });
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(PostureError::NonFinite { row: i });
        }
    }
    Ok(KnnModel {
        k,
        p,
        feature_names,
        rows,
        labels,
    })
}

/// Row-normalized confusion matrix plus summary scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// counts[t][p]: test rows of true class `t` predicted as `p`.
    pub counts: [[u64; POSTURE_COUNT]; POSTURE_COUNT],
    /// Row-normalized percentages; `None` row = class absent from the test set.
    pub percent: [[Option<f64>; POSTURE_COUNT]; POSTURE_COUNT],
    /// Per-class recall (diagonal of `percent`, as a fraction).
    pub per_class_accuracy: [Option<f64>; POSTURE_COUNT],
    /// F1 averaged over classes present in the test set.
    pub macro_f1: f64,
    pub overall_accuracy: f64,
}

impl Evaluation {
    /// Human-readable table: one row per true class, columns per predicted
    /// class, percentages to two decimals, `N/A` for absent classes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<18}", "true \\ predicted"));
        for label in PostureLabel::ALL {
            out.push_str(&format!("{:>18}", label.as_str()));
        }
        out.push('\n');
        for (t, label) in PostureLabel::ALL.iter().enumerate() {
            out.push_str(&format!("{:<18}", label.as_str()));
            for p in 0..POSTURE_COUNT {
                match self.percent[t][p] {
                    Some(v) => out.push_str(&format!("{:>18.2}", v)),
                    None => out.push_str(&format!("{:>18}", "N/A")),
                }
            }
            out.push('\n');
        }
        out.push_str(&format!(
            "overall accuracy: {:.4}  macro F1: {:.4}\n",
            self.overall_accuracy, self.macro_f1
        ));
        out
    }
}

/// Classify every test row and score the predictions.
pub fn evaluate(
    model: &KnnModel,
    test_rows: &[Vec<f64>],
    test_labels: &[PostureLabel],
) -> Result<Evaluation, PostureError> {
    if test_rows.len() != test_labels.len() {
        return Err(PostureError::LengthMismatch {
            rows: test_rows.len(),
            labels: test_labels.len(),
        });
    }
    let mut pairs = Vec::with_capacity(test_rows.len());
    for (row, &truth) in test_rows.iter().zip(test_labels) {
        pairs.push((truth, model.classify(row)?));
    }
    evaluation_from_pairs(pairs)
}

/// Score already-made predictions given as `(truth, predicted)` pairs —
/// for callers that classify out of band (e.g. across worker threads).
pub fn evaluation_from_pairs(
    pairs: impl IntoIterator<Item = (PostureLabel, PostureLabel)>,
) -> Result<Evaluation, PostureError> {
    let mut counts = [[0u64; POSTURE_COUNT]; POSTURE_COUNT];
    let mut total = 0u64;
    for (truth, predicted) in pairs {
        counts[truth.index()][predicted.index()] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(PostureError::EmptySegment);
    }

    let mut percent = [[None; POSTURE_COUNT]; POSTURE_COUNT];
    let mut per_class_accuracy = [None; POSTURE_COUNT];
    let mut f1_sum = 0.0;
    let mut f1_classes = 0usize;
    let mut correct = 0u64;
    for t in 0..POSTURE_COUNT {
        let support: u64 = counts[t].iter().sum();
        correct += counts[t][t];
        if support == 0 {
            continue;
        }
        for p in 0..POSTURE_COUNT {
            percent[t][p] = Some(100.0 * counts[t][p] as f64 / support as f64);
        }
        let recall = counts[t][t] as f64 / support as f64;
        per_class_accuracy[t] = Some(recall);
        let predicted_t: u64 = (0..POSTURE_COUNT).map(|r| counts[r][t]).sum();
        let precision = if predicted_t > 0 {
            counts[t][t] as f64 / predicted_t as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        f1_classes += 1;
    }
    Ok(Evaluation {
        counts,
        percent,
        per_class_accuracy,
        macro_f1: f1_sum / f1_classes as f64,
        overall_accuracy: correct as f64 / total as f64,
    })
}

/// Fraction of frames per posture within one segment of the patient day.
///
/// `anchor_hour` fixes the day boundary used to split day from night.
pub fn posture_fractions<I>(
    frames: I,
    segment: Segment,
    anchor_hour: u32,
) -> Result<[f64; POSTURE_COUNT], PostureError>
where
    I: IntoIterator<Item = (NaiveDateTime, PostureLabel)>,
{
    let mut counts = [0u64; POSTURE_COUNT];
    let mut total = 0u64;
    for (ts, label) in frames {
        if crate::ingest::segment_of_time(ts, anchor_hour) == segment || segment == Segment::All {
            counts[label.index()] += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(PostureError::EmptySegment);
    }
    let mut fractions = [0.0; POSTURE_COUNT];
    for (f, c) in fractions.iter_mut().zip(counts) {
        *f = c as f64 / total as f64;
    }
    Ok(fractions)
}

/// Deterministic stratified train/test index split.
///
/// Rows are shuffled per class with a seeded generator; roughly
/// `test_fraction` of each class lands in the test set, with at least one
/// training row kept per class.
pub fn stratified_split(
    labels: &[PostureLabel],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), PostureError> {
    if labels.is_empty() {
        return Err(PostureError::EmptyTrainingSet);
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(PostureError::BadFraction(test_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in PostureLabel::ALL {
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        if indices.is_empty() {
            continue;
        }
        indices.shuffle(&mut rng);
        let want = (indices.len() as f64 * test_fraction).round() as usize;
        let n_test = want.clamp(usize::from(indices.len() > 1), indices.len() - 1);
        test.extend(indices.drain(..n_test));
        train.extend(indices);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Stratified k-fold cross-validation; returns per-fold overall accuracy.
pub fn cross_validate(
    rows: &[Vec<f64>],
    labels: &[PostureLabel],
    feature_names: &[String],
    k: usize,
    p: f64,
    folds: usize,
    seed: u64,
) -> Result<Vec<f64>, PostureError> {
    if rows.len() != labels.len() {
        return Err(PostureError::LengthMismatch {
            rows: rows.len(),
            labels: labels.len(),
        });
    }
    if folds < 2 || rows.len() < folds {
        return Err(PostureError::TooFewForFolds {
            rows: rows.len(),
            folds,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold_of = vec![0usize; rows.len()];
    for class in PostureLabel::ALL {
        let mut indices: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        indices.shuffle(&mut rng);
        for (pos, i) in indices.into_iter().enumerate() {
            fold_of[i] = pos % folds;
        }
    }

    let mut accuracies = Vec::with_capacity(folds);
    for fold in 0..folds {
        let mut train_rows = Vec::new();
        let mut train_labels = Vec::new();
        let mut test_rows = Vec::new();
        let mut test_labels = Vec::new();
        for i in 0..rows.len() {
            if fold_of[i] == fold {
                test_rows.push(rows[i].clone());
                test_labels.push(labels[i]);
            } else {
                train_rows.push(rows[i].clone());
                train_labels.push(labels[i]);
            }
        }
        if test_rows.is_empty() {
            continue;
        }
        let model = knn_train(train_rows, train_labels, feature_names.to_vec(), k, p)?;
        let eval = evaluate(&model, &test_rows, &test_labels)?;
        accuracies.push(eval.overall_accuracy);
    }
    Ok(accuracies)
}

const MODEL_MAGIC: &str = "knn-posture v1";

/// Persist a model as a versioned flat text file.
pub fn save_model<W: Write>(model: &KnnModel, mut w: W) -> io::Result<()> {
    for name in &model.feature_names {
        if name.contains(',') || name.contains('=') || name.contains('\n') {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("feature name `{name}` contains a reserved character"),
            ));
        }
    }
    writeln!(w, "{MODEL_MAGIC}")?;
    writeln!(w, "k={}", model.k)?;
    writeln!(w, "p={}", model.p)?;
    writeln!(w, "features={}", model.feature_names.join(","))?;
    writeln!(w, "rows={}", model.rows.len())?;
    for (row, label) in model.rows.iter().zip(&model.labels) {
        write!(w, "{}", label.as_str())?;
        for v in row {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Load a model written by [`save_model`].
pub fn load_model<R: BufRead>(r: R) -> Result<KnnModel, PostureError> {
    let bad = |line: usize, problem: &str| PostureError::ModelFormat {
        line,
        problem: problem.to_string(),
    };
    let mut lines = r.lines().enumerate();
    let mut next_line = |expect: &str| -> Result<(usize, String), PostureError> {
        match lines.next() {
            Some((i, Ok(text))) => Ok((i + 1, text)),
            Some((i, Err(_))) => Err(bad(i + 1, "unreadable line")),
            None => Err(bad(0, &format!("missing {expect}"))),
        }
    };

    let (line, magic) = next_line("header")?;
    if magic != MODEL_MAGIC {
        return Err(bad(line, &format!("expected header `{MODEL_MAGIC}`")));
    }
    let mut field = |key: &str| -> Result<(usize, String), PostureError> {
        let (line, text) = next_line(key)?;
        text.strip_prefix(&format!("{key}="))
            .map(|v| (line, v.to_string()))
            .ok_or_else(|| bad(line, &format!("expected `{key}=`")))
    };
    let (line, k_text) = field("k")?;
    let k: usize = k_text.parse().map_err(|_| bad(line, "bad k"))?;
    let (line, p_text) = field("p")?;
    let p: f64 = p_text.parse().map_err(|_| bad(line, "bad p"))?;
    let (_, names_text) = field("features")?;
    let feature_names: Vec<String> = if names_text.is_empty() {
        Vec::new()
    } else {
        names_text.split(',').map(str::to_string).collect()
    };
    let (line, rows_text) = field("rows")?;
    let n_rows: usize = rows_text.parse().map_err(|_| bad(line, "bad row count"))?;

    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let (line, text) = next_line("data row")?;
        let mut parts = text.split(',');
        let label_text = parts.next().ok_or_else(|| bad(line, "empty row"))?;
        let label = PostureLabel::from_str(label_text)
            .ok_or_else(|| PostureError::UnknownLabel(label_text.to_string()))?;
        let values: Vec<f64> = parts
            .map(|v| v.parse::<f64>().map_err(|_| bad(line, "bad feature value")))
            .collect::<Result<_, _>>()?;
        if values.len() != feature_names.len() {
            return Err(bad(line, "row width does not match feature list"));
        }
        labels.push(label);
        rows.push(values);
    }
    knn_train(rows, labels, feature_names, k, p)
}
