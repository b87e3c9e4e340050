//! Locally weighted scatterplot smoothing for group activity curves.
//!
//! Classic tricube-weighted local polynomial regression: for each target x,
//! fit a degree-`d` polynomial to the `ceil(span * n)` nearest points,
//! weighted by `(1 - u^3)^3` of the scaled distance `u`. Singular local fits
//! (for example a vertical cluster of identical x values) fall back to the
//! local weighted mean and are flagged rather than silently dropped.

use super::ActigraphyError;
use crate::ingest::{EpochSeries, Segment};
use std::collections::BTreeMap;

/// A smoothed curve evaluated on the distinct input x values.
#[derive(Debug, Clone, PartialEq)]
pub struct LoessFit {
    /// Distinct x values, ascending.
    pub x: Vec<f64>,
    /// Smoothed value at each x.
    pub y: Vec<f64>,
    /// True where the local fit was singular and the weighted mean was used.
    pub fallback: Vec<bool>,
}

/// Smooth `points` with span `span` (fraction of points per neighborhood,
/// in `(0, 1]`) and local polynomial degree 0–2. Evaluates at each distinct
/// x. Needs at least `degree + 1` points.
pub fn loess_smooth(
    points: &[(f64, f64)],
    span: f64,
    degree: usize,
) -> Result<LoessFit, ActigraphyError> {
    if !(span > 0.0 && span <= 1.0) {
        return Err(ActigraphyError::BadSpan(span));
    }
    if degree > 2 {
        return Err(ActigraphyError::BadDegree(degree));
    }
    if points.len() < degree + 1 {
        return Err(ActigraphyError::TooFewPoints {
            needed: degree + 1,
            got: points.len(),
        });
    }
    for (i, &(x, y)) in points.iter().enumerate() {
        if !(x.is_finite() && y.is_finite()) {
            return Err(ActigraphyError::NonFinite(i));
        }
    }

    let mut sorted: Vec<(f64, f64)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let q = ((span * n as f64).ceil() as usize).clamp(degree + 1, n);

    let mut targets: Vec<f64> = sorted.iter().map(|p| p.0).collect();
    targets.dedup();

    let mut fit = LoessFit {
        x: Vec::with_capacity(targets.len()),
        y: Vec::with_capacity(targets.len()),
        fallback: Vec::with_capacity(targets.len()),
    };
    // The q-neighborhood of an increasing target slides monotonically.
    let mut lo = 0usize;
    for &x0 in &targets {
        while lo + q < n
            && (sorted[lo + q].0 - x0).abs() < (sorted[lo].0 - x0).abs()
        {
            lo += 1;
        }
        let neighborhood = &sorted[lo..lo + q];
        let d_max = (sorted[lo].0 - x0)
            .abs()
            .max((sorted[lo + q - 1].0 - x0).abs());

        let (value, fell_back) = fit_local(neighborhood, x0, d_max, degree);
        fit.x.push(x0);
        fit.y.push(value);
        fit.fallback.push(fell_back);
    }
    Ok(fit)
}

fn tricube(u: f64) -> f64 {
    if u >= 1.0 {
        0.0
    } else {
        let c = 1.0 - u * u * u;
        c * c * c
    }
}

/// Weighted polynomial fit evaluated at `x0`; falls back to the weighted
/// (or plain) neighborhood mean when the normal equations are singular.
fn fit_local(neighborhood: &[(f64, f64)], x0: f64, d_max: f64, degree: usize) -> (f64, bool) {
    let weights: Vec<f64> = neighborhood
        .iter()
        .map(|&(x, _)| {
            if d_max == 0.0 {
                1.0
            } else {
                tricube((x - x0).abs() / d_max)
            }
        })
        .collect();

    if degree > 0 {
        if let Some(value) = solve_weighted_poly(neighborhood, &weights, x0, degree) {
            return (value, false);
        }
    } else {
        // Degree 0 *is* the weighted mean; only call it a fallback when the
        // weights degenerate.
        if let Some(mean) = weighted_mean(neighborhood, &weights) {
            return (mean, false);
        }
    }

    let value = weighted_mean(neighborhood, &weights)
        .unwrap_or_else(|| {
            neighborhood.iter().map(|&(_, y)| y).sum::<f64>() / neighborhood.len() as f64
        });
    (value, true)
}

fn weighted_mean(neighborhood: &[(f64, f64)], weights: &[f64]) -> Option<f64> {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return None;
    }
    Some(
        neighborhood
            .iter()
            .zip(weights)
            .map(|(&(_, y), &w)| w * y)
            .sum::<f64>()
            / total,
    )
}

/// Solve the (degree+1)-dimensional weighted normal equations centered at
/// `x0` and return the intercept (the prediction at `x0`), or `None` when
/// the system is singular.
fn solve_weighted_poly(
    neighborhood: &[(f64, f64)],
    weights: &[f64],
    x0: f64,
    degree: usize,
) -> Option<f64> {
    let dim = degree + 1;
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (&(x, y), &w) in neighborhood.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let t = x - x0;
        let mut basis = [1.0, 0.0, 0.0];
        for k in 1..dim {
            basis[k] = basis[k - 1] * t;
        }
        for r in 0..dim {
            for c in 0..dim {
                ata[r][c] += w * basis[r] * basis[c];
            }
            atb[r] += w * basis[r] * y;
        }
    }

    // Gaussian elimination with partial pivoting; relative pivot threshold
    // catches rank deficiency (all points at one x, or all weights zero).
    let scale = ata
        .iter()
        .take(dim)
        .flat_map(|row| row.iter().take(dim))
        .fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    let mut a = ata;
    let mut b = atb;
    for col in 0..dim {
        let pivot_row = (col..dim).max_by(|&r1, &r2| a[r1][col].abs().total_cmp(&a[r2][col].abs()))?;
        if a[pivot_row][col].abs() <= 1e-12 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..dim {
            let factor = a[row][col] / a[col][col];
            for c in col..dim {
                a[row][c] -= factor * a[col][c];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..dim).rev() {
        for row in 0..col {
            let factor = a[row][col] / a[col][col];
            a[row][col] = 0.0;
            b[row] -= factor * b[col];
        }
        b[col] /= a[col][col];
    }
    b[0].is_finite().then_some(b[0])
}

/// Group mean activity by minute offset, LOESS-smoothed.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCurve {
    /// Minute offsets since the anchor with at least one observation.
    pub minutes: Vec<usize>,
    /// Smoothed group mean count at each offset.
    pub smoothed: Vec<f64>,
    /// Number of contributing series at each offset (group size).
    pub n: Vec<usize>,
    /// Offsets where the local fit fell back to a weighted mean.
    pub fallback: Vec<bool>,
}

/// Pool several patient-day series into one smoothed group curve.
///
/// The per-offset group means are smoothed (offsets with no observation stay
/// absent); `n` records how many series contributed at each offset.
pub fn group_activity_curve<'a>(
    series: impl IntoIterator<Item = &'a EpochSeries>,
    span: f64,
    degree: usize,
) -> Result<SmoothedCurve, ActigraphyError> {
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    let mut any = false;
    for s in series {
        any = true;
        for (slot, value) in s.observed(Segment::All) {
            let entry = sums.entry(slot).or_insert((0.0, 0));
            entry.0 += value;
            entry.1 += 1;
        }
    }
    if !any || sums.is_empty() {
        return Err(ActigraphyError::NoSeries);
    }

    let points: Vec<(f64, f64)> = sums
        .iter()
        .map(|(&slot, &(sum, count))| (slot as f64, sum / count as f64))
        .collect();
    let fit = loess_smooth(&points, span, degree)?;

    Ok(SmoothedCurve {
        minutes: fit.x.iter().map(|&x| x as usize).collect(),
        smoothed: fit.y,
        n: sums.values().map(|&(_, count)| count).collect(),
        fallback: fit.fallback,
    })
}
