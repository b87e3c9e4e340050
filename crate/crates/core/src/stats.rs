//! Nonparametric cohort-comparison machinery: median/IQR summaries,
//! Mann–Whitney U tests, and proportion standard errors, assembled into
//! per-variable group-comparison rows.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
    #[error("non-finite value in sample")]
    NonFinite,
    #[error("exact method supports at most {max} combined values, got {n}")]
    TooLargeForExact { n: usize, max: usize },
    #[error("k must not exceed n (k={k}, n={n})")]
    CountExceedsTotal { k: u64, n: u64 },
    #[error("n must be at least 1")]
    ZeroTotal,
    #[error("variable `{variable}`: group {group} has no defined values")]
    EmptyGroup { variable: String, group: char },
}

/// 25th/50th/75th percentiles by linear interpolation of order statistics
/// (position `h = (n − 1)·p + 1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianIqr {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile at probability `p` of sorted data.
fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 == sorted.len() {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Median and interquartile range of a sample.
pub fn median_iqr(values: &[f64]) -> Result<MedianIqr, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(MedianIqr {
        q25: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q75: quantile_sorted(&sorted, 0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MwuMethod {
    /// Enumerate every group assignment of the pooled ranks (n ≤ 20).
    Exact,
    /// Normal approximation with tie-corrected variance and continuity
    /// correction.
    Normal,
}

/// Largest pooled sample size the exact enumerator accepts.
pub const EXACT_MWU_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MwuResult {
    /// U statistic of the first sample: `R_a − n_a(n_a+1)/2`.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub method: MwuMethod,
    /// True when the pooled data admit no ordering information (all
    /// values tied); `p` is reported as 1.
    pub degenerate: bool,
}

/// Mid-ranks of the pooled sample, aligned with input order.
fn mid_ranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average 1-based rank.
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Count assignments with doubled-rank sum ≤ and ≥ `target`, over all ways
/// to choose `remaining` of the ranks from position `next` on.
fn count_rank_sums(
    doubled: &[u64],
    next: usize,
    remaining: usize,
    sum: u64,
    target: u64,
    le: &mut u64,
    ge: &mut u64,
    total: &mut u64,
) {
    if remaining == 0 {
        *total += 1;
        if sum <= target {
            *le += 1;
        }
        if sum >= target {
            *ge += 1;
        }
        return;
    }
    for pick in next..=doubled.len() - remaining {
        count_rank_sums(
            doubled,
            pick + 1,
            remaining - 1,
            sum + doubled[pick],
            target,
            le,
            ge,
            total,
        );
    }
}

fn exact_p(ranks_a: &[f64], ranks_b: &[f64], u_obs: f64) -> (f64, bool) {
    let n_a = ranks_a.len();
    let pooled_doubled: Vec<u64> = ranks_a
        .iter()
        .chain(ranks_b)
        .map(|r| (2.0 * r).round() as u64)
        .collect();
    let mut sorted = pooled_doubled.clone();
    sorted.sort_unstable();
    let degenerate = sorted.first() == sorted.last();

    // Doubled-rank target: 2·R_a = 2·U_a + n_a(n_a+1).
    let target = (2.0 * u_obs).round() as u64 + (n_a * (n_a + 1)) as u64;
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    count_rank_sums(&sorted, 0, n_a, 0, target, &mut le, &mut ge, &mut total);
    let p_le = le as f64 / total as f64;
    let p_ge = ge as f64 / total as f64;
    ((2.0 * p_le.min(p_ge)).min(1.0), degenerate)
}

fn normal_p(ranks: &[f64], n_a: usize, n_b: usize, u_obs: f64) -> (f64, bool) {
    let n = (n_a + n_b) as f64;
    // Tie correction: subtract Σ(t³ − t) over tie groups.
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mean = n_a as f64 * n_b as f64 / 2.0;
    let variance =
        (n_a as f64 * n_b as f64 / 12.0) * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if variance <= 0.0 {
        return (1.0, true);
    }
    // Continuity correction pulls U half a step toward the mean.
    let diff = u_obs - mean;
    let corrected = if diff > 0.5 {
        diff - 0.5
    } else if diff < -0.5 {
        diff + 0.5
    } else {
        0.0
    };
    let z = corrected / variance.sqrt();
    let standard = Normal::new(0.0, 1.0).unwrap();
    let p = 2.0 * (1.0 - standard.cdf(z.abs()));
    (p.min(1.0), false)
}

/// Two-sided Mann–Whitney U test.
///
/// Ties take mid-ranks. The exact method enumerates the U distribution
/// over every assignment of pooled ranks to groups and doubles the smaller
/// tail; the normal method applies tie-corrected variance and a 0.5
/// continuity correction. Fully tied data carry no ordering information:
/// p is reported as 1 with `degenerate` set.
pub fn mann_whitney_u(a: &[f64], b: &[f64], method: MwuMethod) -> Result<MwuResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = a.len() + b.len();
    if method == MwuMethod::Exact && n > EXACT_MWU_LIMIT {
        return Err(StatsError::TooLargeForExact {
            n,
            max: EXACT_MWU_LIMIT,
        });
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = mid_ranks(&pooled);
    let r_a: f64 = ranks[..a.len()].iter().sum();
    let u = r_a - (a.len() * (a.len() + 1)) as f64 / 2.0;

    let (p, degenerate) = match method {
        MwuMethod::Exact => exact_p(&ranks[..a.len()], &ranks[a.len()..], u),
        MwuMethod::Normal => normal_p(&ranks, a.len(), b.len(), u),
    };
    Ok(MwuResult {
        u,
        p: if degenerate { 1.0 } else { p },
        method,
        degenerate,
    })
}

/// Standard error of a sample proportion: `sqrt(p̂(1 − p̂)/n)`.
pub fn proportion_se(k: u64, n: u64) -> Result<f64, StatsError> {
    if n == 0 {
        return Err(StatsError::ZeroTotal);
    }
    if k > n {
        return Err(StatsError::CountExceedsTotal { k, n });
    }
    let p = k as f64 / n as f64;
    Ok((p * (1.0 - p) / n as f64).sqrt())
}

/// Pooled two-proportion z-test, two-sided. Degenerate pooled proportions
/// (0 or 1) give z = 0, p = 1.
pub fn two_proportion_test(k1: u64, n1: u64, k2: u64, n2: u64) -> Result<(f64, f64), StatsError> {
    if n1 == 0 || n2 == 0 {
        return Err(StatsError::ZeroTotal);
    }
    if k1 > n1 {
        return Err(StatsError::CountExceedsTotal { k: k1, n: n1 });
    }
    if k2 > n2 {
        return Err(StatsError::CountExceedsTotal { k: k2, n: n2 });
    }
    let p1 = k1 as f64 / n1 as f64;
    let p2 = k2 as f64 / n2 as f64;
    let pooled = (k1 + k2) as f64 / (n1 + n2) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        return Ok((0.0, 1.0));
    }
    let z = (p1 - p2) / se;
    let standard = Normal::new(0.0, 1.0).unwrap();
    let p = (2.0 * (1.0 - standard.cdf(z.abs()))).min(1.0);
    Ok((z, p))
}

/// Coarse p-value bucket for report annotations.
pub fn p_annotation(p: f64) -> &'static str {
    if p < 0.001 {
        "<0.001"
    } else if p < 0.01 {
        "<0.01"
    } else if p < 0.05 {
        "<0.05"
    } else {
        "ns"
    }
}

/// One variable's per-subject values in both cohorts; `None` marks a
/// subject whose value is undefined for this variable.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortVariable {
    pub name: String,
    pub group_a: Vec<Option<f64>>,
    pub group_b: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    /// Exact when the pooled defined sample fits the enumerator, else normal.
    Auto,
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy)]
pub struct CompareConfig {
    pub alpha: f64,
    pub method: MethodChoice,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            alpha: 0.05,
            method: MethodChoice::Auto,
        }
    }
}

/// One row of a cohort-comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupComparison {
    pub variable: String,
    pub n_a: usize,
    pub n_b: usize,
    /// Subjects dropped from each group because the variable was undefined.
    pub excluded_a: usize,
    pub excluded_b: usize,
    pub summary_a: MedianIqr,
    pub summary_b: MedianIqr,
    pub u: f64,
    pub p: f64,
    pub significant: bool,
    pub degenerate: bool,
    pub method: MwuMethod,
}

/// Compare every variable between two cohorts: median (IQR) per group and
/// a two-sided rank test, excluding undefined subjects variable by
/// variable. Errors when either group has no defined value for a variable.
pub fn cohort_compare(
    variables: &[CohortVariable],
    cfg: &CompareConfig,
) -> Result<Vec<GroupComparison>, StatsError> {
    let mut rows = Vec::with_capacity(variables.len());
    for var in variables {
        let a: Vec<f64> = var.group_a.iter().flatten().copied().collect();
        let b: Vec<f64> = var.group_b.iter().flatten().copied().collect();
        if a.is_empty() {
            return Err(StatsError::EmptyGroup {
                variable: var.name.clone(),
                group: 'A',
            });
        }
        if b.is_empty() {
            return Err(StatsError::EmptyGroup {
                variable: var.name.clone(),
                group: 'B',
            });
        }
        let method = match cfg.method {
            MethodChoice::Exact => MwuMethod::Exact,
            MethodChoice::Normal => MwuMethod::Normal,
            MethodChoice::Auto => {
                if a.len() + b.len() <= EXACT_MWU_LIMIT {
                    MwuMethod::Exact
                } else {
                    MwuMethod::Normal
                }
            }
        };
        let test = mann_whitney_u(&a, &b, method)?;
        rows.push(GroupComparison {
            variable: var.name.clone(),
            n_a: a.len(),
            n_b: b.len(),
            excluded_a: var.group_a.len() - a.len(),
            excluded_b: var.group_b.len() - b.len(),
            summary_a: median_iqr(&a)?,
            summary_b: median_iqr(&b)?,
            u: test.u,
            p: test.p,
            significant: test.p < cfg.alpha && !test.degenerate,
            degenerate: test.degenerate,
            method,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quartiles_of_one_through_five() {
        let q = median_iqr(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!((q.q25, q.median, q.q75), (2.0, 3.0, 4.0));
    }

    #[test]
    fn single_value_collapses_all_quartiles() {
        let q = median_iqr(&[7.5]).unwrap();
        assert_eq!((q.q25, q.median, q.q75), (7.5, 7.5, 7.5));
        assert_eq!(median_iqr(&[]), Err(StatsError::EmptySample));
    }

    #[test]
    fn even_sample_interpolates_between_order_statistics() {
        let q = median_iqr(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.q25, q.median, q.q75), (1.75, 2.5, 3.25));
    }

    #[test]
    fn fixture_built_from_the_quantile_rule_returns_exact_table_values() {
        // With five points, q25/median/q75 land exactly on the 2nd, 3rd
        // and 4th order statistics.
        let q = median_iqr(&[10.0, 19.5, 53.9, 161.6, 200.0]).unwrap();
        assert_eq!((q.q25, q.median, q.q75), (19.5, 53.9, 161.6));
        assert!(q.q25 <= q.median && q.median <= q.q75);
    }

    #[test]
    fn quartiles_are_permutation_invariant_and_shift_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let values: Vec<f64> = (0..31).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let base = median_iqr(&values).unwrap();
        let mut shuffled = values.clone();
        shuffled.reverse();
        shuffled.swap(0, 10);
        assert_eq!(median_iqr(&shuffled).unwrap(), base);
        let shifted: Vec<f64> = values.iter().map(|v| v + 3.25).collect();
        let moved = median_iqr(&shifted).unwrap();
        assert!((moved.median - base.median - 3.25).abs() < 1e-9);
        assert!((moved.q25 - base.q25 - 3.25).abs() < 1e-9);
    }

    #[test]
    fn textbook_exact_case_enumerates_to_a_third() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0], MwuMethod::Exact).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p - 1.0 / 3.0).abs() < 1e-12);
        assert!(!r.degenerate);
    }

    #[test]
    fn tied_data_use_mid_ranks() {
        // Pooled [1,2,2,2,3]: the tied 2s rank 3 each; U_a = 1.
        // Enumeration over C(5,3)=10 assignments puts 3 at U ≤ 1, all 10
        // at U ≥ 1 → p = 0.6.
        let r = mann_whitney_u(&[1.0, 2.0, 2.0], &[2.0, 3.0], MwuMethod::Exact).unwrap();
        assert_eq!(r.u, 1.0);
        assert!((r.p - 0.6).abs() < 1e-12);
    }

    #[test]
    fn identical_groups_are_degenerate_with_unit_p() {
        for method in [MwuMethod::Exact, MwuMethod::Normal] {
            let r = mann_whitney_u(&[4.0, 4.0, 4.0], &[4.0, 4.0], method).unwrap();
            assert_eq!(r.p, 1.0);
            assert!(r.degenerate);
        }
    }

    #[test]
    fn u_statistics_of_swapped_groups_sum_to_the_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let n_a = rng.gen_range(2..8);
            let n_b = rng.gen_range(2..8);
            // Distinct values: no ties.
            let mut pool: Vec<f64> = (0..n_a + n_b).map(|i| i as f64).collect();
            for i in (1..pool.len()).rev() {
                pool.swap(i, rng.gen_range(0..=i));
            }
            let a = &pool[..n_a];
            let b = &pool[n_a..];
            let ab = mann_whitney_u(a, b, MwuMethod::Exact).unwrap();
            let ba = mann_whitney_u(b, a, MwuMethod::Exact).unwrap();
            assert_eq!(ab.u + ba.u, (n_a * n_b) as f64);
            assert!((ab.p - ba.p).abs() < 1e-12, "p symmetric under swap");
        }
    }

    #[test]
    fn u_and_p_are_invariant_to_affine_rescaling() {
        let a = [3.0, 9.5, 1.25, 7.0];
        let b = [4.0, 12.0, 0.5];
        let base = mann_whitney_u(&a, &b, MwuMethod::Exact).unwrap();
        let a2: Vec<f64> = a.iter().map(|v| 2.5 * v + 17.0).collect();
        let b2: Vec<f64> = b.iter().map(|v| 2.5 * v + 17.0).collect();
        let moved = mann_whitney_u(&a2, &b2, MwuMethod::Exact).unwrap();
        assert_eq!(base.u, moved.u);
        assert_eq!(base.p, moved.p);
    }

    #[test]
    fn normal_approximation_tracks_the_exact_tail() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let a: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..100.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..100.0)).collect();
            let exact = mann_whitney_u(&a, &b, MwuMethod::Exact).unwrap();
            let normal = mann_whitney_u(&a, &b, MwuMethod::Normal).unwrap();
            assert!(
                (exact.p - normal.p).abs() < 0.02,
                "exact {} vs normal {}",
                exact.p,
                normal.p
            );
        }
    }

    #[test]
    fn exact_method_refuses_large_pools() {
        let a = vec![1.0; 11];
        let b = vec![2.0; 10];
        assert_eq!(
            mann_whitney_u(&a, &b, MwuMethod::Exact),
            Err(StatsError::TooLargeForExact { n: 21, max: 20 })
        );
        assert_eq!(
            mann_whitney_u(&[], &[1.0], MwuMethod::Exact),
            Err(StatsError::EmptySample)
        );
    }

    #[test]
    fn proportion_standard_errors_match_the_formula() {
        assert_eq!(proportion_se(0, 100).unwrap(), 0.0);
        assert!((proportion_se(50, 100).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(
            proportion_se(5, 4),
            Err(StatsError::CountExceedsTotal { k: 5, n: 4 })
        );
        assert_eq!(proportion_se(1, 0), Err(StatsError::ZeroTotal));
    }

    #[test]
    fn pooled_two_proportion_test_matches_hand_evaluation() {
        let (z, p) = two_proportion_test(30, 100, 10, 100).unwrap();
        // pooled 0.2 → se = sqrt(0.2·0.8·0.02), z = 0.2/se ≈ 3.5355.
        assert!((z - 0.2 / (0.2f64 * 0.8 * 0.02).sqrt()).abs() < 1e-12);
        assert!((z - 3.5355).abs() < 1e-3);
        assert!((p - 4.07e-4).abs() < 2e-5);

        let (z0, p0) = two_proportion_test(0, 10, 0, 20).unwrap();
        assert_eq!((z0, p0), (0.0, 1.0));
    }

    #[test]
    fn annotations_bucket_p_values() {
        assert_eq!(p_annotation(0.0005), "<0.001");
        assert_eq!(p_annotation(0.005), "<0.01");
        assert_eq!(p_annotation(0.03), "<0.05");
        assert_eq!(p_annotation(0.5), "ns");
    }

    #[test]
    fn comparison_rows_match_hand_assembly() {
        let var = CohortVariable {
            name: "wrist_mean_night".into(),
            group_a: vec![Some(1.0), Some(2.0), None],
            group_b: vec![Some(3.0), Some(4.0)],
        };
        let rows = cohort_compare(&[var], &CompareConfig::default()).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!((row.n_a, row.n_b), (2, 2));
        assert_eq!((row.excluded_a, row.excluded_b), (1, 0));
        assert_eq!(row.u, 0.0);
        assert!((row.p - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(row.method, MwuMethod::Exact);
        assert!(!row.significant);
        assert_eq!(row.summary_a.median, 1.5);
        assert_eq!(row.summary_b.median, 3.5);
    }

    #[test]
    fn identical_cohorts_flag_every_row_degenerate() {
        let var = CohortVariable {
            name: "flat".into(),
            group_a: vec![Some(2.0); 4],
            group_b: vec![Some(2.0); 4],
        };
        let rows = cohort_compare(&[var], &CompareConfig::default()).unwrap();
        assert!(rows[0].degenerate);
        assert_eq!(rows[0].p, 1.0);
        assert!(!rows[0].significant);
    }

    #[test]
    fn empty_groups_are_rejected_per_variable() {
        let var = CohortVariable {
            name: "gone".into(),
            group_a: vec![None, None],
            group_b: vec![Some(1.0)],
        };
        assert_eq!(
            cohort_compare(&[var], &CompareConfig::default()),
            Err(StatsError::EmptyGroup {
                variable: "gone".into(),
                group: 'A'
            })
        );
    }

    #[test]
    fn large_pools_fall_back_to_the_normal_method_automatically() {
        let var = CohortVariable {
            name: "big".into(),
            group_a: (0..15).map(|i| Some(i as f64)).collect(),
            group_b: (0..15).map(|i| Some(i as f64 + 20.0)).collect(),
        };
        let rows = cohort_compare(&[var], &CompareConfig::default()).unwrap();
        assert_eq!(rows[0].method, MwuMethod::Normal);
        assert!(rows[0].significant);
        assert!(rows[0].p < 0.001);
    }
}
