//! Segmentation and calibration metrics.
//!
//! Segmentation metrics take integer label sequences. Mode F1 matches label
//! alphabets with an optimal bijection (Hungarian assignment on the
//! confusion matrix) before macro-averaging, so all of mode F1, ARI, and
//! segment purity are invariant under relabeling.

use crate::error::{CoreError, Result};
use std::collections::BTreeMap;

/// Minimum-cost perfect assignment on a square cost matrix; returns the
/// column assigned to each row. Potentials-based O(n^3).
pub fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // row matched to each column
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        if assigned_row[j] > 0 {
            out[assigned_row[j] - 1] = j - 1;
        }
    }
    out
}

/// Sorted distinct labels.
fn alphabet(labels: &[usize]) -> Vec<usize> {
    let mut a: Vec<usize> = labels.to_vec();
    a.sort_unstable();
    a.dedup();
    a
}

/// Macro-averaged F1 after the optimal label bijection.
///
/// Returns the score and the matched permutation as (pred label, true label)
/// pairs.
pub fn mode_f1(pred: &[usize], truth: &[usize]) -> (f64, Vec<(usize, usize)>) {
    assert_eq!(pred.len(), truth.len(), "label sequences must align");
    assert!(!pred.is_empty());
    let pa = alphabet(pred);
    let ta = alphabet(truth);
    let k = pa.len().max(ta.len());
    // confusion counts on the padded square matrix
    let mut counts = vec![vec![0.0f64; k]; k];
    let p_index: BTreeMap<usize, usize> = pa.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let t_index: BTreeMap<usize, usize> = ta.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p_index[&p]][t_index[&t]] += 1.0;
    }
    // maximize matched count = minimize (max - count)
    let top = pred.len() as f64;
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| row.iter().map(|&c| top - c).collect())
        .collect();
    let assign = hungarian_min(&cost);

    // map pred labels into true-label space under the bijection
    let mapped: Vec<Option<usize>> = pred
        .iter()
        .map(|&p| {
            let col = assign[p_index[&p]];
            if col < ta.len() {
                Some(ta[col])
            } else {
                None // matched to a padding column: counts as no class
            }
        })
        .collect();
    let mut f1_sum = 0.0;
    for &t_label in &ta {
        let tp = mapped
            .iter()
            .zip(truth)
            .filter(|(m, &t)| **m == Some(t_label) && t == t_label)
            .count() as f64;
        let fp = mapped
            .iter()
            .zip(truth)
            .filter(|(m, &t)| **m == Some(t_label) && t != t_label)
            .count() as f64;
        let fal_n = mapped
            .iter()
            .zip(truth)
            .filter(|(m, &t)| **m != Some(t_label) && t == t_label)
            .count() as f64;
        let denom = 2.0 * tp + fp + fal_n;
        f1_sum += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
    }
    let f1 = f1_sum / ta.len() as f64;
    let permutation = pa
        .iter()
        .filter_map(|&p| {
            let col = assign[p_index[&p]];
            if col < ta.len() {
                Some((p, ta[col]))
            } else {
                None
            }
        })
        .collect();
    (f1, permutation)
}

fn comb2(n: f64) -> f64 {
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index by pair counting. The degenerate case where both
/// chance-corrected terms coincide returns 1 for identical partitions and 0
/// otherwise.
pub fn ari(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    assert!(!pred.is_empty());
    let n = pred.len() as f64;
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *cells.entry((p, t)).or_insert(0.0) += 1.0;
        *rows.entry(p).or_insert(0.0) += 1.0;
        *cols.entry(t).or_insert(0.0) += 1.0;
    }
    let index: f64 = cells.values().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total_pairs = comb2(n);
    let expected = sum_rows * sum_cols / total_pairs;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        return if partitions_identical(pred, truth) { 1.0 } else { 0.0 };
    }
    (index - expected) / (max_index - expected)
}

/// True when the two label sequences induce the same partition.
fn partitions_identical(a: &[usize], b: &[usize]) -> bool {
    let mut map_ab: BTreeMap<usize, usize> = BTreeMap::new();
    let mut map_ba: BTreeMap<usize, usize> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        if *map_ab.entry(x).or_insert(y) != y {
            return false;
        }
        if *map_ba.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Indices where the label changes.
pub fn change_points(labels: &[usize]) -> Vec<usize> {
    (1..labels.len())
        .filter(|&i| labels[i] != labels[i - 1])
        .collect()
}

/// F1 of greedily matched change points within a symmetric tolerance window.
/// Both-empty counts as perfect.
pub fn changepoint_f1(pred: &[usize], truth: &[usize], tol: usize) -> f64 {
    assert_eq!(pred.len(), truth.len());
    let cp_pred = change_points(pred);
    let cp_true = change_points(truth);
    if cp_pred.is_empty() && cp_true.is_empty() {
        return 1.0;
    }
    if cp_pred.is_empty() || cp_true.is_empty() {
        return 0.0;
    }
    // one-to-one greedy matching over sorted point lists
    let mut matched = 0usize;
    let mut j = 0usize;
    for &p in &cp_pred {
        while j < cp_true.len() && cp_true[j] + tol < p {
            j += 1;
        }
        if j < cp_true.len() && cp_true[j].abs_diff(p) <= tol {
            matched += 1;
            j += 1;
        }
    }
    let precision = matched as f64 / cp_pred.len() as f64;
    let recall = matched as f64 / cp_true.len() as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Duration-weighted purity of predicted segments: each maximal predicted
/// segment contributes its dominant true-label fraction, weighted by length.
pub fn segment_purity(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len());
    assert!(!pred.is_empty());
    let n = pred.len();
    let mut total = 0.0;
    let mut start = 0usize;
    for i in 1..=n {
        if i == n || pred[i] != pred[start] {
            let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
            for &t in &truth[start..i] {
                *counts.entry(t).or_insert(0) += 1;
            }
            let max = *counts.values().max().unwrap() as f64;
            total += max / n as f64;
            start = i;
        }
    }
    total
}

/// Full segmentation report.
#[derive(Clone, Debug)]
pub struct SegmentationReport {
    pub mode_f1: f64,
    pub ari: f64,
    pub changepoint_f1: f64,
    pub segment_purity: f64,
    pub permutation: Vec<(usize, usize)>,
}

pub fn segmentation_report(pred: &[usize], truth: &[usize], cp_tol: usize) -> SegmentationReport {
    let (f1, permutation) = mode_f1(pred, truth);
    SegmentationReport {
        mode_f1: f1,
        ari: ari(pred, truth),
        changepoint_f1: changepoint_f1(pred, truth, cp_tol),
        segment_purity: segment_purity(pred, truth),
        permutation,
    }
}

/// Inverse standard normal CDF (Acklam's rational approximation, ~1e-9).
pub fn standard_normal_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "quantile level must lie in (0,1)");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    let p_low = 0.02425;
    if p < p_low {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Calibration metrics for Gaussian predictives.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationReport {
    /// Mean negative Gaussian log-density, nats per value.
    pub nll: f64,
    /// Expected calibration error over 10 equal-width confidence bins.
    pub ece: f64,
    /// Fraction of realizations inside the central 90% interval.
    pub cov90: f64,
}

/// Computes NLL and 90% coverage from Gaussian predictives and ECE from
/// (confidence, correctness) pairs.
pub fn calibration(
    means: &[f64],
    vars: &[f64],
    realized: &[f64],
    confidence_outcomes: &[(f64, bool)],
) -> Result<CalibrationReport> {
    if means.is_empty() || confidence_outcomes.is_empty() {
        return Err(CoreError::EmptyInput("calibration inputs".into()));
    }
    assert_eq!(means.len(), vars.len());
    assert_eq!(means.len(), realized.len());
    let n = means.len() as f64;
    let mut nll = 0.0;
    let mut inside = 0usize;
    let z90 = standard_normal_quantile(0.95);
    for i in 0..means.len() {
        let sd = vars[i].max(1e-300).sqrt();
        nll -= crate::util::normal_logpdf(realized[i], means[i], sd);
        if (realized[i] - means[i]).abs() <= z90 * sd {
            inside += 1;
        }
    }
    Ok(CalibrationReport {
        nll: nll / n,
        ece: ece(confidence_outcomes),
        cov90: inside as f64 / n,
    })
}

/// ECE with 10 equal-width bins: sum over bins of (n_b/n) |acc_b - conf_b|.
pub fn ece(pairs: &[(f64, bool)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let bins = 10usize;
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut acc_sum = vec![0.0; bins];
    for &(conf, correct) in pairs {
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        acc_sum[b] += if correct { 1.0 } else { 0.0 };
    }
    let n = pairs.len() as f64;
    (0..bins)
        .map(|b| {
            if count[b] == 0 {
                0.0
            } else {
                let cb = count[b] as f64;
                (cb / n) * ((acc_sum[b] / cb) - (conf_sum[b] / cb)).abs()
            }
        })
        .sum()
}

/// Builds interval-calibration (confidence, hit) pairs from Gaussian
/// predictives at the ten central levels 0.05, 0.15, ..., 0.95.
pub fn interval_calibration_pairs(
    means: &[f64],
    vars: &[f64],
    realized: &[f64],
) -> Vec<(f64, bool)> {
    let mut out = Vec::with_capacity(means.len() * 10);
    for b in 0..10 {
        let level = (b as f64 + 0.5) / 10.0;
        let z = standard_normal_quantile(0.5 + level / 2.0);
        for i in 0..means.len() {
            let sd = vars[i].max(1e-300).sqrt();
            out.push((level, (realized[i] - means[i]).abs() <= z * sd));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn identical_labels_score_one() {
        let l = vec![0, 0, 1, 1, 2, 2, 0];
        let rep = segmentation_report(&l, &l, 2);
        assert_relative_eq!(rep.mode_f1, 1.0);
        assert_relative_eq!(rep.ari, 1.0);
        assert_relative_eq!(rep.changepoint_f1, 1.0);
        assert_relative_eq!(rep.segment_purity, 1.0);
    }

    #[test]
    fn mode_f1_permutation_invariant() {
        let truth = vec![0, 0, 1, 1, 2, 2, 1, 0];
        let pred: Vec<usize> = truth.iter().map(|&t| (t + 2) % 3 + 10).collect();
        let (f1, perm) = mode_f1(&pred, &truth);
        assert_relative_eq!(f1, 1.0);
        assert_eq!(perm.len(), 3);
    }

    #[test]
    fn constant_pred_gives_zero_ari_and_cp() {
        let truth = vec![0, 0, 1, 1, 2, 2];
        let pred = vec![5; 6];
        assert_relative_eq!(ari(&pred, &truth), 0.0);
        assert_relative_eq!(changepoint_f1(&pred, &truth, 2), 0.0);
    }

    #[test]
    fn cp_match_at_exact_tolerance_boundary() {
        let truth = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let pred = vec![0, 0, 1, 1, 1, 1, 1, 1]; // point at 2 vs true 4
        assert_relative_eq!(changepoint_f1(&pred, &truth, 2), 1.0);
        assert_relative_eq!(changepoint_f1(&pred, &truth, 1), 0.0);
    }

    #[test]
    fn purity_even_split_is_half() {
        let truth = vec![0, 0, 1, 1];
        let pred = vec![7, 7, 7, 7];
        assert_relative_eq!(segment_purity(&pred, &truth), 0.5);
    }

    #[test]
    fn hungarian_small_case() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let a = hungarian_min(&cost);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_relative_eq!(total, 5.0); // 1 + 2 + 2
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert!((standard_normal_quantile(0.95) - 1.6448536269514722).abs() < 1e-7);
        assert!((standard_normal_quantile(0.975) - 1.959963984540054).abs() < 1e-7);
        assert!(standard_normal_quantile(0.5).abs() < 1e-9);
    }

    #[test]
    fn ece_zero_when_confidence_equals_accuracy() {
        // bin at confidence 0.75: make exactly 3 of 4 correct
        let pairs = vec![
            (0.75, true),
            (0.75, true),
            (0.75, true),
            (0.75, false),
        ];
        assert_relative_eq!(ece(&pairs), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn nll_closed_form_at_mean() {
        // unit-Gaussian predictive with realization at the mean
        let n = 50;
        let means = vec![0.0; n];
        let vars = vec![1.0; n];
        let realized = vec![0.0; n];
        let pairs = vec![(0.5, true)];
        let rep = calibration(&means, &vars, &realized, &pairs).unwrap();
        assert_relative_eq!(
            rep.nll,
            0.5 * (2.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn empty_input_is_an_error() {
        let err = calibration(&[], &[], &[], &[]).unwrap_err();
        assert!(matches!(err, CoreError::EmptyInput(_)));
    }
}
