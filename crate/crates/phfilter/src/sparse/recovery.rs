//! Penalty selection, thresholded support recovery, recovery metrics, and
//! the oracle-bound checks.

use crate::error::{CoreError, Result};
use crate::systems::{ConstantProbe, HybridSystemSpec};
use nalgebra::{DMatrix, DVector};

/// High-probability penalty: `lambda = 2 [ L_A sigma sqrt(2 log(2p/delta)/n) + nu ]`.
pub fn choose_penalty(l_a: f64, sigma: f64, p: usize, n: usize, delta: f64, nu: f64) -> f64 {
    assert!(l_a >= 0.0 && sigma >= 0.0 && nu >= 0.0);
    assert!(delta > 0.0 && delta < 1.0);
    assert!(p >= 1 && n >= 1);
    2.0 * (l_a * sigma * (2.0 * (2.0 * p as f64 / delta).ln() / n as f64).sqrt() + nu)
}

/// Column-norm constant `L_A = max_j ||A_col_j||_2 / sqrt(n)`.
pub fn column_norm_constant(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows() as f64;
    (0..a.ncols())
        .map(|j| a.column(j).norm() / n.sqrt())
        .fold(0.0, f64::max)
}

/// Thresholded support with the certificate interval.
#[derive(Clone, Debug)]
pub struct SupportDecision {
    pub support: Vec<usize>,
    pub threshold: f64,
    /// True when the certificate interval (4 sqrt(k) lambda / kappa,
    /// beta_min - same) was nonempty and the threshold sits at its midpoint.
    pub certified: bool,
}

/// Thresholds the estimate at the midpoint of the certificate interval when
/// it is nonempty, else at its lower edge (flagged uncertified). Strict
/// inequality: a coefficient exactly at the threshold is excluded.
pub fn threshold_support(
    estimate: &DVector<f64>,
    k: usize,
    lambda: f64,
    kappa: f64,
    beta_min: f64,
) -> SupportDecision {
    assert!(kappa > 0.0, "kappa must be positive");
    let radius = 4.0 * (k as f64).sqrt() * lambda / kappa;
    let upper = beta_min - radius;
    let (threshold, certified) = if upper > radius {
        (0.5 * (radius + upper), true)
    } else {
        (radius, false)
    };
    let support = estimate
        .iter()
        .enumerate()
        .filter(|(_, &v)| v.abs() > threshold)
        .map(|(j, _)| j)
        .collect();
    SupportDecision {
        support,
        threshold,
        certified,
    }
}

/// Recovery metrics against ground truth.
#[derive(Clone, Copy, Debug)]
pub struct RecoveryMetrics {
    pub support_f1: f64,
    pub rel_coeff_err: f64,
    pub vf_nrmse: f64,
    pub const_err: f64,
}

/// Set-F1 of the recovered support, relative coefficient error, normalized
/// vector-field error, and mean relative error of the declared physical
/// constants.
pub fn recovery_metrics(
    estimate: &DVector<f64>,
    support: &[usize],
    truth: &DVector<f64>,
    true_support: &[usize],
    design: &DMatrix<f64>,
    probes: &[(ConstantProbe, f64)],
) -> RecoveryMetrics {
    let tp = support.iter().filter(|j| true_support.contains(j)).count() as f64;
    let fp = support.len() as f64 - tp;
    let fal_n = true_support.len() as f64 - tp;
    let denom = 2.0 * tp + fp + fal_n;
    let support_f1 = if denom > 0.0 {
        2.0 * tp / denom
    } else {
        // both supports empty
        1.0
    };

    let diff = estimate - truth;
    let rel_coeff_err = if truth.norm() > 0.0 {
        diff.norm() / truth.norm()
    } else {
        diff.norm()
    };

    let n_rows = design.nrows() as f64;
    let true_field = design * truth;
    let range = true_field.max() - true_field.min();
    let normalizer = if range > 1e-12 { range } else { 1.0 };
    let vf_nrmse = (design * &diff).norm() / (n_rows.sqrt() * normalizer);

    let const_err = if probes.is_empty() {
        0.0
    } else {
        probes
            .iter()
            .map(|(probe, true_value)| {
                let est = probe.read(estimate.as_slice());
                if !est.is_finite() {
                    1.0
                } else {
                    (est - true_value).abs() / true_value.abs().max(1e-12)
                }
            })
            .sum::<f64>()
            / probes.len() as f64
    };

    RecoveryMetrics {
        support_f1,
        rel_coeff_err,
        vf_nrmse,
        const_err,
    }
}

/// Constant probes for one mode of a system, paired with the true values.
pub fn probes_for_mode(spec: &HybridSystemSpec, mode: usize) -> Vec<(ConstantProbe, f64)> {
    spec.constant_probes
        .iter()
        .filter(|p| p.mode == mode)
        .map(|p| {
            let truth = spec
                .constants
                .iter()
                .find(|(name, _)| *name == p.name)
                .map(|(_, v)| *v)
                .expect("probe names a declared constant");
            (p.clone(), truth)
        })
        .collect()
}

/// Oracle-bound report for a gated fit.
#[derive(Clone, Copy, Debug)]
pub struct OracleReport {
    /// `||(1/n) A^T zeta||_inf <= lambda / 2` held, so the bounds apply.
    pub score_gate: bool,
    pub score_norm: f64,
    pub coeff_err: f64,
    pub coeff_bound: f64,
    pub pred_err: f64,
    pub pred_bound: f64,
    pub cone_ok: bool,
}

/// Checks the finite-sample bounds against a known truth:
/// `||xi_hat - xi*||_2 <= 4 sqrt(k) lambda / kappa`,
/// `(1/n) ||A (xi_hat - xi*)||^2 <= 16 k lambda^2 / kappa`, and the cone
/// condition `||d_{S^c}||_1 <= 3 ||d_S||_1`.
///
/// When the score gate fails the check is skipped and flagged, not asserted.
/// A gated violation returns `BoundViolation`.
pub fn oracle_check(
    estimate: &DVector<f64>,
    truth: &DVector<f64>,
    design: &DMatrix<f64>,
    response: &DVector<f64>,
    k: usize,
    lambda: f64,
    kappa: f64,
    true_support: &[usize],
) -> Result<OracleReport> {
    assert!(kappa > 0.0);
    let n = design.nrows() as f64;
    let zeta = response - design * truth;
    let score_norm = (design.transpose() * &zeta).amax() / n;
    let score_gate = score_norm <= lambda / 2.0;

    let diff = estimate - truth;
    let coeff_err = diff.norm();
    let coeff_bound = 4.0 * (k as f64).sqrt() * lambda / kappa;
    let pred_err = (design * &diff).norm_squared() / n;
    let pred_bound = 16.0 * k as f64 * lambda * lambda / kappa;

    let mut on = 0.0;
    let mut off = 0.0;
    for (j, &v) in diff.iter().enumerate() {
        if true_support.contains(&j) {
            on += v.abs();
        } else {
            off += v.abs();
        }
    }
    let cone_ok = off <= 3.0 * on + 1e-9;

    let report = OracleReport {
        score_gate,
        score_norm,
        coeff_err,
        coeff_bound,
        pred_err,
        pred_bound,
        cone_ok,
    };
    if score_gate {
        if coeff_err > coeff_bound * (1.0 + 1e-9) {
            return Err(CoreError::BoundViolation(format!(
                "coefficient error {coeff_err:.3e} exceeds {coeff_bound:.3e}"
            )));
        }
        if pred_err > pred_bound * (1.0 + 1e-9) {
            return Err(CoreError::BoundViolation(format!(
                "prediction error {pred_err:.3e} exceeds {pred_bound:.3e}"
            )));
        }
        if !cone_ok {
            return Err(CoreError::BoundViolation(format!(
                "cone condition violated: off {off:.3e} > 3 * on {on:.3e}"
            )));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn penalty_formula_values() {
        assert_eq!(choose_penalty(1.0, 0.0, 12, 100, 0.1, 0.0), 0.0);
        let l = choose_penalty(1.0, 1.0, 12, 1000, 0.1, 0.0);
        assert!((l - 0.2094).abs() < 2e-4, "lambda {l}");
        // doubling n divides the stochastic term by sqrt(2)
        let l2 = choose_penalty(1.0, 1.0, 12, 2000, 0.1, 0.0);
        assert_relative_eq!(l2, l / 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn threshold_certified_interval() {
        // beta_min well above 8 sqrt(k) lambda / kappa: exact recovery
        let xi = DVector::from_column_slice(&[1.0, 0.0, -0.8, 0.0]);
        let d = threshold_support(&xi, 2, 0.01, 1.0, 0.8);
        assert!(d.certified);
        assert_eq!(d.support, vec![0, 2]);
    }

    #[test]
    fn zero_estimate_empty_support() {
        let xi = DVector::zeros(5);
        let d = threshold_support(&xi, 2, 0.1, 1.0, 1.0);
        assert!(d.support.is_empty());
    }

    #[test]
    fn boundary_value_excluded() {
        let radius = 4.0 * 1f64.sqrt() * 0.1 / 1.0; // 0.4
        let xi = DVector::from_column_slice(&[radius, 0.9]);
        // interval (0.4, 0.5), midpoint 0.45: a coefficient exactly at the
        // lower edge stays out; test the strictness convention at the
        // threshold itself with an uncertified case
        let d = threshold_support(&xi, 1, 0.1, 1.0, 0.3);
        assert!(!d.certified);
        assert_relative_eq!(d.threshold, radius);
        assert!(!d.support.contains(&0), "value at threshold must drop");
        assert!(d.support.contains(&1));
    }

    #[test]
    fn perfect_recovery_metrics() {
        let xi = DVector::from_column_slice(&[1.0, 0.0, 2.0]);
        let design = DMatrix::identity(3, 3);
        let m = recovery_metrics(&xi, &[0, 2], &xi, &[0, 2], &design, &[]);
        assert_relative_eq!(m.support_f1, 1.0);
        assert_relative_eq!(m.rel_coeff_err, 0.0);
        assert_relative_eq!(m.vf_nrmse, 0.0);
    }

    #[test]
    fn empty_support_zero_f1() {
        let xi = DVector::zeros(3);
        let truth = DVector::from_column_slice(&[1.0, 0.0, 0.0]);
        let design = DMatrix::identity(3, 3);
        let m = recovery_metrics(&xi, &[], &truth, &[0], &design, &[]);
        assert_relative_eq!(m.support_f1, 0.0);
    }

    #[test]
    fn oracle_check_skips_when_gate_fails() {
        // lambda far too small for the noise: gate must fail, no violation
        let design = DMatrix::identity(4, 4);
        let truth = DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]);
        let response = &design * &truth + DVector::from_column_slice(&[0.5, -0.5, 0.5, -0.5]);
        let estimate = truth.clone();
        let rep = oracle_check(&estimate, &truth, &design, &response, 1, 1e-6, 1.0, &[0]).unwrap();
        assert!(!rep.score_gate);
    }

    #[test]
    fn noiseless_fit_passes_with_slack() {
        let design = DMatrix::identity(5, 5);
        let truth = DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.5, 0.0]);
        let response = &design * &truth;
        let estimate = DVector::from_column_slice(&[0.999, 0.0, 0.0, 0.501, 0.0]);
        let rep = oracle_check(&estimate, &truth, &design, &response, 2, 0.05, 0.2, &[0, 3]).unwrap();
        assert!(rep.score_gate);
        assert!(rep.coeff_err <= rep.coeff_bound);
        assert!(rep.cone_ok);
    }
}
