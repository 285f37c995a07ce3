//! Clamped-mode evidence accumulation over constant-mode segments, per-step
//! mode decoding, and the matching concentration-bound calculators.

use crate::util::logsumexp;

/// Accumulated per-mode evidence for one constant-mode segment.
#[derive(Clone, Debug)]
pub struct ModeEvidence {
    pub mode_count: usize,
    /// Prior over modes (strictly positive, normalized).
    pub priors: Vec<f64>,
    /// Summed predictive log-likelihoods per mode.
    pub cumulative_log_lik: Vec<f64>,
    /// Posterior over the segment mode.
    pub posterior: Vec<f64>,
    pub segment_len: usize,
}

/// Multiplies per-step predictive likelihoods under each candidate mode into
/// the segment posterior: `post(s) ∝ prior_s * exp(sum_l loglik[l][s])`.
pub fn accumulate_evidence(log_liks: &[Vec<f64>], priors: &[f64]) -> ModeEvidence {
    let m = priors.len();
    assert!(m >= 1);
    assert!(priors.iter().all(|&p| p > 0.0), "priors must be positive");
    let prior_total: f64 = priors.iter().sum();
    let mut cum = vec![0.0; m];
    for row in log_liks {
        assert_eq!(row.len(), m, "log-lik row length mismatch");
        for (s, &ll) in row.iter().enumerate() {
            assert!(ll.is_finite(), "log-likelihoods must be finite");
            cum[s] += ll;
        }
    }
    let log_post: Vec<f64> = (0..m)
        .map(|s| (priors[s] / prior_total).ln() + cum[s])
        .collect();
    let lse = logsumexp(&log_post);
    let posterior: Vec<f64> = log_post.iter().map(|lp| (lp - lse).exp()).collect();
    ModeEvidence {
        mode_count: m,
        priors: priors.iter().map(|p| p / prior_total).collect(),
        cumulative_log_lik: cum,
        posterior,
        segment_len: log_liks.len(),
    }
}

/// Per-wrong-mode inputs to the concentration bound.
#[derive(Clone, Copy, Debug)]
pub struct WrongModeInputs {
    /// Cumulative predictive separation Gamma_{L,s}.
    pub separation: f64,
    /// Sub-Gaussian variance proxy V_s >= 0.
    pub variance_proxy: f64,
    /// Prior log-odds B_s = log(pi_s / pi_m).
    pub prior_log_odds: f64,
}

/// The concentration bounds at confidence 1 - delta.
#[derive(Clone, Copy, Debug)]
pub struct ConcentrationBound {
    /// A# = sum over wrong modes of exp(B - Gamma + sqrt(2 V log((M-1)/delta))).
    pub a_sharp: f64,
    /// A#/(1 + A#).
    pub sharp_bound: f64,
    /// (M-1) exp(B - L Delta + sigma sqrt(2 L log((M-1)/delta))) under the
    /// uniform-constant reduction.
    pub simple_bound: f64,
}

/// Evaluates the sharp and simplified wrong-mode mass bounds. The simple
/// bound uses the uniform constants implied by the per-mode inputs:
/// Delta = min separation / L, B = max log-odds, sigma^2 = max proxy / L.
pub fn concentration_bound(
    wrong_modes: &[WrongModeInputs],
    segment_len: usize,
    delta: f64,
) -> ConcentrationBound {
    assert!(!wrong_modes.is_empty(), "need at least one wrong mode");
    assert!((0.0..1.0).contains(&delta) && delta > 0.0);
    let m_minus_1 = wrong_modes.len() as f64;
    let log_term = (m_minus_1 / delta).ln();
    let a_sharp: f64 = wrong_modes
        .iter()
        .map(|w| {
            assert!(w.variance_proxy >= 0.0);
            let u = (2.0 * w.variance_proxy * log_term).sqrt();
            (w.prior_log_odds - w.separation + u).exp()
        })
        .sum();
    let sharp_bound = if a_sharp.is_infinite() {
        1.0
    } else {
        a_sharp / (1.0 + a_sharp)
    };

    let l = segment_len.max(1) as f64;
    let delta_step = wrong_modes
        .iter()
        .map(|w| w.separation / l)
        .fold(f64::INFINITY, f64::min);
    let b_max = wrong_modes
        .iter()
        .map(|w| w.prior_log_odds)
        .fold(f64::NEG_INFINITY, f64::max);
    let sigma = wrong_modes
        .iter()
        .map(|w| (w.variance_proxy / l).sqrt())
        .fold(0.0f64, f64::max);
    let simple_bound =
        m_minus_1 * (b_max - l * delta_step + sigma * (2.0 * l * log_term).sqrt()).exp();

    ConcentrationBound {
        a_sharp,
        sharp_bound,
        simple_bound,
    }
}

/// Transfers the posterior bound to an approximate posterior with KL gap
/// `eps_q`: bound + sqrt(eps_q / 2), clipped to one.
pub fn variational_transfer(sharp_bound: f64, eps_q: f64) -> f64 {
    assert!(eps_q >= 0.0);
    (sharp_bound + (eps_q / 2.0).sqrt()).min(1.0)
}

/// Per-step MAP decoding of the weighted mode marginals; ties break to the
/// smallest index.
pub fn decode_modes(mode_posteriors: &[Vec<f64>]) -> Vec<usize> {
    mode_posteriors
        .iter()
        .map(|post| {
            let mut best = 0;
            let mut best_p = f64::NEG_INFINITY;
            for (s, &p) in post.iter().enumerate() {
                if p > best_p {
                    best_p = p;
                    best = s;
                }
            }
            best
        })
        .collect()
}

/// Mode-timeline CSV: `t,true_mode,proxy_mode,decoded_mode,p_1..p_M`.
pub fn mode_timeline_csv(
    true_modes: &[usize],
    proxy_modes: &[usize],
    decoded: &[usize],
    posteriors: &[Vec<f64>],
    dt: f64,
) -> String {
    let m = posteriors.first().map_or(0, |p| p.len());
    let mut s = String::from("t,true_mode,proxy_mode,decoded_mode");
    for i in 1..=m {
        s.push_str(&format!(",p_{i}"));
    }
    s.push('\n');
    for t in 0..decoded.len() {
        s.push_str(&format!(
            "{:.6},{},{},{}",
            t as f64 * dt,
            true_modes[t] + 1,
            proxy_modes[t] + 1,
            decoded[t] + 1
        ));
        for p in &posteriors[t] {
            s.push_str(&format!(",{p:.6}"));
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn empty_segment_returns_priors() {
        let ev = accumulate_evidence(&[], &[0.2, 0.3, 0.5]);
        assert_relative_eq!(ev.posterior[0], 0.2, epsilon = 1e-12);
        assert_relative_eq!(ev.posterior[2], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn identical_likelihoods_cancel() {
        let rows = vec![vec![-1.3, -1.3], vec![-0.2, -0.2]];
        let ev = accumulate_evidence(&rows, &[0.7, 0.3]);
        assert_relative_eq!(ev.posterior[0], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn three_mode_table_matches_direct_product() {
        let rows = vec![
            vec![-1.0, -2.0, -0.5],
            vec![-0.3, -0.1, -0.9],
            vec![-2.0, -1.5, -1.0],
        ];
        let priors = [0.5, 0.25, 0.25];
        let ev = accumulate_evidence(&rows, &priors);
        // direct normalized product
        let mut un: Vec<f64> = (0..3)
            .map(|s| priors[s] * rows.iter().map(|r| r[s].exp()).product::<f64>())
            .collect();
        let total: f64 = un.iter().sum();
        for u in &mut un {
            *u /= total;
        }
        for s in 0..3 {
            assert_relative_eq!(ev.posterior[s], un[s], epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_variance_reduces_to_pure_exponential() {
        // V = 0, B = 0, Gamma = L: A# = (M-1) e^{-L}
        let l = 7usize;
        let wrong: Vec<WrongModeInputs> = (0..2)
            .map(|_| WrongModeInputs {
                separation: l as f64,
                variance_proxy: 0.0,
                prior_log_odds: 0.0,
            })
            .collect();
        let b = concentration_bound(&wrong, l, 0.1);
        assert_relative_eq!(b.a_sharp, 2.0 * (-(l as f64)).exp(), epsilon = 1e-12);
    }

    #[test]
    fn sharp_bound_saturates_at_one() {
        let wrong = [WrongModeInputs {
            separation: -800.0,
            variance_proxy: 0.0,
            prior_log_odds: 0.0,
        }];
        let b = concentration_bound(&wrong, 10, 0.1);
        assert!(b.a_sharp.is_infinite() || b.a_sharp > 1e300);
        assert_relative_eq!(b.sharp_bound, 1.0);
    }

    #[test]
    fn sharp_bound_below_a_sharp_and_simple_dominates() {
        let wrong = [
            WrongModeInputs {
                separation: 4.0,
                variance_proxy: 2.0,
                prior_log_odds: 0.1,
            },
            WrongModeInputs {
                separation: 6.0,
                variance_proxy: 1.0,
                prior_log_odds: -0.2,
            },
        ];
        let b = concentration_bound(&wrong, 10, 0.05);
        assert!(b.sharp_bound <= b.a_sharp);
        assert!(
            b.simple_bound >= b.sharp_bound,
            "{} < {}",
            b.simple_bound,
            b.sharp_bound
        );
    }

    #[test]
    fn bound_monotonicity() {
        let base = WrongModeInputs {
            separation: 5.0,
            variance_proxy: 1.0,
            prior_log_odds: 0.0,
        };
        let b0 = concentration_bound(&[base], 10, 0.1);
        let more_sep = concentration_bound(
            &[WrongModeInputs {
                separation: 6.0,
                ..base
            }],
            10,
            0.1,
        );
        assert!(more_sep.a_sharp < b0.a_sharp);
        assert!(more_sep.sharp_bound < b0.sharp_bound);
        let more_var = concentration_bound(
            &[WrongModeInputs {
                variance_proxy: 2.0,
                ..base
            }],
            10,
            0.1,
        );
        assert!(more_var.a_sharp > b0.a_sharp);
        let more_odds = concentration_bound(
            &[WrongModeInputs {
                prior_log_odds: 0.5,
                ..base
            }],
            10,
            0.1,
        );
        assert!(more_odds.a_sharp > b0.a_sharp);
    }

    #[test]
    fn variational_transfer_cases() {
        assert_relative_eq!(variational_transfer(0.3, 0.0), 0.3);
        assert_relative_eq!(variational_transfer(0.3, 2.0), 1.0);
        assert_relative_eq!(variational_transfer(0.3, 0.02), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn decode_point_mass_and_tie_break() {
        let posts = vec![vec![0.0, 1.0], vec![0.5, 0.5], vec![0.9, 0.1]];
        assert_eq!(decode_modes(&posts), vec![1, 0, 0]);
    }

    #[test]
    fn permutation_equivariance() {
        let rows = vec![vec![-1.0, -2.0, -0.5], vec![-0.3, -0.1, -0.9]];
        let priors = [0.5, 0.25, 0.25];
        let ev = accumulate_evidence(&rows, &priors);
        // relabel modes with the cycle 0->2->1->0
        let perm = [2usize, 0, 1]; // new index of old mode s is perm[s]
        let rows_p: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut out = vec![0.0; 3];
                for s in 0..3 {
                    out[perm[s]] = r[s];
                }
                out
            })
            .collect();
        let mut priors_p = [0.0; 3];
        for s in 0..3 {
            priors_p[perm[s]] = priors[s];
        }
        let ev_p = accumulate_evidence(&rows_p, &priors_p);
        for s in 0..3 {
            assert_relative_eq!(ev_p.posterior[perm[s]], ev.posterior[s], epsilon = 1e-12);
        }
    }
}
