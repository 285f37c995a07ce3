//! Post-hoc Gaussian HMM segmenter over the scalar kinematic score: the
//! classic baseline that sees the same features as the proxy labels but
//! shares no predictive latent state with the dynamics model.

use crate::util::{logsumexp, normal_logpdf, quantile};

pub struct GaussianHmm {
    pub states: usize,
    pub log_trans: Vec<Vec<f64>>,
    pub log_init: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GaussianHmm {
    /// Deterministic EM fit: means initialized at score quantiles, sticky
    /// transitions, fixed iteration budget.
    pub fn fit(scores: &[f64], states: usize, iters: usize) -> Self {
        assert!(states >= 2 && scores.len() > states);
        let n = scores.len();
        let mut means: Vec<f64> = (0..states)
            .map(|s| quantile(scores, (s as f64 + 0.5) / states as f64))
            .collect();
        let spread = (quantile(scores, 0.9) - quantile(scores, 0.1)).max(1e-6);
        let mut stds = vec![spread / states as f64; states];
        let stay = 0.95f64;
        let mut log_trans =
            vec![vec![((1.0 - stay) / (states as f64 - 1.0)).ln(); states]; states];
        for (s, row) in log_trans.iter_mut().enumerate() {
            row[s] = stay.ln();
        }
        let mut log_init = vec![-(states as f64).ln(); states];

        for _ in 0..iters {
            // forward-backward in log space
            let emit: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    (0..states)
                        .map(|s| normal_logpdf(scores[t], means[s], stds[s].max(1e-6)))
                        .collect()
                })
                .collect();
            let mut alpha = vec![vec![0.0; states]; n];
            for s in 0..states {
                alpha[0][s] = log_init[s] + emit[0][s];
            }
            for t in 1..n {
                for s in 0..states {
                    let terms: Vec<f64> = (0..states)
                        .map(|r| alpha[t - 1][r] + log_trans[r][s])
                        .collect();
                    alpha[t][s] = logsumexp(&terms) + emit[t][s];
                }
            }
            let mut beta = vec![vec![0.0; states]; n];
            for t in (0..n - 1).rev() {
                for s in 0..states {
                    let terms: Vec<f64> = (0..states)
                        .map(|r| log_trans[s][r] + emit[t + 1][r] + beta[t + 1][r])
                        .collect();
                    beta[t][s] = logsumexp(&terms);
                }
            }
            let log_z = logsumexp(&alpha[n - 1]);
            // state responsibilities
            let mut resp = vec![vec![0.0; states]; n];
            for t in 0..n {
                for s in 0..states {
                    resp[t][s] = (alpha[t][s] + beta[t][s] - log_z).exp();
                }
            }
            // transition counts
            let mut trans_counts = vec![vec![1e-6; states]; states];
            for t in 0..n - 1 {
                for r in 0..states {
                    for s in 0..states {
                        let lp = alpha[t][r] + log_trans[r][s] + emit[t + 1][s] + beta[t + 1][s]
                            - log_z;
                        trans_counts[r][s] += lp.exp();
                    }
                }
            }
            for r in 0..states {
                let total: f64 = trans_counts[r].iter().sum();
                for s in 0..states {
                    log_trans[r][s] = (trans_counts[r][s] / total).ln();
                }
            }
            for s in 0..states {
                let w: f64 = (0..n).map(|t| resp[t][s]).sum();
                if w > 1e-9 && w.is_finite() {
                    let m = (0..n).map(|t| resp[t][s] * scores[t]).sum::<f64>() / w;
                    let var = (0..n)
                        .map(|t| resp[t][s] * (scores[t] - m).powi(2))
                        .sum::<f64>()
                        / w;
                    if m.is_finite() && var.is_finite() {
                        means[s] = m;
                        stds[s] = var.sqrt().max(1e-4);
                    }
                }
                log_init[s] = (resp[0][s].max(1e-12)).ln();
            }
        }
        Self {
            states,
            log_trans,
            log_init,
            means,
            stds,
        }
    }

    /// Viterbi decode.
    pub fn decode(&self, scores: &[f64]) -> Vec<usize> {
        let n = scores.len();
        let k = self.states;
        let mut delta = vec![vec![f64::NEG_INFINITY; k]; n];
        let mut back = vec![vec![0usize; k]; n];
        for s in 0..k {
            delta[0][s] = self.log_init[s] + normal_logpdf(scores[0], self.means[s], self.stds[s]);
        }
        for t in 1..n {
            for s in 0..k {
                let mut best = f64::NEG_INFINITY;
                let mut arg = 0;
                for r in 0..k {
                    let v = delta[t - 1][r] + self.log_trans[r][s];
                    if v > best {
                        best = v;
                        arg = r;
                    }
                }
                delta[t][s] =
                    best + normal_logpdf(scores[t], self.means[s], self.stds[s]);
                back[t][s] = arg;
            }
        }
        let mut path = vec![0usize; n];
        let mut cur = (0..k)
            .max_by(|&a, &b| delta[n - 1][a].partial_cmp(&delta[n - 1][b]).unwrap())
            .unwrap();
        path[n - 1] = cur;
        for t in (1..n).rev() {
            cur = back[t][cur];
            path[t - 1] = cur;
        }
        path
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_well_separated_levels() {
        // three clean plateaus
        let mut scores = Vec::new();
        for _ in 0..60 {
            scores.push(0.1);
        }
        for _ in 0..60 {
            scores.push(5.0);
        }
        for _ in 0..60 {
            scores.push(2.0);
        }
        let noisy: Vec<f64> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| s + 0.05 * ((i * 2654435761) % 97) as f64 / 97.0)
            .collect();
        let hmm = GaussianHmm::fit(&noisy, 3, 25);
        let path = hmm.decode(&noisy);
        // piecewise constant with exactly two change points
        let cps: Vec<usize> = (1..path.len()).filter(|&t| path[t] != path[t - 1]).collect();
        assert_eq!(cps.len(), 2, "{cps:?}");
        assert!(cps[0].abs_diff(60) <= 2 && cps[1].abs_diff(120) <= 2);
    }
}
