//! Generic defensive-mixture operations: mass selection, mixture density,
//! sampling, importance weighting, and the closed-form bound calculators.

use crate::error::{CoreError, Result};
use crate::util::{logaddexp, logsumexp};
use super::LambdaDecision;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// A hybrid sample: discrete mode plus continuous state.
pub type HybridSample = (usize, DVector<f64>);

/// A distribution over hybrid states with a tractable density.
pub trait Density {
    fn log_density(&self, x: &HybridSample) -> f64;
    fn sample(&self, rng: &mut ChaCha12Rng) -> HybridSample;
}

/// Chooses the mixture mass before sampling. The decision uses only the
/// certificate and the budget, never the particles drawn this step.
///
/// Returns `InvalidCert` when `rho_bar < 1`, which violates the Jensen floor
/// and signals a broken certificate.
pub fn select_lambda(rho_bar: f64, n: usize, tau: f64, lambda_fb: f64) -> Result<LambdaDecision> {
    if rho_bar < 1.0 {
        return Err(CoreError::InvalidCert { rho_bar });
    }
    assert!(n >= 1 && tau > 0.0, "need n >= 1 and tau > 0");
    assert!(
        lambda_fb > 0.0 && lambda_fb <= 1.0,
        "fallback mass must lie in (0, 1]"
    );
    let lambda_min = rho_bar / (1.0 + n as f64 * tau * tau);
    let certified = lambda_min <= 1.0;
    let lambda = if certified { lambda_min } else { lambda_fb };
    Ok(LambdaDecision {
        lambda,
        certified,
        lambda_min,
    })
}

/// The defensive mixture (1 - lambda) Q + lambda P over hybrid states.
pub struct Defensive<'a, Q: Density + ?Sized, P: Density + ?Sized> {
    pub q: &'a Q,
    pub p: &'a P,
    pub lambda: f64,
}

impl<'a, Q: Density + ?Sized, P: Density + ?Sized> Defensive<'a, Q, P> {
    pub fn new(q: &'a Q, p: &'a P, lambda: f64) -> Self {
        assert!(lambda > 0.0 && lambda <= 1.0, "lambda must lie in (0, 1]");
        Self { q, p, lambda }
    }
}

impl<Q: Density + ?Sized, P: Density + ?Sized> Density for Defensive<'_, Q, P> {
    fn log_density(&self, x: &HybridSample) -> f64 {
        defensive_log_density(
            self.q.log_density(x),
            self.p.log_density(x),
            self.lambda,
        )
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> HybridSample {
        if rng.random::<f64>() < self.lambda {
            self.p.sample(rng)
        } else {
            self.q.sample(rng)
        }
    }
}

/// log((1 - lambda) q(x) + lambda p(x)), stable in log space. At lambda = 1
/// this is exactly log p.
pub fn defensive_log_density(log_q: f64, log_p: f64, lambda: f64) -> f64 {
    assert!(lambda > 0.0 && lambda <= 1.0, "lambda must lie in (0, 1]");
    if lambda == 1.0 {
        return log_p;
    }
    logaddexp((1.0 - lambda).ln() + log_q, lambda.ln() + log_p)
}

/// Draws `n` samples from the defensive mixture; the component indicator is
/// discarded.
pub fn sample_defensive<Q: Density + ?Sized, P: Density + ?Sized>(
    q: &Q,
    p: &P,
    lambda: f64,
    n: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<HybridSample> {
    let mix = Defensive::new(q, p, lambda);
    (0..n).map(|_| mix.sample(rng)).collect()
}

/// Summary of one weighting pass.
#[derive(Clone, Debug)]
pub struct WeightSummary {
    /// Unnormalized log weights log(g p / q_lambda).
    pub log_weights: Vec<f64>,
    /// Normalized weights (sum to one).
    pub normalized: Vec<f64>,
    /// One-step normalizer estimate, mean of the weights.
    pub zhat: f64,
    pub log_zhat: f64,
    /// ESS/N with the finite-sample convention ESS = 0 when all weights
    /// vanish (that case surfaces as an error instead).
    pub ess_over_n: f64,
    /// Var(W) / mean(W)^2 with sample moments.
    pub rel_weight_var: f64,
}

/// Importance weighting with the realized mixture density:
/// `W_i = g(x_i) p(x_i) / q_lambda(x_i)`.
///
/// `lambda = 0` is the no-support baseline, where the denominator is the
/// bare proposal density.
pub fn one_step_weights<Q: Density + ?Sized, P: Density + ?Sized, G>(
    samples: &[HybridSample],
    log_g: G,
    p: &P,
    q: &Q,
    lambda: f64,
) -> Result<WeightSummary>
where
    G: Fn(&HybridSample) -> f64,
{
    assert!((0.0..=1.0).contains(&lambda));
    let n = samples.len();
    assert!(n > 0, "need at least one sample");
    let log_weights: Vec<f64> = samples
        .iter()
        .map(|x| {
            let lp = p.log_density(x);
            let lq = if lambda == 0.0 {
                q.log_density(x)
            } else {
                defensive_log_density(q.log_density(x), lp, lambda)
            };
            log_g(x) + lp - lq
        })
        .collect();
    summarize_log_weights(log_weights)
}

/// Normalization and diagnostics shared by all weighting paths.
pub(crate) fn summarize_log_weights(log_weights: Vec<f64>) -> Result<WeightSummary> {
    let n = log_weights.len();
    let lse = logsumexp(&log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(CoreError::AllZeroWeights { step: 0 });
    }
    let normalized: Vec<f64> = log_weights.iter().map(|lw| (lw - lse).exp()).collect();
    let sum_sq: f64 = normalized.iter().map(|w| w * w).sum();
    let ess_over_n = if sum_sq == 0.0 {
        0.0
    } else {
        1.0 / (sum_sq * n as f64)
    };
    let log_zhat = lse - (n as f64).ln();
    // scale-free sample moments: Var(W)/mean(W)^2 depends only on the
    // normalized weights
    let rel_weight_var = if n < 2 {
        0.0
    } else {
        let nf = n as f64;
        (nf * nf * sum_sq - nf) / (nf - 1.0)
    };
    Ok(WeightSummary {
        log_weights,
        normalized,
        zhat: log_zhat.exp(),
        log_zhat,
        ess_over_n,
        rel_weight_var,
    })
}

/// Closed-form bound set from the one-step theorem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryBounds {
    /// chi^2(target || mixture) <= rho/lambda - 1.
    pub chi2_bound: f64,
    /// Var(Zhat)/Z^2 <= (rho/lambda - 1)/N.
    pub rel_var_bound: f64,
    /// Asymptotic ESS/N >= lambda/rho.
    pub ess_floor: f64,
}

pub fn theory_bounds(rho: f64, lambda: f64, n: usize) -> TheoryBounds {
    assert!(rho >= 1.0, "rho must be >= 1");
    assert!(lambda > 0.0 && lambda <= 1.0);
    let chi2_bound = rho / lambda - 1.0;
    TheoryBounds {
        chi2_bound,
        rel_var_bound: chi2_bound / n as f64,
        ess_floor: lambda / rho,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::toys::{DiscreteToy, GaussianToy};
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn select_lambda_certified_branch() {
        // rho = 1, N = 100, tau = 0.1: lambda_min = 1/(1+1) = 0.5
        let d = select_lambda(1.0, 100, 0.1, 0.3).unwrap();
        assert!(d.certified);
        assert_relative_eq!(d.lambda, 0.5);
        assert_relative_eq!(d.lambda_min, 0.5);
    }

    #[test]
    fn select_lambda_uncertified_falls_back() {
        // rho = 10, N = 10, tau = 0.1: lambda_min = 10/1.1 > 1
        let d = select_lambda(10.0, 10, 0.1, 0.25).unwrap();
        assert!(!d.certified);
        assert_relative_eq!(d.lambda, 0.25);
        assert_relative_eq!(d.lambda_min, 10.0 / 1.1, epsilon = 1e-12);
    }

    #[test]
    fn select_lambda_arithmetic() {
        let d = select_lambda(2.5, 299, 0.1, 0.5).unwrap();
        assert!(d.certified);
        assert_relative_eq!(d.lambda, 2.5 / 3.99, epsilon = 1e-12);
        assert!((d.lambda - 0.6266).abs() < 1e-4);
    }

    #[test]
    fn select_lambda_rejects_bad_certificate() {
        let err = select_lambda(0.9, 100, 0.1, 0.5).unwrap_err();
        assert!(matches!(err, CoreError::InvalidCert { .. }));
    }

    #[test]
    fn lambda_one_is_carrier_density() {
        let q = GaussianToy::new(0.0, 1.0);
        let p = GaussianToy::new(3.0, 1.0);
        let x = (0usize, DVector::from_column_slice(&[1.7]));
        let mixed = defensive_log_density(q.log_density(&x), p.log_density(&x), 1.0);
        assert_relative_eq!(mixed, p.log_density(&x));
    }

    #[test]
    fn density_ratio_bounded_by_inverse_lambda() {
        let q = GaussianToy::new(0.0, 1.0);
        let p = GaussianToy::new(3.0, 1.0);
        let lambda = 0.5;
        for i in -40..=40 {
            let x = (0usize, DVector::from_column_slice(&[i as f64 * 0.25]));
            let lq = defensive_log_density(q.log_density(&x), p.log_density(&x), lambda);
            let ratio = (p.log_density(&x) - lq).exp();
            assert!(ratio <= 1.0 / lambda * (1.0 + 1e-12), "ratio {ratio}");
        }
    }

    #[test]
    fn mixture_integrates_to_one_by_quadrature() {
        // trapezoid over a wide grid
        let q = GaussianToy::new(0.0, 1.0);
        let p = GaussianToy::new(3.0, 1.0);
        let lambda = 0.35;
        let (lo, hi, n) = (-12.0, 15.0, 40_000);
        let h = (hi - lo) / n as f64;
        let f = |v: f64| {
            let x = (0usize, DVector::from_column_slice(&[v]));
            defensive_log_density(q.log_density(&x), p.log_density(&x), lambda).exp()
        };
        let mut integral = 0.5 * (f(lo) + f(hi));
        for k in 1..n {
            integral += f(lo + k as f64 * h);
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-6, "integral {integral}");
    }

    #[test]
    fn equal_weights_full_ess() {
        let lw = vec![-2.3; 64];
        let s = summarize_log_weights(lw).unwrap();
        assert_relative_eq!(s.ess_over_n, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.rel_weight_var, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn single_survivor_minimal_ess() {
        let mut lw = vec![f64::NEG_INFINITY; 50];
        lw[7] = 0.0;
        let s = summarize_log_weights(lw).unwrap();
        assert_relative_eq!(s.ess_over_n, 1.0 / 50.0, epsilon = 1e-12);
    }

    #[test]
    fn all_zero_weights_is_an_error() {
        let lw = vec![f64::NEG_INFINITY; 8];
        let err = summarize_log_weights(lw).unwrap_err();
        assert!(matches!(err, CoreError::AllZeroWeights { .. }));
    }

    #[test]
    fn discrete_component_frequency() {
        // two-mode toy: carrier-component frequency matches lambda
        let q = DiscreteToy::new(vec![1.0, 0.0]);
        let p = DiscreteToy::new(vec![0.0, 1.0]);
        let lambda = 0.3;
        let n = 40_000;
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let xs = sample_defensive(&q, &p, lambda, n, &mut rng);
        let frac = xs.iter().filter(|(s, _)| *s == 1).count() as f64 / n as f64;
        let se = (lambda * (1.0 - lambda) / n as f64).sqrt();
        assert!((frac - lambda).abs() < 3.0 * se, "{frac} vs {lambda}");
    }

    #[test]
    fn theory_bounds_values() {
        let b = theory_bounds(1.0, 1.0, 10);
        assert_relative_eq!(b.chi2_bound, 0.0);
        assert_relative_eq!(b.ess_floor, 1.0);

        let b = theory_bounds(2.0, 0.5, 100);
        assert_relative_eq!(b.rel_var_bound, 0.03, epsilon = 1e-12);
    }

    #[test]
    fn bounds_monotone_in_lambda_and_n() {
        let mut prev = f64::INFINITY;
        for lambda in [0.1, 0.3, 0.5, 1.0] {
            let b = theory_bounds(2.0, lambda, 100);
            assert!(b.rel_var_bound < prev);
            prev = b.rel_var_bound;
        }
        let b1 = theory_bounds(2.0, 0.5, 100);
        let b2 = theory_bounds(2.0, 0.5, 200);
        assert!(b2.rel_var_bound < b1.rel_var_bound);
    }
}
