//! Small analytic distributions used by the bound-validation suites and the
//! Python bindings' smoke checks. They implement [`Density`] so every generic
//! mixture operation runs on them unchanged.

use super::mixture::{Density, HybridSample};
use crate::util::normal_logpdf;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// One-dimensional Gaussian over the continuous state, mode fixed at 0.
#[derive(Clone, Copy, Debug)]
pub struct GaussianToy {
    pub mean: f64,
    pub std: f64,
}

impl GaussianToy {
    pub fn new(mean: f64, std: f64) -> Self {
        assert!(std > 0.0);
        Self { mean, std }
    }
}

impl Density for GaussianToy {
    fn log_density(&self, x: &HybridSample) -> f64 {
        normal_logpdf(x.1[0], self.mean, self.std)
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> HybridSample {
        let z: f64 = rng.sample(StandardNormal);
        (0, DVector::from_column_slice(&[self.mean + self.std * z]))
    }
}

/// Finite distribution over modes; the continuous state is empty.
#[derive(Clone, Debug)]
pub struct DiscreteToy {
    pub probs: Vec<f64>,
}

impl DiscreteToy {
    pub fn new(probs: Vec<f64>) -> Self {
        let total: f64 = probs.iter().sum();
        assert!(total > 0.0 && probs.iter().all(|&p| p >= 0.0));
        Self {
            probs: probs.iter().map(|p| p / total).collect(),
        }
    }
}

impl Density for DiscreteToy {
    fn log_density(&self, x: &HybridSample) -> f64 {
        let p = self.probs[x.0];
        if p > 0.0 {
            p.ln()
        } else {
            f64::NEG_INFINITY
        }
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> HybridSample {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (s, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return (s, DVector::zeros(0));
            }
        }
        (self.probs.len() - 1, DVector::zeros(0))
    }
}
