//! The model's one-step transition law for hybrid systems: the feasible
//! support carrier.
//!
//! Conditioned on an ancestor particle, the carrier factorizes into a mode
//! kernel (guard-following with a uniform leak, so every mode keeps positive
//! mass) and a mode-conditioned Gaussian whose mean is the deterministic
//! one-step flow and whose covariance is the mode diffusion over one step
//! plus a variance floor.

use super::mixture::{Density, HybridSample};
use crate::systems::simulate::{fixed_mode_step, guarded_step_deterministic};
use crate::systems::HybridSystemSpec;
use crate::util::{logsumexp, normal_logpdf};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Carrier parameters shared across a filtering run.
#[derive(Clone, Debug)]
pub struct HybridTransitionLaw<'a> {
    pub spec: &'a HybridSystemSpec,
    /// Mass spread uniformly over all modes by the mode kernel.
    pub mode_leak: f64,
    /// Variance floor added to each coordinate of the transition covariance.
    pub noise_floor: f64,
    /// Per-mode transition stds (sqrt of sigma_ii * dt + floor).
    stds: Vec<Vec<f64>>,
}

impl<'a> HybridTransitionLaw<'a> {
    pub fn new(spec: &'a HybridSystemSpec, mode_leak: f64, noise_floor: f64) -> Self {
        assert!((0.0..=1.0).contains(&mode_leak));
        assert!(noise_floor > 0.0, "transition covariance needs a floor");
        let stds = spec
            .modes
            .iter()
            .map(|law| {
                (0..spec.dim)
                    .map(|i| (law.sigma[(i, i)] * spec.dt + noise_floor).sqrt())
                    .collect()
            })
            .collect();
        Self {
            spec,
            mode_leak,
            noise_floor,
            stds,
        }
    }

    /// Row-stochastic mode kernel and per-mode conditional means at one
    /// ancestor.
    pub fn at(&self, ancestor: &HybridSample, action: &[f64]) -> CarrierAt<'_> {
        let m = self.spec.mode_count;
        let (z_next, mode_next) = guarded_step_deterministic(self.spec, &ancestor.1, ancestor.0, action);
        let mut mode_probs = vec![self.mode_leak / m as f64; m];
        mode_probs[mode_next] += 1.0 - self.mode_leak;
        let means: Vec<DVector<f64>> = (0..m)
            .map(|s| {
                if s == mode_next {
                    z_next.clone()
                } else {
                    // forced into mode s: apply the matching guard reset if
                    // one leads there, then flow one step in that mode
                    let mut z = ancestor.1.clone();
                    if let Some(g) = self.spec.guards[ancestor.0]
                        .iter()
                        .find(|g| g.target_mode == s)
                    {
                        g.reset.apply(&mut z);
                    }
                    fixed_mode_step(self.spec, &z, s, action)
                }
            })
            .collect();
        CarrierAt {
            law: self,
            mode_probs,
            means,
        }
    }
}

/// The carrier conditioned on one ancestor.
#[derive(Clone, Debug)]
pub struct CarrierAt<'a> {
    law: &'a HybridTransitionLaw<'a>,
    pub mode_probs: Vec<f64>,
    pub means: Vec<DVector<f64>>,
}

impl CarrierAt<'_> {
    pub fn mode_count(&self) -> usize {
        self.mode_probs.len()
    }

    pub fn std(&self, mode: usize) -> &[f64] {
        &self.law.stds[mode]
    }

    /// Gaussian moments of `g(x) = N(o; obs coords of z, sigma_obs)` under
    /// this carrier, in log space: (log E[g], log E[g^2]).
    ///
    /// Both are products of one-dimensional Gaussian integrals, so the
    /// certificate is exact up to rounding.
    pub fn log_g_moments(&self, obs: &DVector<f64>, coords: &[usize], sigma_obs: f64) -> (f64, f64) {
        let mut log_m1 = Vec::with_capacity(self.mode_probs.len());
        let mut log_m2 = Vec::with_capacity(self.mode_probs.len());
        for (s, &ps) in self.mode_probs.iter().enumerate() {
            if ps <= 0.0 {
                continue;
            }
            let mut l1 = ps.ln();
            let mut l2 = ps.ln();
            for (k, &c) in coords.iter().enumerate() {
                let mu = self.means[s][c];
                let v = self.law.stds[s][c] * self.law.stds[s][c];
                let s2 = sigma_obs * sigma_obs;
                // E[N(o; z, s)] for z ~ N(mu, v) is N(o; mu, sqrt(v + s^2))
                l1 += normal_logpdf(obs[k], mu, (v + s2).sqrt());
                // E[N(o; z, s)^2] = N(o; mu, sqrt(v + s^2/2)) / (2 s sqrt(pi))
                l2 += normal_logpdf(obs[k], mu, (v + 0.5 * s2).sqrt())
                    - (2.0 * sigma_obs * std::f64::consts::PI.sqrt()).ln();
            }
            log_m1.push(l1);
            log_m2.push(l2);
        }
        (logsumexp(&log_m1), logsumexp(&log_m2))
    }
}

impl Density for CarrierAt<'_> {
    fn log_density(&self, x: &HybridSample) -> f64 {
        let (s, z) = x;
        let ps = self.mode_probs[*s];
        if ps <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut out = ps.ln();
        let mean = &self.means[*s];
        let std = &self.law.stds[*s];
        for i in 0..z.len() {
            out += normal_logpdf(z[i], mean[i], std[i]);
        }
        out
    }

    fn sample(&self, rng: &mut ChaCha12Rng) -> HybridSample {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut mode = self.mode_probs.len() - 1;
        for (s, &p) in self.mode_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                mode = s;
                break;
            }
        }
        let mean = &self.means[mode];
        let std = &self.law.stds[mode];
        let z = DVector::from_iterator(
            mean.len(),
            (0..mean.len()).map(|i| mean[i] + std[i] * rng.sample::<f64, _>(StandardNormal)),
        );
        (mode, z)
    }
}

/// Gaussian observation likelihood over a subset of coordinates.
#[derive(Clone, Debug)]
pub struct GaussianObservation {
    pub coords: Vec<usize>,
    pub sigma: f64,
}

impl GaussianObservation {
    pub fn new(coords: Vec<usize>, sigma: f64) -> Self {
        assert!(sigma > 0.0);
        Self { coords, sigma }
    }

    pub fn log_lik(&self, z: &DVector<f64>, obs: &DVector<f64>) -> f64 {
        self.coords
            .iter()
            .enumerate()
            .map(|(k, &c)| normal_logpdf(obs[k], z[c], self.sigma))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_system, SystemName};
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn mode_kernel_rows_sum_to_one_and_stay_positive() {
        let spec = make_system(SystemName::Puck);
        let law = HybridTransitionLaw::new(&spec, 0.05, 1e-5);
        let anc = (0usize, DVector::from_column_slice(&[0.5, -1.0]));
        let car = law.at(&anc, &[0.0]);
        let total: f64 = car.mode_probs.iter().sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        assert!(car.mode_probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn carrier_moment_certificate_matches_monte_carlo() {
        let spec = make_system(SystemName::Puck);
        let law = HybridTransitionLaw::new(&spec, 0.1, 1e-4);
        let anc = (0usize, DVector::from_column_slice(&[0.02, -0.5]));
        let car = law.at(&anc, &[0.0]);
        let obs = DVector::from_column_slice(&[0.015]);
        let coords = [0usize];
        let sigma = 0.05;
        let (log_m1, log_m2) = car.log_g_moments(&obs, &coords, sigma);

        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let n = 200_000;
        let (mut sum_g, mut sum_g2) = (0.0, 0.0);
        for _ in 0..n {
            let x = car.sample(&mut rng);
            let g = normal_logpdf(obs[0], x.1[0], sigma).exp();
            sum_g += g;
            sum_g2 += g * g;
        }
        let m1 = sum_g / n as f64;
        let m2 = sum_g2 / n as f64;
        assert!((log_m1.exp() - m1).abs() < 0.02 * m1, "{} vs {m1}", log_m1.exp());
        assert!((log_m2.exp() - m2).abs() < 0.05 * m2, "{} vs {m2}", log_m2.exp());
    }
}
