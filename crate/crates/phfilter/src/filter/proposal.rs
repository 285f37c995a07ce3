//! Observation-adaptive base proposal.
//!
//! A Gaussian mixture over modes built from the carrier: per-mode means are
//! pulled toward the observation by precision weighting on the observed
//! coordinates, widths shrink by a sharpening factor, and a mode-dropout
//! knob deletes mass from selected branches to induce controlled support
//! mismatch.

use super::mixture::{Density, HybridSample};
use super::transition::CarrierAt;
use crate::util::normal_logpdf;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProposalConfig {
    /// Per-mode mass multipliers in [0, 1]; a zero deletes the branch.
    /// Empty means no dropout.
    pub mode_dropout: Vec<f64>,
    /// Width shrink factor in (0, 1]; smaller is sharper.
    pub sharpen: f64,
    /// Inflation (>= 1) of the predicted variance used in the
    /// precision-weighted blend: larger values trust the observation more,
    /// mimicking an observation-adaptive amortized proposal.
    pub pred_var_inflation: f64,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            mode_dropout: Vec::new(),
            sharpen: 1.0,
            pred_var_inflation: 1.0,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.sharpen > 0.0 && self.sharpen <= 1.0) {
            return Err("sharpen must lie in (0, 1]".into());
        }
        if !self.mode_dropout.is_empty() && self.mode_dropout.iter().all(|&d| d <= 0.0) {
            return Err("mode_dropout would delete every mode".into());
        }
        if self.mode_dropout.iter().any(|&d| !(0.0..=1.0).contains(&d)) {
            return Err("mode_dropout entries must lie in [0, 1]".into());
        }
        if self.pred_var_inflation < 1.0 {
            return Err("pred_var_inflation must be >= 1".into());
        }
        Ok(())
    }
}

/// The proposal conditioned on one ancestor, derived from its carrier.
#[derive(Clone, Debug)]
pub struct ObservationProposal {
    pub mode_probs: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub stds: Vec<Vec<f64>>,
}

impl ObservationProposal {
    /// Builds the proposal from the ancestor's carrier, the observation (if
    /// any), and the proposal knobs.
    pub fn from_carrier(
        carrier: &CarrierAt<'_>,
        observation: Option<(&DVector<f64>, &[usize], f64)>,
        cfg: &ProposalConfig,
    ) -> Self {
        let m = carrier.mode_count();
        let mut mode_probs: Vec<f64> = (0..m)
            .map(|s| {
                let keep = cfg.mode_dropout.get(s).copied().unwrap_or(1.0);
                carrier.mode_probs[s] * keep
            })
            .collect();
        let total: f64 = mode_probs.iter().sum();
        if total > 0.0 {
            for p in &mut mode_probs {
                *p /= total;
            }
        } else {
            // dropout removed everything it could; keep the carrier masses
            mode_probs.copy_from_slice(&carrier.mode_probs);
        }

        let mut means = Vec::with_capacity(m);
        let mut stds = Vec::with_capacity(m);
        for s in 0..m {
            let mut mean = carrier.means[s].clone();
            let mut std: Vec<f64> = carrier.std(s).to_vec();
            if let Some((obs, coords, sigma_obs)) = observation {
                for (k, &c) in coords.iter().enumerate() {
                    let v_pred = std[c] * std[c] * cfg.pred_var_inflation;
                    let v_obs = sigma_obs * sigma_obs;
                    let prec = 1.0 / v_pred + 1.0 / v_obs;
                    mean[c] = (mean[c] / v_pred + obs[k] / v_obs) / prec;
                    std[c] = (1.0 / prec).sqrt();
                }
            }
            for sd in &mut std {
                *sd *= cfg.sharpen;
            }
            means.push(mean);
            stds.push(std);
        }
        Self {
            mode_probs,
            means,
            stds,
        }
    }
}

impl Density for ObservationProposal {
    fn log_density(&self, x: &HybridSample) -> f64 {
        let (s, z) = x;
        let ps = self.mode_probs[*s];
        if ps <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let mut out = ps.ln();
        for i in 0..z.len() {
            out += normal_logpdf(z[i], self.means[*s][i], self.stds[*s][i]);
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
        let std = &self.stds[mode];
        let z = DVector::from_iterator(
            mean.len(),
            (0..mean.len()).map(|i| mean[i] + std[i] * rng.sample::<f64, _>(StandardNormal)),
        );
        (mode, z)
    }
}
