//! Support-safe defensive-mixture filtering.
//!
//! The step follows a fixed order: choose the mixture mass before sampling,
//! sample from the realized mixture, weight with the same realized mixture
//! density, normalize and record diagnostics, and resample when the ESS rule
//! triggers. The mass choice uses a history-measurable second-moment
//! certificate, so the relative-variance budget is certified before any
//! particle is drawn.

mod mixture;
mod proposal;
mod step;
pub mod toys;
mod transition;

pub use mixture::{
    defensive_log_density, one_step_weights, sample_defensive, select_lambda, theory_bounds,
    Defensive, Density, HybridSample, TheoryBounds, WeightSummary,
};
pub use proposal::{ObservationProposal, ProposalConfig};
pub use step::{filter_step, init_ensemble, replicate_zhat, resample, run_filter, FilterRun};
pub use transition::{CarrierAt, GaussianObservation, HybridTransitionLaw};

use serde::{Deserialize, Serialize};

/// How the mixture mass is chosen each step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum LambdaPolicy {
    /// Certified rule: the smallest mass meeting the variance budget, with a
    /// fixed fallback when the budget is infeasible.
    Certified,
    /// Fixed conservative mass.
    Fixed(f64),
    /// No defensive mass at all: sample the bare proposal and weight with
    /// p/q. The support-mismatch baseline.
    Zero,
}

/// Filter configuration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DefensiveConfig {
    /// Particle count N (>= 2).
    pub n_particles: usize,
    /// Relative-variance tolerance tau (> 0).
    pub tau: f64,
    /// Fallback mass in (0, 1] for uncertified steps.
    pub lambda_fb: f64,
    /// Resample when ESS/N falls below this.
    pub resample_threshold: f64,
    /// Inflation applied to the computed certificate.
    pub rho_inflation: f64,
    /// Variance floor added to each mode's transition covariance.
    pub noise_floor: f64,
    /// Mass the mode kernel spreads uniformly over all modes.
    pub mode_leak: f64,
    /// Observation noise std used by the likelihood.
    pub obs_noise: f64,
    /// Std of the initial particle cloud around the known start state.
    pub init_spread: f64,
    pub proposal: ProposalConfig,
    pub policy: LambdaPolicy,
}

impl Default for DefensiveConfig {
    fn default() -> Self {
        Self {
            n_particles: 256,
            tau: 0.5,
            lambda_fb: 0.2,
            resample_threshold: 0.5,
            rho_inflation: 1.05,
            noise_floor: 1e-5,
            mode_leak: 0.05,
            obs_noise: 0.1,
            init_spread: 0.02,
            proposal: ProposalConfig::default(),
            policy: LambdaPolicy::Certified,
        }
    }
}

impl DefensiveConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_particles < 2 {
            return Err("n_particles must be >= 2".into());
        }
        if self.tau <= 0.0 {
            return Err("tau must be positive".into());
        }
        if !(self.lambda_fb > 0.0 && self.lambda_fb <= 1.0) {
            return Err("lambda_fb must lie in (0, 1]".into());
        }
        if let LambdaPolicy::Fixed(l) = self.policy {
            if !(l > 0.0 && l <= 1.0) {
                return Err("fixed lambda must lie in (0, 1]".into());
            }
        }
        if self.rho_inflation < 1.0 {
            return Err("rho_inflation must be >= 1".into());
        }
        self.proposal.validate()
    }
}

/// Outcome of the pre-sampling mass selection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaDecision {
    pub lambda: f64,
    pub certified: bool,
    /// rho_bar / (1 + N tau^2), the smallest certifying mass.
    pub lambda_min: f64,
}

/// Weighted hybrid particles plus per-step history.
#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub particles: Vec<HybridSample>,
    /// Normalized log weights.
    pub log_weights: Vec<f64>,
    pub history: Vec<StepDiagnostics>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Normalized weights in linear space.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Weighted mode marginal of the current particles.
    pub fn mode_marginal(&self, mode_count: usize) -> Vec<f64> {
        let mut out = vec![0.0; mode_count];
        for ((s, _), lw) in self.particles.iter().zip(&self.log_weights) {
            out[*s] += lw.exp();
        }
        out
    }
}

/// Per-step filter diagnostics.
#[derive(Clone, Debug)]
pub struct StepDiagnostics {
    pub lambda: f64,
    pub certified: bool,
    pub rho_bar: f64,
    pub ess_over_n: f64,
    pub rel_weight_var: f64,
    pub zhat: f64,
    pub log_zhat: f64,
    pub resampled: bool,
    /// Weighted mode marginal after the step.
    pub mode_posterior: Vec<f64>,
    /// Predictive mean/var per observed coordinate, for calibration metrics.
    pub predictive_mean: Vec<f64>,
    pub predictive_var: Vec<f64>,
}

/// Diagnostics CSV: `t,lambda,certified,ess_n,rel_wvar,zhat,log_zhat`.
pub fn diagnostics_csv(history: &[StepDiagnostics], dt: f64) -> String {
    let mut s = String::from("t,lambda,certified,ess_n,rel_wvar,zhat,log_zhat\n");
    for (t, d) in history.iter().enumerate() {
        s.push_str(&format!(
            "{:.6},{:.6},{},{:.6},{:.6e},{:.6e},{:.6}\n",
            t as f64 * dt,
            d.lambda,
            u8::from(d.certified),
            d.ess_over_n,
            d.rel_weight_var,
            d.zhat,
            d.log_zhat
        ));
    }
    s
}
