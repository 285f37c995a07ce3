//! The filtering step and whole-sequence runner.

use super::mixture::{
    defensive_log_density, select_lambda, summarize_log_weights, Density, HybridSample,
};
use super::proposal::ObservationProposal;
use super::transition::{GaussianObservation, HybridTransitionLaw};
use super::{DefensiveConfig, LambdaDecision, LambdaPolicy, ParticleEnsemble, StepDiagnostics};
use crate::error::{CoreError, Result};
use crate::systems::{HybridSystemSpec, ObservationSequence};
use crate::util::logsumexp;
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

/// Systematic resampling: expected offspring count of particle i is N w_i,
/// realized counts within floor/ceil of that. Weights reset to uniform.
pub fn resample(ensemble: &mut ParticleEnsemble, rng: &mut ChaCha12Rng) {
    let n = ensemble.len();
    let weights = ensemble.weights();
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut new_particles = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let target = u0 + k as f64 / n as f64;
        while cum + weights[i] <= target && i + 1 < n {
            cum += weights[i];
            i += 1;
        }
        new_particles.push(ensemble.particles[i].clone());
    }
    ensemble.particles = new_particles;
    ensemble.log_weights = vec![-(n as f64).ln(); n];
}

/// Initial particle cloud around a known start state.
pub fn init_ensemble(
    z0: &DVector<f64>,
    s0: usize,
    n: usize,
    spread: f64,
    rng: &mut ChaCha12Rng,
) -> ParticleEnsemble {
    let particles = (0..n)
        .map(|_| {
            let z = DVector::from_iterator(
                z0.len(),
                z0.iter()
                    .map(|&v| v + spread * rng.sample::<f64, _>(StandardNormal)),
            );
            (s0, z)
        })
        .collect();
    ParticleEnsemble {
        particles,
        log_weights: vec![-(n as f64).ln(); n],
        history: Vec::new(),
    }
}

/// One support-safe filtering step:
/// 1. compute the certificate and choose the mixture mass,
/// 2. sample each next particle from the realized mixture,
/// 3. weight with the same realized mixture density,
/// 4. normalize and record diagnostics,
/// 5. resample when the ESS rule triggers.
pub fn filter_step(
    ensemble: &mut ParticleEnsemble,
    action: &[f64],
    observation: Option<&DVector<f64>>,
    cfg: &DefensiveConfig,
    law: &HybridTransitionLaw<'_>,
    obs_model: &GaussianObservation,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let n = ensemble.len();
    let step_index = ensemble.history.len();
    let carriers: Vec<_> = ensemble
        .particles
        .iter()
        .map(|anc| law.at(anc, action))
        .collect();

    // 1. history-measurable certificate: the worst ancestor's exact Gaussian
    //    moment ratio, inflated
    let rho_bar = match observation {
        Some(obs) => {
            let mut worst: f64 = 1.0;
            for car in &carriers {
                let (log_m1, log_m2) = car.log_g_moments(obs, &obs_model.coords, obs_model.sigma);
                let log_rho = log_m2 - 2.0 * log_m1;
                let rho = log_rho.exp();
                if rho.is_nan() {
                    worst = f64::INFINITY;
                } else {
                    worst = worst.max(rho);
                }
            }
            worst * cfg.rho_inflation
        }
        // g is identically one: rho = 1 exactly
        None => 1.0,
    };
    let decision = match cfg.policy {
        LambdaPolicy::Certified => select_lambda(rho_bar, n, cfg.tau, cfg.lambda_fb)?,
        LambdaPolicy::Fixed(l) => {
            let lambda_min = rho_bar / (1.0 + n as f64 * cfg.tau * cfg.tau);
            LambdaDecision {
                lambda: l,
                certified: lambda_min <= l,
                lambda_min,
            }
        }
        LambdaPolicy::Zero => LambdaDecision {
            lambda: 0.0,
            certified: false,
            lambda_min: rho_bar / (1.0 + n as f64 * cfg.tau * cfg.tau),
        },
    };
    let lambda = decision.lambda;

    // 2. + 3. sample from the realized mixture per ancestor and weight with
    //    the same realized density
    let obs_view = observation.map(|o| (o, obs_model.coords.as_slice(), obs_model.sigma));
    let proposals: Vec<ObservationProposal> = carriers
        .iter()
        .map(|car| ObservationProposal::from_carrier(car, obs_view, &cfg.proposal))
        .collect();
    let (children, step_log_w) =
        draw_and_weight(&carriers, &proposals, lambda, observation, obs_model, rng);
    let log_w: Vec<f64> = step_log_w
        .iter()
        .zip(&ensemble.log_weights)
        .map(|(w, prev)| w + prev)
        .collect();

    // 4. normalize; Zhat folds in the incoming (normalized) weights so it
    //    estimates the one-step predictive likelihood
    let log_zhat = logsumexp(&log_w);
    if log_zhat == f64::NEG_INFINITY {
        return Err(CoreError::AllZeroWeights { step: step_index });
    }
    // step-weight diagnostics on exchangeable per-particle weights
    let raw_summary = summarize_log_weights(step_log_w)
        .map_err(|_| CoreError::AllZeroWeights { step: step_index })?;
    let lse = logsumexp(&log_w);
    let new_log_weights: Vec<f64> = log_w.iter().map(|lw| lw - lse).collect();
    let sum_sq: f64 = new_log_weights.iter().map(|lw| (2.0 * lw).exp()).sum();
    let ess_over_n = 1.0 / (sum_sq * n as f64);

    // predictive moments of the observed coordinates (pre-update mixture),
    // for calibration metrics
    let (predictive_mean, predictive_var) = predictive_moments(
        &carriers,
        &ensemble.log_weights,
        &obs_model.coords,
        obs_model.sigma,
    );

    ensemble.particles = children;
    ensemble.log_weights = new_log_weights;

    let mode_count = law.spec.mode_count;
    let mode_posterior = ensemble.mode_marginal(mode_count);

    // 5. ESS-triggered systematic resampling
    let resampled = ess_over_n < cfg.resample_threshold;
    if resampled {
        resample(ensemble, rng);
    }

    ensemble.history.push(StepDiagnostics {
        lambda,
        certified: decision.certified,
        rho_bar,
        ess_over_n,
        rel_weight_var: raw_summary.rel_weight_var,
        zhat: log_zhat.exp(),
        log_zhat,
        resampled,
        mode_posterior,
        predictive_mean,
        predictive_var,
    });
    Ok(())
}

/// Draws one child per ancestor from the realized mixture and returns the
/// per-particle step weights `log(g p / q_lambda)` (incoming weights not
/// included).
fn draw_and_weight(
    carriers: &[super::transition::CarrierAt<'_>],
    proposals: &[ObservationProposal],
    lambda: f64,
    observation: Option<&DVector<f64>>,
    obs_model: &GaussianObservation,
    rng: &mut ChaCha12Rng,
) -> (Vec<HybridSample>, Vec<f64>) {
    let n = carriers.len();
    let mut children = Vec::with_capacity(n);
    let mut log_w = Vec::with_capacity(n);
    for (car, proposal) in carriers.iter().zip(proposals) {
        let child = if lambda > 0.0 && rng.random::<f64>() < lambda {
            car.sample(rng)
        } else {
            proposal.sample(rng)
        };
        let log_p = car.log_density(&child);
        let log_q = if lambda == 0.0 {
            proposal.log_density(&child)
        } else {
            defensive_log_density(proposal.log_density(&child), log_p, lambda)
        };
        let log_g = match observation {
            Some(obs) => obs_model.log_lik(&child.1, obs),
            None => 0.0,
        };
        log_w.push(log_g + log_p - log_q);
        children.push(child);
    }
    (children, log_w)
}

/// Replicates the one-step normalizer estimate `k` times from the same
/// ensemble state without advancing it; used for the across-replication
/// empirical relative variance diagnostic.
#[allow(clippy::too_many_arguments)]
pub fn replicate_zhat(
    ensemble: &ParticleEnsemble,
    action: &[f64],
    observation: Option<&DVector<f64>>,
    cfg: &DefensiveConfig,
    law: &HybridTransitionLaw<'_>,
    obs_model: &GaussianObservation,
    lambda: f64,
    k: usize,
    rng: &mut ChaCha12Rng,
) -> Vec<f64> {
    let carriers: Vec<_> = ensemble
        .particles
        .iter()
        .map(|anc| law.at(anc, action))
        .collect();
    let obs_view = observation.map(|o| (o, obs_model.coords.as_slice(), obs_model.sigma));
    let proposals: Vec<ObservationProposal> = carriers
        .iter()
        .map(|car| ObservationProposal::from_carrier(car, obs_view, &cfg.proposal))
        .collect();
    (0..k)
        .map(|_| {
            let (_, step_log_w) =
                draw_and_weight(&carriers, &proposals, lambda, observation, obs_model, rng);
            let combined: Vec<f64> = step_log_w
                .iter()
                .zip(&ensemble.log_weights)
                .map(|(w, prev)| w + prev)
                .collect();
            logsumexp(&combined).exp()
        })
        .collect()
}

/// Moment-matched predictive mean/variance of the observed coordinates under
/// the weighted carrier mixture, including observation noise.
fn predictive_moments(
    carriers: &[super::transition::CarrierAt<'_>],
    log_weights: &[f64],
    coords: &[usize],
    sigma_obs: f64,
) -> (Vec<f64>, Vec<f64>) {
    let r = coords.len();
    let mut mean = vec![0.0; r];
    let mut second = vec![0.0; r];
    for (car, lw) in carriers.iter().zip(log_weights) {
        let w = lw.exp();
        for (s, &ps) in car.mode_probs.iter().enumerate() {
            for (k, &c) in coords.iter().enumerate() {
                let mu = car.means[s][c];
                let sd = car.std(s)[c];
                mean[k] += w * ps * mu;
                second[k] += w * ps * (mu * mu + sd * sd);
            }
        }
    }
    let var = (0..r)
        .map(|k| (second[k] - mean[k] * mean[k]).max(0.0) + sigma_obs * sigma_obs)
        .collect();
    (mean, var)
}

/// A full filtering pass over an observation sequence.
#[derive(Clone, Debug)]
pub struct FilterRun {
    pub history: Vec<StepDiagnostics>,
    /// Decoded per-step mode posteriors (weighted marginals).
    pub mode_posteriors: Vec<Vec<f64>>,
    /// Number of steps that carried an observation.
    pub observed_steps: usize,
}

/// Runs the filter over a corrupted/occluded observation sequence. The
/// filter sees actions and observations only; mode labels never enter.
pub fn run_filter(
    spec: &HybridSystemSpec,
    obs: &ObservationSequence,
    actions: &[DVector<f64>],
    z0: &DVector<f64>,
    s0: usize,
    cfg: &DefensiveConfig,
    rng: &mut ChaCha12Rng,
) -> Result<FilterRun> {
    cfg.validate().map_err(CoreError::Config)?;
    let law = HybridTransitionLaw::new(spec, cfg.mode_leak, cfg.noise_floor);
    let obs_model = GaussianObservation::new(obs.observed_coords.clone(), cfg.obs_noise);
    let mut ensemble = init_ensemble(z0, s0, cfg.n_particles, cfg.init_spread, rng);
    let mut mode_posteriors = Vec::new();
    let mut observed_steps = 0;

    let steps = actions.len().min(obs.len().saturating_sub(1));
    for t in 0..steps {
        // the observation attached to the state reached after this step
        let o_next = obs.observation(t + 1);
        if o_next.is_some() {
            observed_steps += 1;
        }
        filter_step(
            &mut ensemble,
            actions[t].as_slice(),
            o_next,
            cfg,
            &law,
            &obs_model,
            rng,
        )?;
        mode_posteriors.push(ensemble.history.last().unwrap().mode_posterior.clone());
    }
    Ok(FilterRun {
        history: ensemble.history,
        mode_posteriors,
        observed_steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_system, SystemName};
    use approx::assert_relative_eq;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn systematic_resampling_uniform_keeps_everyone() {
        let n = 16;
        let particles: Vec<HybridSample> = (0..n)
            .map(|i| (0usize, DVector::from_column_slice(&[i as f64])))
            .collect();
        let mut ens = ParticleEnsemble {
            particles,
            log_weights: vec![-(n as f64).ln(); n],
            history: Vec::new(),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        resample(&mut ens, &mut rng);
        let mut ids: Vec<i64> = ens.particles.iter().map(|(_, z)| z[0] as i64).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..n as i64).collect::<Vec<_>>());
    }

    #[test]
    fn systematic_resampling_point_mass() {
        let n = 12;
        let particles: Vec<HybridSample> = (0..n)
            .map(|i| (0usize, DVector::from_column_slice(&[i as f64])))
            .collect();
        let mut lw = vec![f64::NEG_INFINITY; n];
        lw[4] = 0.0;
        let mut ens = ParticleEnsemble {
            particles,
            log_weights: lw,
            history: Vec::new(),
        };
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        resample(&mut ens, &mut rng);
        assert!(ens.particles.iter().all(|(_, z)| z[0] == 4.0));
    }

    #[test]
    fn offspring_counts_within_floor_ceil() {
        // exhaustive-ish check for small N over many random weight vectors
        for n in 2..=8usize {
            for seed in 0..50u64 {
                let mut rng = ChaCha12Rng::seed_from_u64(seed);
                let raw: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
                let total: f64 = raw.iter().sum();
                let w: Vec<f64> = raw.iter().map(|x| x / total).collect();
                let particles: Vec<HybridSample> = (0..n)
                    .map(|i| (0usize, DVector::from_column_slice(&[i as f64])))
                    .collect();
                let mut ens = ParticleEnsemble {
                    particles,
                    log_weights: w.iter().map(|x| x.ln()).collect(),
                    history: Vec::new(),
                };
                resample(&mut ens, &mut rng);
                let mut counts = vec![0usize; n];
                for (_, z) in &ens.particles {
                    counts[z[0] as usize] += 1;
                }
                for i in 0..n {
                    let expect = n as f64 * w[i];
                    assert!(
                        counts[i] >= expect.floor() as usize
                            && counts[i] <= expect.ceil() as usize,
                        "n={n} seed={seed} i={i}: {} not in [{}, {}]",
                        counts[i],
                        expect.floor(),
                        expect.ceil()
                    );
                }
            }
        }
    }

    #[test]
    fn missing_observation_with_carrier_proposal_keeps_uniform_weights() {
        // Q = P (no dropout, no sharpening, no observation): weights all one
        let spec = make_system(SystemName::Puck);
        let cfg = DefensiveConfig {
            n_particles: 64,
            ..DefensiveConfig::default()
        };
        let law = HybridTransitionLaw::new(&spec, cfg.mode_leak, cfg.noise_floor);
        let obs_model = GaussianObservation::new(vec![0], cfg.obs_noise);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut ens = init_ensemble(
            &DVector::from_column_slice(&[1.0, 0.0]),
            0,
            64,
            0.01,
            &mut rng,
        );
        filter_step(&mut ens, &[0.0], None, &cfg, &law, &obs_model, &mut rng).unwrap();
        let d = ens.history.last().unwrap();
        assert_relative_eq!(d.ess_over_n, 1.0, epsilon = 1e-9);
        assert!(!d.resampled);
        assert_relative_eq!(d.zhat, 1.0, epsilon = 1e-9);
    }
}
