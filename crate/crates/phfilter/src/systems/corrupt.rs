//! Observation corruption and occlusion. Both are pure functions of the
//! trajectory, the config, and the seed; the trajectory is never modified.

use super::{ObservationSequence, Trajectory};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;

/// Parameters of the corruption pipeline.
#[derive(Clone, Debug)]
pub struct CorruptionConfig {
    /// State coordinates that remain visible (e.g. positions only when
    /// velocities are hidden).
    pub observed_coords: Vec<usize>,
    /// Gaussian observation noise std.
    pub sigma_obs: f64,
    /// Extra noise std on the derivative channel.
    pub sigma_der: f64,
    /// Per-step probability of dropping the observation entirely.
    pub missing_rate: f64,
    /// Probability of flipping a provided mode label to a random other mode.
    pub mode_flip_prob: f64,
    /// Number of modes, needed for label flips.
    pub mode_count: usize,
    /// Sensor frame stride: observations exist only every `obs_stride`
    /// steps; other steps are missing. 1 keeps every step.
    pub obs_stride: usize,
}

impl CorruptionConfig {
    /// Identity corruption: everything visible, no noise, nothing missing.
    pub fn clean(dim: usize, mode_count: usize) -> Self {
        Self {
            observed_coords: (0..dim).collect(),
            sigma_obs: 0.0,
            sigma_der: 0.0,
            missing_rate: 0.0,
            mode_flip_prob: 0.0,
            mode_count,
            obs_stride: 1,
        }
    }
}

/// Applies noise, per-step missingness, hidden coordinates, label flips, and
/// the noisy derivative channel.
pub fn corrupt(traj: &Trajectory, cfg: &CorruptionConfig, seed: u64) -> ObservationSequence {
    assert!(cfg.sigma_obs >= 0.0 && cfg.sigma_der >= 0.0);
    assert!((0.0..1.0).contains(&cfg.missing_rate));
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = traj.len();
    let r = cfg.observed_coords.len();

    let mut obs = Vec::with_capacity(n);
    let mut missing = Vec::with_capacity(n);
    let mut derivs = Vec::with_capacity(n);
    let mut noisy_modes = Vec::with_capacity(n);

    let stride = cfg.obs_stride.max(1);
    for t in 0..n {
        let drop = rng.random::<f64>() < cfg.missing_rate || t % stride != 0;
        missing.push(drop);
        let mut o = DVector::zeros(r);
        let mut dchan = DVector::zeros(r);
        for (k, &c) in cfg.observed_coords.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            o[k] = traj.states[t][c] + cfg.sigma_obs * noise;
            let dnoise: f64 = rng.sample(StandardNormal);
            dchan[k] = traj.derivs[t][c] + cfg.sigma_der * dnoise;
        }
        if drop {
            obs.push(None);
            derivs.push(None);
        } else {
            obs.push(Some(o));
            derivs.push(Some(dchan));
        }
        let true_mode = traj.modes[t];
        let flipped = if cfg.mode_count > 1 && rng.random::<f64>() < cfg.mode_flip_prob {
            // uniform over the other modes
            let shift = 1 + rng.random_range(0..cfg.mode_count - 1);
            (true_mode + shift) % cfg.mode_count
        } else {
            true_mode
        };
        noisy_modes.push(flipped);
    }

    ObservationSequence {
        dt: traj.dt,
        times: traj.times.clone(),
        observed_coords: cfg.observed_coords.clone(),
        obs,
        missing,
        occluded: vec![false; n],
        noisy_modes,
        derivs,
        sigma_obs: cfg.sigma_obs,
        sigma_der: cfg.sigma_der,
        mode_flip_prob: cfg.mode_flip_prob,
    }
}

/// Marks an i.i.d. Bernoulli(rate) subset of timesteps as fully unobserved.
/// Composes with existing missingness and occlusion.
pub fn occlude(obs: &ObservationSequence, rate: f64, seed: u64) -> ObservationSequence {
    assert!((0.0..1.0).contains(&rate), "occlusion rate in [0,1)");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = obs.clone();
    for t in 0..out.len() {
        if rng.random::<f64>() < rate {
            out.occluded[t] = true;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::presets::{default_actions, default_initial_state};
    use crate::systems::{make_system, simulate, SystemName};

    fn puck_traj(steps: usize) -> Trajectory {
        let spec = make_system(SystemName::Puck);
        let (z0, s0) = default_initial_state(SystemName::Puck);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let acts = default_actions(SystemName::Puck, steps, &mut rng);
        simulate(&spec, &z0, s0, &acts, steps, 3).unwrap()
    }

    #[test]
    fn identity_corruption_reproduces_states() {
        let traj = puck_traj(500);
        let cfg = CorruptionConfig::clean(2, 2);
        let obs = corrupt(&traj, &cfg, 7);
        for t in 0..obs.len() {
            let o = obs.observation(t).unwrap();
            assert_eq!(o.as_slice(), traj.states[t].as_slice());
            assert_eq!(obs.noisy_modes[t], traj.modes[t]);
        }
    }

    #[test]
    fn missing_fraction_binomial() {
        let traj = puck_traj(10_000);
        let r = 0.3;
        let cfg = CorruptionConfig {
            missing_rate: r,
            ..CorruptionConfig::clean(2, 2)
        };
        let obs = corrupt(&traj, &cfg, 11);
        let frac = obs.missing.iter().filter(|&&m| m).count() as f64 / obs.len() as f64;
        let se = (r * (1.0 - r) / obs.len() as f64).sqrt();
        assert!((frac - r).abs() < 3.0 * se, "{frac} vs {r}");
    }

    #[test]
    fn mode_flip_fraction_binomial() {
        let traj = puck_traj(10_000);
        let eps = 0.05;
        let cfg = CorruptionConfig {
            mode_flip_prob: eps,
            ..CorruptionConfig::clean(2, 2)
        };
        let obs = corrupt(&traj, &cfg, 13);
        let flips = obs
            .noisy_modes
            .iter()
            .zip(&traj.modes)
            .filter(|(a, b)| a != b)
            .count() as f64;
        let frac = flips / obs.len() as f64;
        let se = (eps * (1.0 - eps) / obs.len() as f64).sqrt();
        assert!((frac - eps).abs() < 3.0 * se, "{frac} vs {eps}");
    }

    #[test]
    fn occlusion_rate_and_composition() {
        let traj = puck_traj(10_000);
        let cfg = CorruptionConfig::clean(2, 2);
        let obs = corrupt(&traj, &cfg, 17);

        let occ0 = occlude(&obs, 0.0, 19);
        assert_eq!(occ0.unobserved_fraction(), 0.0);

        let occ9 = occlude(&obs, 0.9, 19);
        assert!((occ9.unobserved_fraction() - 0.9).abs() < 0.01);

        // two passes at 0.25 compose to about 1 - 0.75^2
        let once = occlude(&obs, 0.25, 23);
        let twice = occlude(&once, 0.25, 29);
        let expect = 1.0 - 0.75f64 * 0.75;
        let se = (expect * (1.0 - expect) / obs.len() as f64).sqrt();
        assert!((twice.unobserved_fraction() - expect).abs() < 4.0 * se);
    }

    #[test]
    fn corruption_leaves_trajectory_untouched() {
        let traj = puck_traj(200);
        let before: Vec<Vec<f64>> = traj.states.iter().map(|z| z.as_slice().to_vec()).collect();
        let cfg = CorruptionConfig {
            sigma_obs: 0.5,
            missing_rate: 0.4,
            ..CorruptionConfig::clean(2, 2)
        };
        let _ = corrupt(&traj, &cfg, 31);
        let _ = occlude(&corrupt(&traj, &cfg, 31), 0.5, 37);
        let after: Vec<Vec<f64>> = traj.states.iter().map(|z| z.as_slice().to_vec()).collect();
        assert_eq!(before, after);
    }
}
