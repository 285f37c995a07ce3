//! Occlusion-sweep audit: filtering diagnostics and calibration per
//! (task, method, occlusion, seed) cell.

use super::csvio::{aggregate_csv, emit_plotdata, rows_csv, write_text, ResultRow};
use super::{Method, RunConfig};
use crate::error::Result;
use crate::filter::{
    filter_step, init_ensemble, replicate_zhat, DefensiveConfig, GaussianObservation,
    HybridTransitionLaw, LambdaPolicy, ProposalConfig, StepDiagnostics,
};
use crate::metrics::{calibration, interval_calibration_pairs};
use crate::rngutil::derive_rng;
use crate::systems::{
    corrupt, default_actions, default_initial_state, make_system, occlude, simulate,
    CorruptionConfig, HybridSystemSpec, ObservationSequence, SystemName, Trajectory,
};
use crate::util::{mean, sample_var};
use nalgebra::DVector;
use rayon::prelude::*;
use std::path::PathBuf;

/// Effective filter configuration for a method; `single_mode` removes the
/// hybrid structure (the guards) from the model the filter uses.
pub(crate) fn method_filter_cfg(
    cfg: &RunConfig,
    method: Method,
    mode_count: usize,
) -> (DefensiveConfig, bool) {
    let dropout: Vec<f64> = (0..mode_count)
        .map(|s| if s == 0 { 1.0 } else { cfg.proposal_dropout })
        .collect();
    let base = DefensiveConfig {
        n_particles: cfg.n_particles,
        tau: cfg.tau,
        lambda_fb: cfg.lambda_fb,
        resample_threshold: cfg.resample_threshold,
        rho_inflation: 1.05,
        noise_floor: cfg.noise_floor,
        mode_leak: cfg.mode_leak,
        obs_noise: cfg.filter_obs_noise,
        init_spread: 0.02,
        proposal: ProposalConfig {
            mode_dropout: dropout,
            sharpen: cfg.proposal_sharpen,
            pred_var_inflation: cfg.proposal_var_inflation,
        },
        policy: LambdaPolicy::Certified,
    };
    match method {
        Method::FullAdaptive => (base, false),
        Method::Conservative => (
            DefensiveConfig {
                policy: LambdaPolicy::Fixed(cfg.lambda_conservative),
                ..base
            },
            false,
        ),
        Method::Lambda0 => (
            DefensiveConfig {
                policy: LambdaPolicy::Zero,
                ..base
            },
            false,
        ),
        Method::SmoothLatent => (
            DefensiveConfig {
                policy: LambdaPolicy::Zero,
                mode_leak: 0.0,
                proposal: ProposalConfig {
                    mode_dropout: Vec::new(),
                    sharpen: cfg.proposal_sharpen,
                    pred_var_inflation: cfg.proposal_var_inflation,
                },
                ..base
            },
            true,
        ),
        other => panic!("{} is not a filtering method", other.as_str()),
    }
}

/// The model spec a method filters with; the smooth baseline drops guards so
/// its latent state never switches mode.
pub(crate) fn method_model(spec: &HybridSystemSpec, single_mode: bool) -> HybridSystemSpec {
    if !single_mode {
        return spec.clone();
    }
    let mut out = spec.clone();
    for g in &mut out.guards {
        g.clear();
    }
    out
}

/// Per-cell filtering metrics.
pub(crate) struct CellMetrics {
    pub ess_n: f64,
    pub rel_wvar: f64,
    pub emp_rel_var: f64,
    pub nll: f64,
    pub ece: f64,
    pub cov90: f64,
    pub mode_posteriors: Vec<Vec<f64>>,
    pub failed: bool,
}

/// Simulates the method-independent data side of a cell: trajectory plus
/// corrupted, occluded observations. All methods in a cell see identical
/// data because the derivation key carries no method component.
pub(crate) fn simulate_cell_data(
    cfg: &RunConfig,
    system: SystemName,
    occlusion: f64,
    data_keys: &[&str],
) -> Result<(Trajectory, ObservationSequence)> {
    let spec = make_system(system);
    let mut data_rng = derive_rng(cfg.root_seed, &[data_keys, &["data"]].concat());
    let (z0, s0) = default_initial_state(system);
    let actions = default_actions(system, cfg.steps, &mut data_rng);
    use rand::Rng;
    let sim_seed: u64 = data_rng.random();
    let traj = simulate(&spec, &z0, s0, &actions, cfg.steps, sim_seed)?;

    let observed = if cfg.hide_velocities {
        spec.position_coords.clone()
    } else {
        (0..spec.dim).collect()
    };
    let corr = CorruptionConfig {
        observed_coords: observed,
        sigma_obs: cfg.sigma_obs,
        sigma_der: cfg.sigma_der,
        missing_rate: cfg.missing_rate,
        mode_flip_prob: cfg.mode_flip_prob,
        mode_count: spec.mode_count,
        obs_stride: cfg.obs_stride,
    };
    let corrupt_seed: u64 = data_rng.random();
    let occlude_seed: u64 = data_rng.random();
    let obs = occlude(&corrupt(&traj, &corr, corrupt_seed), occlusion, occlude_seed);
    Ok((traj, obs))
}

/// Runs one method's filter on already-simulated cell data.
pub(crate) fn filter_on_data(
    cfg: &RunConfig,
    system: SystemName,
    method: Method,
    traj: &Trajectory,
    obs: &ObservationSequence,
    filter_keys: &[&str],
    collect_posteriors: bool,
) -> Result<CellMetrics> {
    let spec = make_system(system);
    let mut filter_rng = derive_rng(cfg.root_seed, &[filter_keys, &["filter"]].concat());
    let (fcfg, single_mode) = method_filter_cfg(cfg, method, spec.mode_count);
    let model = method_model(&spec, single_mode);
    let z0 = traj.states[0].clone();
    let s0 = traj.modes[0];
    // actions as recorded (the padded final row is never consumed)
    let actions: Vec<DVector<f64>> = traj.actions[..traj.len() - 1].to_vec();
    filter_cell_inner(
        cfg,
        &model,
        obs,
        &actions,
        &z0,
        s0,
        &fcfg,
        &mut filter_rng,
        collect_posteriors,
    )
}

/// Runs one filter cell end to end: simulate, corrupt, occlude, filter with
/// periodic normalizer replication, and summarize.
pub(crate) fn run_filter_cell(
    cfg: &RunConfig,
    system: SystemName,
    method: Method,
    occlusion: f64,
    seed: u64,
    collect_posteriors: bool,
) -> Result<CellMetrics> {
    let occ_key = format!("{occlusion:.4}");
    let seed_key = format!("{seed}");
    let data_keys = [
        cfg.experiment.as_str(),
        system.as_str(),
        occ_key.as_str(),
        seed_key.as_str(),
    ];
    let (traj, obs) = simulate_cell_data(cfg, system, occlusion, &data_keys)?;
    let filter_keys = [
        cfg.experiment.as_str(),
        system.as_str(),
        method.as_str(),
        occ_key.as_str(),
        seed_key.as_str(),
    ];
    filter_on_data(cfg, system, method, &traj, &obs, &filter_keys, collect_posteriors)
}

#[allow(clippy::too_many_arguments)]
fn filter_cell_inner(
    cfg: &RunConfig,
    model: &HybridSystemSpec,
    obs: &ObservationSequence,
    actions: &[DVector<f64>],
    z0: &DVector<f64>,
    s0: usize,
    fcfg: &DefensiveConfig,
    rng: &mut rand_chacha::ChaCha12Rng,
    collect_posteriors: bool,
) -> Result<CellMetrics> {
    let law = HybridTransitionLaw::new(model, fcfg.mode_leak.max(1e-12), fcfg.noise_floor);
    let obs_model = GaussianObservation::new(obs.observed_coords.clone(), fcfg.obs_noise);
    let mut ensemble = init_ensemble(z0, s0, fcfg.n_particles, fcfg.init_spread, rng);

    let mut rep_rel_vars: Vec<f64> = Vec::new();
    let mut pred_means: Vec<f64> = Vec::new();
    let mut pred_vars: Vec<f64> = Vec::new();
    let mut realized: Vec<f64> = Vec::new();
    let mut log_zhats: Vec<f64> = Vec::new();
    let mut mode_posteriors = Vec::new();
    let mut failed = false;

    let steps = actions.len().min(obs.len().saturating_sub(1));
    let mut observed_count = 0usize;
    for t in 0..steps {
        let o_next = obs.observation(t + 1);
        let measure = cfg.zhat_replicates > 1
            && o_next.is_some()
            && observed_count % cfg.zhat_every == 0;
        if o_next.is_some() {
            observed_count += 1;
        }
        let pre = measure.then(|| ensemble.clone());
        match filter_step(
            &mut ensemble,
            actions[t].as_slice(),
            o_next,
            fcfg,
            &law,
            &obs_model,
            rng,
        ) {
            Ok(()) => {}
            Err(crate::error::CoreError::AllZeroWeights { .. }) => {
                // flagged, recorded, and the cell continues from a reset
                // weight state rather than being dropped silently
                failed = true;
                let n = ensemble.len();
                ensemble.log_weights = vec![-(n as f64).ln(); n];
                continue;
            }
            Err(e) => return Err(e),
        }
        let diag: &StepDiagnostics = ensemble.history.last().unwrap();
        if let (Some(pre), true) = (pre, o_next.is_some()) {
            let mut reps = replicate_zhat(
                &pre,
                actions[t].as_slice(),
                o_next,
                fcfg,
                &law,
                &obs_model,
                diag.lambda,
                cfg.zhat_replicates - 1,
                rng,
            );
            reps.push(diag.zhat);
            let m = mean(&reps);
            if m > 0.0 {
                rep_rel_vars.push(sample_var(&reps) / (m * m));
            }
        }
        if let Some(o) = o_next {
            log_zhats.push(diag.log_zhat);
            for (k, _) in obs.observed_coords.iter().enumerate() {
                pred_means.push(diag.predictive_mean[k]);
                pred_vars.push(diag.predictive_var[k]);
                realized.push(o[k]);
            }
        }
        if collect_posteriors {
            mode_posteriors.push(diag.mode_posterior.clone());
        }
    }

    let ess: Vec<f64> = ensemble.history.iter().map(|d| d.ess_over_n).collect();
    let wvar: Vec<f64> = ensemble.history.iter().map(|d| d.rel_weight_var).collect();
    let nll = if log_zhats.is_empty() {
        f64::NAN
    } else {
        -mean(&log_zhats)
    };
    let (ece_v, cov90) = if realized.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let pairs = interval_calibration_pairs(&pred_means, &pred_vars, &realized);
        let rep = calibration(&pred_means, &pred_vars, &realized, &pairs)?;
        (rep.ece, rep.cov90)
    };
    Ok(CellMetrics {
        ess_n: mean(&ess),
        rel_wvar: mean(&wvar),
        emp_rel_var: if rep_rel_vars.is_empty() {
            f64::NAN
        } else {
            mean(&rep_rel_vars)
        },
        nll,
        ece: ece_v,
        cov90,
        mode_posteriors,
        failed,
    })
}

/// The occlusion sweep. Writes per-cell rows, aggregates, the plot-data long
/// format, and the config echo; returns the written paths.
pub fn run_exp1(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for system_name in &cfg.systems {
        let system = SystemName::parse(system_name).expect("validated");
        for &method in &cfg.methods {
            for &occ in &cfg.occlusions {
                for seed in 0..cfg.seeds {
                    cells.push((system, method, occ, seed));
                }
            }
        }
    }
    let rows: Vec<ResultRow> = cfg.with_pool(|| {
        cells
            .par_iter()
            .map(|&(system, method, occ, seed)| {
                let cell = run_filter_cell(cfg, system, method, occ, seed, false);
                let metrics = match cell {
                    Ok(m) => vec![
                        ("ess_n".to_string(), Some(m.ess_n)),
                        ("rel_wvar".to_string(), Some(m.rel_wvar)),
                        ("emp_rel_var".to_string(), nan_to_none(m.emp_rel_var)),
                        ("nll".to_string(), nan_to_none(m.nll)),
                        ("ece".to_string(), nan_to_none(m.ece)),
                        ("cov90".to_string(), nan_to_none(m.cov90)),
                        ("failed".to_string(), Some(f64::from(u8::from(m.failed)))),
                    ],
                    Err(_) => vec![
                        ("ess_n".to_string(), None),
                        ("rel_wvar".to_string(), None),
                        ("emp_rel_var".to_string(), None),
                        ("nll".to_string(), None),
                        ("ece".to_string(), None),
                        ("cov90".to_string(), None),
                        ("failed".to_string(), Some(1.0)),
                    ],
                };
                ResultRow {
                    experiment: "exp1".into(),
                    task: system.as_str().into(),
                    method: method.as_str().into(),
                    condition: format!("{occ:.4}"),
                    seed,
                    metrics,
                }
            })
            .collect()
    });

    let dir = std::path::Path::new(&cfg.out_dir);
    let mut written = Vec::new();
    written.push(write_text(dir, "exp1_cells.csv", &rows_csv(&rows))?);
    written.push(write_text(dir, "exp1_aggregate.csv", &aggregate_csv(&rows))?);
    written.push(write_text(dir, "exp1_plotdata.csv", &emit_plotdata(&rows))?);
    written.push(write_text(dir, "exp1_config.toml", &cfg.echo_toml())?);
    Ok(written)
}

fn nan_to_none(v: f64) -> Option<f64> {
    if v.is_nan() {
        None
    } else {
        Some(v)
    }
}
