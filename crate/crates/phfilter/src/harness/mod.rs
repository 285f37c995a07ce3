//! Experiment drivers, run configuration, seed management, and CSV output.

mod certify;
mod csvio;
mod exp1;
mod exp2;
mod exp3;
mod hmm;

pub use certify::run_certify;
pub use csvio::{
    aggregate_csv, emit_plotdata, parse_plotdata, write_text, PlotRow, ResultRow,
};
pub use exp1::run_exp1;
pub use exp2::run_exp2;
pub use exp3::run_exp3;

/// Debug helper: simulates one cell's data.
pub fn debug_cell_data(
    cfg: &RunConfig,
    system: crate::systems::SystemName,
    keys: &[&str],
) -> crate::error::Result<(crate::systems::Trajectory, crate::systems::ObservationSequence)> {
    exp1::simulate_cell_data(cfg, system, cfg.base_occlusion, keys)
}

/// Debug helper: runs one method's filter and returns per-step posteriors.
pub fn debug_filter(
    cfg: &RunConfig,
    system: crate::systems::SystemName,
    method: Method,
    traj: &crate::systems::Trajectory,
    obs: &crate::systems::ObservationSequence,
) -> crate::error::Result<Vec<Vec<f64>>> {
    let keys = ["debug", system.as_str(), method.as_str()];
    let cell = exp1::filter_on_data(cfg, system, method, traj, obs, &keys, true)?;
    Ok(cell.mode_posteriors)
}

/// Debug helper: fits the segmentation HMM and returns (means, stds).
pub fn fit_hmm_debug(scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let h = hmm::GaussianHmm::fit(scores, 3, 20);
    (h.means.clone(), h.stds.clone())
}

use crate::error::{CoreError, Result};
use crate::proxy::ProxyConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Method identifiers shared across experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Certified adaptive mass selection.
    FullAdaptive,
    /// Fixed conservative mass.
    Conservative,
    /// No defensive mass (the no-support ablation).
    Lambda0,
    /// Single smooth latent state, no modes, no defensive mass.
    SmoothLatent,
    /// Pooled fit / constant segmentation without a discrete mode.
    NoMode,
    /// Dense fit without the sparsity penalty.
    NoSparsity,
    /// Unstructured vector-field regression without the pH form.
    NoPh,
    /// Post-hoc Gaussian HMM segmenter on the kinematic score.
    HmmBaseline,
    /// Upper-bound control: the proxy labels themselves.
    ProxyOracle,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::FullAdaptive => "full_adaptive",
            Method::Conservative => "conservative",
            Method::Lambda0 => "lambda0",
            Method::SmoothLatent => "smooth_latent",
            Method::NoMode => "no_mode",
            Method::NoSparsity => "no_sparsity",
            Method::NoPh => "no_ph",
            Method::HmmBaseline => "hmm_baseline",
            Method::ProxyOracle => "proxy_oracle",
        }
    }
}

/// Run configuration, read from a versioned TOML file. Every default is
/// echoed into the output directory for audit.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: String,
    pub systems: Vec<String>,
    pub methods: Vec<Method>,
    pub occlusions: Vec<f64>,
    pub seeds: u64,
    pub root_seed: u64,
    pub workers: usize,
    pub out_dir: String,
    /// Trajectory steps per run.
    pub steps: usize,
    // filter settings
    pub n_particles: usize,
    pub tau: f64,
    pub lambda_fb: f64,
    pub lambda_conservative: f64,
    pub resample_threshold: f64,
    pub mode_leak: f64,
    pub noise_floor: f64,
    pub filter_obs_noise: f64,
    /// Per-mode proposal dropout shared by filter methods (support knob).
    pub proposal_dropout: f64,
    pub proposal_sharpen: f64,
    pub proposal_var_inflation: f64,
    /// Replications per measured step for the empirical relative variance.
    pub zhat_replicates: usize,
    /// Measure the replicated Zhat every this many steps.
    pub zhat_every: usize,
    // corruption settings
    pub obs_stride: usize,
    pub sigma_obs: f64,
    pub sigma_der: f64,
    pub missing_rate: f64,
    pub mode_flip_prob: f64,
    /// Observe positions only (velocities hidden) when true.
    pub hide_velocities: bool,
    /// Occlusion applied in experiments without an occlusion grid.
    pub base_occlusion: f64,
    // exp2 proxy settings
    pub proxy: ProxyConfig,
    pub proxy_q1: f64,
    pub proxy_q2: f64,
    /// Validation seeds for threshold freezing (disjoint pool).
    pub validation_seeds: u64,
    pub changepoint_tol: usize,
    // exp3 settings
    pub structure_perturbation: f64,
    pub penalty_delta: f64,
    pub penalty_nu: f64,
    pub label_denoise_run: usize,
    pub derivative_window: usize,
    // certify settings
    pub certify_batch: usize,
    pub certify_horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: 1,
            experiment: "exp1".into(),
            systems: vec!["puck".into()],
            methods: vec![
                Method::Conservative,
                Method::FullAdaptive,
                Method::Lambda0,
                Method::SmoothLatent,
            ],
            occlusions: vec![0.0, 0.25, 0.5, 0.75, 0.9],
            seeds: 20,
            root_seed: 17,
            workers: 0,
            out_dir: "out".into(),
            steps: 12_000,
            n_particles: 192,
            tau: 0.5,
            lambda_fb: 0.15,
            lambda_conservative: 0.4,
            resample_threshold: 0.5,
            mode_leak: 0.05,
            noise_floor: 2e-4,
            filter_obs_noise: 0.15,
            proposal_dropout: 0.0,
            proposal_sharpen: 0.35,
            proposal_var_inflation: 60.0,
            zhat_replicates: 8,
            zhat_every: 4,
            obs_stride: 25,
            sigma_obs: 0.15,
            sigma_der: 0.0,
            missing_rate: 0.0,
            mode_flip_prob: 0.0,
            hide_velocities: false,
            base_occlusion: 0.0,
            proxy: ProxyConfig::default(),
            proxy_q1: 0.6,
            proxy_q2: 0.9,
            validation_seeds: 5,
            changepoint_tol: 2,
            structure_perturbation: 0.01,
            penalty_delta: 0.1,
            penalty_nu: 0.0,
            label_denoise_run: 3,
            derivative_window: 5,
            certify_batch: 400,
            certify_horizon: 3000,
        }
    }
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CoreError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CoreError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != 1 {
            return Err(CoreError::Config(format!(
                "unsupported schema_version {}",
                self.schema_version
            )));
        }
        if self.seeds < 1 {
            return Err(CoreError::Config("seeds must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(CoreError::Config("methods must be nonempty".into()));
        }
        if self.occlusions.iter().any(|&o| !(0.0..1.0).contains(&o)) {
            return Err(CoreError::Config("occlusions must lie in [0, 1)".into()));
        }
        for s in &self.systems {
            if crate::systems::SystemName::parse(s).is_none() {
                return Err(CoreError::Config(format!("unknown system {s}")));
            }
        }
        Ok(())
    }

    /// Serialized config echo written next to every experiment's outputs.
    pub fn echo_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Installs a rayon pool honoring `workers` (0 = rayon default) and runs
    /// the closure inside it.
    pub fn with_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        if self.workers == 0 {
            f()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .expect("thread pool");
            pool.install(f)
        }
    }
}

/// Runs the experiment named in the config; returns the files written.
pub fn run_experiment(cfg: &RunConfig) -> Result<Vec<std::path::PathBuf>> {
    match cfg.experiment.as_str() {
        "exp1" => run_exp1(cfg),
        "exp2" => run_exp2(cfg),
        "exp3" => run_exp3(cfg),
        "certify" => run_certify(cfg),
        other => Err(CoreError::Config(format!("unknown experiment {other}"))),
    }
}
