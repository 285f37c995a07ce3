//! Mode-conditioned sparse Hamiltonian recovery: plug-in regression design,
//! Lasso solver, penalty selection, thresholded support recovery, restricted
//! curvature estimation, and the oracle-bound checks.

mod design;
mod kappa;
mod lasso;
mod recovery;

pub use design::{numerical_derivatives, plugin_design, reconstruct_states};
pub use kappa::estimate_kappa;
pub use lasso::{lambda_max, lasso, lasso_with_penalties, least_squares};
pub use recovery::{
    choose_penalty, column_norm_constant, oracle_check, probes_for_mode, recovery_metrics,
    threshold_support, OracleReport, RecoveryMetrics, SupportDecision,
};

use nalgebra::{DMatrix, DVector};

/// One mode-conditioned sparse fit with everything needed for the report
/// row: design, penalty, estimate, thresholded support, curvature estimate,
/// and metrics against ground truth when available.
#[derive(Clone, Debug)]
pub struct SparseFit {
    pub design: DMatrix<f64>,
    pub response: DVector<f64>,
    pub lambda: f64,
    pub estimate: DVector<f64>,
    pub support: Vec<usize>,
    pub kappa: f64,
    pub certified_threshold: bool,
    pub metrics: Option<RecoveryMetrics>,
    pub oracle: Option<OracleReport>,
}
