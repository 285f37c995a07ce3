//! Support-safe particle filtering for hybrid port-Hamiltonian systems.
//!
//! The crate is organized around the pipeline it implements:
//!
//! - [`systems`] defines four known-equation hybrid port-Hamiltonian systems,
//!   simulates them with guard/reset handling, and applies the observation
//!   corruption and occlusion pipelines.
//! - [`filter`] implements the defensive-mixture filtering step: the
//!   pre-sampling support-mass budget, mixture sampling, importance weighting
//!   with the realized mixture, diagnostics, and systematic resampling.
//! - [`modes`] accumulates clamped-mode evidence over constant-mode segments
//!   and evaluates the matching concentration bounds.
//! - [`proxy`] builds deterministic kinematic proxy labels used as the
//!   segmentation evaluation target.
//! - [`metrics`] holds segmentation metrics (permutation-matched F1, ARI,
//!   change-point F1, segment purity) and filtering calibration metrics.
//! - [`sparse`] recovers sparse per-mode Hamiltonian coefficients by Lasso
//!   regression over a fixed library, with penalty selection, restricted
//!   curvature estimation, and oracle-bound checks.
//! - [`certificates`] evaluates dissipation/Gronwall energy bounds, Pinsker
//!   transfer, chance-constraint margins, and a simulation diagnostic.
//! - [`harness`] drives the experiment sweeps, seed derivation, and CSV
//!   emission behind the CLI.

pub mod basis;
pub mod certificates;
pub mod error;
pub mod filter;
pub mod harness;
pub mod metrics;
pub mod modes;
pub mod proxy;
pub mod rngutil;
pub mod sparse;
pub mod systems;
pub mod util;

pub use error::CoreError;
