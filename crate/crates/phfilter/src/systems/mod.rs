//! Hybrid port-Hamiltonian system definitions, simulation, and the
//! observation corruption/occlusion pipeline.
//!
//! A system is a fixed set of modes, each with structure matrices
//! `(J_m, R_m, G_m, Sigma_m)` and a sparse coefficient vector over a shared
//! candidate library, plus guards that move the discrete mode when a scalar
//! function of the state crosses zero and reset maps applied at the crossing.

mod corrupt;
mod presets;
pub(crate) mod simulate;

pub use corrupt::{corrupt, occlude, CorruptionConfig};
pub use presets::{default_actions, default_initial_state, make_system, SystemName};
pub use simulate::{fixed_mode_step, guarded_step_deterministic, simulate};

use crate::basis::LibrarySpec;
use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};

/// Structure matrices and true sparse coefficients for one mode.
#[derive(Clone, Debug)]
pub struct ModeLaw {
    pub name: String,
    /// Skew-symmetric interconnection, d x d.
    pub j: DMatrix<f64>,
    /// Positive semidefinite dissipation, d x d.
    pub r: DMatrix<f64>,
    /// Input map, d x q.
    pub g: DMatrix<f64>,
    /// Diffusion covariance per unit time, d x d PSD.
    pub sigma: DMatrix<f64>,
    /// True library coefficients (length p, sparse on `support`).
    pub xi: DVector<f64>,
    /// Indices of the active library terms.
    pub support: Vec<usize>,
}

/// Scalar guard condition; the guard fires when `expr(z)` crosses below zero.
#[derive(Clone, Debug)]
pub enum GuardCond {
    /// Fires when `z[coord] < threshold`.
    CoordBelow { coord: usize, threshold: f64 },
    /// Fires when `z[coord] > threshold`.
    CoordAbove { coord: usize, threshold: f64 },
    /// Fires when `|z[coord]| < threshold`.
    AbsBelow { coord: usize, threshold: f64 },
    /// Fires when `|z[coord]| > threshold`.
    AbsAbove { coord: usize, threshold: f64 },
    /// Fires when `z[a] - z[b] > threshold`.
    DiffAbove { a: usize, b: usize, threshold: f64 },
    /// Fires when `z[a] - z[b] < threshold`.
    DiffBelow { a: usize, b: usize, threshold: f64 },
}

impl GuardCond {
    /// Signed expression; negative means the guard condition holds.
    pub fn expr(&self, z: &[f64]) -> f64 {
        match *self {
            GuardCond::CoordBelow { coord, threshold } => z[coord] - threshold,
            GuardCond::CoordAbove { coord, threshold } => threshold - z[coord],
            GuardCond::AbsBelow { coord, threshold } => z[coord].abs() - threshold,
            GuardCond::AbsAbove { coord, threshold } => threshold - z[coord].abs(),
            GuardCond::DiffAbove { a, b, threshold } => threshold - (z[a] - z[b]),
            GuardCond::DiffBelow { a, b, threshold } => (z[a] - z[b]) - threshold,
        }
    }
}

/// State jump applied at a guard crossing. Every reset is additionally passed
/// through an energy projection that scales momentum coordinates down until
/// the post-switch energy does not exceed the pre-switch energy, so switches
/// are energy-nonexpansive by construction.
#[derive(Clone, Debug)]
pub enum ResetSpec {
    Identity,
    /// Multiplies one coordinate, e.g. a restitution flip `p -> -e p`.
    ScaleCoord { coord: usize, factor: f64 },
    /// Zeroes one coordinate.
    ZeroCoord { coord: usize },
    /// Re-seats a coordinate on the guard surface, absorbing the crossing
    /// overshoot left by finite event resolution.
    SnapCoord { coord: usize, value: f64 },
    /// Re-seats a coordinate onto another coordinate (contact interfaces).
    SnapCoordToCoord { coord: usize, to: usize },
}

impl ResetSpec {
    pub fn apply(&self, z: &mut DVector<f64>) {
        match *self {
            ResetSpec::Identity => {}
            ResetSpec::ScaleCoord { coord, factor } => z[coord] *= factor,
            ResetSpec::ZeroCoord { coord } => z[coord] = 0.0,
            ResetSpec::SnapCoord { coord, value } => z[coord] = value,
            ResetSpec::SnapCoordToCoord { coord, to } => z[coord] = z[to],
        }
    }
}

/// A guard edge out of one mode.
#[derive(Clone, Debug)]
pub struct GuardSpec {
    pub name: String,
    pub condition: GuardCond,
    pub target_mode: usize,
    pub reset: ResetSpec,
}

/// Reads a physical constant off a fitted coefficient vector.
#[derive(Clone, Debug)]
pub struct ConstantProbe {
    pub name: String,
    /// Mode whose coefficients carry the constant.
    pub mode: usize,
    /// Library index to read.
    pub index: usize,
    /// Transform applied to the coefficient.
    pub kind: ProbeKind,
}

#[derive(Clone, Copy, Debug)]
pub enum ProbeKind {
    /// constant = scale * xi[index]
    Scaled { scale: f64 },
    /// constant = scale / xi[index]
    Inverse { scale: f64 },
}

impl ConstantProbe {
    pub fn read(&self, xi: &[f64]) -> f64 {
        let c = xi[self.index];
        match self.kind {
            ProbeKind::Scaled { scale } => scale * c,
            ProbeKind::Inverse { scale } => {
                if c == 0.0 {
                    f64::INFINITY
                } else {
                    scale / c
                }
            }
        }
    }
}

/// Full specification of a hybrid system.
#[derive(Clone, Debug)]
pub struct HybridSystemSpec {
    pub name: String,
    pub mode_count: usize,
    /// State dimension d.
    pub dim: usize,
    /// Input dimension q.
    pub input_dim: usize,
    /// Timestep in seconds.
    pub dt: f64,
    pub library: LibrarySpec,
    pub modes: Vec<ModeLaw>,
    /// Outgoing guards per mode, checked in declaration order.
    pub guards: Vec<Vec<GuardSpec>>,
    /// Coordinates updated first in the semi-implicit step (momenta).
    pub momentum_coords: Vec<usize>,
    /// Coordinates updated with the refreshed momenta (positions).
    pub position_coords: Vec<usize>,
    /// Shared energy offset: U(s, z) = H_s(z) - energy_offset.
    pub energy_offset: f64,
    /// Maximum support size over modes.
    pub sparsity_k: usize,
    /// Named physical constants used to build the system.
    pub constants: Vec<(String, f64)>,
    /// How recovery reads those constants back off fitted coefficients.
    pub constant_probes: Vec<ConstantProbe>,
}

impl HybridSystemSpec {
    /// Mode Hamiltonian `H_s(z)`.
    pub fn hamiltonian(&self, mode: usize, z: &[f64]) -> f64 {
        self.library.hamiltonian(z, self.modes[mode].xi.as_slice())
    }

    /// Shared-offset energy `U(s, z)`; comparable across modes.
    pub fn energy(&self, mode: usize, z: &[f64]) -> f64 {
        self.hamiltonian(mode, z) - self.energy_offset
    }

    /// Deterministic drift `(J_s - R_s) grad H_s(z) + G_s a`.
    pub fn vector_field(&self, mode: usize, z: &[f64], action: &[f64]) -> DVector<f64> {
        let law = &self.modes[mode];
        let mut grad = vec![0.0; self.dim];
        self.library
            .hamiltonian_grad(z, law.xi.as_slice(), &mut grad);
        let g = DVector::from_column_slice(&grad);
        let mut out = (&law.j - &law.r) * g;
        if self.input_dim > 0 {
            out += &law.g * DVector::from_column_slice(action);
        }
        out
    }

    /// Checks the structural invariants: exact skew symmetry of J, symmetric
    /// R and Sigma with eigenvalues above -1e-10, support sizes within k,
    /// and a library of at most 12 terms.
    pub fn validate(&self) -> Result<()> {
        let p = self.library.len();
        if p > 12 {
            return Err(CoreError::DimensionMismatch(format!(
                "library has {p} > 12 terms"
            )));
        }
        for (m, law) in self.modes.iter().enumerate() {
            for i in 0..self.dim {
                for k in 0..self.dim {
                    if law.j[(i, k)] != -law.j[(k, i)] {
                        return Err(CoreError::DimensionMismatch(format!(
                            "mode {m}: J not exactly skew at ({i},{k})"
                        )));
                    }
                }
            }
            for (tag, mat) in [("R", &law.r), ("Sigma", &law.sigma)] {
                let sym_err = (mat - mat.transpose()).abs().max();
                if sym_err > 0.0 {
                    return Err(CoreError::DimensionMismatch(format!(
                        "mode {m}: {tag} not symmetric"
                    )));
                }
                let eig = mat.clone().symmetric_eigen().eigenvalues;
                if eig.iter().any(|&e| e < -1e-10) {
                    return Err(CoreError::DimensionMismatch(format!(
                        "mode {m}: {tag} has eigenvalue below -1e-10"
                    )));
                }
            }
            let nnz = law.xi.iter().filter(|&&x| x != 0.0).count();
            if nnz > self.sparsity_k || self.sparsity_k > 3 {
                return Err(CoreError::DimensionMismatch(format!(
                    "mode {m}: {nnz} active terms exceeds k = {}",
                    self.sparsity_k
                )));
            }
            let sup: Vec<usize> = law
                .xi
                .iter()
                .enumerate()
                .filter(|(_, &x)| x != 0.0)
                .map(|(i, _)| i)
                .collect();
            if sup != law.support {
                return Err(CoreError::DimensionMismatch(format!(
                    "mode {m}: declared support does not match nonzeros"
                )));
            }
        }
        Ok(())
    }

    /// Versioned plain-text manifest: dimensions, constants, per-mode support
    /// and coefficients, and guards by name.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        s.push_str("manifest_version = 1\n");
        s.push_str(&format!("system = \"{}\"\n", self.name));
        s.push_str(&format!(
            "modes = {}\ndim = {}\ninput_dim = {}\ndt = {}\n",
            self.mode_count, self.dim, self.input_dim, self.dt
        ));
        s.push_str(&format!(
            "library_size = {}\nsparsity_k = {}\n",
            self.library.len(),
            self.sparsity_k
        ));
        s.push_str("basis = [");
        for (i, b) in self.library.basis.iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            s.push_str(&format!("\"{}\"", b.name()));
        }
        s.push_str("]\n");
        for (name, value) in &self.constants {
            s.push_str(&format!("constant.{name} = {value}\n"));
        }
        for (m, law) in self.modes.iter().enumerate() {
            s.push_str(&format!("\n[mode.{m}]\nname = \"{}\"\n", law.name));
            s.push_str(&format!("support = {:?}\n", law.support));
            let terms: Vec<String> = law
                .support
                .iter()
                .map(|&ix| format!("{} * {}", law.xi[ix], self.library.basis[ix].name()))
                .collect();
            s.push_str(&format!("hamiltonian = \"{}\"\n", terms.join(" + ")));
            for g in &self.guards[m] {
                s.push_str(&format!(
                    "guard = \"{} -> mode {}\"\n",
                    g.name, g.target_mode
                ));
            }
        }
        s
    }
}

/// A simulated rollout. All per-step vectors have `steps + 1` entries; the
/// final action row is zero-padded so the fields stay aligned.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub modes: Vec<usize>,
    pub actions: Vec<DVector<f64>>,
    /// Deterministic drift at each recorded (mode, state, action).
    pub derivs: Vec<DVector<f64>>,
    pub switches: Vec<SwitchEvent>,
}

/// One recorded guard crossing.
#[derive(Clone, Copy, Debug)]
pub struct SwitchEvent {
    pub step: usize,
    pub from_mode: usize,
    pub to_mode: usize,
    /// Shared-offset energy just before the reset.
    pub energy_before: f64,
    /// Shared-offset energy just after the reset (and energy projection).
    pub energy_after: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,s,z_1..z_d,a_1..a_q,zdot_1..zdot_d`.
    pub fn to_csv(&self) -> String {
        let d = self.states.first().map_or(0, |z| z.len());
        let q = self.actions.first().map_or(0, |a| a.len());
        let mut s = String::from("t");
        s.push_str(",s");
        for i in 1..=d {
            s.push_str(&format!(",z_{i}"));
        }
        for i in 1..=q {
            s.push_str(&format!(",a_{i}"));
        }
        for i in 1..=d {
            s.push_str(&format!(",zdot_{i}"));
        }
        s.push('\n');
        for t in 0..self.len() {
            s.push_str(&format!("{:.6}", self.times[t]));
            s.push_str(&format!(",{}", self.modes[t] + 1));
            for v in self.states[t].iter() {
                s.push_str(&format!(",{v:.9e}"));
            }
            for v in self.actions[t].iter() {
                s.push_str(&format!(",{v:.9e}"));
            }
            for v in self.derivs[t].iter() {
                s.push_str(&format!(",{v:.9e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Observations derived from a trajectory by the corruption pipeline.
#[derive(Clone, Debug)]
pub struct ObservationSequence {
    pub dt: f64,
    pub times: Vec<f64>,
    /// Which state coordinates are visible (e.g. positions only).
    pub observed_coords: Vec<usize>,
    /// Noisy observation rows; `None` marks a step dropped by the missing
    /// process. Length equals the trajectory length.
    pub obs: Vec<Option<DVector<f64>>>,
    /// Missing mask from `corrupt`.
    pub missing: Vec<bool>,
    /// Occlusion mask from `occlude`; composes with `missing`.
    pub occluded: Vec<bool>,
    /// Mode labels flipped with the configured probability; evaluation only,
    /// never filter input.
    pub noisy_modes: Vec<usize>,
    /// Noisy derivative channel for the observed coordinates.
    pub derivs: Vec<Option<DVector<f64>>>,
    pub sigma_obs: f64,
    pub sigma_der: f64,
    pub mode_flip_prob: f64,
}

impl ObservationSequence {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// True when the step is unusable: dropped or occluded.
    pub fn is_unobserved(&self, t: usize) -> bool {
        self.missing[t] || self.occluded[t]
    }

    /// Observation row if the step is observed.
    pub fn observation(&self, t: usize) -> Option<&DVector<f64>> {
        if self.is_unobserved(t) {
            None
        } else {
            self.obs[t].as_ref()
        }
    }

    /// Fraction of steps with no usable observation.
    pub fn unobserved_fraction(&self) -> f64 {
        let n = self.len();
        if n == 0 {
            return 0.0;
        }
        (0..n).filter(|&t| self.is_unobserved(t)).count() as f64 / n as f64
    }

    /// CSV with header `t,observed(0|1),o_1..o_r`; empty cells when missing.
    pub fn to_csv(&self) -> String {
        let r = self.observed_coords.len();
        let mut s = String::from("t,observed");
        for i in 1..=r {
            s.push_str(&format!(",o_{i}"));
        }
        s.push('\n');
        for t in 0..self.len() {
            let seen = !self.is_unobserved(t);
            s.push_str(&format!("{:.6},{}", self.times[t], u8::from(seen)));
            match self.observation(t) {
                Some(o) => {
                    for v in o.iter() {
                        s.push_str(&format!(",{v:.9e}"));
                    }
                }
                None => {
                    for _ in 0..r {
                        s.push(',');
                    }
                }
            }
            s.push('\n');
        }
        s
    }
}
