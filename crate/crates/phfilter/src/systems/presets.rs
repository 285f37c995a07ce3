//! The four known-equation hybrid systems.
//!
//! Constants are implementation choices recorded in each system manifest.
//! All masses and inertias are 1, so momentum coordinates coincide with
//! velocities and hidden-velocity reconstruction needs no constants.

use super::{
    ConstantProbe, GuardCond, GuardSpec, HybridSystemSpec, ModeLaw, ProbeKind, ResetSpec,
};
use crate::basis::{BasisFn, LibrarySpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// The four systems used by the experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SystemName {
    Puck,
    Block,
    Pendulum,
    Pusher,
}

impl SystemName {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "puck" => Some(SystemName::Puck),
            "block" => Some(SystemName::Block),
            "pendulum" => Some(SystemName::Pendulum),
            "pusher" => Some(SystemName::Pusher),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SystemName::Puck => "puck",
            SystemName::Block => "block",
            SystemName::Pendulum => "pendulum",
            SystemName::Pusher => "pusher",
        }
    }

    pub fn all() -> [SystemName; 4] {
        [
            SystemName::Puck,
            SystemName::Block,
            SystemName::Pendulum,
            SystemName::Pusher,
        ]
    }
}

const DT: f64 = 1e-3;

fn canonical_j() -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0])
}

fn diag(entries: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(entries))
}

fn mono(powers: &[u8]) -> BasisFn {
    BasisFn::Mono {
        powers: powers.to_vec(),
    }
}

/// Builds `xi` and its support from (index, value) pairs.
fn sparse_xi(p: usize, entries: &[(usize, f64)]) -> (DVector<f64>, Vec<usize>) {
    let mut xi = DVector::zeros(p);
    for &(i, v) in entries {
        xi[i] = v;
    }
    let mut support: Vec<usize> = entries.iter().map(|&(i, _)| i).collect();
    support.sort_unstable();
    (xi, support)
}

fn index_of(lib: &LibrarySpec, target: &BasisFn) -> usize {
    lib.basis
        .iter()
        .position(|b| b == target)
        .expect("basis term present")
}

/// Constructs one of the four known-equation systems with its true sparse
/// coefficients, guards, and constant probes.
pub fn make_system(name: SystemName) -> HybridSystemSpec {
    match name {
        SystemName::Puck => puck(),
        SystemName::Block => block(),
        SystemName::Pendulum => pendulum(),
        SystemName::Pusher => pusher(),
    }
}

/// Bouncing puck against a stiff dissipative wall at z1 = 0.
///
/// Mode 1 (free flight, z1 >= 0): H = g z1 + z2^2 / 2, light drag.
/// Mode 2 (wall contact, z1 < 0): H = (kw/2) z1^2 + z2^2 / 2, contact
/// damping; the damped half-cycle produces an effective restitution
/// e = exp(-pi zeta / sqrt(1 - zeta^2)), zeta = c / (2 sqrt(kw)).
fn puck() -> HybridSystemSpec {
    let gravity = 9.81;
    let k_wall = 400.0;
    let c_free = 0.08;
    let c_contact = 1.2;

    let mut basis = LibrarySpec::monomials(2, 3);
    basis.push(BasisFn::Const);
    let lib = LibrarySpec::new(2, basis);
    let p = lib.len();

    let i_q = index_of(&lib, &mono(&[1, 0]));
    let i_q2 = index_of(&lib, &mono(&[2, 0]));
    let i_p2 = index_of(&lib, &mono(&[0, 2]));

    let (xi_free, sup_free) = sparse_xi(p, &[(i_q, gravity), (i_p2, 0.5)]);
    let (xi_con, sup_con) = sparse_xi(p, &[(i_q2, k_wall / 2.0), (i_p2, 0.5)]);

    let g_in = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let modes = vec![
        ModeLaw {
            name: "free".into(),
            j: canonical_j(),
            r: diag(&[0.0, c_free]),
            g: g_in.clone(),
            sigma: diag(&[0.0, 0.01]),
            xi: xi_free,
            support: sup_free,
        },
        ModeLaw {
            name: "contact".into(),
            j: canonical_j(),
            r: diag(&[0.0, c_contact]),
            g: g_in,
            sigma: diag(&[0.0, 0.01]),
            xi: xi_con,
            support: sup_con,
        },
    ];
    let guards = vec![
        vec![GuardSpec {
            name: "impact".into(),
            condition: GuardCond::CoordBelow {
                coord: 0,
                threshold: 0.0,
            },
            target_mode: 1,
            reset: ResetSpec::SnapCoord { coord: 0, value: 0.0 },
        }],
        vec![GuardSpec {
            name: "liftoff".into(),
            condition: GuardCond::CoordAbove {
                coord: 0,
                threshold: 0.0,
            },
            target_mode: 0,
            reset: ResetSpec::SnapCoord { coord: 0, value: 0.0 },
        }],
    ];
    HybridSystemSpec {
        name: "puck".into(),
        mode_count: 2,
        dim: 2,
        input_dim: 1,
        dt: DT,
        library: lib,
        modes,
        guards,
        momentum_coords: vec![1],
        position_coords: vec![0],
        energy_offset: 0.0,
        sparsity_k: 2,
        constants: vec![
            ("mass".into(), 1.0),
            ("gravity".into(), gravity),
            ("wall_stiffness".into(), k_wall),
            ("contact_damping".into(), c_contact),
        ],
        constant_probes: vec![
            ConstantProbe {
                name: "mass".into(),
                mode: 0,
                index: i_p2,
                kind: ProbeKind::Inverse { scale: 0.5 },
            },
            ConstantProbe {
                name: "gravity".into(),
                mode: 0,
                index: i_q,
                kind: ProbeKind::Scaled { scale: 1.0 },
            },
            ConstantProbe {
                name: "wall_stiffness".into(),
                mode: 1,
                index: i_q2,
                kind: ProbeKind::Scaled { scale: 2.0 },
            },
        ],
    }
}

/// Stick-slip block on an incline with a restoring spring.
///
/// All three modes share H = a_g z1 + (ks/2) z1^2 + z2^2 / 2; they differ in
/// friction: free (lubricated, near-lossless), slip (kinetic friction as
/// momentum dissipation), stick (strong dissipation with weak coupling, so
/// the spring equilibrium (-a_g/ks, 0) is an exact rest point).
fn block() -> HybridSystemSpec {
    let a_g = 2.0; // incline force (constant-force library term)
    let k_s = 4.0;
    let c_free = 0.05;
    let c_slip = 1.5;
    let c_stick = 25.0;
    let j_stick = 0.3;

    let mut basis = LibrarySpec::monomials(2, 3);
    basis.push(BasisFn::Const);
    let lib = LibrarySpec::new(2, basis);
    let p = lib.len();

    let i_x = index_of(&lib, &mono(&[1, 0]));
    let i_x2 = index_of(&lib, &mono(&[2, 0]));
    let i_v2 = index_of(&lib, &mono(&[0, 2]));

    let entries = [(i_x, a_g), (i_x2, k_s / 2.0), (i_v2, 0.5)];
    let g_in = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);

    let mk = |name: &str, j: DMatrix<f64>, r: DMatrix<f64>, sigma_p: f64| {
        let (xi, support) = sparse_xi(p, &entries);
        ModeLaw {
            name: name.into(),
            j,
            r,
            g: g_in.clone(),
            sigma: diag(&[0.0, sigma_p]),
            xi,
            support,
        }
    };
    let modes = vec![
        mk("free", canonical_j(), diag(&[0.0, c_free]), 0.01),
        mk("slip", canonical_j(), diag(&[0.0, c_slip]), 0.01),
        mk(
            "stick",
            DMatrix::from_row_slice(2, 2, &[0.0, j_stick, -j_stick, 0.0]),
            diag(&[0.0, c_stick]),
            0.0025,
        ),
    ];
    let guards = vec![
        vec![GuardSpec {
            name: "engage".into(),
            condition: GuardCond::AbsBelow {
                coord: 1,
                threshold: 1.0,
            },
            target_mode: 1,
            reset: ResetSpec::Identity,
        }],
        vec![
            GuardSpec {
                name: "lubricate".into(),
                condition: GuardCond::AbsAbove {
                    coord: 1,
                    threshold: 1.3,
                },
                target_mode: 0,
                reset: ResetSpec::Identity,
            },
            GuardSpec {
                name: "arrest".into(),
                condition: GuardCond::AbsBelow {
                    coord: 1,
                    threshold: 0.18,
                },
                target_mode: 2,
                reset: ResetSpec::Identity,
            },
        ],
        vec![GuardSpec {
            name: "breakaway".into(),
            condition: GuardCond::AbsAbove {
                coord: 1,
                threshold: 0.35,
            },
            target_mode: 1,
            reset: ResetSpec::Identity,
        }],
    ];
    // shared H minimum at (-a_g/ks, 0): a_g^2/(2ks) below zero
    let h_min = -a_g * a_g / (2.0 * k_s);
    HybridSystemSpec {
        name: "block".into(),
        mode_count: 3,
        dim: 2,
        input_dim: 1,
        dt: DT,
        library: lib,
        modes,
        guards,
        momentum_coords: vec![1],
        position_coords: vec![0],
        energy_offset: h_min,
        sparsity_k: 3,
        constants: vec![
            ("mass".into(), 1.0),
            ("incline_force".into(), a_g),
            ("spring_stiffness".into(), k_s),
            ("slip_damping".into(), c_slip),
        ],
        constant_probes: vec![
            ConstantProbe {
                name: "mass".into(),
                mode: 0,
                index: i_v2,
                kind: ProbeKind::Inverse { scale: 0.5 },
            },
            ConstantProbe {
                name: "incline_force".into(),
                mode: 1,
                index: i_x,
                kind: ProbeKind::Scaled { scale: 1.0 },
            },
            ConstantProbe {
                name: "spring_stiffness".into(),
                mode: 2,
                index: i_x2,
                kind: ProbeKind::Scaled { scale: 2.0 },
            },
        ],
    }
}

/// Pendulum with a hard stop at the bottom (z1 = 0).
///
/// Mode 1 (swing, z1 >= 0): H = a_p (1 - cos z1) + z2^2 / 2.
/// Mode 2 (stop contact, z1 < 0): adds a torsional spring (kc/2) z1^2 and
/// contact damping, so at most three library terms are active.
fn pendulum() -> HybridSystemSpec {
    let a_p = 9.0; // m g l
    let k_c = 60.0;
    let c_swing = 0.06;
    let c_stop = 1.0;

    let mut basis = LibrarySpec::monomials(2, 3);
    basis.push(BasisFn::OneMinusCos { coord: 0 });
    basis.push(BasisFn::Sin { coord: 0 });
    basis.push(BasisFn::Const);
    let lib = LibrarySpec::new(2, basis);
    let p = lib.len();
    assert_eq!(p, 12);

    let i_cos = index_of(&lib, &BasisFn::OneMinusCos { coord: 0 });
    let i_th2 = index_of(&lib, &mono(&[2, 0]));
    let i_w2 = index_of(&lib, &mono(&[0, 2]));

    let (xi_swing, sup_swing) = sparse_xi(p, &[(i_cos, a_p), (i_w2, 0.5)]);
    let (xi_stop, sup_stop) = sparse_xi(p, &[(i_cos, a_p), (i_th2, k_c / 2.0), (i_w2, 0.5)]);

    let g_in = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let modes = vec![
        ModeLaw {
            name: "swing".into(),
            j: canonical_j(),
            r: diag(&[0.0, c_swing]),
            g: g_in.clone(),
            sigma: diag(&[0.0, 0.01]),
            xi: xi_swing,
            support: sup_swing,
        },
        ModeLaw {
            name: "stop".into(),
            j: canonical_j(),
            r: diag(&[0.0, c_stop]),
            g: g_in,
            sigma: diag(&[0.0, 0.01]),
            xi: xi_stop,
            support: sup_stop,
        },
    ];
    let guards = vec![
        vec![GuardSpec {
            name: "strike".into(),
            condition: GuardCond::CoordBelow {
                coord: 0,
                threshold: 0.0,
            },
            target_mode: 1,
            reset: ResetSpec::SnapCoord { coord: 0, value: 0.0 },
        }],
        vec![GuardSpec {
            name: "release".into(),
            condition: GuardCond::CoordAbove {
                coord: 0,
                threshold: 0.0,
            },
            target_mode: 0,
            reset: ResetSpec::SnapCoord { coord: 0, value: 0.0 },
        }],
    ];
    HybridSystemSpec {
        name: "pendulum".into(),
        mode_count: 2,
        dim: 2,
        input_dim: 1,
        dt: DT,
        library: lib,
        modes,
        guards,
        momentum_coords: vec![1],
        position_coords: vec![0],
        energy_offset: 0.0,
        sparsity_k: 3,
        constants: vec![
            ("inertia".into(), 1.0),
            ("gravity_torque".into(), a_p),
            ("stop_stiffness".into(), k_c),
        ],
        constant_probes: vec![
            ConstantProbe {
                name: "inertia".into(),
                mode: 0,
                index: i_w2,
                kind: ProbeKind::Inverse { scale: 0.5 },
            },
            ConstantProbe {
                name: "gravity_torque".into(),
                mode: 0,
                index: i_cos,
                kind: ProbeKind::Scaled { scale: 1.0 },
            },
            ConstantProbe {
                name: "stop_stiffness".into(),
                mode: 1,
                index: i_th2,
                kind: ProbeKind::Scaled { scale: 2.0 },
            },
        ],
    }
}

/// Planar pusher: an actuated end effector intermittently contacts a free
/// object through a stiff compliant interface.
///
/// State (x_obj, v_obj, x_ee, v_ee). Mode 1 (separated): decoupled kinetic
/// terms with ground friction on the object. Mode 2 (contact, x_ee >= x_obj):
/// adds the coupling term (kp/2)(x_ee - x_obj)^2.
fn pusher() -> HybridSystemSpec {
    let k_push = 150.0;
    let c_obj = 0.8;
    let c_ee = 0.15;
    let c_obj_contact = 1.0;
    let c_ee_contact = 0.5;

    let basis = vec![
        mono(&[1, 0, 0, 0]),            // x_obj
        mono(&[0, 0, 1, 0]),            // x_ee
        mono(&[2, 0, 0, 0]),            // x_obj^2
        mono(&[0, 0, 2, 0]),            // x_ee^2
        BasisFn::SqDiff { a: 2, b: 0 }, // (x_ee - x_obj)^2
        mono(&[0, 2, 0, 0]),            // v_obj^2
        mono(&[0, 0, 0, 2]),            // v_ee^2
        mono(&[0, 1, 0, 1]),            // v_obj v_ee
        mono(&[1, 1, 0, 0]),            // x_obj v_obj
        mono(&[0, 0, 1, 1]),            // x_ee v_ee
        mono(&[3, 0, 0, 0]),            // x_obj^3
        BasisFn::Const,
    ];
    let lib = LibrarySpec::new(4, basis);
    let p = lib.len();
    let i_vo2 = 5;
    let i_ve2 = 6;
    let i_sq = 4;

    let (xi_free, sup_free) = sparse_xi(p, &[(i_vo2, 0.5), (i_ve2, 0.5)]);
    let (xi_con, sup_con) = sparse_xi(p, &[(i_sq, k_push / 2.0), (i_vo2, 0.5), (i_ve2, 0.5)]);

    let j4 = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0, 1.0, 0.0, 0.0, //
            -1.0, 0.0, 0.0, 0.0, //
            0.0, 0.0, 0.0, 1.0, //
            0.0, 0.0, -1.0, 0.0,
        ],
    );
    let g_in = DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, 1.0]);
    let modes = vec![
        ModeLaw {
            name: "separated".into(),
            j: j4.clone(),
            r: diag(&[0.0, c_obj, 0.0, c_ee]),
            g: g_in.clone(),
            sigma: diag(&[0.0, 0.01, 0.0, 0.01]),
            xi: xi_free,
            support: sup_free,
        },
        ModeLaw {
            name: "contact".into(),
            j: j4,
            r: diag(&[0.0, c_obj_contact, 0.0, c_ee_contact]),
            g: g_in,
            sigma: diag(&[0.0, 0.01, 0.0, 0.01]),
            xi: xi_con,
            support: sup_con,
        },
    ];
    let guards = vec![
        vec![GuardSpec {
            name: "touch".into(),
            condition: GuardCond::DiffAbove {
                a: 2,
                b: 0,
                threshold: 0.0,
            },
            target_mode: 1,
            reset: ResetSpec::SnapCoordToCoord { coord: 2, to: 0 },
        }],
        vec![GuardSpec {
            name: "separate".into(),
            condition: GuardCond::DiffBelow {
                a: 2,
                b: 0,
                threshold: 0.0,
            },
            target_mode: 0,
            reset: ResetSpec::Identity,
        }],
    ];
    HybridSystemSpec {
        name: "pusher".into(),
        mode_count: 2,
        dim: 4,
        input_dim: 1,
        dt: DT,
        library: lib,
        modes,
        guards,
        momentum_coords: vec![1, 3],
        position_coords: vec![0, 2],
        energy_offset: 0.0,
        sparsity_k: 3,
        constants: vec![
            ("object_mass".into(), 1.0),
            ("ee_mass".into(), 1.0),
            ("contact_stiffness".into(), k_push),
        ],
        constant_probes: vec![
            ConstantProbe {
                name: "object_mass".into(),
                mode: 0,
                index: i_vo2,
                kind: ProbeKind::Inverse { scale: 0.5 },
            },
            ConstantProbe {
                name: "ee_mass".into(),
                mode: 0,
                index: i_ve2,
                kind: ProbeKind::Inverse { scale: 0.5 },
            },
            ConstantProbe {
                name: "contact_stiffness".into(),
                mode: 1,
                index: i_sq,
                kind: ProbeKind::Scaled { scale: 2.0 },
            },
        ],
    }
}

/// Default initial state for each system's experiment rollouts.
pub fn default_initial_state(name: SystemName) -> (DVector<f64>, usize) {
    match name {
        SystemName::Puck => (DVector::from_column_slice(&[1.5, 0.0]), 0),
        SystemName::Block => (DVector::from_column_slice(&[0.4, 2.0]), 0),
        SystemName::Pendulum => (DVector::from_column_slice(&[1.2, 0.0]), 0),
        SystemName::Pusher => (DVector::from_column_slice(&[1.0, 0.0, 0.0, 0.0]), 0),
    }
}

/// Burst-style action schedule that keeps every mode visited. The burst
/// amplitudes carry a small seeded jitter so seeds explore different energy
/// levels; the schedule shape is fixed per system.
pub fn default_actions<R: Rng>(name: SystemName, steps: usize, rng: &mut R) -> Vec<DVector<f64>> {
    // (period, width, amplitude, alternate sign between bursts)
    let (period, width, amp, alternate) = match name {
        SystemName::Puck => (900, 120, 4.0, false),
        SystemName::Block => (700, 140, 12.0, true),
        SystemName::Pendulum => (1100, 160, 5.0, true),
        SystemName::Pusher => (600, 280, 4.0, false),
    };
    let mut out = Vec::with_capacity(steps);
    let mut burst_amp = 0.0;
    for t in 0..steps {
        if t % period == 0 {
            let sign = if alternate && (t / period) % 2 == 1 {
                -1.0
            } else {
                1.0
            };
            burst_amp = sign * amp * (0.85 + 0.3 * rng.random::<f64>());
        }
        let a = if t % period < width { burst_amp } else { 0.0 };
        out.push(DVector::from_column_slice(&[a]));
    }
    out
}
