//! Hybrid simulation: semi-implicit Euler–Maruyama with guard detection by
//! sign change, bisection refinement of the crossing time, and
//! energy-projected resets.

use super::{HybridSystemSpec, SwitchEvent, Trajectory};
use crate::error::{CoreError, Result};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_distr::StandardNormal;

/// Bisection refinements of the guard-crossing time within a step.
const GUARD_BISECTION_ITERS: usize = 1;
/// Cap on chained switches inside one step.
const MAX_SWITCHES_PER_STEP: usize = 4;
/// States beyond this magnitude signal a bad timestep.
const STATE_LIMIT: f64 = 1e8;

/// One deterministic kick-drift-kick sub-step of length `h`: half kick on
/// the momenta, full drift on the positions with the half-updated momenta,
/// half kick to finish. For separable Hamiltonians this is velocity Verlet;
/// its per-step energy error is small enough that dissipative modes stay
/// energy-monotone at our step sizes.
fn det_substep(
    spec: &HybridSystemSpec,
    mode: usize,
    z: &DVector<f64>,
    action: &[f64],
    h: f64,
) -> DVector<f64> {
    let mut z1 = z.clone();
    let kick1 = spec.vector_field(mode, z1.as_slice(), action);
    for &i in &spec.momentum_coords {
        z1[i] += 0.5 * h * kick1[i];
    }
    let drift = spec.vector_field(mode, z1.as_slice(), action);
    for &i in &spec.position_coords {
        z1[i] += h * drift[i];
    }
    let kick2 = spec.vector_field(mode, z1.as_slice(), action);
    for &i in &spec.momentum_coords {
        z1[i] += 0.5 * h * kick2[i];
    }
    z1
}

/// Scales momentum coordinates so the post-reset energy does not exceed
/// `u_cap`. Our kinetic terms are even in the momenta, so the energy is
/// monotone in the scale factor and bisection applies.
fn energy_project(spec: &HybridSystemSpec, mode: usize, z: &mut DVector<f64>, u_cap: f64) {
    if spec.energy(mode, z.as_slice()) <= u_cap {
        return;
    }
    let p0: Vec<f64> = spec.momentum_coords.iter().map(|&i| z[i]).collect();
    let apply = |z: &mut DVector<f64>, f: f64| {
        for (k, &i) in spec.momentum_coords.iter().enumerate() {
            z[i] = p0[k] * f;
        }
    };
    apply(z, 0.0);
    if spec.energy(mode, z.as_slice()) > u_cap {
        // potential alone already exceeds the cap; zero momentum is the
        // closest admissible point along this projection
        return;
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        apply(z, mid);
        if spec.energy(mode, z.as_slice()) > u_cap {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    apply(z, lo);
}

/// Advances one full step of length `dt`, handling up to
/// `MAX_SWITCHES_PER_STEP` guard crossings; returns the new (state, mode) and
/// appends switch events. Process noise for the step is drawn once at the end
/// under the final mode's diffusion.
fn step_once(
    spec: &HybridSystemSpec,
    mut z: DVector<f64>,
    mut mode: usize,
    action: &[f64],
    step_index: usize,
    mut rng: Option<&mut ChaCha12Rng>,
    switches: &mut Vec<SwitchEvent>,
) -> (DVector<f64>, usize) {
    let mut remaining = spec.dt;
    for _ in 0..MAX_SWITCHES_PER_STEP {
        // a guard already violated at the sub-step start fires at once; this
        // catches crossings that complete inside a single step and keeps the
        // mode regions invariant
        let immediate = spec.guards[mode]
            .iter()
            .position(|g| g.condition.expr(z.as_slice()) < 0.0);
        let (guard, z_cross) = if let Some(gi) = immediate {
            (&spec.guards[mode][gi], z.clone())
        } else {
            let z_next = det_substep(spec, mode, &z, action, remaining);
            let fired = spec.guards[mode]
                .iter()
                .position(|g| g.condition.expr(z_next.as_slice()) < 0.0);
            let Some(gi) = fired else {
                z = z_next;
                remaining = 0.0;
                break;
            };
            let guard = &spec.guards[mode][gi];
            // bisection refinement; the crossing state is taken on the
            // violating side so the new mode's region holds after the switch
            let mut hi = 1.0f64;
            for _ in 0..GUARD_BISECTION_ITERS {
                let mid = 0.5 * hi;
                let z_mid = det_substep(spec, mode, &z, action, mid * remaining);
                if guard.condition.expr(z_mid.as_slice()) < 0.0 {
                    hi = mid;
                } else {
                    break;
                }
            }
            let z_cross = det_substep(spec, mode, &z, action, hi * remaining);
            remaining *= 1.0 - hi;
            (guard, z_cross)
        };
        let mut z_cross = z_cross;
        let u_before = spec.energy(mode, z_cross.as_slice());
        guard.reset.apply(&mut z_cross);
        let target = guard.target_mode;
        energy_project(spec, target, &mut z_cross, u_before);
        let u_after = spec.energy(target, z_cross.as_slice());
        switches.push(SwitchEvent {
            step: step_index,
            from_mode: mode,
            to_mode: target,
            energy_before: u_before,
            energy_after: u_after,
        });
        mode = target;
        z = z_cross;
        if remaining <= 0.0 {
            break;
        }
    }
    if remaining > 0.0 {
        // switch cap hit; finish the step in the current mode
        z = det_substep(spec, mode, &z, action, remaining);
    }
    // process noise, scaled by sqrt(dt) under the final mode's diffusion
    let law = &spec.modes[mode];
    if let Some(rng) = rng.as_deref_mut().filter(|_| law.sigma.amax() > 0.0) {
        let chol = law
            .sigma
            .clone()
            .cholesky()
            .map(|c| c.l())
            .unwrap_or_else(|| {
                // PSD with zero rows: fall back to sqrt of the diagonal
                nalgebra::DMatrix::from_diagonal(&law.sigma.diagonal().map(|v| v.max(0.0).sqrt()))
            });
        let noise = DVector::from_iterator(
            spec.dim,
            (0..spec.dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        z += chol * noise * spec.dt.sqrt();
    }
    (z, mode)
}

/// Deterministic one-step flow with guard handling and no process noise:
/// the mean map used by the model's one-step transition law.
pub fn guarded_step_deterministic(
    spec: &HybridSystemSpec,
    z: &DVector<f64>,
    mode: usize,
    action: &[f64],
) -> (DVector<f64>, usize) {
    let mut switches = Vec::new();
    step_once(spec, z.clone(), mode, action, 0, None, &mut switches)
}

/// Deterministic sub-step in a fixed mode (no guards); used to build
/// mode-conditioned transition means.
pub fn fixed_mode_step(
    spec: &HybridSystemSpec,
    z: &DVector<f64>,
    mode: usize,
    action: &[f64],
) -> DVector<f64> {
    det_substep(spec, mode, z, action, spec.dt)
}

/// Simulates `steps` transitions from `(z0, s0)` under the given actions.
/// Deterministic for a fixed seed. Errors with `NonFiniteState` if the state
/// leaves the representable range.
pub fn simulate(
    spec: &HybridSystemSpec,
    z0: &DVector<f64>,
    s0: usize,
    actions: &[DVector<f64>],
    steps: usize,
    seed: u64,
) -> Result<Trajectory> {
    assert!(steps >= 1, "steps must be at least 1");
    assert_eq!(actions.len(), steps, "actions length must equal steps");
    assert!(spec.dt > 0.0, "dt must be positive");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut modes = Vec::with_capacity(steps + 1);
    let mut acts = Vec::with_capacity(steps + 1);
    let mut derivs = Vec::with_capacity(steps + 1);
    let mut switches = Vec::new();

    let mut z = z0.clone();
    let mut mode = s0;
    for t in 0..steps {
        let a = &actions[t];
        times.push(t as f64 * spec.dt);
        states.push(z.clone());
        modes.push(mode);
        acts.push(a.clone());
        derivs.push(spec.vector_field(mode, z.as_slice(), a.as_slice()));

        let (z_new, m_new) =
            step_once(spec, z, mode, a.as_slice(), t, Some(&mut rng), &mut switches);
        if z_new.iter().any(|v| !v.is_finite() || v.abs() > STATE_LIMIT) {
            return Err(CoreError::NonFiniteState {
                step: t,
                detail: format!("state {:?}", z_new.as_slice()),
            });
        }
        z = z_new;
        mode = m_new;
    }
    let zero_action = DVector::zeros(spec.input_dim);
    times.push(steps as f64 * spec.dt);
    derivs.push(spec.vector_field(mode, z.as_slice(), zero_action.as_slice()));
    states.push(z);
    modes.push(mode);
    acts.push(zero_action);

    Ok(Trajectory {
        dt: spec.dt,
        times,
        states,
        modes,
        actions: acts,
        derivs,
        switches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{BasisFn, LibrarySpec};
    use crate::systems::presets::{default_actions, default_initial_state};
    use crate::systems::{make_system, GuardSpec, ModeLaw, SystemName};
    use nalgebra::DMatrix;
    use rand_chacha::ChaCha12Rng;

    fn no_actions(steps: usize) -> Vec<DVector<f64>> {
        vec![DVector::zeros(1); steps]
    }

    /// Single-mode quadratic oscillator with configurable damping/noise.
    fn oscillator(r_p: f64, sigma_p: f64, with_input: bool) -> HybridSystemSpec {
        let lib = LibrarySpec::new(
            2,
            vec![
                BasisFn::Mono { powers: vec![2, 0] },
                BasisFn::Mono { powers: vec![0, 2] },
            ],
        );
        let xi = DVector::from_column_slice(&[2.0, 0.5]);
        let support = vec![0, 1];
        let g = if with_input {
            DMatrix::from_column_slice(2, 1, &[0.0, 1.0])
        } else {
            DMatrix::zeros(2, 1)
        };
        HybridSystemSpec {
            name: "osc".into(),
            mode_count: 1,
            dim: 2,
            input_dim: 1,
            dt: 1e-3,
            library: lib,
            modes: vec![ModeLaw {
                name: "only".into(),
                j: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
                r: DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, r_p])),
                g,
                sigma: DMatrix::from_diagonal(&DVector::from_column_slice(&[0.0, sigma_p])),
                xi,
                support,
            }],
            guards: vec![Vec::<GuardSpec>::new()],
            momentum_coords: vec![1],
            position_coords: vec![0],
            energy_offset: 0.0,
            sparsity_k: 2,
            constants: vec![],
            constant_probes: vec![],
        }
    }

    #[test]
    fn conservative_limit_energy_constant_to_first_order() {
        // Sigma = 0, G = 0, R = 0, quadratic H, no guards
        let spec = oscillator(0.0, 0.0, false);
        let traj = simulate(
            &spec,
            &DVector::from_column_slice(&[1.0, 0.0]),
            0,
            &no_actions(2000),
            2000,
            0,
        )
        .unwrap();
        let e0 = spec.energy(0, traj.states[0].as_slice());
        for w in traj.states.windows(2) {
            let a = spec.energy(0, w[0].as_slice());
            let b = spec.energy(0, w[1].as_slice());
            assert!((b - a).abs() < 1e-3 * e0.max(1.0), "per-step drift too big");
        }
        let e_end = spec.energy(0, traj.states.last().unwrap().as_slice());
        assert!((e_end - e0).abs() < 0.02 * e0);
    }

    #[test]
    fn pure_dissipation_energy_monotone() {
        // Sigma = 0, R > 0, a = 0: U non-increasing at every step
        let spec = oscillator(0.4, 0.0, false);
        let traj = simulate(
            &spec,
            &DVector::from_column_slice(&[1.0, 0.5]),
            0,
            &no_actions(5000),
            5000,
            0,
        )
        .unwrap();
        for w in traj.states.windows(2) {
            let a = spec.energy(0, w[0].as_slice());
            let b = spec.energy(0, w[1].as_slice());
            assert!(b <= a + 1e-12, "energy increased: {a} -> {b}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = make_system(SystemName::Puck);
        let (z0, s0) = default_initial_state(SystemName::Puck);
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let acts = default_actions(SystemName::Puck, 3000, &mut rng);
        let a = simulate(&spec, &z0, s0, &acts, 3000, 42).unwrap();
        let b = simulate(&spec, &z0, s0, &acts, 3000, 42).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(x.as_slice(), y.as_slice(), "bitwise determinism");
        }
        assert_eq!(a.modes, b.modes);
    }

    #[test]
    fn non_finite_state_detected() {
        // absurd dt makes the damped update explosive
        let mut spec = make_system(SystemName::Puck);
        spec.dt = 1e6;
        let (z0, _) = default_initial_state(SystemName::Puck);
        let err = simulate(&spec, &z0, 0, &no_actions(50), 50, 0).unwrap_err();
        assert!(matches!(err, CoreError::NonFiniteState { .. }));
    }

    #[test]
    fn puck_restitution_matches_damped_half_cycle() {
        // e = exp(-pi zeta / sqrt(1 - zeta^2)) for the contact oscillator
        let spec = make_system(SystemName::Puck);
        let k_wall: f64 = 400.0;
        let c = 1.2;
        let zeta = c / (2.0 * k_wall.sqrt());
        let e_closed = (-std::f64::consts::PI * zeta / (1.0 - zeta * zeta).sqrt()).exp();

        // drop from rest; Sigma forced to zero for a clean measurement
        let mut det = spec.clone();
        for law in &mut det.modes {
            law.sigma.fill(0.0);
        }
        let traj = simulate(
            &det,
            &DVector::from_column_slice(&[0.8, 0.0]),
            0,
            &no_actions(40_000),
            40_000,
            0,
        )
        .unwrap();
        // find first entry into contact and the matching exit
        let entry = traj.switches.iter().position(|s| s.to_mode == 1).unwrap();
        let exit = traj.switches[entry + 1];
        assert_eq!(exit.to_mode, 0);
        let v_in = (2.0 * traj.switches[entry].energy_before).sqrt(); // at q=0: U = v^2/2
        let v_out = (2.0 * exit.energy_after).sqrt();
        let e_measured = v_out / v_in;
        assert!(
            (e_measured - e_closed).abs() < 0.02 * e_closed,
            "restitution {e_measured} vs closed form {e_closed}"
        );
    }

    #[test]
    fn block_stick_mode_has_rest_point() {
        let spec = make_system(SystemName::Block);
        let a_g = 2.0;
        let k_s = 4.0;
        let x_star = -a_g / k_s;
        let z_star = DVector::from_column_slice(&[x_star, 0.0]);
        let vf = spec.vector_field(2, z_star.as_slice(), &[0.0]);
        assert!(vf.amax() < 1e-12, "stick vector field at rest point: {vf:?}");
        // simulation from the rest point stays there
        let mut det = spec.clone();
        for law in &mut det.modes {
            law.sigma.fill(0.0);
        }
        let traj = simulate(&det, &z_star, 2, &no_actions(1000), 1000, 0).unwrap();
        let z_end = traj.states.last().unwrap();
        assert!((z_end - &z_star).amax() < 1e-9);
        assert!(traj.modes.iter().all(|&m| m == 2));
    }

    #[test]
    fn switches_never_increase_energy() {
        // >= 1e3 deterministic switches per system, action bursts allowed
        for name in SystemName::all() {
            let mut spec = make_system(name);
            for law in &mut spec.modes {
                law.sigma.fill(0.0);
            }
            let (z0, s0) = default_initial_state(name);
            // the pendulum's swing period caps its switch rate
            let steps = if name == SystemName::Pendulum {
                1_000_000
            } else {
                400_000
            };
            let mut rng = ChaCha12Rng::seed_from_u64(5);
            let acts = default_actions(name, steps, &mut rng);
            let traj = simulate(&spec, &z0, s0, &acts, steps, 11).unwrap();
            assert!(
                traj.switches.len() >= 1000,
                "{}: only {} switches",
                spec.name,
                traj.switches.len()
            );
            for sw in &traj.switches {
                assert!(
                    sw.energy_after <= sw.energy_before + 1e-9,
                    "{}: switch at step {} raised energy {} -> {}",
                    spec.name,
                    sw.step,
                    sw.energy_before,
                    sw.energy_after
                );
            }
        }
    }

    #[test]
    fn all_four_systems_validate() {
        for name in SystemName::all() {
            let spec = make_system(name);
            spec.validate().unwrap();
            assert!(spec.library.len() <= 12);
        }
    }
}
