//! Energy and planning certificate calculators, plus a simulation
//! diagnostic that checks the energy bound on systems meeting its
//! assumptions.

use crate::error::{CoreError, Result};
use crate::systems::{simulate, HybridSystemSpec};
use crate::util::{mean, sem};
use nalgebra::DVector;

/// Inputs for the certificate calculators.
#[derive(Clone, Copy, Debug)]
pub struct CertificateInputs {
    /// Dissipation floor r with R >= r I.
    pub dissipation_floor: f64,
    /// Gradient-domination constant mu: ||grad H||^2 >= 2 mu U.
    pub pl_constant: f64,
    /// Input-map operator-norm bound g.
    pub input_gain: f64,
    /// Action norm bound.
    pub action_bound: f64,
    /// Hessian operator-norm bound.
    pub hessian_bound: f64,
    /// Diffusion trace bound nu^2.
    pub diffusion_trace: f64,
    /// Horizon in seconds.
    pub horizon: f64,
    /// Initial expected energy.
    pub initial_energy: f64,
}

/// Energy-bound outputs.
#[derive(Clone, Copy, Debug)]
pub struct EnergyBound {
    /// Decay rate alpha = r mu.
    pub alpha: f64,
    /// Forcing constant C_E = g^2 A^2 / (2 r) + L_H nu^2 / 2.
    pub c_energy: f64,
    /// exp(-alpha T) U0 + (1 - exp(-alpha T)) C_E / alpha.
    pub bound: f64,
}

impl EnergyBound {
    /// Markov tail: P(U_T >= level) <= min(1, bound / level).
    pub fn markov_tail(&self, level: f64) -> f64 {
        assert!(level > 0.0);
        (self.bound / level).min(1.0)
    }
}

/// Evaluates the dissipation/Gronwall energy bound.
pub fn energy_bound(inputs: &CertificateInputs) -> EnergyBound {
    assert!(inputs.dissipation_floor > 0.0 && inputs.pl_constant > 0.0);
    let alpha = inputs.dissipation_floor * inputs.pl_constant;
    let c_energy = inputs.input_gain * inputs.input_gain * inputs.action_bound
        * inputs.action_bound
        / (2.0 * inputs.dissipation_floor)
        + inputs.hessian_bound * inputs.diffusion_trace / 2.0;
    let decay = (-alpha * inputs.horizon).exp();
    EnergyBound {
        alpha,
        c_energy,
        bound: decay * inputs.initial_energy + (1.0 - decay) * c_energy / alpha,
    }
}

/// Pinsker-transfer outputs.
#[derive(Clone, Copy, Debug)]
pub struct PinskerTransfer {
    /// min(1, sqrt(eps_H / 2)).
    pub eps_tv: f64,
    /// 2 C_max eps_TV + eta_opt.
    pub subopt_bound: f64,
    /// delta - eps_TV; negative means the chance constraint is infeasible.
    pub chance_budget: f64,
}

/// Converts a predictive KL bound into cost-suboptimality and
/// chance-constraint margins.
pub fn pinsker_transfer(eps_h: f64, c_max: f64, eta_opt: f64, delta: f64) -> PinskerTransfer {
    assert!(eps_h >= 0.0 && c_max >= 0.0 && eta_opt >= 0.0);
    let eps_tv = (eps_h / 2.0).sqrt().min(1.0);
    PinskerTransfer {
        eps_tv,
        subopt_bound: 2.0 * c_max * eps_tv + eta_opt,
        chance_budget: delta - eps_tv,
    }
}

/// Monte Carlo margin for chance estimates from `n` rollouts over `l`
/// evaluated action sequences at confidence 1 - beta:
/// `sqrt(log(l / beta) / (2 n))`.
pub fn mc_margin(n: usize, l: usize, beta: f64) -> f64 {
    assert!(n >= 1 && l >= 1);
    assert!(beta > 0.0 && beta < 1.0);
    ((l as f64 / beta).ln() / (2.0 * n as f64)).sqrt()
}

/// Result of the simulation diagnostic.
#[derive(Clone, Debug)]
pub struct EnergyDriftReport {
    pub bound: EnergyBound,
    pub empirical_mean: f64,
    pub empirical_sem: f64,
    /// mean <= bound + 4 SEM.
    pub pass: bool,
    /// Estimated constants actually used.
    pub inputs: CertificateInputs,
}

/// Estimates the gradient-domination constant on sampled states: 0.9 times
/// the minimum of ||grad H||^2 / (2 U) over the sample.
pub fn estimate_pl_constant(spec: &HybridSystemSpec, mode: usize, samples: &[DVector<f64>]) -> f64 {
    let mut worst = f64::INFINITY;
    let mut grad = vec![0.0; spec.dim];
    for z in samples {
        let u = spec.energy(mode, z.as_slice());
        if u <= 1e-12 {
            continue;
        }
        spec.library
            .hamiltonian_grad(z.as_slice(), spec.modes[mode].xi.as_slice(), &mut grad);
        let g2: f64 = grad.iter().map(|g| g * g).sum();
        worst = worst.min(g2 / (2.0 * u));
    }
    if worst.is_finite() {
        0.9 * worst
    } else {
        0.0
    }
}

/// Simulates a rollout batch and checks the empirical mean terminal energy
/// against the bound. Assumption checks (dissipation floor, Hessian bound on
/// the sampled region, positive estimated mu) must pass, otherwise the
/// diagnostic reports `AssumptionUnmet` instead of asserting.
pub fn energy_drift_diagnostic(
    spec: &HybridSystemSpec,
    z0: &DVector<f64>,
    s0: usize,
    horizon_steps: usize,
    batch: usize,
    action_bound: f64,
    seed: u64,
) -> Result<EnergyDriftReport> {
    // numeric assumption checks on the starting mode
    let law = &spec.modes[s0];
    let r_floor = law
        .r
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if r_floor <= 0.0 {
        return Err(CoreError::AssumptionUnmet(format!(
            "dissipation floor {r_floor:.3e} is not positive"
        )));
    }
    let trace_sigma: f64 = (0..spec.dim).map(|i| law.sigma[(i, i)]).sum();

    // free rollouts to sample the visited region
    let actions = vec![DVector::zeros(spec.input_dim); horizon_steps];
    let mut terminal = Vec::with_capacity(batch);
    let mut visited = Vec::new();
    for b in 0..batch {
        let traj = simulate(spec, z0, s0, &actions, horizon_steps, seed.wrapping_add(b as u64))?;
        terminal.push(spec.energy(
            *traj.modes.last().unwrap(),
            traj.states.last().unwrap().as_slice(),
        ));
        if b < 16 {
            for (i, z) in traj.states.iter().enumerate() {
                if i % 20 == 0 {
                    visited.push(z.clone());
                }
            }
        }
    }
    let mu = estimate_pl_constant(spec, s0, &visited);
    if mu <= 0.0 {
        return Err(CoreError::AssumptionUnmet(
            "estimated gradient-domination constant is zero".into(),
        ));
    }
    // Hessian bound estimated by finite differences of the gradient over the
    // visited region
    let l_h = estimate_hessian_bound(spec, s0, &visited);

    let inputs = CertificateInputs {
        dissipation_floor: r_floor,
        pl_constant: mu,
        input_gain: 0.0,
        action_bound,
        hessian_bound: l_h,
        diffusion_trace: trace_sigma,
        horizon: horizon_steps as f64 * spec.dt,
        initial_energy: spec.energy(s0, z0.as_slice()),
    };
    let bound = energy_bound(&inputs);
    let emp_mean = mean(&terminal);
    let emp_sem = sem(&terminal);
    Ok(EnergyDriftReport {
        bound,
        empirical_mean: emp_mean,
        empirical_sem: emp_sem,
        pass: emp_mean <= bound.bound + 4.0 * emp_sem,
        inputs,
    })
}

/// Max operator norm of the finite-difference Hessian over sampled states.
fn estimate_hessian_bound(spec: &HybridSystemSpec, mode: usize, samples: &[DVector<f64>]) -> f64 {
    let d = spec.dim;
    let h = 1e-5;
    let xi = spec.modes[mode].xi.as_slice();
    let mut worst: f64 = 0.0;
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for z in samples.iter().take(200) {
        let mut hess = nalgebra::DMatrix::zeros(d, d);
        for j in 0..d {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            spec.library.hamiltonian_grad(zp.as_slice(), xi, &mut gp);
            spec.library.hamiltonian_grad(zm.as_slice(), xi, &mut gm);
            for i in 0..d {
                hess[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        let sym = (&hess + hess.transpose()) * 0.5;
        let top = sym
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .map(|e| e.abs())
            .fold(0.0, f64::max);
        worst = worst.max(top);
    }
    worst
}

/// Single-mode linear port-Hamiltonian system (quadratic Hamiltonian,
/// full-rank dissipation, additive noise). These satisfy every assumption of
/// the energy bound and have a closed-form stationary energy, so they anchor
/// the simulation diagnostic.
pub fn make_linear_ph(variant: usize) -> HybridSystemSpec {
    use crate::basis::{BasisFn, LibrarySpec};
    use crate::systems::{GuardSpec, ModeLaw};
    use nalgebra::DMatrix;

    // (a, b, r1, r2, sigma1, sigma2) with H = a z1^2 + b z2^2
    let params = [
        (1.0, 0.5, 0.6, 0.8, 0.05, 0.08),
        (2.0, 2.0, 1.0, 1.0, 0.10, 0.10),
        (0.8, 1.6, 0.4, 1.2, 0.02, 0.12),
    ];
    let (a, b, r1, r2, s1, s2) = params[variant % params.len()];
    let lib = LibrarySpec::new(
        2,
        vec![
            BasisFn::Mono { powers: vec![2, 0] },
            BasisFn::Mono { powers: vec![0, 2] },
            BasisFn::Mono { powers: vec![1, 1] },
            BasisFn::Const,
        ],
    );
    let xi = DVector::from_column_slice(&[a, b, 0.0, 0.0]);
    HybridSystemSpec {
        name: format!("linear_{}", char::from(b'a' + (variant % 3) as u8)),
        mode_count: 1,
        dim: 2,
        input_dim: 0,
        dt: 1e-3,
        library: lib,
        modes: vec![ModeLaw {
            name: "only".into(),
            j: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            r: DMatrix::from_diagonal(&DVector::from_column_slice(&[r1, r2])),
            g: DMatrix::zeros(2, 0),
            sigma: DMatrix::from_diagonal(&DVector::from_column_slice(&[s1, s2])),
            xi,
            support: vec![0, 1],
        }],
        guards: vec![Vec::<GuardSpec>::new()],
        momentum_coords: vec![1],
        position_coords: vec![0],
        energy_offset: 0.0,
        sparsity_k: 2,
        constants: vec![("a".into(), a), ("b".into(), b)],
        constant_probes: vec![],
    }
}

/// Closed-form stationary expected energy of a linear pH system: solves the
/// Lyapunov equation F P + P F^T + Sigma = 0 for F = (J - R) K with
/// H = (1/2) z^T K z, then returns (1/2) tr(K P).
pub fn stationary_energy(spec: &HybridSystemSpec) -> f64 {
    use nalgebra::DMatrix;
    let d = spec.dim;
    let law = &spec.modes[0];
    // K from the quadratic coefficients: H = sum_j xi_j theta_j with
    // theta in {z1^2, z2^2, z1 z2}: K_ii = 2 xi(zi^2), K_ij = xi(zi zj)
    let mut k = DMatrix::zeros(d, d);
    for (j, basis) in spec.library.basis.iter().enumerate() {
        if let crate::basis::BasisFn::Mono { powers } = basis {
            let total: u8 = powers.iter().sum();
            if total != 2 {
                continue;
            }
            let active: Vec<usize> = powers
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0)
                .map(|(i, _)| i)
                .collect();
            if active.len() == 1 {
                k[(active[0], active[0])] += 2.0 * law.xi[j];
            } else {
                k[(active[0], active[1])] += law.xi[j];
                k[(active[1], active[0])] += law.xi[j];
            }
        }
    }
    let f = (&law.j - &law.r) * &k;
    // vec(P) from (I (x) F + F (x) I) vec(P) = -vec(Sigma)
    let n2 = d * d;
    let mut lhs = DMatrix::zeros(n2, n2);
    for i in 0..d {
        for j in 0..d {
            for l in 0..d {
                // F P: (i,j) gets F[i,l] P[l,j]
                lhs[(i * d + j, l * d + j)] += f[(i, l)];
                // P F^T: (i,j) gets P[i,l] F[j,l]
                lhs[(i * d + j, i * d + l)] += f[(j, l)];
            }
        }
    }
    let rhs = nalgebra::DVector::from_iterator(
        n2,
        (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| -law.sigma[(i, j)]),
    );
    let p_vec = lhs.lu().solve(&rhs).expect("Lyapunov system solvable");
    let p = DMatrix::from_fn(d, d, |i, j| p_vec[i * d + j]);
    0.5 * (k * p).trace()
}

/// Certificate report CSV: `system,alpha,C_E,T,bound,empirical_U,pass(0|1)`.
pub fn certificate_csv(rows: &[(String, EnergyDriftReport)]) -> String {
    let mut s = String::from("system,alpha,C_E,T,bound,empirical_U,pass\n");
    for (name, rep) in rows {
        s.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6e},{:.6e},{}\n",
            name,
            rep.bound.alpha,
            rep.bound.c_energy,
            rep.inputs.horizon,
            rep.bound.bound,
            rep.empirical_mean,
            u8::from(rep.pass)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_inputs() -> CertificateInputs {
        CertificateInputs {
            dissipation_floor: 1.0,
            pl_constant: 1.0,
            input_gain: 1.0,
            action_bound: 1.0,
            hessian_bound: 1.0,
            diffusion_trace: 1.0,
            horizon: 1.0,
            initial_energy: 2.0,
        }
    }

    #[test]
    fn unit_constants() {
        let b = energy_bound(&unit_inputs());
        assert_relative_eq!(b.alpha, 1.0);
        assert_relative_eq!(b.c_energy, 1.0);
    }

    #[test]
    fn zero_horizon_returns_initial_energy() {
        let mut inp = unit_inputs();
        inp.horizon = 0.0;
        assert_relative_eq!(energy_bound(&inp).bound, inp.initial_energy);
    }

    #[test]
    fn long_horizon_converges_to_stationary_ratio() {
        let mut inp = unit_inputs();
        inp.horizon = 200.0;
        let b = energy_bound(&inp);
        assert_relative_eq!(b.bound, b.c_energy / b.alpha, epsilon = 1e-9);
    }

    #[test]
    fn bound_monotone_in_diffusion() {
        let mut prev = 0.0;
        for nu2 in [0.1, 0.5, 1.0, 2.0] {
            let mut inp = unit_inputs();
            inp.diffusion_trace = nu2;
            let b = energy_bound(&inp).bound;
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn pinsker_values() {
        let p = pinsker_transfer(0.0, 5.0, 0.1, 0.2);
        assert_relative_eq!(p.eps_tv, 0.0);
        assert_relative_eq!(p.subopt_bound, 0.1);

        let p = pinsker_transfer(2.0, 5.0, 0.0, 0.2);
        assert_relative_eq!(p.eps_tv, 1.0);

        let p = pinsker_transfer(0.02, 3.0, 0.05, 0.2);
        assert_relative_eq!(p.eps_tv, 0.1, epsilon = 1e-12);
        assert_relative_eq!(p.subopt_bound, 0.65, epsilon = 1e-12);
        assert_relative_eq!(p.chance_budget, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn mc_margin_values() {
        assert_relative_eq!(mc_margin(200, 1, 1.0 / std::f64::consts::E), 0.05);
        // quadrupling n halves the margin
        assert_relative_eq!(
            mc_margin(800, 1, 1.0 / std::f64::consts::E),
            0.025,
            epsilon = 1e-12
        );
        // L = 10 vs L = 1 grows by the log-ratio factor
        let beta = 0.1;
        let m1 = mc_margin(100, 1, beta);
        let m10 = mc_margin(100, 10, beta);
        let expect = (1.0 + 10f64.ln() / (1.0 / beta).ln()).sqrt();
        assert_relative_eq!(m10 / m1, expect, epsilon = 1e-12);
    }

    #[test]
    fn markov_tail_clips_at_one() {
        let b = energy_bound(&unit_inputs());
        assert_relative_eq!(b.markov_tail(1e-9), 1.0);
        assert!(b.markov_tail(1e9) < 1e-8);
    }
}
