//! Hamiltonian candidate library: basis functions with analytic gradients.
//!
//! Each system carries a fixed library of at most twelve scalar basis
//! functions of the state. A mode Hamiltonian is the sparse combination
//! `H_m(z) = theta(z) . xi_m`, and the regression design needs the stacked
//! gradients, so every basis function exposes both `value` and `grad`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// One scalar basis function of the state vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum BasisFn {
    /// Constant 1. Its gradient is identically zero, so it can never be
    /// identified from vector-field data; it is kept as a decoy term.
    Const,
    /// Monomial `prod_i z_i^{powers[i]}`, total degree at most 3.
    Mono { powers: Vec<u8> },
    /// `1 - cos(z_i)`; pendulum gravity term.
    OneMinusCos { coord: usize },
    /// `sin(z_i)`.
    Sin { coord: usize },
    /// `(z_a - z_b)^2`; coupling/contact term between two coordinates.
    SqDiff { a: usize, b: usize },
}

impl BasisFn {
    pub fn value(&self, z: &[f64]) -> f64 {
        match self {
            BasisFn::Const => 1.0,
            BasisFn::Mono { powers } => powers
                .iter()
                .enumerate()
                .map(|(i, &p)| z[i].powi(p as i32))
                .product(),
            BasisFn::OneMinusCos { coord } => 1.0 - z[*coord].cos(),
            BasisFn::Sin { coord } => z[*coord].sin(),
            BasisFn::SqDiff { a, b } => {
                let d = z[*a] - z[*b];
                d * d
            }
        }
    }

    /// Gradient with respect to the full state, written into `out`.
    pub fn grad(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        match self {
            BasisFn::Const => {}
            BasisFn::Mono { powers } => {
                for (j, &pj) in powers.iter().enumerate() {
                    if pj == 0 {
                        continue;
                    }
                    let mut g = pj as f64 * z[j].powi(pj as i32 - 1);
                    for (i, &pi) in powers.iter().enumerate() {
                        if i != j {
                            g *= z[i].powi(pi as i32);
                        }
                    }
                    out[j] = g;
                }
            }
            BasisFn::OneMinusCos { coord } => out[*coord] = z[*coord].sin(),
            BasisFn::Sin { coord } => out[*coord] = z[*coord].cos(),
            BasisFn::SqDiff { a, b } => {
                let d = 2.0 * (z[*a] - z[*b]);
                out[*a] = d;
                out[*b] = -d;
            }
        }
    }

    /// Human-readable identifier used in the system manifest.
    pub fn name(&self) -> String {
        match self {
            BasisFn::Const => "1".to_string(),
            BasisFn::Mono { powers } => {
                let mut s = String::new();
                for (i, &p) in powers.iter().enumerate() {
                    if p == 0 {
                        continue;
                    }
                    if !s.is_empty() {
                        s.push('*');
                    }
                    if p == 1 {
                        s.push_str(&format!("z{}", i + 1));
                    } else {
                        s.push_str(&format!("z{}^{}", i + 1, p));
                    }
                }
                if s.is_empty() { "1".to_string() } else { s }
            }
            BasisFn::OneMinusCos { coord } => format!("1-cos(z{})", coord + 1),
            BasisFn::Sin { coord } => format!("sin(z{})", coord + 1),
            BasisFn::SqDiff { a, b } => format!("(z{}-z{})^2", a + 1, b + 1),
        }
    }
}

/// Fixed candidate library for one system.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LibrarySpec {
    pub dim: usize,
    pub basis: Vec<BasisFn>,
}

impl LibrarySpec {
    pub fn new(dim: usize, basis: Vec<BasisFn>) -> Self {
        assert!(basis.len() <= 12, "library capped at p = 12 terms");
        Self { dim, basis }
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Evaluates all basis functions at `z`.
    pub fn values(&self, z: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.basis.len(), self.basis.iter().map(|b| b.value(z)))
    }

    /// Gradient matrix at `z`: rows are basis functions, columns coordinates.
    pub fn grads(&self, z: &[f64]) -> DMatrix<f64> {
        let p = self.basis.len();
        let mut out = DMatrix::zeros(p, self.dim);
        let mut row = vec![0.0; self.dim];
        for (j, b) in self.basis.iter().enumerate() {
            b.grad(z, &mut row);
            for (i, &g) in row.iter().enumerate() {
                out[(j, i)] = g;
            }
        }
        out
    }

    /// `H(z) = theta(z) . xi`.
    pub fn hamiltonian(&self, z: &[f64], xi: &[f64]) -> f64 {
        self.basis
            .iter()
            .zip(xi)
            .map(|(b, &c)| c * b.value(z))
            .sum()
    }

    /// `grad H(z) = grad theta(z)^T xi`, written into `out`.
    pub fn hamiltonian_grad(&self, z: &[f64], xi: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut row = vec![0.0; self.dim];
        for (b, &c) in self.basis.iter().zip(xi) {
            if c == 0.0 {
                continue;
            }
            b.grad(z, &mut row);
            for (i, &g) in row.iter().enumerate() {
                out[i] += c * g;
            }
        }
    }

    /// Monomial library of total degree <= `max_deg` over `dim` coordinates,
    /// without the constant (added separately if wanted).
    pub fn monomials(dim: usize, max_deg: u8) -> Vec<BasisFn> {
        let mut out = Vec::new();
        let mut powers = vec![0u8; dim];
        fn rec(dim: usize, max_deg: u8, idx: usize, left: u8, powers: &mut Vec<u8>, out: &mut Vec<BasisFn>) {
            if idx == dim {
                if powers.iter().any(|&p| p > 0) {
                    out.push(BasisFn::Mono { powers: powers.clone() });
                }
                return;
            }
            for p in 0..=left {
                powers[idx] = p;
                rec(dim, max_deg, idx + 1, left - p, powers, out);
            }
            powers[idx] = 0;
        }
        rec(dim, max_deg, 0, max_deg, &mut powers, &mut out);
        // sort by total degree then lexicographic powers for a stable order
        out.sort_by(|a, b| {
            let (BasisFn::Mono { powers: pa }, BasisFn::Mono { powers: pb }) = (a, b) else {
                unreachable!()
            };
            let da: u8 = pa.iter().sum();
            let db: u8 = pb.iter().sum();
            da.cmp(&db).then(pb.cmp(pa))
        });
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn central_diff(b: &BasisFn, z: &[f64], h: f64) -> Vec<f64> {
        let mut g = vec![0.0; z.len()];
        for i in 0..z.len() {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[i] += h;
            zm[i] -= h;
            g[i] = (b.value(&zp) - b.value(&zm)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn const_gradient_is_zero() {
        let b = BasisFn::Const;
        let mut g = vec![1.0; 3];
        b.grad(&[0.3, -0.4, 2.0], &mut g);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn square_monomial_value_and_grad() {
        // z1^2 at z = (2, 5): value 4, d/dz1 = 4
        let b = BasisFn::Mono { powers: vec![2, 0] };
        assert_eq!(b.value(&[2.0, 5.0]), 4.0);
        let mut g = vec![0.0; 2];
        b.grad(&[2.0, 5.0], &mut g);
        assert_eq!(g, vec![4.0, 0.0]);
    }

    #[test]
    fn analytic_matches_central_differences() {
        // relative error < 1e-6 on random-ish states for every basis kind
        let basis = vec![
            BasisFn::Mono { powers: vec![1, 2] },
            BasisFn::Mono { powers: vec![3, 0] },
            BasisFn::Mono { powers: vec![1, 1] },
            BasisFn::OneMinusCos { coord: 0 },
            BasisFn::Sin { coord: 1 },
            BasisFn::SqDiff { a: 0, b: 1 },
        ];
        let states = [[0.7, -1.3], [1.9, 0.4], [-0.6, 2.2], [0.05, -0.02]];
        for b in &basis {
            for z in &states {
                let mut g = vec![0.0; 2];
                b.grad(z, &mut g);
                let fd = central_diff(b, z, 1e-5);
                for i in 0..2 {
                    let scale = g[i].abs().max(fd[i].abs()).max(1e-3);
                    assert!(
                        (g[i] - fd[i]).abs() / scale < 1e-6,
                        "{:?} coord {i}: {} vs {}",
                        b,
                        g[i],
                        fd[i]
                    );
                }
            }
        }
    }

    #[test]
    fn monomial_enumeration_count() {
        // degree <= 3 in two variables: 9 non-constant monomials
        let m = LibrarySpec::monomials(2, 3);
        assert_eq!(m.len(), 9);
    }

    #[test]
    fn hamiltonian_combines_terms() {
        let lib = LibrarySpec::new(
            2,
            vec![
                BasisFn::Mono { powers: vec![1, 0] },
                BasisFn::Mono { powers: vec![0, 2] },
            ],
        );
        let xi = [9.81, 0.5];
        let z = [2.0, 3.0];
        assert_relative_eq!(lib.hamiltonian(&z, &xi), 9.81 * 2.0 + 0.5 * 9.0);
        let mut g = vec![0.0; 2];
        lib.hamiltonian_grad(&z, &xi, &mut g);
        assert_relative_eq!(g[0], 9.81);
        assert_relative_eq!(g[1], 3.0);
    }
}
