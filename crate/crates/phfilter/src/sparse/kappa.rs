//! Restricted-curvature estimation over the Lasso cone.
//!
//! kappa is the smallest value of `||A d||^2 / (n ||d||^2)` over directions
//! in the cone `||d_{S^c}||_1 <= 3 ||d_S||_1`. The estimate combines random
//! cone-feasible directions built from every sign pattern on the support
//! with the exact minimum over small restricted supports, keeping only
//! cone-compatible eigenvectors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

fn cone_ratio(gram_over_n: &DMatrix<f64>, d: &DVector<f64>) -> f64 {
    let num = (gram_over_n * d).dot(d);
    let den = d.norm_squared();
    if den == 0.0 {
        f64::INFINITY
    } else {
        (num / den).max(0.0)
    }
}

fn in_cone(d: &DVector<f64>, support: &[usize]) -> bool {
    let mut on = 0.0;
    let mut off = 0.0;
    for (j, &v) in d.iter().enumerate() {
        if support.contains(&j) {
            on += v.abs();
        } else {
            off += v.abs();
        }
    }
    off <= 3.0 * on + 1e-12
}

/// Estimates the restricted curvature of `(1/n) A^T A` over the cone for the
/// given support. `draws` random cone directions per sign pattern; supports
/// of size up to `2k` are additionally minimized exactly when p <= 12.
pub fn estimate_kappa(a: &DMatrix<f64>, support: &[usize], draws: usize, seed: u64) -> f64 {
    let n = a.nrows() as f64;
    let p = a.ncols();
    assert!(!support.is_empty(), "support must be nonempty");
    let gram = (a.transpose() * a) / n;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;

    // random cone-feasible directions for every sign pattern on the support
    let k = support.len();
    let patterns = 1usize << k;
    let per_pattern = draws.div_ceil(patterns);
    for bits in 0..patterns {
        for _ in 0..per_pattern {
            let mut d = DVector::zeros(p);
            let mut on_l1 = 0.0;
            for (idx, &j) in support.iter().enumerate() {
                let sign = if bits >> idx & 1 == 1 { -1.0 } else { 1.0 };
                let mag = 0.2 + rng.random::<f64>();
                d[j] = sign * mag;
                on_l1 += mag;
            }
            // off-support tail with l1 mass up to the cone limit
            let budget = 3.0 * on_l1 * rng.random::<f64>();
            let off: Vec<usize> = (0..p).filter(|j| !support.contains(j)).collect();
            if !off.is_empty() {
                let mut raw: Vec<f64> = off
                    .iter()
                    .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                    .collect();
                let l1: f64 = raw.iter().map(|v| v.abs()).sum();
                if l1 > 0.0 {
                    for v in &mut raw {
                        *v *= budget / l1;
                    }
                }
                for (&j, &v) in off.iter().zip(&raw) {
                    d[j] = v;
                }
            }
            best = best.min(cone_ratio(&gram, &d));
        }
    }

    // exact restricted minima on small supersets of coordinates
    if p <= 12 {
        let max_size = (2 * k).min(p);
        let subsets = subsets_up_to(p, max_size);
        for t in subsets {
            let sub = gram.select_rows(t.iter()).select_columns(t.iter());
            let eig = sub.symmetric_eigen();
            for (col, &val) in eig.eigenvalues.iter().enumerate() {
                let mut d = DVector::zeros(p);
                for (row, &j) in t.iter().enumerate() {
                    d[j] = eig.eigenvectors[(row, col)];
                }
                if in_cone(&d, support) {
                    best = best.min(val.max(0.0));
                }
            }
        }
    }
    best
}

/// All nonempty coordinate subsets of size <= max_size.
fn subsets_up_to(p: usize, max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    fn rec(start: usize, p: usize, left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if !current.is_empty() {
            out.push(current.clone());
        }
        if left == 0 {
            return;
        }
        for j in start..p {
            current.push(j);
            rec(j + 1, p, left - 1, current, out);
            current.pop();
        }
    }
    rec(0, p, max_size, &mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    #[test]
    fn isometric_design_has_unit_curvature() {
        // A with orthonormal columns scaled by sqrt(n): (1/n) A^T A = I
        let n = 128usize;
        let mut a = DMatrix::zeros(n, 4);
        for j in 0..4 {
            for i in 0..n {
                let theta = 2.0 * std::f64::consts::PI * ((j + 1) * i) as f64 / n as f64;
                a[(i, j)] = if j % 2 == 0 { theta.sin() } else { theta.cos() } * 2f64.sqrt();
            }
        }
        let kappa = estimate_kappa(&a, &[0, 1], 2000, 5);
        assert!((kappa - 1.0).abs() < 0.01, "kappa {kappa}");
    }

    #[test]
    fn null_cone_direction_collapses_kappa() {
        // column 2 = column 0: the difference direction lies in the cone
        // for support {0, 1} and in the null space
        let n = 60usize;
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let mut a = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        for i in 0..n {
            a[(i, 2)] = a[(i, 0)];
        }
        let kappa = estimate_kappa(&a, &[0, 1], 2000, 5);
        assert!(kappa < 1e-9, "kappa {kappa}");
    }

    #[test]
    fn stable_across_reruns() {
        let n = 2000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let a = DMatrix::from_fn(n, 12, |_, _| rng.sample::<f64, _>(StandardNormal));
        let k1 = estimate_kappa(&a, &[0, 3, 7], 10_000, 1);
        let k2 = estimate_kappa(&a, &[0, 3, 7], 10_000, 2);
        assert!(
            (k1 - k2).abs() < 0.1 * k1.max(k2),
            "unstable: {k1} vs {k2}"
        );
    }
}
