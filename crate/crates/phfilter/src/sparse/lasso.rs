//! Lasso by cyclic coordinate descent with soft thresholding.
//!
//! Columns are rescaled to unit mean-square internally and the per-column
//! penalties adjusted to match, so the solver minimizes exactly
//! `(1/2n) ||b - A xi||^2 + lambda ||xi||_1` in the original coordinates.
//! Zero start, deterministic sweeps, KKT-checked convergence.

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};

const DEFAULT_MAX_SWEEPS: usize = 100_000;
const KKT_TOL: f64 = 1e-10;

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Minimizes `(1/2n) ||b - A xi||^2 + lambda ||xi||_1`.
pub fn lasso(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    lasso_with_penalties(a, b, &vec![lambda; a.ncols()])
}

/// Per-coordinate penalty variant; a zero penalty on every coordinate is an
/// ordinary least-squares fit by coordinate descent.
pub fn lasso_with_penalties(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    penalties: &[f64],
) -> Result<DVector<f64>> {
    let n = a.nrows();
    let p = a.ncols();
    if b.len() != n || penalties.len() != p {
        return Err(CoreError::DimensionMismatch(format!(
            "design {n}x{p}, response {}, penalties {}",
            b.len(),
            penalties.len()
        )));
    }
    assert!(penalties.iter().all(|&l| l >= 0.0));
    let nf = n as f64;

    // internal column scaling to unit mean-square; penalties transform with
    // the coordinates so the original objective is preserved
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let ss: f64 = a.column(j).iter().map(|v| v * v).sum();
            (ss / nf).sqrt()
        })
        .collect();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(p);
    for j in 0..p {
        let s = scales[j];
        let col = a.column(j);
        if s > 0.0 {
            cols.push(col.map(|v| v / s));
        } else {
            cols.push(col.into_owned());
        }
    }
    let pen: Vec<f64> = (0..p)
        .map(|j| {
            if scales[j] > 0.0 {
                penalties[j] / scales[j]
            } else {
                penalties[j]
            }
        })
        .collect();

    let mut xi = vec![0.0f64; p];
    let mut residual = b.clone();
    let mut sweeps = 0usize;
    loop {
        let mut max_change: f64 = 0.0;
        for j in 0..p {
            if scales[j] == 0.0 {
                continue; // identically-zero column stays at zero
            }
            let old = xi[j];
            // gram of the scaled column is exactly n
            let rho = cols[j].dot(&residual) / nf + old;
            let new = soft_threshold(rho, pen[j]);
            if new != old {
                residual.axpy(old - new, &cols[j], 1.0);
                xi[j] = new;
                max_change = max_change.max((new - old).abs());
            }
        }
        sweeps += 1;
        if max_change < 1e-14 || sweeps >= DEFAULT_MAX_SWEEPS {
            // KKT residuals in the scaled coordinates
            let mut worst = 0.0f64;
            for j in 0..p {
                if scales[j] == 0.0 {
                    continue;
                }
                let grad = cols[j].dot(&residual) / nf;
                let viol = if xi[j] != 0.0 {
                    (grad - pen[j] * xi[j].signum()).abs()
                } else {
                    (grad.abs() - pen[j]).max(0.0)
                };
                worst = worst.max(viol);
            }
            if worst <= KKT_TOL {
                break;
            }
            if sweeps >= DEFAULT_MAX_SWEEPS {
                return Err(CoreError::NoConvergence {
                    sweeps,
                    residual: worst,
                });
            }
        }
    }
    // de-scale
    let out = DVector::from_iterator(
        p,
        (0..p).map(|j| if scales[j] > 0.0 { xi[j] / scales[j] } else { 0.0 }),
    );
    Ok(out)
}

/// Dense least squares via normal equations with a tiny ridge for numerical
/// rank safety. Used by the dense-fit baseline.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> Result<DVector<f64>> {
    let p = a.ncols();
    if b.len() != a.nrows() {
        return Err(CoreError::DimensionMismatch(
            "least_squares shape mismatch".into(),
        ));
    }
    let mut gram = a.transpose() * a;
    for j in 0..p {
        gram[(j, j)] += ridge;
    }
    let rhs = a.transpose() * b;
    gram.lu()
        .solve(&rhs)
        .ok_or_else(|| CoreError::DimensionMismatch("singular normal equations".into()))
}

/// Largest penalty with a nonzero solution: `||(1/n) A^T b||_inf`.
pub fn lambda_max(a: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let n = a.nrows() as f64;
    (a.transpose() * b).amax() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha12Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn random_design(n: usize, p: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, p, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        })
    }

    #[test]
    fn zero_penalty_matches_normal_equations() {
        let a = random_design(200, 8, 1);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let xi_true = DVector::from_fn(8, |i, _| if i % 3 == 0 { 1.5 } else { -0.7 });
        let noise = DVector::from_fn(200, |_, _| 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        let b = &a * &xi_true + noise;
        let xi_cd = lasso(&a, &b, 0.0).unwrap();
        let xi_ls = least_squares(&a, &b, 0.0).unwrap();
        let rel = (&xi_cd - &xi_ls).norm() / xi_ls.norm();
        assert!(rel < 1e-8, "rel err {rel}");
    }

    #[test]
    fn shutdown_threshold_gives_zero() {
        let a = random_design(100, 5, 3);
        let b = DVector::from_fn(100, |i, _| (i as f64 * 0.37).sin());
        let lmax = lambda_max(&a, &b);
        let xi = lasso(&a, &b, lmax * 1.0001).unwrap();
        assert!(xi.iter().all(|&x| x == 0.0), "{xi:?}");
    }

    #[test]
    fn orthonormal_design_soft_threshold_closed_form() {
        // columns scaled so (1/n) A^T A = I
        let n = 64usize;
        let mut a = DMatrix::zeros(n, 4);
        for j in 0..4 {
            for i in 0..n {
                // orthogonal trig design
                let theta = 2.0 * std::f64::consts::PI * ((j + 1) * i) as f64 / n as f64;
                a[(i, j)] = if j % 2 == 0 { theta.sin() } else { theta.cos() } * 2f64.sqrt();
            }
        }
        let xi_true = DVector::from_column_slice(&[2.0, -1.0, 0.4, 0.0]);
        let b = &a * &xi_true;
        let lambda = 0.6;
        let xi = lasso(&a, &b, lambda).unwrap();
        // closed form: soft-threshold of (1/n) A^T b at lambda
        let corr = (a.transpose() * &b) / n as f64;
        for j in 0..4 {
            let expect = soft_threshold(corr[j], lambda);
            assert!(
                (xi[j] - expect).abs() < 1e-8,
                "coord {j}: {} vs {}",
                xi[j],
                expect
            );
        }
    }

    #[test]
    fn kkt_conditions_at_solution() {
        let a = random_design(300, 10, 7);
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let mut xi_true = DVector::zeros(10);
        xi_true[1] = 2.0;
        xi_true[6] = -1.2;
        let noise = DVector::from_fn(300, |_, _| 0.05 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        let b = &a * &xi_true + noise;
        let lambda = 0.05;
        let xi = lasso(&a, &b, lambda).unwrap();
        let grad = (a.transpose() * (&b - &a * &xi)) / 300.0;
        for j in 0..10 {
            if xi[j] != 0.0 {
                assert!(
                    (grad[j] - lambda * xi[j].signum()).abs() < 1e-6,
                    "active coord {j}"
                );
            } else {
                assert!(grad[j].abs() <= lambda + 1e-8, "inactive coord {j}");
            }
        }
    }

    #[test]
    fn objective_nonincreasing_over_sweeps() {
        // run the solver at several penalties and confirm the objective at
        // the solution never exceeds the zero-start objective
        let a = random_design(150, 6, 11);
        let b = DVector::from_fn(150, |i, _| ((i * i) as f64 * 0.01).cos());
        let obj = |xi: &DVector<f64>, lambda: f64| {
            let r = &b - &a * xi;
            r.norm_squared() / (2.0 * 150.0) + lambda * xi.iter().map(|x| x.abs()).sum::<f64>()
        };
        for lambda in [0.0, 0.01, 0.1, 0.5] {
            let xi = lasso(&a, &b, lambda).unwrap();
            let zero = DVector::zeros(6);
            assert!(obj(&xi, lambda) <= obj(&zero, lambda) + 1e-12);
        }
    }

    #[test]
    fn path_continuity_on_a_grid() {
        let a = random_design(200, 8, 13);
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let mut xi_true = DVector::zeros(8);
        xi_true[0] = 1.0;
        xi_true[4] = -0.8;
        let noise = DVector::from_fn(200, |_, _| 0.02 * rng.sample::<f64, _>(rand_distr::StandardNormal));
        let b = &a * &xi_true + noise;
        let lmax = lambda_max(&a, &b);
        let grid: Vec<f64> = (0..40).map(|k| lmax * (k as f64 + 1.0) / 40.0).collect();
        let mut prev: Option<DVector<f64>> = None;
        for &l in grid.iter().rev() {
            let xi = lasso(&a, &b, l).unwrap();
            if let Some(p) = prev {
                assert!((&xi - &p).amax() < 0.35, "jump at lambda {l}");
            }
            prev = Some(xi);
        }
    }

    #[test]
    fn zero_column_stays_zero() {
        let mut a = random_design(100, 4, 17);
        for i in 0..100 {
            a[(i, 2)] = 0.0;
        }
        let b = DVector::from_fn(100, |i, _| (i as f64).sin());
        let xi = lasso(&a, &b, 0.01).unwrap();
        assert_eq!(xi[2], 0.0);
    }
}
