//! Plug-in regression design and input reconstruction.

use crate::basis::LibrarySpec;
use crate::error::{CoreError, Result};
use crate::proxy::smooth;
use crate::systems::{HybridSystemSpec, ObservationSequence};
use nalgebra::{DMatrix, DVector};

/// Stacks the mode-conditioned regression `b = A xi + noise` from plug-in
/// structure matrices: row block i is `(J - R) grad theta(z_i)^T` against
/// `zdot_i - G a_i`.
pub fn plugin_design(
    j: &DMatrix<f64>,
    r: &DMatrix<f64>,
    g: &DMatrix<f64>,
    states: &[DVector<f64>],
    derivs: &[DVector<f64>],
    actions: &[DVector<f64>],
    library: &LibrarySpec,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = states.len();
    if derivs.len() != n || actions.len() != n {
        return Err(CoreError::DimensionMismatch(format!(
            "states {n}, derivs {}, actions {}",
            derivs.len(),
            actions.len()
        )));
    }
    let d = library.dim;
    let p = library.len();
    if j.nrows() != d || r.nrows() != d {
        return Err(CoreError::DimensionMismatch(
            "structure matrices disagree with the library dimension".into(),
        ));
    }
    let jr = j - r;
    let mut a = DMatrix::zeros(n * d, p);
    let mut b = DVector::zeros(n * d);
    for (i, z) in states.iter().enumerate() {
        if z.len() != d {
            return Err(CoreError::DimensionMismatch(format!(
                "state {i} has dimension {}",
                z.len()
            )));
        }
        let grads = library.grads(z.as_slice()); // p x d
        let block = &jr * grads.transpose(); // d x p
        a.view_mut((i * d, 0), (d, p)).copy_from(&block);
        let forced = derivs[i].clone() - g * &actions[i];
        b.rows_mut(i * d, d).copy_from(&forced);
    }
    Ok((a, b))
}

/// Central differences per column, then the same moving-average smoother the
/// proxy scores use.
pub fn numerical_derivatives(rows: &[DVector<f64>], dt: f64, window: usize) -> Vec<DVector<f64>> {
    let n = rows.len();
    assert!(n >= 2, "need at least two rows");
    let d = rows[0].len();
    let mut cols: Vec<Vec<f64>> = vec![vec![0.0; n]; d];
    for c in 0..d {
        for t in 0..n {
            let (lo, hi, span) = if t == 0 {
                (0, 1, dt)
            } else if t == n - 1 {
                (n - 2, n - 1, dt)
            } else {
                (t - 1, t + 1, 2.0 * dt)
            };
            cols[c][t] = (rows[hi][c] - rows[lo][c]) / span;
        }
        cols[c] = smooth(&cols[c], window);
    }
    (0..n)
        .map(|t| DVector::from_iterator(d, (0..d).map(|c| cols[c][t])))
        .collect()
}

/// Rebuilds full state rows from an observation sequence: observed
/// coordinates are linearly interpolated across unobserved steps, and hidden
/// momentum coordinates are reconstructed by differencing their paired
/// position coordinate (mass one by construction).
pub fn reconstruct_states(
    spec: &HybridSystemSpec,
    obs: &ObservationSequence,
) -> Result<Vec<DVector<f64>>> {
    let n = obs.len();
    if n < 2 {
        return Err(CoreError::EmptyInput("observation sequence".into()));
    }
    let d = spec.dim;
    let mut filled = vec![vec![f64::NAN; n]; d];
    for (k, &c) in obs.observed_coords.iter().enumerate() {
        // collect observed support points
        let mut last_seen: Option<usize> = None;
        for t in 0..n {
            if let Some(o) = obs.observation(t) {
                filled[c][t] = o[k];
                if let Some(prev) = last_seen {
                    // linear interpolation over the gap
                    let span = t - prev;
                    if span > 1 {
                        let a = filled[c][prev];
                        let b = filled[c][t];
                        for (offset, u) in (prev + 1..t).enumerate() {
                            let w = (offset + 1) as f64 / span as f64;
                            filled[c][u] = a * (1.0 - w) + b * w;
                        }
                    }
                }
                last_seen = Some(t);
            }
        }
        // extend flat past the ends
        let first = (0..n).find(|&t| filled[c][t].is_finite());
        let Some(first) = first else {
            return Err(CoreError::EmptyInput(format!(
                "coordinate {c} never observed"
            )));
        };
        for t in 0..first {
            filled[c][t] = filled[c][first];
        }
        let last = (0..n).rev().find(|&t| filled[c][t].is_finite()).unwrap();
        for t in last + 1..n {
            filled[c][t] = filled[c][last];
        }
    }
    // hidden momenta from paired positions
    for (idx, &pc) in spec.momentum_coords.iter().enumerate() {
        if obs.observed_coords.contains(&pc) {
            continue;
        }
        let qc = spec.position_coords[idx];
        if !obs.observed_coords.contains(&qc) {
            return Err(CoreError::EmptyInput(format!(
                "neither momentum {pc} nor its position {qc} is observed"
            )));
        }
        for t in 0..n {
            let (lo, hi, span) = if t == 0 {
                (0, 1, obs.dt)
            } else if t == n - 1 {
                (n - 2, n - 1, obs.dt)
            } else {
                (t - 1, t + 1, 2.0 * obs.dt)
            };
            filled[pc][t] = (filled[qc][hi] - filled[qc][lo]) / span;
        }
    }
    // any remaining coordinate must be observed
    for (c, col) in filled.iter().enumerate() {
        if col.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::EmptyInput(format!(
                "coordinate {c} cannot be reconstructed"
            )));
        }
    }
    Ok((0..n)
        .map(|t| DVector::from_iterator(d, (0..d).map(|c| filled[c][t])))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_system, SystemName};
    use approx::assert_relative_eq;

    #[test]
    fn zero_input_map_leaves_derivatives() {
        let spec = make_system(SystemName::Puck);
        let lib = &spec.library;
        let states = vec![DVector::from_column_slice(&[0.5, -0.2])];
        let derivs = vec![DVector::from_column_slice(&[1.0, 2.0])];
        let actions = vec![DVector::from_column_slice(&[3.0])];
        let g0 = DMatrix::zeros(2, 1);
        let (_, b) = plugin_design(
            &spec.modes[0].j,
            &spec.modes[0].r,
            &g0,
            &states,
            &derivs,
            &actions,
            lib,
        )
        .unwrap();
        assert_eq!(b.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn exact_inputs_satisfy_model_identity() {
        // b = A xi* to machine precision on exact states/derivatives
        let spec = make_system(SystemName::Block);
        let mode = 1usize;
        let law = &spec.modes[mode];
        let states: Vec<DVector<f64>> = (0..50)
            .map(|i| {
                DVector::from_column_slice(&[(i as f64 * 0.1).sin(), (i as f64 * 0.07).cos()])
            })
            .collect();
        let actions: Vec<DVector<f64>> = (0..50)
            .map(|i| DVector::from_column_slice(&[(i % 3) as f64]))
            .collect();
        let derivs: Vec<DVector<f64>> = states
            .iter()
            .zip(&actions)
            .map(|(z, a)| spec.vector_field(mode, z.as_slice(), a.as_slice()))
            .collect();
        let (a, b) = plugin_design(
            &law.j,
            &law.r,
            &law.g,
            &states,
            &derivs,
            &actions,
            &spec.library,
        )
        .unwrap();
        let residual = (&b - &a * &law.xi).amax();
        assert!(residual < 1e-12, "residual {residual}");
    }

    #[test]
    fn dimension_mismatch_detected() {
        let spec = make_system(SystemName::Puck);
        let err = plugin_design(
            &spec.modes[0].j,
            &spec.modes[0].r,
            &spec.modes[0].g,
            &[DVector::zeros(2)],
            &[],
            &[],
            &spec.library,
        )
        .unwrap_err();
        assert!(matches!(err, CoreError::DimensionMismatch(_)));
    }

    #[test]
    fn derivative_of_linear_ramp_is_exact() {
        let rows: Vec<DVector<f64>> = (0..40)
            .map(|t| DVector::from_column_slice(&[2.0 * t as f64 * 0.01, -0.5 * t as f64 * 0.01]))
            .collect();
        let d = numerical_derivatives(&rows, 0.01, 5);
        for row in &d[2..38] {
            assert_relative_eq!(row[0], 2.0, epsilon = 1e-9);
            assert_relative_eq!(row[1], -0.5, epsilon = 1e-9);
        }
    }
}
