//! Kernel compatibility test and rank-increasing input design for exact data.

use super::{DetectionState, StepReport};
use crate::data_model::TrajectoryData;
use crate::error::{Error, Result};
use crate::linalg::{kernel, numerical_rank, range_residual};
use nalgebra::{DMatrix, DVector};

/// Relative residual of the subspace inclusion test.
pub const INCLUSION_TOL: f64 = 1e-8;
/// Relative least-squares residual below which `x` counts as lying in the range.
pub const RANGE_TOL: f64 = 1e-9;

/// Columns `(x; u; x_next)` of all transitions, each scaled to unit norm.
///
/// Scaling a whole column preserves the linear relation `x_next = A x + B u`.
fn normalized_columns(datasets: &[&TrajectoryData]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut lhs = Vec::new();
    let mut rhs = Vec::new();
    for d in datasets {
        for (x, u, xn) in d.transitions() {
            let s = (x.norm_squared() + u.norm_squared() + xn.norm_squared()).sqrt();
            if s == 0.0 {
                continue;
            }
            let mut z = DVector::zeros(x.len() + u.len());
            z.rows_mut(0, x.len()).copy_from(&x);
            z.rows_mut(x.len(), u.len()).copy_from(&u);
            lhs.push(z / s);
            rhs.push(xn / s);
        }
    }
    let (n, m) = (datasets[0].n(), datasets[0].m());
    if lhs.is_empty() {
        return (DMatrix::zeros(n + m, 0), DMatrix::zeros(n, 0));
    }
    (DMatrix::from_columns(&lhs), DMatrix::from_columns(&rhs))
}

/// Whether some `(A, B)` explains both exact datasets: `ker [X_−; U_−] ⊆ ker X_+` on the joined data.
pub fn kernel_compatible(d1: &TrajectoryData, d2: &TrajectoryData) -> Result<bool> {
    if d1.n() != d2.n() || d1.m() != d2.m() {
        return Err(Error::DimensionMismatch(format!(
            "datasets have (n, m) = ({}, {}) and ({}, {})",
            d1.n(),
            d1.m(),
            d2.n(),
            d2.m()
        )));
    }
    let (d, xp) = normalized_columns(&[d1, d2]);
    if d.ncols() == 0 {
        return Ok(true);
    }
    let v = kernel(&d);
    if v.ncols() == 0 {
        return Ok(true);
    }
    let scale = xp.norm().max(f64::MIN_POSITIVE);
    Ok((&xp * v).norm() <= INCLUSION_TOL * scale)
}

/// Input that makes `[X_−; U_−]` gain rank when appended with `x`, or zero when none is needed.
///
/// Returns `u = s·c‖x‖·η/‖η‖` for the left-kernel vector `(ξ; η)` with the largest `‖η‖`,
/// `s` matching the sign of `ξᵀx`.
pub fn design_input(state: &DetectionState, x: &DVector<f64>) -> DVector<f64> {
    let (n, m) = (state.online.n(), state.online.m());
    let zero = DVector::zeros(m);
    let xnorm = x.norm();
    if state.online.is_empty() || xnorm == 0.0 {
        return zero;
    }
    let (d, _) = normalized_columns(&[&state.online]);
    let xm = d.rows(0, n).into_owned();
    if range_residual(&xm, x) > RANGE_TOL * xnorm {
        return zero;
    }
    let left = kernel(&d.transpose());
    let best = (0..left.ncols())
        .map(|k| left.column(k).into_owned())
        .max_by(|a, b| a.rows(n, m).norm().total_cmp(&b.rows(n, m).norm()));
    let Some(v) = best else {
        return zero;
    };
    let eta = v.rows(n, m).into_owned();
    let eta_norm = eta.norm();
    if eta_norm <= 1e-12 {
        return zero;
    }
    let xi = v.rows(0, n);
    let s = if xi.dot(x) < 0.0 { -1.0 } else { 1.0 };
    eta * (s * state.input_gain * xnorm / eta_norm)
}

/// Appends `(u, x_next)` and removes the modes whose initialization data are incompatible.
///
/// A zero successor state collapses the candidates to mode 0: every feedback stabilizes it.
pub fn step_detection(
    state: &mut DetectionState,
    init: &[TrajectoryData],
    u: &DVector<f64>,
    x_next: &DVector<f64>,
) -> Result<StepReport> {
    state.online.push(u, x_next);
    if x_next.iter().all(|&v| v == 0.0) {
        let eliminated = state.candidates.iter().copied().filter(|&i| i != 0).collect();
        state.candidates = vec![0];
        return Ok(StepReport { eliminated, remaining: state.candidates.clone() });
    }
    let online = state.online.clone();
    let eliminated = state.eliminate(|i| kernel_compatible(&init[i], &online))?;
    if state.candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let cap = online.n() + online.m();
    if state.candidates.len() > 1 && online.len() >= cap {
        return Err(Error::NonTermination { steps: online.len() });
    }
    Ok(StepReport { eliminated, remaining: state.candidates.clone() })
}

/// Rank of the normalized stacked online data.
pub fn online_rank(state: &DetectionState) -> usize {
    let (d, _) = normalized_columns(&[&state.online]);
    numerical_rank(&d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hstack;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn simulate(a: &DMatrix<f64>, b: &DMatrix<f64>, x0: &[f64], us: &[&[f64]]) -> TrajectoryData {
        let mut x = DVector::from_column_slice(x0);
        let mut d = TrajectoryData::initial(&x, b.ncols());
        for u in us {
            let u = DVector::from_column_slice(u);
            let xn = a * &x + b * &u;
            d.push(&u, &xn);
            x = xn;
        }
        d
    }

    #[test]
    fn self_and_same_system_compatible() {
        let a = mat(2, 2, &[0.5, 1.0, 0.0, 0.3]);
        let b = mat(2, 1, &[0.0, 1.0]);
        let d1 = simulate(&a, &b, &[1.0, 0.0], &[&[1.0], &[0.0]]);
        let d2 = simulate(&a, &b, &[0.0, 2.0], &[&[-1.0], &[3.0], &[0.5]]);
        assert!(kernel_compatible(&d1, &d1).unwrap());
        assert!(kernel_compatible(&d1, &d2).unwrap());
    }

    #[test]
    fn different_systems_with_rich_data_incompatible() {
        let b = mat(1, 1, &[1.0]);
        let d1 = simulate(&mat(1, 1, &[0.5]), &b, &[1.0], &[&[1.0], &[0.0]]);
        let d2 = simulate(&mat(1, 1, &[0.9]), &b, &[1.0], &[&[1.0], &[0.0]]);
        assert!(!kernel_compatible(&d1, &d2).unwrap());
    }

    #[test]
    fn hand_example_raises_rank() {
        // X_− = [1; 0], U_− = [0]; x = (1, 0) lies in im X_−.
        let online = TrajectoryData::new(mat(1, 1, &[0.0]), mat(2, 2, &[1.0, 0.5, 0.0, 0.0])).unwrap();
        let state = DetectionState { candidates: vec![0, 1], online, input_gain: 0.1 };
        let x = DVector::from_vec(vec![1.0, 0.0]);
        let u = design_input(&state, &x);
        assert!((u.norm() - 0.1).abs() < 1e-12);
        let before = state.online.stacked();
        let col = DMatrix::from_column_slice(3, 1, &[x[0], x[1], u[0]]);
        assert_eq!(numerical_rank(&before), 1);
        assert_eq!(numerical_rank(&hstack(&[&before, &col])), 2);
    }

    #[test]
    fn first_step_and_zero_state_use_zero_input() {
        let x0 = DVector::from_vec(vec![1.0, 2.0]);
        let state = DetectionState::new(3, &x0, 1, 0.1);
        assert_eq!(design_input(&state, &x0), DVector::zeros(1));
        let seeded = DetectionState::seeded(3, &x0, &DVector::from_vec(vec![1.0]), &x0, 0.1);
        assert_eq!(design_input(&seeded, &DVector::zeros(2)), DVector::zeros(1));
    }

    #[test]
    fn zero_successor_collapses_to_first_mode() {
        let x0 = DVector::from_vec(vec![1.0]);
        let init = vec![TrajectoryData::initial(&x0, 1); 3];
        let mut state = DetectionState::new(3, &x0, 1, 0.1);
        let rep = step_detection(&mut state, &init, &DVector::zeros(1), &DVector::zeros(1)).unwrap();
        assert_eq!(state.candidates, vec![0]);
        assert_eq!(rep.eliminated, vec![1, 2]);
    }

    #[test]
    fn single_mode_needs_no_elimination() {
        let a = mat(1, 1, &[0.5]);
        let b = mat(1, 1, &[1.0]);
        let init = vec![simulate(&a, &b, &[1.0], &[&[1.0], &[0.0]])];
        let mut state = DetectionState::new(1, &DVector::from_vec(vec![1.0]), 1, 0.1);
        let rep = step_detection(&mut state, &init, &DVector::zeros(1), &DVector::from_vec(vec![0.5])).unwrap();
        assert!(rep.eliminated.is_empty());
        assert_eq!(state.detected(), Some(0));
    }
}
