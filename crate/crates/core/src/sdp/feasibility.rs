//! Feasibility of linear matrix inequalities through interchangeable backends.

use super::{solve_sdp, AffineSym, IpmSettings, LmiProblem};
use crate::error::{Error, Result};
use crate::linalg::{min_eig, sym_fn};
use nalgebra::{DMatrix, DVector};

/// Margin below which a problem is declared infeasible.
pub const INFEASIBILITY_CUTOFF: f64 = 1e-6;

/// Find `y` with `F_k(y) ⪰ 0` for all `k` and `y_i ≥ ε` for every strict variable `i`.
#[derive(Debug, Clone)]
pub struct SdpFeasibilityProblem {
    pub num_vars: usize,
    pub constraints: Vec<AffineSym>,
    pub strict_vars: Vec<usize>,
    pub epsilon: f64,
    /// Bound `|y_i| ≤ box_bound` keeping the margin problem bounded.
    pub box_bound: f64,
}

impl SdpFeasibilityProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, constraints: Vec::new(), strict_vars: Vec::new(), epsilon: 1e-6, box_bound: 1e6 }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, c) in self.constraints.iter().enumerate() {
            if c.constant.nrows() != c.constant.ncols() {
                return Err(Error::DimensionMismatch(format!("constraint {k} is not square")));
            }
            for (v, entries) in &c.terms {
                if *v >= self.num_vars {
                    return Err(Error::DimensionMismatch(format!("constraint {k} uses variable {v}")));
                }
                if entries.iter().any(|&(r, col, _)| r >= c.dim() || col >= c.dim()) {
                    return Err(Error::DimensionMismatch(format!("constraint {k} entry out of range")));
                }
            }
        }
        if let Some(v) = self.strict_vars.iter().find(|&&v| v >= self.num_vars) {
            return Err(Error::DimensionMismatch(format!("strict variable {v} out of range")));
        }
        Ok(())
    }

    /// Smallest slack over all constraints at `y`, strict variables measured against `ε`.
    pub fn margin(&self, y: &DVector<f64>) -> f64 {
        let mut m = f64::INFINITY;
        for c in &self.constraints {
            m = m.min(min_eig(&c.eval(y)));
        }
        for &v in &self.strict_vars {
            m = m.min(y[v] - self.epsilon);
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct Witness {
    pub y: DVector<f64>,
    /// Smallest slack of the witness (≥ 0).
    pub margin: f64,
    pub iterations: usize,
}

pub trait FeasibilityBackend {
    fn name(&self) -> &'static str;
    fn solve(&self, problem: &SdpFeasibilityProblem) -> Result<Witness>;
}

fn classify(margin: f64, y: DVector<f64>, iterations: usize) -> Result<Witness> {
    if margin >= 0.0 {
        Ok(Witness { y, margin, iterations })
    } else if margin < -INFEASIBILITY_CUTOFF {
        Err(Error::Infeasible { margin })
    } else {
        Err(Error::BackendFailure {
            iterations,
            reason: format!("inconclusive margin {margin:e} within the infeasibility cutoff"),
        })
    }
}

/// Maximizes a common margin with the primal-dual interior-point solver.
#[derive(Debug, Clone, Default)]
pub struct InteriorPoint {
    pub settings: IpmSettings,
}

impl FeasibilityBackend for InteriorPoint {
    fn name(&self) -> &'static str {
        "interior-point"
    }

    fn solve(&self, p: &SdpFeasibilityProblem) -> Result<Witness> {
        p.validate()?;
        let n = p.num_vars;
        let t = n;
        let mut lmi = LmiProblem::new(n + 1);
        lmi.objective[t] = 1.0;
        for c in &p.constraints {
            let mut b = c.clone();
            b.add_identity(t, 0, c.dim(), -1.0);
            lmi.push(b);
        }
        for &v in &p.strict_vars {
            lmi.push_scalar(-p.epsilon, &[(v, 1.0), (t, -1.0)]);
        }
        for v in 0..n {
            lmi.push_scalar(p.box_bound, &[(v, 1.0)]);
            lmi.push_scalar(p.box_bound, &[(v, -1.0)]);
        }
        lmi.push_scalar(1.0, &[(t, -1.0)]);
        let sol = solve_sdp(&lmi, &self.settings)?;
        let y = sol.y.rows(0, n).into_owned();
        // Report the margin actually attained rather than the solver's t.
        let margin = p.margin(&y);
        classify(margin.min(1.0), y, sol.iterations)
    }
}

/// Alternating projections between the affine image `y ↦ (F_k(y))` and the PSD cone.
#[derive(Debug, Clone)]
pub struct AlternatingProjections {
    pub max_iter: usize,
    /// Eigenvalue floor used when projecting onto the cone.
    pub target: f64,
}

impl Default for AlternatingProjections {
    fn default() -> Self {
        Self { max_iter: 20_000, target: 1e-7 }
    }
}

impl FeasibilityBackend for AlternatingProjections {
    fn name(&self) -> &'static str {
        "alternating-projections"
    }

    fn solve(&self, p: &SdpFeasibilityProblem) -> Result<Witness> {
        p.validate()?;
        let n = p.num_vars;
        let coefs: Vec<Vec<DMatrix<f64>>> =
            p.constraints.iter().map(|c| (0..n).map(|v| c.coefficient(v)).collect()).collect();
        let mut gram = DMatrix::<f64>::zeros(n, n);
        for cs in &coefs {
            for i in 0..n {
                for j in i..n {
                    let v = cs[i].dot(&cs[j]);
                    gram[(i, j)] += v;
                    if i != j {
                        gram[(j, i)] += v;
                    }
                }
            }
        }
        for &v in &p.strict_vars {
            gram[(v, v)] += 1.0;
        }
        let ridge = 1e-12 * gram.diagonal().amax().max(1.0);
        for i in 0..n {
            gram[(i, i)] += ridge;
        }
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::BackendFailure { iterations: 0, reason: "singular normal equations".into() })?;

        let mut y = DVector::zeros(n);
        let mut best = (p.margin(&y), y.clone());
        for it in 0..self.max_iter {
            let margin = p.margin(&y);
            if margin > best.0 {
                best = (margin, y.clone());
            }
            if margin >= 0.0 {
                return Ok(Witness { y, margin, iterations: it });
            }
            let mut rhs = DVector::zeros(n);
            for (c, cs) in p.constraints.iter().zip(&coefs) {
                let proj = sym_fn(&c.eval(&y), |l| l.max(self.target));
                let target = proj - &c.constant;
                for v in 0..n {
                    rhs[v] += cs[v].dot(&target);
                }
            }
            for &v in &p.strict_vars {
                rhs[v] += y[v].max(p.epsilon + self.target);
            }
            y = chol.solve(&rhs);
        }
        classify(best.0, best.1, self.max_iter)
    }
}

/// Solves with the default interior-point backend.
pub fn solve_feasibility(problem: &SdpFeasibilityProblem) -> Result<Witness> {
    InteriorPoint::default().solve(problem)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scaled_identity(eps: f64) -> SdpFeasibilityProblem {
        // x·I - ε·I ⪰ 0
        let mut p = SdpFeasibilityProblem::new(1);
        let mut c = AffineSym::new(3);
        c.constant = -DMatrix::identity(3, 3) * eps;
        c.add_identity(0, 0, 3, 1.0);
        p.constraints.push(c);
        p
    }

    fn negative_identity() -> SdpFeasibilityProblem {
        let mut p = SdpFeasibilityProblem::new(1);
        let mut c = AffineSym::new(2);
        c.constant = -DMatrix::identity(2, 2);
        p.constraints.push(c);
        // The variable must appear somewhere for the interior-point solver.
        p.strict_vars.push(0);
        p
    }

    #[test]
    fn identity_feasible_both_backends() {
        let eps = 1e-6;
        for backend in [&InteriorPoint::default() as &dyn FeasibilityBackend, &AlternatingProjections::default()] {
            let w = backend.solve(&scaled_identity(eps)).unwrap();
            assert!(w.y[0] >= eps, "{}: {}", backend.name(), w.y[0]);
        }
    }

    #[test]
    fn negative_identity_infeasible_both_backends() {
        for backend in [&InteriorPoint::default() as &dyn FeasibilityBackend, &AlternatingProjections::default()] {
            match backend.solve(&negative_identity()) {
                Err(Error::Infeasible { margin }) => assert!(margin < -0.5, "{}", backend.name()),
                other => panic!("{}: expected infeasible, got {other:?}", backend.name()),
            }
        }
    }

    #[test]
    fn strict_variable_respects_epsilon() {
        // y0 ≥ ε, [1 y0; y0 1] ⪰ 0
        let mut p = SdpFeasibilityProblem::new(1);
        let mut c = AffineSym::new(2);
        c.constant = DMatrix::identity(2, 2);
        c.add(0, 0, 1, 1.0);
        p.constraints.push(c);
        p.strict_vars.push(0);
        p.epsilon = 0.5;
        let w = solve_feasibility(&p).unwrap();
        assert!(w.y[0] >= 0.5 && w.y[0] <= 1.0);
    }

    #[test]
    fn deterministic() {
        let a = solve_feasibility(&scaled_identity(1e-3)).unwrap();
        let b = solve_feasibility(&scaled_identity(1e-3)).unwrap();
        assert_eq!(a.y, b.y);
    }
}
