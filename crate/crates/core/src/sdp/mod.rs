//! Linear matrix inequalities and semidefinite programming.
//!
//! Problems are stated in the form
//!
//! ```text
//! maximize   gᵀy
//! subject to F_k(y) = F_k0 + Σ_i y_i F_ki ⪰ 0,   k = 1..K
//! ```
//!
//! with symmetric, block-diagonal structure expressed as a list of independent blocks.

mod feasibility;
mod ipm;

pub use feasibility::{
    solve_feasibility, AlternatingProjections, FeasibilityBackend, InteriorPoint, SdpFeasibilityProblem, Witness,
    INFEASIBILITY_CUTOFF,
};
pub use ipm::{solve_sdp, IpmSettings, SdpSolution, SdpStatus};

use nalgebra::{DMatrix, DVector};
use std::collections::HashMap;

/// Symmetric matrix expression affine in the decision variables.
///
/// Each coefficient matrix is stored sparsely as upper-triangular entries `(row, col, value)`
/// with `row <= col`; the lower triangle is implied by symmetry.
#[derive(Debug, Clone)]
pub struct AffineSym {
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl AffineSym {
    pub fn new(dim: usize) -> Self {
        Self { constant: DMatrix::zeros(dim, dim), terms: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn term_mut(&mut self, var: usize) -> &mut Vec<(usize, usize, f64)> {
        let pos = match self.terms.iter().position(|(v, _)| *v == var) {
            Some(p) => p,
            None => {
                self.terms.push((var, Vec::new()));
                self.terms.len() - 1
            }
        };
        &mut self.terms[pos].1
    }

    /// Adds `value` to the coefficient of `var` at `(r, c)` and `(c, r)`.
    pub fn add(&mut self, var: usize, r: usize, c: usize, value: f64) {
        if value == 0.0 {
            return;
        }
        let (a, b) = if r <= c { (r, c) } else { (c, r) };
        self.term_mut(var).push((a, b, value));
    }

    /// Adds `value · I` on the diagonal block starting at `offset`.
    pub fn add_identity(&mut self, var: usize, offset: usize, size: usize, value: f64) {
        for i in 0..size {
            self.add(var, offset + i, offset + i, value);
        }
    }

    /// Adds a constant block at `(r0, c0)` together with its transpose at `(c0, r0)`.
    ///
    /// Diagonal blocks (`r0 == c0`) are symmetrized and added once.
    pub fn add_constant(&mut self, r0: usize, c0: usize, block: &DMatrix<f64>) {
        if r0 == c0 {
            let s = crate::linalg::sym(block);
            let mut v = self.constant.view_mut((r0, c0), s.shape());
            v += &s;
        } else {
            {
                let mut v = self.constant.view_mut((r0, c0), block.shape());
                v += block;
            }
            let bt = block.transpose();
            let mut v = self.constant.view_mut((c0, r0), bt.shape());
            v += &bt;
        }
    }

    /// Coefficient matrix of `var` as a dense symmetric matrix.
    pub fn coefficient(&self, var: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim(), self.dim());
        if let Some((_, entries)) = self.terms.iter().find(|(v, _)| *v == var) {
            for &(r, c, val) in entries {
                m[(r, c)] += val;
                if r != c {
                    m[(c, r)] += val;
                }
            }
        }
        m
    }

    /// Evaluates the expression at `y`.
    pub fn eval(&self, y: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (var, entries) in &self.terms {
            let yv = y[*var];
            if yv == 0.0 {
                continue;
            }
            for &(r, c, val) in entries {
                m[(r, c)] += yv * val;
                if r != c {
                    m[(c, r)] += yv * val;
                }
            }
        }
        m
    }

    /// Merges duplicate entries and drops zeros.
    pub fn compact(&mut self) {
        for (_, entries) in &mut self.terms {
            let mut acc: HashMap<(usize, usize), f64> = HashMap::new();
            for &(r, c, v) in entries.iter() {
                *acc.entry((r, c)).or_insert(0.0) += v;
            }
            let mut merged: Vec<(usize, usize, f64)> =
                acc.into_iter().filter(|(_, v)| *v != 0.0).map(|((r, c), v)| (r, c, v)).collect();
            merged.sort_by_key(|a| (a.0, a.1));
            *entries = merged;
        }
        self.terms.retain(|(_, e)| !e.is_empty());
        self.terms.sort_by_key(|(v, _)| *v);
    }

    /// Congruence `Tᵀ F T` with a dense transform `t` of shape `dim × new_dim`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> AffineSym {
        let tt = t.transpose();
        let mut out = AffineSym::new(t.ncols());
        out.constant = crate::linalg::sym(&(&tt * &self.constant * t));
        for (var, _) in &self.terms {
            let c = crate::linalg::sym(&(&tt * self.coefficient(*var) * t));
            out.push_dense(*var, &c);
        }
        out
    }

    /// Adds a dense symmetric coefficient for `var`.
    pub fn push_dense(&mut self, var: usize, coef: &DMatrix<f64>) {
        let scale = coef.amax();
        if scale == 0.0 {
            return;
        }
        let tol = scale * 1e-15;
        let d = coef.nrows();
        let entries = self.term_mut(var);
        for c in 0..d {
            for r in 0..=c {
                let v = coef[(r, c)];
                if v.abs() > tol {
                    entries.push((r, c, v));
                }
            }
        }
    }
}

/// A semidefinite program `maximize gᵀy s.t. blocks(y) ⪰ 0`.
#[derive(Debug, Clone)]
pub struct LmiProblem {
    pub num_vars: usize,
    pub blocks: Vec<AffineSym>,
    pub objective: DVector<f64>,
}

impl LmiProblem {
    pub fn new(num_vars: usize) -> Self {
        Self { num_vars, blocks: Vec::new(), objective: DVector::zeros(num_vars) }
    }

    /// Appends a new decision variable and returns its index.
    pub fn add_var(&mut self) -> usize {
        self.num_vars += 1;
        self.objective = self.objective.clone().insert_row(self.num_vars - 1, 0.0);
        self.num_vars - 1
    }

    pub fn push(&mut self, block: AffineSym) {
        self.blocks.push(block);
    }

    /// Adds the scalar constraint `constant + Σ coef_i y_i ≥ 0` as a 1×1 block.
    pub fn push_scalar(&mut self, constant: f64, coefs: &[(usize, f64)]) {
        let mut b = AffineSym::new(1);
        b.constant[(0, 0)] = constant;
        for &(v, c) in coefs {
            b.add(v, 0, 0, c);
        }
        self.blocks.push(b);
    }

    /// Smallest eigenvalue over all blocks at `y`.
    pub fn min_eig(&self, y: &DVector<f64>) -> f64 {
        self.blocks.iter().map(|b| crate::linalg::min_eig(&b.eval(y))).fold(f64::INFINITY, f64::min)
    }

    /// Substitutes `y = offset + basis · w` and returns the problem in `w`.
    pub fn substitute(&self, basis: &DMatrix<f64>, offset: &DVector<f64>) -> LmiProblem {
        assert_eq!(basis.nrows(), self.num_vars);
        let k = basis.ncols();
        let mut out = LmiProblem::new(k);
        out.objective = basis.transpose() * &self.objective;
        for blk in &self.blocks {
            let mut nb = AffineSym::new(blk.dim());
            nb.constant = blk.eval(offset);
            let mut acc: Vec<HashMap<(usize, usize), f64>> = vec![HashMap::new(); k];
            for (var, entries) in &blk.terms {
                for j in 0..k {
                    let w = basis[(*var, j)];
                    if w == 0.0 {
                        continue;
                    }
                    for &(r, c, v) in entries {
                        *acc[j].entry((r, c)).or_insert(0.0) += w * v;
                    }
                }
            }
            for (j, map) in acc.into_iter().enumerate() {
                let scale = map.values().fold(0.0_f64, |a, v| a.max(v.abs()));
                for ((r, c), v) in map {
                    if v.abs() > scale * 1e-14 {
                        nb.add(j, r, c, v);
                    }
                }
            }
            nb.compact();
            out.blocks.push(nb);
        }
        out
    }
}

/// Index map for a symmetric matrix variable stored by its upper triangle.
#[derive(Debug, Clone, Copy)]
pub struct SymVar {
    pub offset: usize,
    pub n: usize,
}

impl SymVar {
    pub fn len(n: usize) -> usize {
        n * (n + 1) / 2
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        // Column-wise upper triangle: entries (0..=b, b).
        self.offset + b * (b + 1) / 2 + a
    }

    /// Adds `scale · X` at block position `(r0, c0)` of `f` (and the transpose when off-diagonal).
    pub fn place(&self, f: &mut AffineSym, r0: usize, c0: usize, scale: f64) {
        for i in 0..self.n {
            for j in 0..self.n {
                let v = self.index(i, j);
                if r0 == c0 {
                    if i <= j {
                        f.add(v, r0 + i, c0 + j, scale);
                    }
                } else {
                    f.add(v, r0 + i, c0 + j, scale);
                }
            }
        }
    }

    pub fn value(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| y[self.index(i, j)])
    }
}

/// Index map for a general `rows × cols` matrix variable (column-major).
#[derive(Debug, Clone, Copy)]
pub struct MatVar {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl MatVar {
    pub fn index(&self, i: usize, j: usize) -> usize {
        self.offset + j * self.rows + i
    }

    /// Adds `scale · Y` at off-diagonal block position `(r0, c0)` and `scale · Yᵀ` at `(c0, r0)`.
    pub fn place(&self, f: &mut AffineSym, r0: usize, c0: usize, scale: f64) {
        assert!(r0 != c0, "matrix variables cannot sit on a diagonal block");
        for i in 0..self.rows {
            for j in 0..self.cols {
                f.add(self.index(i, j), r0 + i, c0 + j, scale);
            }
        }
    }

    /// Adds `scale · Yᵀ` at off-diagonal block position `(r0, c0)`.
    pub fn place_transposed(&self, f: &mut AffineSym, r0: usize, c0: usize, scale: f64) {
        assert!(r0 != c0, "matrix variables cannot sit on a diagonal block");
        for i in 0..self.rows {
            for j in 0..self.cols {
                f.add(self.index(i, j), r0 + j, c0 + i, scale);
            }
        }
    }

    pub fn value(&self, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| y[self.index(i, j)])
    }
}
