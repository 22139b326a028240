//! Infeasible-start primal-dual interior-point method (HKM direction, Mehrotra
//! predictor-corrector) for block-diagonal semidefinite programs.
//!
//! The user problem `max gᵀy s.t. F0 + Σ y_i F_i ⪰ 0` is the dual of
//! `min ⟨F0, X⟩ s.t. ⟨F_i, X⟩ = -g_i, X ⪰ 0`.

use super::LmiProblem;
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct IpmSettings {
    pub max_iter: usize,
    /// Target relative accuracy for primal/dual residuals and gap.
    pub tol: f64,
    /// Accuracy accepted when the method stalls before reaching `tol`.
    pub stall_tol: f64,
    pub step_factor: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self { max_iter: 120, tol: 1e-9, stall_tol: 1e-6, step_factor: 0.98 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    /// Stopped early with residuals below `stall_tol`.
    Inaccurate,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: SdpStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

/// Dense coefficient entries of one variable in one block, both triangles expanded.
struct Coef {
    var: usize,
    entries: Vec<(usize, usize, f64)>,
}

struct Block {
    dim: usize,
    c: DMatrix<f64>,
    coefs: Vec<Coef>,
}

impl Block {
    fn apply_adjoint(&self, y: &DVector<f64>) -> DMatrix<f64> {
        // Σ_i y_i F_i
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for cf in &self.coefs {
            let yv = y[cf.var];
            if yv != 0.0 {
                for &(r, c, v) in &cf.entries {
                    m[(r, c)] += yv * v;
                }
            }
        }
        m
    }
}

fn expand(problem: &LmiProblem) -> Vec<Block> {
    problem
        .blocks
        .iter()
        .map(|b| {
            let coefs = b
                .terms
                .iter()
                .map(|(var, ents)| {
                    let mut entries = Vec::with_capacity(2 * ents.len());
                    for &(r, c, v) in ents {
                        entries.push((r, c, v));
                        if r != c {
                            entries.push((c, r, v));
                        }
                    }
                    Coef { var: *var, entries }
                })
                .collect();
            Block { dim: b.dim(), c: crate::linalg::sym(&b.constant), coefs }
        })
        .collect()
}

fn inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.dot(b)
}

fn coef_inner(cf: &Coef, m: &DMatrix<f64>) -> f64 {
    cf.entries.iter().map(|&(r, c, v)| v * m[(r, c)]).sum()
}

fn frob_coef(cf: &Coef) -> f64 {
    cf.entries.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt()
}

/// Largest step `α ≤ 1/γ-scaled` keeping `x + α dx ⪰ 0`; returns `f64::INFINITY` when unbounded.
fn max_step(x: &DMatrix<f64>, dx: &DMatrix<f64>) -> f64 {
    let n = x.nrows();
    let l = match Cholesky::new(x.clone()) {
        Some(ch) => ch.l(),
        None => return 0.0,
    };
    let linv = l.solve_lower_triangular(&DMatrix::identity(n, n)).unwrap_or_else(|| DMatrix::identity(n, n));
    let m = &linv * dx * linv.transpose();
    let lmin = crate::linalg::min_eig(&m);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn inverse_spd(m: &DMatrix<f64>) -> DMatrix<f64> {
    match Cholesky::new(m.clone()) {
        Some(ch) => crate::linalg::sym(&ch.inverse()),
        None => crate::linalg::sym_fn(m, |v| 1.0 / v.max(1e-300)),
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Some(ch.solve(rhs));
    }
    let scale = m.diagonal().amax().max(1e-300);
    for k in [1e-14, 1e-12, 1e-10] {
        let reg = m + DMatrix::identity(m.nrows(), m.ncols()) * (k * scale);
        if let Some(ch) = Cholesky::new(reg) {
            return Some(ch.solve(rhs));
        }
    }
    m.clone().lu().solve(rhs)
}

/// Solves `max gᵀy s.t. blocks(y) ⪰ 0`.
pub fn solve_sdp(problem: &LmiProblem, settings: &IpmSettings) -> Result<SdpSolution> {
    let nv = problem.num_vars;
    let blocks = expand(problem);
    let g = &problem.objective;
    // Standard form: min ⟨C,X⟩ s.t. A(X) = b with C = F0, A_i = -F_i, b = g.
    let b: DVector<f64> = g.clone();
    let total_dim: usize = blocks.iter().map(|bk| bk.dim).sum();
    if total_dim == 0 {
        return Err(Error::BackendFailure { iterations: 0, reason: "empty problem".into() });
    }
    let mut used = vec![false; nv];
    for bk in &blocks {
        for cf in &bk.coefs {
            used[cf.var] = true;
        }
    }
    if let Some(v) = used.iter().position(|u| !u) {
        return Err(Error::BackendFailure {
            iterations: 0,
            reason: format!("variable {v} does not appear in any constraint"),
        });
    }

    let norm_b = b.norm();
    let norm_c = blocks.iter().map(|bk| bk.c.norm_squared()).sum::<f64>().sqrt();

    // Starting point.
    let mut x: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
    let mut s: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
    for bk in &blocks {
        let d = bk.dim as f64;
        let mut xi: f64 = 10.0_f64.max(d.sqrt());
        let mut zeta: f64 = 10.0_f64.max(d.sqrt()).max(bk.c.norm());
        for cf in &bk.coefs {
            let nf = frob_coef(cf);
            xi = xi.max(d * (1.0 + b[cf.var].abs()) / (1.0 + nf));
            zeta = zeta.max(nf);
        }
        x.push(DMatrix::identity(bk.dim, bk.dim) * xi);
        s.push(DMatrix::identity(bk.dim, bk.dim) * zeta);
    }
    let mut y = DVector::zeros(nv);

    let mut best: Option<(f64, SdpSolution)> = None;
    let mut iter = 0;
    loop {
        // Residuals.
        let mut ax = DVector::zeros(nv);
        for (bk, xk) in blocks.iter().zip(&x) {
            for cf in &bk.coefs {
                ax[cf.var] -= coef_inner(cf, xk);
            }
        }
        let rp = &b - &ax;
        let rd: Vec<DMatrix<f64>> = blocks.iter().zip(&s).map(|(bk, sk)| &bk.c + bk.apply_adjoint(&y) - sk).collect();
        let gap: f64 = x.iter().zip(&s).map(|(a, c)| inner(a, c)).sum();
        let pobj: f64 = blocks.iter().zip(&x).map(|(bk, xk)| inner(&bk.c, xk)).sum();
        let dobj = b.dot(&y);
        let rel_p = rp.norm() / (1.0 + norm_b);
        let rel_d = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + norm_c);
        let rel_gap = gap.max((pobj - dobj).abs()) / (1.0 + pobj.abs() + dobj.abs());
        let err = rel_p.max(rel_d).max(rel_gap);

        let snapshot = |status| SdpSolution {
            y: y.clone(),
            objective: g.dot(&y),
            iterations: iter,
            status,
            primal_residual: rel_p,
            dual_residual: rel_d,
            gap: rel_gap,
        };
        if err < settings.tol {
            return Ok(snapshot(SdpStatus::Optimal));
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, snapshot(SdpStatus::Inaccurate)));
        }
        if iter >= settings.max_iter || !err.is_finite() || y.amax() > 1e14 {
            break;
        }
        iter += 1;

        let mu = gap / total_dim as f64;
        let sinv: Vec<DMatrix<f64>> = s.iter().map(inverse_spd).collect();

        // Schur complement M_ij = Σ_k tr(F_ik X_k F_jk S_k⁻¹).
        let mut m = DMatrix::zeros(nv, nv);
        let mut g_cache: Vec<Vec<DMatrix<f64>>> = Vec::with_capacity(blocks.len());
        for (k, bk) in blocks.iter().enumerate() {
            let xk = &x[k];
            let sk = &sinv[k];
            let d = bk.dim;
            let mut gs = Vec::with_capacity(bk.coefs.len());
            for cf in &bk.coefs {
                // G_j = X F_j S⁻¹
                let gj = if cf.entries.len() <= d {
                    let mut gj = DMatrix::zeros(d, d);
                    for &(r, c, v) in &cf.entries {
                        // X[:, r] * v * S⁻¹[c, :]
                        for col in 0..d {
                            let sv = v * sk[(c, col)];
                            if sv != 0.0 {
                                for row in 0..d {
                                    gj[(row, col)] += xk[(row, r)] * sv;
                                }
                            }
                        }
                    }
                    gj
                } else {
                    let mut f = DMatrix::zeros(d, d);
                    for &(r, c, v) in &cf.entries {
                        f[(r, c)] += v;
                    }
                    xk * f * sk
                };
                gs.push(gj);
            }
            for ci in &bk.coefs {
                for (bidx, cj) in bk.coefs.iter().enumerate() {
                    if cj.var < ci.var {
                        continue;
                    }
                    let val = coef_inner(ci, &gs[bidx]);
                    m[(ci.var, cj.var)] += val;
                    if ci.var != cj.var {
                        m[(cj.var, ci.var)] += val;
                    }
                }
            }
            g_cache.push(gs);
        }
        let m = crate::linalg::sym(&m);

        // Direction for a given complementarity target R_k.
        let direction = |r_target: &[DMatrix<f64>]| -> Option<(DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
            // rhs = rp - A(R - X Rd S⁻¹), A(Z)_i = -⟨F_i, Z⟩
            let mut rhs = rp.clone();
            let mut tmp: Vec<DMatrix<f64>> = Vec::with_capacity(blocks.len());
            for k in 0..blocks.len() {
                let z = &r_target[k] - &x[k] * &rd[k] * &sinv[k];
                for cf in &blocks[k].coefs {
                    rhs[cf.var] += coef_inner(cf, &z);
                }
                tmp.push(z);
            }
            let dy = solve_spd(&m, &rhs)?;
            let mut dxs = Vec::with_capacity(blocks.len());
            let mut dss = Vec::with_capacity(blocks.len());
            for k in 0..blocks.len() {
                // dS = Rd + Σ dy_i F_i
                let ds = &rd[k] + blocks[k].apply_adjoint(&dy);
                let dx = &r_target[k] - &x[k] * &ds * &sinv[k];
                dxs.push(crate::linalg::sym(&dx));
                dss.push(crate::linalg::sym(&ds));
            }
            Some((dy, dxs, dss))
        };

        // Predictor.
        let r_aff: Vec<DMatrix<f64>> = x.iter().map(|xk| -xk.clone()).collect();
        let Some((_dy_a, dx_a, ds_a)) = direction(&r_aff) else { break };
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for k in 0..blocks.len() {
            ap = ap.min(max_step(&x[k], &dx_a[k]));
            ad = ad.min(max_step(&s[k], &ds_a[k]));
        }
        let ap_a = ap.min(1.0);
        let ad_a = ad.min(1.0);
        let gap_aff: f64 =
            (0..blocks.len()).map(|k| inner(&(&x[k] + &dx_a[k] * ap_a), &(&s[k] + &ds_a[k] * ad_a))).sum();
        let ratio = (gap_aff / gap).clamp(0.0, 1.0);
        let expo = if mu > 1e-6 { 2.0 } else { 3.0 };
        let sigma = ratio.powf(expo).clamp(0.0, 1.0);

        // Corrector.
        let r_cor: Vec<DMatrix<f64>> =
            (0..blocks.len()).map(|k| &sinv[k] * (sigma * mu) - &x[k] - &dx_a[k] * &ds_a[k] * &sinv[k]).collect();
        let Some((dy, dx, ds)) = direction(&r_cor) else { break };
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for k in 0..blocks.len() {
            ap = ap.min(max_step(&x[k], &dx[k]));
            ad = ad.min(max_step(&s[k], &ds[k]));
        }
        let gamma = settings.step_factor;
        let ap = (gamma * ap).min(1.0);
        let ad = (gamma * ad).min(1.0);
        if ap < 1e-14 && ad < 1e-14 {
            break;
        }
        for k in 0..blocks.len() {
            x[k] = crate::linalg::sym(&(&x[k] + &dx[k] * ap));
            s[k] = crate::linalg::sym(&(&s[k] + &ds[k] * ad));
        }
        y += dy * ad;
    }

    match best {
        Some((err, sol)) if err < settings.stall_tol => Ok(sol),
        Some((err, _)) => Err(Error::BackendFailure {
            iterations: iter,
            reason: format!("interior-point method stalled at relative error {err:e}"),
        }),
        None => Err(Error::BackendFailure { iterations: iter, reason: "no iterate".into() }),
    }
}
