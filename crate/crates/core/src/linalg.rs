//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative factor of the numerical-rank threshold.
pub const RANK_RTOL: f64 = 1e-12;

/// Symmetric part `(m + mᵀ)/2`.
pub fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(sym(m));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::NEG_INFINITY;
    }
    SymmetricEigen::new(sym(m)).eigenvalues.max()
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
pub fn sym_fn(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (w, v) = sym_eigen(m);
    let fw = DMatrix::from_diagonal(&w.map(f));
    &v * fw * v.transpose()
}

/// Principal square root of a positive semidefinite matrix.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |x| x.max(0.0).sqrt())
}

/// Inverse principal square root of a positive definite matrix.
pub fn inv_sqrtm_pd(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_fn(m, |x| 1.0 / x.sqrt())
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Full singular value decomposition `m = U diag(s) Vᵀ` with square `U` and `V`.
///
/// Singular values are sorted descending and padded with zeros to `max(rows, cols)`.
pub struct FullSvd {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

pub fn full_svd(m: &DMatrix<f64>) -> FullSvd {
    let (r, c) = m.shape();
    let k = r.max(c);
    if k == 0 {
        return FullSvd { u: DMatrix::zeros(0, 0), s: DVector::zeros(0), v: DMatrix::zeros(0, 0) };
    }
    let mut padded = DMatrix::zeros(k, k);
    padded.view_mut((0, 0), (r, c)).copy_from(m);
    let svd = padded.svd(true, true);
    let u_all = svd.u.expect("u requested");
    let vt_all = svd.v_t.expect("v requested");
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut u = DMatrix::zeros(r, r);
    let mut v = DMatrix::zeros(c, c);
    let mut s = DVector::zeros(k);
    for (j, &i) in idx.iter().enumerate() {
        s[j] = svd.singular_values[i];
    }
    // The padded problem has extra zero rows/columns; recover square factors of the
    // original shape by re-orthonormalizing the relevant blocks.
    let u_blk = DMatrix::from_fn(r, k, |a, j| u_all[(a, idx[j])]);
    let v_blk = DMatrix::from_fn(c, k, |a, j| vt_all[(idx[j], a)]);
    u.copy_from(&orthonormal_columns(&u_blk, r));
    v.copy_from(&orthonormal_columns(&v_blk, c));
    FullSvd { u, s, v }
}

/// Picks `count` orthonormal columns spanning the leading directions of `m`'s columns.
fn orthonormal_columns(m: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let rows = m.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(count);
    let candidates = m.column_iter().map(|c| c.into_owned()).chain((0..rows).map(|i| {
        let mut e = DVector::zeros(rows);
        e[i] = 1.0;
        e
    }));
    for mut v in candidates {
        if basis.len() == count {
            break;
        }
        for _ in 0..2 {
            for b in &basis {
                let d = b.dot(&v);
                v -= b * d;
            }
        }
        let nv = v.norm();
        if nv > 1e-6 {
            basis.push(v / nv);
        }
    }
    DMatrix::from_columns(&basis)
}

/// Numerical-rank threshold `max(rows, cols) · σ_max · RANK_RTOL`.
pub fn rank_threshold(m: &DMatrix<f64>, sigma_max: f64) -> f64 {
    m.nrows().max(m.ncols()) as f64 * sigma_max * RANK_RTOL
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let s = m.clone().svd(false, false).singular_values;
    let thr = rank_threshold(m, s.max());
    s.iter().filter(|&&v| v > thr).count()
}

/// Orthonormal basis of the kernel (right null space) of `m`, as columns.
pub fn kernel(m: &DMatrix<f64>) -> DMatrix<f64> {
    let c = m.ncols();
    if c == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(c, c);
    }
    let svd = full_svd(m);
    let smax = svd.s.max();
    let thr = rank_threshold(m, smax);
    let rank = svd.s.iter().take(m.nrows().min(c)).filter(|&&v| v > thr).count();
    svd.v.columns(rank, c - rank).into_owned()
}

/// Moore-Penrose pseudoinverse with the standard rank threshold.
pub fn pinv(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let thr = rank_threshold(m, smax);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v requested");
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thr {
            out += vt.row(k).transpose() * u.column(k).transpose() / s;
        }
    }
    out
}

pub fn hstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = parts.iter().map(|p| p.nrows()).max().unwrap_or(0);
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for p in parts {
        assert!(p.ncols() == 0 || p.nrows() == rows, "hstack row mismatch");
        out.view_mut((0, c0), p.shape()).copy_from(*p);
        c0 += p.ncols();
    }
    out
}

pub fn vstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = parts.iter().map(|p| p.ncols()).max().unwrap_or(0);
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for p in parts {
        assert!(p.nrows() == 0 || p.ncols() == cols, "vstack column mismatch");
        out.view_mut((r0, 0), p.shape()).copy_from(*p);
        r0 += p.nrows();
    }
    out
}

/// Block-diagonal matrix from square or rectangular blocks.
pub fn block_diag(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = parts.iter().map(|p| p.nrows()).sum();
    let cols: usize = parts.iter().map(|p| p.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for p in parts {
        out.view_mut((r0, c0), p.shape()).copy_from(*p);
        r0 += p.nrows();
        c0 += p.ncols();
    }
    out
}

/// Least-squares residual of `x` against the column space of `m`.
pub fn range_residual(m: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    if m.ncols() == 0 {
        return x.norm();
    }
    let proj = m * (pinv(m) * x);
    (x - proj).norm()
}
