//! Informativity for uniform stabilization and robust gain synthesis.
//!
//! Finds `Q ≻ 0`, `L`, `β > 0` with
//!
//! ```text
//! [λQ − βI  0  0  0 ]   [N 0]
//! [0        0  0  Q ]   [    ]
//! [0        0  0  L ] − [0 0] ⪰ 0
//! [0        Q  Lᵀ Q ]
//! ```
//!
//! and returns `K = L Q⁻¹` together with a Lyapunov matrix `P ∝ Q⁻¹`.

use crate::data_model::{build_consistent_set, split_theta, ConsistentSet, NoiseModel, TrajectoryData};
use crate::error::{Error, Result};
use crate::linalg::{self, block_diag, kernel, max_eig, min_eig, spectral_norm, sym};
use crate::sdp::{solve_sdp, AffineSym, IpmSettings, LmiProblem, MatVar, SymVar, INFEASIBILITY_CUTOFF};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Feasible point `(Q, L, β)` of the synthesis inequality, in data units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisWitness {
    pub q: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilizationCertificate {
    pub gain: DMatrix<f64>,
    /// `P = λ_max(Q) · Q⁻¹`, normalized so that `λ_min(P) = 1`.
    pub lyapunov: DMatrix<f64>,
    pub decay: f64,
    pub witness: SynthesisWitness,
    /// Smallest eigenvalue of the synthesis inequality at the witness.
    pub lmi_margin: f64,
}

impl StabilizationCertificate {
    pub fn n(&self) -> usize {
        self.lyapunov.nrows()
    }

    pub fn m(&self) -> usize {
        self.gain.nrows()
    }

    /// `λ_max((A+BK)ᵀP(A+BK) − λP)`.
    pub fn closed_loop_value(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let acl = a + b * &self.gain;
        max_eig(&(acl.transpose() * &self.lyapunov * &acl - &self.lyapunov * self.decay))
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Candidate bounds `λ_max(Q) ≤ s` relative to the squared data scale.
    pub scales: Vec<f64>,
    /// Lower bound on `β` relative to the scale bound.
    pub beta_floor: f64,
    pub ipm: IpmSettings,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self { scales: (0..=6).map(|k| 10f64.powi(-k)).collect(), beta_floor: 1e-6, ipm: IpmSettings::default() }
    }
}

/// The synthesis inequality evaluated at `(Q, L, β)`.
pub fn synthesis_lmi(set: &ConsistentSet, q: &DMatrix<f64>, l: &DMatrix<f64>, beta: f64, lambda: f64) -> DMatrix<f64> {
    let (n, m) = (set.n, set.m);
    let dim = 3 * n + m;
    let mut f = DMatrix::zeros(dim, dim);
    f.view_mut((0, 0), (n, n)).copy_from(&(q * lambda - DMatrix::identity(n, n) * beta));
    let r4 = 2 * n + m;
    f.view_mut((n, r4), (n, n)).copy_from(q);
    f.view_mut((r4, n), (n, n)).copy_from(q);
    f.view_mut((2 * n, r4), (m, n)).copy_from(l);
    f.view_mut((r4, 2 * n), (n, m)).copy_from(&l.transpose());
    f.view_mut((r4, r4), (n, n)).copy_from(q);
    let mut nm = f.view_mut((0, 0), (2 * n + m, 2 * n + m));
    nm -= &set.n_matrix;
    sym(&f)
}

/// Smallest eigenvalue of the synthesis inequality at the certificate's witness.
pub fn lmi_residual(cert: &StabilizationCertificate, set: &ConsistentSet) -> f64 {
    let w = &cert.witness;
    min_eig(&synthesis_lmi(set, &w.q, &w.l, w.beta, cert.decay))
}

/// Variable layout `[Q̃ (sym), L̃, β̃, t]`, optionally followed by the multiplier `α`.
struct Layout {
    q: SymVar,
    l: MatVar,
    beta: usize,
    t: usize,
    alpha: Option<usize>,
    total: usize,
}

impl Layout {
    fn new(n: usize, m: usize) -> Self {
        let q = SymVar { offset: 0, n };
        let l = MatVar { offset: SymVar::len(n), rows: m, cols: n };
        let beta = l.offset + m * n;
        Self { q, l, beta, t: beta + 1, alpha: None, total: beta + 2 }
    }

    fn homogeneous(n: usize, m: usize) -> Self {
        let mut lay = Self::new(n, m);
        lay.alpha = Some(lay.total);
        lay.total += 1;
        lay
    }

    /// Rows of `Q v_x + Lᵀ v_u = 0` for every column `v` of `null`.
    fn kernel_equalities(&self, null: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, m) = (self.q.n, self.l.rows);
        let mut eq = DMatrix::zeros(null.ncols() * n, self.total);
        for k in 0..null.ncols() {
            let v = null.column(k);
            for i in 0..n {
                let row = k * n + i;
                for j in 0..n {
                    eq[(row, self.q.index(i, j))] += v[j];
                }
                for j in 0..m {
                    // (Lᵀ)_{i j} = L_{j i}
                    eq[(row, self.l.index(j, i))] += v[n + j];
                }
            }
        }
        eq
    }
}

/// Upper bound on the multiplier of the data term in the homogeneous problem.
const ALPHA_MAX: f64 = 1e8;

/// Data shared by all solves of one synthesis call.
struct Reduced {
    n: usize,
    m: usize,
    /// Normalized data matrix `N / d²`.
    n_hat: DMatrix<f64>,
    data_scale: f64,
    /// Orthonormal basis of `im [X_−; U_−]` within `R^{n+m}`.
    range: DMatrix<f64>,
    /// Kernel of `[X_−; U_−]ᵀ`.
    null: DMatrix<f64>,
    /// Basis of the variables satisfying the equalities forced by `ker [X_−; U_−]ᵀ`.
    basis: DMatrix<f64>,
}

impl Reduced {
    fn new(set: &ConsistentSet, data: &TrajectoryData) -> Self {
        let (n, m) = (set.n, set.m);
        let d = data.stacked();
        let data_scale = spectral_norm(&d).max(spectral_norm(&data.x_plus())).max(1e-300);
        let n_hat = &set.n_matrix / (data_scale * data_scale);
        let null = kernel(&d.transpose());
        let range = if null.ncols() == 0 {
            DMatrix::identity(n + m, n + m)
        } else {
            // Orthogonal complement of the kernel.
            let proj = DMatrix::identity(n + m, n + m) - &null * null.transpose();
            let (w, v) = linalg::sym_eigen(&proj);
            let cols: Vec<usize> = (0..n + m).filter(|&i| w[i] > 0.5).collect();
            DMatrix::from_fn(n + m, cols.len(), |r, c| v[(r, cols[c])])
        };
        let layout = Layout::new(n, m);
        let basis = if null.ncols() == 0 {
            DMatrix::identity(layout.total, layout.total)
        } else {
            kernel(&layout.kernel_equalities(&null))
        };
        Self { n, m, n_hat, data_scale, range, null, basis }
    }

    /// Main inequality `M(Q̃, L̃, β̃) − α N̂` compressed to the data range, before any margin.
    fn main_block(&self, lay: &Layout, lambda: f64, s: f64) -> AffineSym {
        let (n, m) = (self.n, self.m);
        let dim = 3 * n + m;
        let r4 = 2 * n + m;
        let mut f = AffineSym::new(dim);
        let mut nn = DMatrix::zeros(dim, dim);
        nn.view_mut((0, 0), (r4, r4)).copy_from(&self.n_hat);
        match lay.alpha {
            Some(a) => f.push_dense(a, &(-nn)),
            None => f.constant = -nn,
        }
        // (1,1): s(λQ̃ − β̃ I)
        lay.q.place(&mut f, 0, 0, s * lambda);
        f.add_identity(lay.beta, 0, n, -s);
        // (2,4), (3,4), (4,4)
        lay.q.place(&mut f, n, r4, s);
        lay.l.place(&mut f, 2 * n, r4, s);
        lay.q.place(&mut f, r4, r4, s);
        // Congruence: range compression of the data block and rescaling of the last block.
        let t_mat = block_diag(&[&DMatrix::identity(n, n), &self.range, &(DMatrix::identity(n, n) / s.sqrt())]);
        f.congruence(&t_mat)
    }

    /// Scale-free margin problem: `α` multiplies the data term and `tr Q̃ = 1`.
    ///
    /// Its optimal `t` is negative exactly when the synthesis inequality is infeasible.
    fn homogeneous_problem(&self, lambda: f64) -> (LmiProblem, DMatrix<f64>, DVector<f64>) {
        let (n, m) = (self.n, self.m);
        let lay = Layout::homogeneous(n, m);
        let alpha = lay.alpha.expect("homogeneous layout");
        let mut main = self.main_block(&lay, lambda, 1.0);
        main.add_identity(lay.t, 0, main.dim(), -1.0);
        main.compact();
        let mut p = LmiProblem::new(lay.total);
        p.objective[lay.t] = 1.0;
        p.push(main);
        let mut qlow = AffineSym::new(n);
        lay.q.place(&mut qlow, 0, 0, 1.0);
        qlow.add_identity(lay.t, 0, n, -1.0);
        p.push(qlow);
        p.push_scalar(0.0, &[(lay.beta, 1.0), (lay.t, -1.0)]);
        p.push_scalar(0.0, &[(alpha, 1.0), (lay.t, -1.0)]);
        p.push_scalar(ALPHA_MAX, &[(alpha, -1.0)]);
        p.push_scalar(1.0, &[(lay.t, -1.0)]);

        let mut eq = lay.kernel_equalities(&self.null);
        let mut trace = DMatrix::zeros(1, lay.total);
        for i in 0..n {
            trace[(0, lay.q.index(i, i))] = 1.0;
        }
        eq = linalg::vstack(&[&eq, &trace]);
        let mut rhs = DVector::zeros(eq.nrows());
        rhs[eq.nrows() - 1] = 1.0;
        let offset = linalg::pinv(&eq) * rhs;
        let basis = kernel(&eq);
        (p.substitute(&basis, &offset), basis, offset)
    }

    /// Blocks at scale bound `s` for the variables `[Q̃, L̃, β̃, t]` with `Q = sQ̃`.
    ///
    /// `lmi_margin` multiplies `t` inside the main inequality, `q_margin` inside `Q̃ ⪰ tI`,
    /// `beta_margin` inside `β̃ ≥ t`, `lmi_floor` is a constant slack of the main inequality.
    fn problem(
        &self,
        lambda: f64,
        s: f64,
        lmi_margin: f64,
        q_margin: f64,
        beta: BetaBound,
        lmi_floor: f64,
    ) -> LmiProblem {
        let n = self.n;
        let lay = Layout::new(n, self.m);
        let mut main = self.main_block(&lay, lambda, s);
        let main_dim = main.dim();
        if lmi_margin != 0.0 {
            main.add_identity(lay.t, 0, main_dim, -lmi_margin);
        }
        if lmi_floor != 0.0 {
            for i in 0..main_dim {
                main.constant[(i, i)] -= lmi_floor;
            }
        }
        main.compact();

        let mut p = LmiProblem::new(lay.total);
        p.objective[lay.t] = 1.0;
        p.push(main);
        // Q̃ − q_margin·t·I ⪰ 0
        let mut qlow = AffineSym::new(n);
        lay.q.place(&mut qlow, 0, 0, 1.0);
        if q_margin != 0.0 {
            qlow.add_identity(lay.t, 0, n, -q_margin);
        }
        p.push(qlow);
        // I − Q̃ ⪰ 0
        let mut qhigh = AffineSym::new(n);
        qhigh.constant = DMatrix::identity(n, n);
        lay.q.place(&mut qhigh, 0, 0, -1.0);
        p.push(qhigh);
        match beta {
            BetaBound::Margin => p.push_scalar(0.0, &[(lay.beta, 1.0), (lay.t, -1.0)]),
            BetaBound::Floor(b) => p.push_scalar(-b, &[(lay.beta, 1.0)]),
        }
        p.push_scalar(1.0, &[(lay.t, -1.0)]);
        p.substitute(&self.basis, &DVector::zeros(lay.total))
    }
}

#[derive(Debug, Clone, Copy)]
enum BetaBound {
    Margin,
    Floor(f64),
}

/// Decides informativity and returns a certificate for the consistent set of `data` under `noise`.
pub fn synthesize(data: &TrajectoryData, noise: &NoiseModel, lambda: f64) -> Result<StabilizationCertificate> {
    synthesize_with(data, noise, lambda, &SynthesisOptions::default())
}

pub fn synthesize_with(
    data: &TrajectoryData,
    noise: &NoiseModel,
    lambda: f64,
    opts: &SynthesisOptions,
) -> Result<StabilizationCertificate> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Precondition(format!("decay rate λ = {lambda} must lie in (0, 1)")));
    }
    let set = build_consistent_set(data, noise)?;
    let red = Reduced::new(&set, data);
    let (n, m) = (set.n, set.m);
    let lay = Layout::new(n, m);

    let mut best: Option<(f64, f64, DVector<f64>)> = None; // (score, s, y)
    let mut last_err: Option<Error> = None;
    for &s in &opts.scales {
        // Phase 1: common margin of the main inequality, Q̃ and β̃.
        let p1 = red.problem(lambda, s, 1.0, 1.0, BetaBound::Margin, 0.0);
        let sol1 = match solve_sdp(&p1, &opts.ipm) {
            Ok(sol) => sol,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        let w1 = &sol1.y;
        let t1 = (&red.basis * w1)[lay.t];
        if t1 <= 1e-9 {
            continue;
        }
        // Phase 2: best-conditioned Q̃ keeping a fraction of the phase-1 slack.
        let p2 = red.problem(lambda, s, 0.0, 1.0, BetaBound::Floor(opts.beta_floor.min(0.5 * t1)), 0.01 * t1);
        let y = match solve_sdp(&p2, &opts.ipm) {
            Ok(sol2) => {
                let full = &red.basis * &sol2.y;
                if p2.min_eig(&sol2.y) >= 0.0 {
                    full
                } else {
                    &red.basis * w1
                }
            }
            Err(_) => &red.basis * w1,
        };
        let qt = lay.q.value(&y);
        let score = min_eig(&qt) / max_eig(&qt);
        if best.as_ref().is_none_or(|(sc, _, _)| score > *sc) {
            best = Some((score, s, y));
        }
    }

    let (y, unit) = match best {
        Some((_, s, y)) => (y, s * red.data_scale * red.data_scale),
        None => {
            // No scale of the sweep is strictly feasible: decide with the scale-free problem.
            let (p, basis, offset) = red.homogeneous_problem(lambda);
            let sol = solve_sdp(&p, &opts.ipm).map_err(|e| last_err.take().unwrap_or(e))?;
            let full = &basis * &sol.y + &offset;
            let hl = Layout::homogeneous(n, m);
            let margin = full[hl.t];
            if margin < -INFEASIBILITY_CUTOFF {
                return Err(Error::Infeasible { margin });
            }
            if margin <= 0.0 {
                return Err(Error::BackendFailure {
                    iterations: sol.iterations,
                    reason: format!("inconclusive margin {margin:e} within the infeasibility cutoff"),
                });
            }
            let alpha = full[hl.alpha.expect("homogeneous layout")];
            let y = full.rows(0, lay.total).into_owned();
            (y, red.data_scale * red.data_scale / alpha)
        }
    };

    let q = sym(&(lay.q.value(&y) * unit));
    let l = lay.l.value(&y) * unit;
    let beta = y[lay.beta] * unit;
    let qmax = max_eig(&q);
    let qn = &q / qmax;
    let qinv = qn.clone().cholesky().ok_or_else(|| Error::BackendFailure {
        iterations: 0,
        reason: "synthesized Q is not positive definite".into(),
    })?;
    let p = sym(&qinv.inverse());
    let gain = &l / qmax * &p;
    let witness = SynthesisWitness { q, l, beta };
    let lmi_margin = min_eig(&synthesis_lmi(&set, &witness.q, &witness.l, witness.beta, lambda));
    if beta <= 0.0 || min_eig(&witness.q) <= 0.0 {
        return Err(Error::BackendFailure { iterations: 0, reason: "witness is not strict".into() });
    }
    Ok(StabilizationCertificate { gain, lyapunov: p, decay: lambda, witness, lmi_margin })
}

#[derive(Debug, Clone)]
pub struct VerificationReport {
    /// Largest `λ_max((A+BK)ᵀP(A+BK) − λP)` over the samples.
    pub max_value: f64,
    pub samples: usize,
    pub draws: usize,
    pub starved: bool,
}

impl VerificationReport {
    pub fn valid(&self) -> bool {
        self.samples > 0 && self.max_value < 0.0
    }
}

/// Samples members of `set` and evaluates the closed-loop decay inequality on each.
pub fn verify_certificate<R: Rng + ?Sized>(
    cert: &StabilizationCertificate,
    set: &ConsistentSet,
    samples: usize,
    rng: &mut R,
) -> Result<VerificationReport> {
    if cert.n() != set.n || cert.m() != set.m {
        return Err(Error::DimensionMismatch("certificate and set dimensions differ".into()));
    }
    let rep = set.rejection_sample(rng, samples, samples * 50, crate::data_model::MEMBERSHIP_TOL);
    let mut max_value = f64::NEG_INFINITY;
    for theta in &rep.members {
        let (a, b) = split_theta(theta, set.n);
        max_value = max_value.max(cert.closed_loop_value(&a, &b));
    }
    Ok(VerificationReport { max_value, samples: rep.members.len(), draws: rep.draws, starved: rep.starved })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::MEMBERSHIP_TOL;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn scalar_data(a: f64, b: f64) -> TrajectoryData {
        let u = [1.0, -0.5, 0.3];
        let mut x = vec![1.0];
        for k in 0..3 {
            x.push(a * x[k] + b * u[k]);
        }
        TrajectoryData::new(m(1, 3, &u), m(1, 4, &x)).unwrap()
    }

    #[test]
    fn scalar_feasible_and_hand_checked() {
        let d = scalar_data(0.5, 1.0);
        let cert = synthesize(&d, &NoiseModel::noiseless(1, 3), 0.9).unwrap();
        let k = cert.gain[(0, 0)];
        let p = cert.lyapunov[(0, 0)];
        assert!((0.5 + k).powi(2) * p < 0.9 * p);
        assert!(cert.witness.beta > 0.0);
        let set = build_consistent_set(&d, &NoiseModel::noiseless(1, 3)).unwrap();
        assert!(lmi_residual(&cert, &set) >= -1e-7);
    }

    #[test]
    fn scale_free_problem_alone_certifies() {
        let d = scalar_data(1.5, 1.0);
        let noise = NoiseModel::noiseless(1, 3);
        let opts = SynthesisOptions { scales: Vec::new(), ..Default::default() };
        let cert = synthesize_with(&d, &noise, 0.9, &opts).unwrap();
        let set = build_consistent_set(&d, &noise).unwrap();
        assert!(lmi_residual(&cert, &set) >= -1e-7);
        assert!(cert.closed_loop_value(&m(1, 1, &[1.5]), &m(1, 1, &[1.0])) < 0.0);
    }

    #[test]
    fn uncontrollable_unstable_is_infeasible() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let d = TrajectoryData::new(m(1, 3, &[0.0, 0.0, 0.0]), m(1, 4, &x)).unwrap();
        // Inputs are zero, so B is unidentifiable; the consistent set contains every b with a = 2.
        match synthesize(&d, &NoiseModel::noiseless(1, 3), 0.9) {
            Err(Error::Infeasible { .. }) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn rank_deficient_noiseless_data_is_handled() {
        // Two states, one input, two samples under a stabilizing feedback: the data matrix has
        // rank 2 < 3 and the only admissible gain is the one used in the experiment.
        let a = m(2, 2, &[1.2, 0.3, 0.0, 0.8]);
        let b = m(2, 1, &[1.0, 0.5]);
        let k0 = m(1, 2, &[-1.0, -0.3]);
        let x0 = DVector::from_vec(vec![1.0, -1.0]);
        let mut d = TrajectoryData::initial(&x0, 1);
        let mut x = x0;
        for _ in 0..2 {
            let u = &k0 * &x;
            let xn = &a * &x + &b * &u;
            d.push(&u, &xn);
            x = xn;
        }
        let noise = NoiseModel::noiseless(2, 2);
        let cert = synthesize(&d, &noise, 0.8).unwrap();
        let set = build_consistent_set(&d, &noise).unwrap();
        assert!(lmi_residual(&cert, &set) >= -1e-7);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rep = verify_certificate(&cert, &set, 200, &mut rng).unwrap();
        assert!(rep.valid(), "{rep:?}");
        assert!(set.membership(&a, &b, MEMBERSHIP_TOL).unwrap());
        assert!(cert.closed_loop_value(&a, &b) < 0.0);
        assert_relative_eq!(cert.gain, k0, epsilon = 1e-6);
    }

    #[test]
    fn lmi_layout_matches_definition() {
        let d = scalar_data(0.5, 1.0);
        let set = build_consistent_set(&d, &NoiseModel::noiseless(1, 3)).unwrap();
        let f = synthesis_lmi(&set, &m(1, 1, &[2.0]), &m(1, 1, &[3.0]), 0.5, 0.9);
        assert_eq!(f.shape(), (4, 4));
        assert_relative_eq!(f[(0, 0)], 0.9 * 2.0 - 0.5 - set.n_matrix[(0, 0)]);
        assert_relative_eq!(f[(1, 3)], 2.0);
        assert_relative_eq!(f[(2, 3)], 3.0);
        assert_relative_eq!(f[(3, 3)], 2.0);
    }

    #[test]
    fn corrupted_gain_is_rejected() {
        let d = scalar_data(1.5, 1.0);
        let noise = NoiseModel::noiseless(1, 3);
        let mut cert = synthesize(&d, &noise, 0.9).unwrap();
        let set = build_consistent_set(&d, &noise).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(verify_certificate(&cert, &set, 20, &mut rng).unwrap().valid());
        cert.gain *= 10.0;
        assert!(!verify_certificate(&cert, &set, 20, &mut rng).unwrap().valid());
    }
}
