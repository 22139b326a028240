//! Compatibility tests and detection under energy-bounded noise `‖w(t)‖ ≤ q`.

use super::{DetectionState, StepReport};
use crate::data_model::{build_consistent_set, ConsistentSet, NoiseModel, SphereApprox, TrajectoryData};
use crate::error::{Error, Result};
use crate::linalg::{hstack, kernel, min_eig, pinv, spectral_norm, sym, sym_eigen};
use crate::sdp::{solve_sdp, AffineSym, IpmSettings, LmiProblem, MatVar, INFEASIBILITY_CUTOFF};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Lower bounds `‖Z_i − Z_j‖ − r_i − r_j` on the distances between consistent sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSeparation {
    pub bounds: DMatrix<f64>,
    pub spheres: Vec<SphereApprox>,
}

impl PairwiseSeparation {
    /// Every pair of distinct modes is certified disjoint.
    pub fn separated(&self) -> bool {
        let p = self.bounds.nrows();
        (0..p).all(|i| (0..p).all(|j| i == j || self.bounds[(i, j)] > 0.0))
    }
}

/// Pairwise distance bounds between the balls containing each mode's consistent set.
///
/// Bounds are `‖Z_i − Z_j‖₂ − r_i − r_j`, unsquared.
pub fn check_pairwise_separation(spheres: &[SphereApprox]) -> PairwiseSeparation {
    let p = spheres.len();
    let mut bounds = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in i + 1..p {
            let b = spectral_norm(&(&spheres[i].center - &spheres[j].center)) - spheres[i].radius - spheres[j].radius;
            bounds[(i, j)] = b;
            bounds[(j, i)] = b;
        }
    }
    PairwiseSeparation { bounds, spheres: spheres.to_vec() }
}

fn stack(x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut z = DVector::zeros(x.len() + u.len());
    z.rows_mut(0, x.len()).copy_from(x);
    z.rows_mut(x.len(), u.len()).copy_from(u);
    z
}

/// Certifies that no member of the ball explains the single measurement `x → x_next` under `u`.
pub fn scalar_incompat_test(
    sphere: &SphereApprox,
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_next: &DVector<f64>,
    q: f64,
) -> bool {
    let z = stack(x, u);
    (&sphere.center * &z - x_next).norm() > q + sphere.radius * z.norm()
}

/// Whether `u` separates the two balls at `x`: `‖(Z_i − Z_j)(x; u)‖ > (r_i + r_j)‖(x; u)‖ + 2q`.
pub fn separates(si: &SphereApprox, sj: &SphereApprox, x: &DVector<f64>, u: &DVector<f64>, q: f64) -> bool {
    let z = stack(x, u);
    ((&si.center - &sj.center) * &z).norm() > (si.radius + sj.radius) * z.norm() + 2.0 * q
}

/// Input along the top right-singular direction of the input columns of `Z_i − Z_j`, grown until it separates.
pub fn design_separating_input(si: &SphereApprox, sj: &SphereApprox, x: &DVector<f64>, q: f64) -> Result<DVector<f64>> {
    let n = x.len();
    let diff = &si.center - &sj.center;
    let m = diff.ncols() - n;
    let du = diff.columns(n, m).into_owned();
    if spectral_norm(&du) <= si.radius + sj.radius {
        return Err(Error::NotSeparable);
    }
    let svd = du.svd(false, true);
    let vt = svd.v_t.expect("v requested");
    let k = svd.singular_values.imax();
    let dir = vt.row(k).transpose();
    let mut gamma = 1e-6 * x.norm().max(q).max(1.0);
    for _ in 0..200 {
        for s in [1.0, -1.0] {
            let u = &dir * (s * gamma);
            if separates(si, sj, x, &u, q) {
                return Ok(u);
            }
        }
        gamma *= 2.0;
    }
    Err(Error::NotSeparable)
}

/// Nonnegative combination `N^on(α) = Σ α_t N_t` of single-measurement sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaCombination {
    pub alpha: Vec<f64>,
    pub n_on: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
}

impl AlphaCombination {
    /// `N^i + N^on(α)`.
    pub fn with_init(&self, init: &ConsistentSet) -> DMatrix<f64> {
        &init.n_matrix + &self.n_on
    }

    pub fn set(&self) -> ConsistentSet {
        ConsistentSet::from_matrix(self.n_on.clone(), self.n, self.m).expect("dimensions fixed at construction")
    }
}

/// Single-measurement sets `‖[A B](x; u) − x_next‖ ≤ q` of every online transition.
pub fn online_sets(online: &TrajectoryData, q: f64) -> Result<Vec<ConsistentSet>> {
    let noise = NoiseModel::energy_bound(q, online.n(), 1)?;
    online.transitions().map(|(x, u, xn)| build_consistent_set(&TrajectoryData::single(&x, &u, &xn), &noise)).collect()
}

pub fn combine_online(sets: &[ConsistentSet], alpha: &[f64]) -> Result<AlphaCombination> {
    if sets.len() != alpha.len() {
        return Err(Error::DimensionMismatch(format!("{} sets but {} weights", sets.len(), alpha.len())));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::Precondition(format!("weights must be nonnegative, got {a}")));
    }
    let Some(first) = sets.first() else {
        return Err(Error::Precondition("no online sets to combine".into()));
    };
    let (n, m) = (first.n, first.m);
    let mut n_on = DMatrix::zeros(2 * n + m, 2 * n + m);
    for (s, &a) in sets.iter().zip(alpha) {
        if (s.n, s.m) != (n, m) {
            return Err(Error::DimensionMismatch("online sets differ in (n, m)".into()));
        }
        n_on += &s.n_matrix * a;
    }
    Ok(AlphaCombination { alpha: alpha.to_vec(), n_on, n, m })
}

/// Both forms of the nonemptiness test of `{(A, B) : QMI(N̄) ⪰ 0}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralVerdict {
    /// `λ_min(N̄11 − N̄12 N̄22⁻¹ N̄21)`.
    pub schur_min: f64,
    pub negative_eigenvalues: usize,
    pub schur_nonempty: bool,
    pub inertia_nonempty: bool,
}

/// Relative tolerance on eigenvalues in the spectral test.
pub const SPECTRAL_TOL: f64 = 1e-10;

pub fn spectral_verdict(nc: &DMatrix<f64>, n: usize, m: usize) -> Result<SpectralVerdict> {
    let dim = 2 * n + m;
    if nc.shape() != (dim, dim) {
        return Err(Error::DimensionMismatch(format!("combined matrix must be {dim}×{dim}")));
    }
    let nc = sym(nc);
    let scale = nc.amax().max(f64::MIN_POSITIVE);
    let tol = SPECTRAL_TOL * scale;
    let k = n + m;
    let n11 = nc.view((0, 0), (n, n)).into_owned();
    let n12 = nc.view((0, n), (n, k)).into_owned();
    let n22 = nc.view((n, n), (k, k)).into_owned();
    let (w22, _) = sym_eigen(&n22);
    if w22.max() >= -tol {
        return Err(Error::Precondition(format!(
            "lower-right block must be negative definite, largest eigenvalue {:e}",
            w22.max()
        )));
    }
    let inv22 = n22.clone().try_inverse().unwrap_or_else(|| pinv(&n22));
    let schur = sym(&(&n11 - &n12 * inv22 * n12.transpose()));
    let schur_min = min_eig(&schur);
    let (w, _) = sym_eigen(&nc);
    let negative_eigenvalues = w.iter().filter(|&&v| v < -tol).count();
    Ok(SpectralVerdict {
        schur_min,
        negative_eigenvalues,
        schur_nonempty: schur_min >= -tol,
        inertia_nonempty: negative_eigenvalues == k,
    })
}

/// Whether the set defined by the combined matrix is nonempty (Schur-complement form).
pub fn spectral_nonempty(nc: &DMatrix<f64>, n: usize, m: usize) -> Result<bool> {
    Ok(spectral_verdict(nc, n, m)?.schur_nonempty)
}

/// Result of the joint test: smallest noise level explaining both datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointLmiReport {
    /// `σ* = min_Θ max(‖R_init(Θ)‖²/T_init, ‖R_on(Θ)‖²/T_on) / ν²` with `ν` the reference noise level.
    pub sigma: f64,
    /// `1 − σ*`; negative values mean no common system explains the data at level `q`.
    pub margin: f64,
    pub iterations: usize,
}

impl JointLmiReport {
    pub fn compatible(&self) -> bool {
        self.margin >= -INFEASIBILITY_CUTOFF
    }
}

/// Reference noise level for `q = 0`, relative to the data scale.
const EXACT_REFERENCE: f64 = 1e-2;

/// Joint feasibility of `[q²T I, X_+ − [A B]D; (·)ᵀ, I] ⪰ 0` for the initialization and online data.
///
/// Solved as the minimal common noise level `s` with `q² T` replaced by `s T` in both blocks.
pub fn joint_lmi(init: &TrajectoryData, online: &TrajectoryData, q: f64, ipm: &IpmSettings) -> Result<JointLmiReport> {
    if init.n() != online.n() || init.m() != online.m() {
        return Err(Error::DimensionMismatch("initialization and online data differ in (n, m)".into()));
    }
    if !(q >= 0.0) {
        return Err(Error::InvalidNoiseModel(format!("noise bound q = {q} must be nonnegative")));
    }
    let n = init.n();
    let datasets = [init, online];
    let d_all = hstack(&[&init.stacked(), &online.stacked()]);
    let xp_all = hstack(&[&init.x_plus(), &online.x_plus()]);
    if d_all.ncols() == 0 {
        return Ok(JointLmiReport { sigma: 0.0, margin: 1.0, iterations: 0 });
    }
    let data_scale = spectral_norm(&d_all).max(spectral_norm(&xp_all)).max(f64::MIN_POSITIVE);
    let nu = if q > 0.0 { q } else { EXACT_REFERENCE * data_scale / (d_all.ncols() as f64).sqrt() };
    // Θ = Z + Δ̃ Vᵀ·(ρ / ‖D‖): centered at the joint least-squares fit, restricted to the data range.
    let z = &xp_all * pinv(&d_all);
    let null = kernel(&d_all.transpose());
    let range = if null.ncols() == 0 {
        DMatrix::identity(d_all.nrows(), d_all.nrows())
    } else {
        let proj = DMatrix::identity(d_all.nrows(), d_all.nrows()) - &null * null.transpose();
        let (w, v) = sym_eigen(&proj);
        let cols: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.5).collect();
        DMatrix::from_fn(d_all.nrows(), cols.len(), |r, c| v[(r, cols[c])])
    };
    let d_norm = spectral_norm(&d_all);
    // working unit ρ ≥ ν keeps σ of order one when the least-squares residual is large
    let t_max = datasets.iter().map(|d| d.len()).max().unwrap_or(1).max(1) as f64;
    let rho = nu.max(spectral_norm(&(&xp_all - &z * &d_all)) / t_max.sqrt());
    let k = range.ncols();
    let delta = MatVar { offset: 0, rows: n, cols: k };
    let sigma = n * k;
    let mut p = LmiProblem::new(n * k + 1);
    p.objective[sigma] = -1.0;
    for d in datasets {
        let t = d.len();
        if t == 0 {
            continue;
        }
        let r0 = (d.x_plus() - &z * d.stacked()) / rho;
        let e = range.transpose() * d.stacked() / d_norm;
        let dim = n + t;
        let mut blk = AffineSym::new(dim);
        blk.add_constant(0, n, &r0);
        for i in 0..t {
            blk.constant[(n + i, n + i)] = 1.0;
        }
        blk.add_identity(sigma, 0, n, t as f64);
        // −Δ̃ E in the off-diagonal block
        for r in 0..n {
            for c in 0..k {
                let var = delta.index(r, c);
                for j in 0..t {
                    let v = -e[(c, j)];
                    if v != 0.0 {
                        blk.add(var, r, n + j, v);
                    }
                }
            }
        }
        blk.compact();
        p.push(blk);
    }
    let sol = solve_sdp(&p, ipm)?;
    let s = sol.y[sigma] * (rho / nu).powi(2);
    let scale_ratio = if q > 0.0 { 1.0 } else { 0.0 };
    Ok(JointLmiReport { sigma: s, margin: scale_ratio - s, iterations: sol.iterations })
}

/// Whether a common system explains both datasets at noise level `q`.
pub fn joint_lmi_compatible(init: &TrajectoryData, online: &TrajectoryData, q: f64) -> Result<bool> {
    Ok(joint_lmi(init, online, q, &IpmSettings::default())?.compatible())
}

/// Uniform draw on the sphere of radius `c‖x‖` in `R^m`.
pub fn random_input<R: Rng + ?Sized>(rng: &mut R, x: &DVector<f64>, m: usize, c: f64) -> DVector<f64> {
    let radius = c * x.norm();
    if radius == 0.0 || m == 0 {
        return DVector::zeros(m);
    }
    loop {
        let g = DVector::<f64>::from_fn(m, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 1e-12 {
            return g * (radius / norm);
        }
    }
}

/// Appends `(u, x_next)` and removes every candidate failing the joint test.
pub fn step_detection_noisy(
    state: &mut DetectionState,
    init: &[TrajectoryData],
    q: f64,
    u: &DVector<f64>,
    x_next: &DVector<f64>,
) -> Result<StepReport> {
    state.online.push(u, x_next);
    let online = state.online.clone();
    let ipm = IpmSettings::default();
    let eliminated = state.eliminate(|i| Ok(joint_lmi(&init[i], &online, q, &ipm)?.compatible()))?;
    if state.candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let cap = 2 * (online.n() + online.m());
    if state.candidates.len() > 1 && online.len() >= cap {
        return Err(Error::NonTermination { steps: online.len() });
    }
    Ok(StepReport { eliminated, remaining: state.candidates.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::sphere_approx;
    use crate::detect::noiseless::kernel_compatible;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn ball<R: Rng>(rng: &mut R, n: usize, q: f64) -> DVector<f64> {
        let g = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
        let r: f64 = rng.random::<f64>().powf(1.0 / n as f64);
        g.normalize() * (q * r)
    }

    fn experiment<R: Rng>(rng: &mut R, a: &DMatrix<f64>, b: &DMatrix<f64>, t: usize, q: f64) -> TrajectoryData {
        let (n, m) = (a.nrows(), b.ncols());
        let mut x = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let mut d = TrajectoryData::initial(&x, m);
        for _ in 0..t {
            let u = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
            let xn = a * &x + b * &u + ball(rng, n, q);
            d.push(&u, &xn);
            x = xn;
        }
        d
    }

    fn pair() -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (
            mat(2, 2, &[0.9, 0.2, -0.1, 0.5]),
            mat(2, 1, &[1.0, 0.3]),
            mat(2, 2, &[-0.4, 0.6, 0.3, 1.1]),
            mat(2, 1, &[-0.5, 1.2]),
        )
    }

    #[test]
    fn identical_data_not_separated_and_exact_singletons_are() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a1, b1, a2, b2) = pair();
        let d1 = experiment(&mut rng, &a1, &b1, 6, 0.0);
        let s1 = sphere_approx(&d1, 0.0).unwrap();
        assert!(!check_pairwise_separation(&[s1.clone(), s1.clone()]).separated());
        let d2 = experiment(&mut rng, &a2, &b2, 6, 0.0);
        let s2 = sphere_approx(&d2, 0.0).unwrap();
        let sep = check_pairwise_separation(&[s1.clone(), s2.clone()]);
        assert!(sep.separated());
        let expected = spectral_norm(&(&s1.center - &s2.center));
        assert!((sep.bounds[(0, 1)] - expected).abs() < 1e-12);
    }

    #[test]
    fn scalar_test_is_sound_and_detects_exact_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a1, b1, _, _) = pair();
        let q = 0.05;
        let d = experiment(&mut rng, &a1, &b1, 8, q);
        let s = sphere_approx(&d, q).unwrap();
        for _ in 0..100 {
            let x = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let u = DVector::from_fn(1, |_, _| StandardNormal.sample(&mut rng));
            let xn = &a1 * &x + &b1 * &u + ball(&mut rng, 2, q);
            assert!(!scalar_incompat_test(&s, &x, &u, &xn, q));
        }
        let exact = SphereApprox { center: mat(1, 2, &[0.5, 1.0]), radius: 0.0 };
        let x = DVector::from_vec(vec![1.0]);
        let u = DVector::from_vec(vec![1.0]);
        assert!(scalar_incompat_test(&exact, &x, &u, &DVector::from_vec(vec![1.6]), 0.0));
        assert!(!scalar_incompat_test(&exact, &x, &u, &DVector::from_vec(vec![1.5]), 0.0));
    }

    #[test]
    fn separating_input_satisfies_condition() {
        let si = SphereApprox { center: mat(1, 2, &[0.5, 1.0]), radius: 0.1 };
        let sj = SphereApprox { center: mat(1, 2, &[0.4, -1.0]), radius: 0.2 };
        let x = DVector::from_vec(vec![3.0]);
        let u = design_separating_input(&si, &sj, &x, 0.05).unwrap();
        assert!(separates(&si, &sj, &x, &u, 0.05));
        assert!(matches!(design_separating_input(&si, &si, &x, 0.05), Err(Error::NotSeparable)));
        let exact_i = SphereApprox { radius: 0.0, ..si.clone() };
        let exact_j = SphereApprox { radius: 0.0, ..sj };
        let u = design_separating_input(&exact_i, &exact_j, &x, 0.0).unwrap();
        assert!(((&exact_i.center - &exact_j.center) * stack(&x, &u)).norm() > 0.0);
    }

    #[test]
    fn one_hot_and_zero_combinations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (a1, b1, _, _) = pair();
        let d = experiment(&mut rng, &a1, &b1, 3, 0.01);
        let sets = online_sets(&d, 0.01).unwrap();
        let c = combine_online(&sets, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.n_on, sets[0].n_matrix);
        let z = combine_online(&sets, &[0.0; 3]).unwrap();
        assert!(z.set().membership(&mat(2, 2, &[9.0, 9.0, 9.0, 9.0]), &mat(2, 1, &[9.0, 9.0]), 1e-12).unwrap());
        assert!(combine_online(&sets, &[1.0, -1.0, 0.0]).is_err());
        assert!(combine_online(&sets, &[1.0]).is_err());
    }

    #[test]
    fn all_ones_combination_matches_energy_bound_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (a1, b1, _, _) = pair();
        let d = experiment(&mut rng, &a1, &b1, 4, 0.01);
        let c = combine_online(&online_sets(&d, 0.01).unwrap(), &[1.0; 4]).unwrap();
        let direct = build_consistent_set(&d, &NoiseModel::energy_bound(0.01, 2, 4).unwrap()).unwrap();
        assert!((c.n_on - direct.n_matrix).amax() < 1e-12);
    }

    #[test]
    fn spectral_forms_agree_on_toy_cases() {
        // n = m = 1: N = diag(n11, −1, −1)
        let v = spectral_verdict(&DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -1.0, -1.0])), 1, 1).unwrap();
        assert!(!v.schur_nonempty && !v.inertia_nonempty);
        let v = spectral_verdict(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0, -1.0])), 1, 1).unwrap();
        assert!(v.schur_nonempty && v.inertia_nonempty);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0, -1.0]));
        assert!(matches!(spectral_nonempty(&bad, 1, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn set_containing_truth_is_spectrally_nonempty() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a1, b1, _, _) = pair();
        let d = experiment(&mut rng, &a1, &b1, 6, 0.01);
        let set = build_consistent_set(&d, &NoiseModel::energy_bound(0.01, 2, 6).unwrap()).unwrap();
        let v = spectral_verdict(&set.n_matrix, 2, 1).unwrap();
        assert!(v.schur_nonempty && v.inertia_nonempty);
    }

    #[test]
    fn joint_test_sound_for_generating_mode_and_rejects_other() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a1, b1, a2, b2) = pair();
        let q = 0.01;
        let init = experiment(&mut rng, &a1, &b1, 6, q);
        for _ in 0..20 {
            let own = experiment(&mut rng, &a1, &b1, 4, q);
            assert!(joint_lmi_compatible(&init, &own, q).unwrap());
        }
        let other = experiment(&mut rng, &a2, &b2, 4, q);
        assert!(!joint_lmi_compatible(&init, &other, q).unwrap());
    }

    #[test]
    fn exact_joint_test_agrees_with_kernel_test() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (a1, b1, a2, b2) = pair();
        for k in 0..20 {
            let init = experiment(&mut rng, &a1, &b1, 1 + k % 4, 0.0);
            let (a, b) = if k % 2 == 0 { (&a1, &b1) } else { (&a2, &b2) };
            let online = experiment(&mut rng, a, b, 1 + k % 3, 0.0);
            assert_eq!(
                joint_lmi_compatible(&init, &online, 0.0).unwrap(),
                kernel_compatible(&init, &online).unwrap(),
                "instance {k}"
            );
        }
    }

    #[test]
    fn random_input_on_sphere() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = DVector::from_vec(vec![3.0, 4.0]);
        for _ in 0..50 {
            assert!((random_input(&mut rng, &x, 3, 0.5).norm() - 2.5).abs() < 1e-12);
        }
        assert_eq!(random_input(&mut rng, &DVector::zeros(2), 3, 0.5), DVector::zeros(3));
    }
}
