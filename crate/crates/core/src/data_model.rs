//! Trajectory data, noise models and consistent-system sets.

use crate::error::{Error, Result};
use crate::linalg::{self, hstack, kernel, min_eig, pinv, sqrtm_psd, sym, sym_fn, vstack};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Default tolerance of the membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Input/state measurements `u(0..T-1)`, `x(0..T)` of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryData {
    inputs: DMatrix<f64>,
    states: DMatrix<f64>,
}

impl TrajectoryData {
    pub fn new(inputs: DMatrix<f64>, states: DMatrix<f64>) -> Result<Self> {
        if states.ncols() != inputs.ncols() + 1 {
            return Err(Error::DimensionMismatch(format!(
                "states have {} columns, inputs {}; expected one more state than input",
                states.ncols(),
                inputs.ncols()
            )));
        }
        Ok(Self { inputs, states })
    }

    /// Data with a single initial state and no transitions.
    pub fn initial(x0: &DVector<f64>, m: usize) -> Self {
        Self { inputs: DMatrix::zeros(m, 0), states: DMatrix::from_column_slice(x0.len(), 1, x0.as_slice()) }
    }

    /// Data holding exactly one transition `x → x_next` under `u`.
    pub fn single(x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>) -> Self {
        let mut s = Self::initial(x, u.len());
        s.push(u, x_next);
        s
    }

    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn m(&self) -> usize {
        self.inputs.nrows()
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn x_minus(&self) -> DMatrix<f64> {
        self.states.columns(0, self.len()).into_owned()
    }

    pub fn x_plus(&self) -> DMatrix<f64> {
        self.states.columns(1, self.len()).into_owned()
    }

    pub fn u_minus(&self) -> DMatrix<f64> {
        self.inputs.clone()
    }

    /// `[X_−; U_−]`, of size `(n+m) × T`.
    pub fn stacked(&self) -> DMatrix<f64> {
        vstack(&[&self.x_minus(), &self.inputs])
    }

    pub fn last_state(&self) -> DVector<f64> {
        self.states.column(self.len()).into_owned()
    }

    /// Appends one transition from the current last state.
    pub fn push(&mut self, u: &DVector<f64>, x_next: &DVector<f64>) {
        assert_eq!(u.len(), self.m(), "input dimension");
        assert_eq!(x_next.len(), self.n(), "state dimension");
        let t = self.len();
        self.inputs = self.inputs.clone().insert_column(t, 0.0);
        self.inputs.set_column(t, u);
        self.states = self.states.clone().insert_column(t + 1, 0.0);
        self.states.set_column(t + 1, x_next);
    }

    /// The transitions `(x(t), u(t), x(t+1))`.
    pub fn transitions(&self) -> impl Iterator<Item = (DVector<f64>, DVector<f64>, DVector<f64>)> + '_ {
        (0..self.len()).map(move |t| {
            (
                self.states.column(t).into_owned(),
                self.inputs.column(t).into_owned(),
                self.states.column(t + 1).into_owned(),
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    General,
    EnergyBound { q: f64 },
}

/// Quadratic noise bound `[I; W_−ᵀ]ᵀ Π [I; W_−ᵀ] ⪰ 0` with `Π = [Π11 Π12; Π12ᵀ Π22]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub pi11: DMatrix<f64>,
    pub pi12: DMatrix<f64>,
    pub pi22: DMatrix<f64>,
    pub kind: NoiseKind,
}

impl NoiseModel {
    /// `Π11 = q²T·I`, `Π12 = 0`, `Π22 = −I`.
    pub fn energy_bound(q: f64, n: usize, t: usize) -> Result<Self> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::InvalidNoiseModel(format!("q = {q} must be finite and nonnegative")));
        }
        Ok(Self {
            pi11: DMatrix::identity(n, n) * (q * q * t as f64),
            pi12: DMatrix::zeros(n, t),
            pi22: -DMatrix::identity(t, t),
            kind: NoiseKind::EnergyBound { q },
        })
    }

    pub fn noiseless(n: usize, t: usize) -> Self {
        Self::energy_bound(0.0, n, t).expect("zero noise is valid")
    }

    pub fn general(pi11: DMatrix<f64>, pi12: DMatrix<f64>, pi22: DMatrix<f64>) -> Result<Self> {
        let nm = Self { pi11, pi12, pi22, kind: NoiseKind::General };
        nm.validate()?;
        Ok(nm)
    }

    pub fn n(&self) -> usize {
        self.pi11.nrows()
    }

    pub fn t(&self) -> usize {
        self.pi22.nrows()
    }

    pub fn q(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::EnergyBound { q } => Some(q),
            NoiseKind::General => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t) = (self.pi11.nrows(), self.pi22.nrows());
        if !self.pi11.is_square() || !self.pi22.is_square() || self.pi12.shape() != (n, t) {
            return Err(Error::InvalidNoiseModel("inconsistent block sizes".into()));
        }
        if t == 0 {
            return Ok(());
        }
        let scale = self.pi22.amax().max(1.0);
        if linalg::max_eig(&self.pi22) >= -1e-12 * scale {
            return Err(Error::InvalidNoiseModel("Π22 must be negative definite".into()));
        }
        let schur = &self.pi11 - &self.pi12 * pinv(&self.pi22) * self.pi12.transpose();
        if min_eig(&schur) < -1e-10 * schur.amax().max(1.0) {
            return Err(Error::InvalidNoiseModel("Π11 − Π12 Π22⁻¹ Π12ᵀ must be positive semidefinite".into()));
        }
        Ok(())
    }

    fn matrix(&self) -> DMatrix<f64> {
        let top = hstack(&[&self.pi11, &self.pi12]);
        let bot = hstack(&[&self.pi12.transpose(), &self.pi22]);
        vstack(&[&top, &bot])
    }
}

/// All `(A, B)` with `[I; Aᵀ; Bᵀ]ᵀ N [I; Aᵀ; Bᵀ] ⪰ 0`.
#[derive(Debug, Clone)]
pub struct ConsistentSet {
    pub n_matrix: DMatrix<f64>,
    pub n: usize,
    pub m: usize,
    pub data: Option<TrajectoryData>,
    pub noise: Option<NoiseModel>,
}

/// Data-defined matrix `N = C Π Cᵀ` with `C = [I X_+; 0 −X_−; 0 −U_−]`.
pub fn build_consistent_set(data: &TrajectoryData, noise: &NoiseModel) -> Result<ConsistentSet> {
    let (n, m, t) = (data.n(), data.m(), data.len());
    if noise.n() != n || noise.t() != t {
        return Err(Error::DimensionMismatch(format!(
            "noise model is {}×{} but data have n = {n}, T = {t}",
            noise.n(),
            noise.t()
        )));
    }
    noise.validate()?;
    let mut c = DMatrix::zeros(2 * n + m, n + t);
    c.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
    c.view_mut((0, n), (n, t)).copy_from(&data.x_plus());
    c.view_mut((n, n), (n, t)).copy_from(&(-data.x_minus()));
    c.view_mut((2 * n, n), (m, t)).copy_from(&(-data.u_minus()));
    let n_matrix = sym(&(&c * noise.matrix() * c.transpose()));
    Ok(ConsistentSet { n_matrix, n, m, data: Some(data.clone()), noise: Some(noise.clone()) })
}

/// `[I; Aᵀ; Bᵀ]`.
pub fn system_frame(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    vstack(&[&DMatrix::identity(n, n), &a.transpose(), &b.transpose()])
}

/// `[A B]` split back into `(A, B)`.
pub fn split_theta(theta: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let m = theta.ncols() - n;
    (theta.columns(0, n).into_owned(), theta.columns(n, m).into_owned())
}

impl ConsistentSet {
    pub fn from_matrix(n_matrix: DMatrix<f64>, n: usize, m: usize) -> Result<Self> {
        if n_matrix.shape() != (2 * n + m, 2 * n + m) {
            return Err(Error::DimensionMismatch(format!("N must be {0}×{0}", 2 * n + m)));
        }
        Ok(Self { n_matrix: sym(&n_matrix), n, m, data: None, noise: None })
    }

    /// Smallest eigenvalue of the quadratic form at `(A, B)`.
    pub fn qmi_value(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
        if a.shape() != (self.n, self.n) || b.shape() != (self.n, self.m) {
            return Err(Error::DimensionMismatch(format!("expected A {0}×{0} and B {0}×{1}", self.n, self.m)));
        }
        let f = system_frame(a, b);
        Ok(min_eig(&(f.transpose() * &self.n_matrix * f)))
    }

    pub fn membership(&self, a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> Result<bool> {
        Ok(self.qmi_value(a, b)? >= -tol)
    }

    fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let (n, k) = (self.n, self.n + self.m);
        (
            self.n_matrix.view((0, 0), (n, n)).into_owned(),
            self.n_matrix.view((0, n), (n, k)).into_owned(),
            self.n_matrix.view((n, n), (k, k)).into_owned(),
        )
    }

    /// Completed-square form `{Θ0 + Δ : Δ G Δᵀ ⪯ R}` of the set, with `G = −N22`.
    ///
    /// Directions in `ker G` are unconstrained and returned as an orthonormal basis.
    pub fn shape(&self) -> SetShape {
        let (n11, n12, n22) = self.blocks();
        let g = -&n22;
        let g_pinv = pinv(&g);
        // Θ0 = −N12 N22⁺ = N12 G⁺
        let center = &n12 * &g_pinv;
        let r = sym(&(&n11 + &n12 * &g_pinv * n12.transpose()));
        let free = kernel(&g);
        SetShape { center, r, g, free }
    }

    /// Draws candidate pairs around the set and keeps those passing the membership test.
    pub fn rejection_sample<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        count: usize,
        max_draws: usize,
        tol: f64,
    ) -> SampleReport {
        let shape = self.shape();
        let mut members = Vec::with_capacity(count);
        let mut draws = 0;
        while members.len() < count && draws < max_draws {
            draws += 1;
            let theta = shape.propose(rng, 1.1);
            let (a, b) = split_theta(&theta, self.n);
            if self.membership(&a, &b, tol).unwrap_or(false) {
                members.push(theta);
            }
        }
        SampleReport { members, draws, starved: false }.finish(count)
    }
}

/// Outcome of rejection sampling.
#[derive(Debug, Clone)]
pub struct SampleReport {
    /// Accepted `[A B]` matrices.
    pub members: Vec<DMatrix<f64>>,
    pub draws: usize,
    /// Fewer members than requested were found.
    pub starved: bool,
}

impl SampleReport {
    fn finish(mut self, requested: usize) -> Self {
        self.starved = self.members.len() < requested;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SetShape {
    pub center: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub free: DMatrix<f64>,
}

impl SetShape {
    /// Random `Θ0 + R^{1/2} Y G^{+1/2} + W Fᵀ` with `‖Y‖₂ ≤ reach`; free directions get
    /// log-uniformly distributed magnitudes.
    pub fn propose<R: Rng + ?Sized>(&self, rng: &mut R, reach: f64) -> DMatrix<f64> {
        let (n, k) = self.center.shape();
        let r_half = sqrtm_psd(&self.r);
        let g_half_pinv = sym_fn(&self.g, |v| if v > 1e-12 * self.g.amax().max(1e-300) { 1.0 / v.sqrt() } else { 0.0 });
        let y = DMatrix::<f64>::from_fn(n, k, |_, _| StandardNormal.sample(rng));
        let ynorm = linalg::spectral_norm(&y).max(1e-300);
        let dim = (n * k) as f64;
        let rho = reach * rng.random::<f64>().powf(1.0 / dim);
        let mut theta = &self.center + &r_half * (y * (rho / ynorm)) * &g_half_pinv;
        if self.free.ncols() > 0 {
            let mag = 10f64.powf(rng.random_range(-2.0..2.0)) * (1.0 + self.center.norm());
            let w = DMatrix::<f64>::from_fn(n, self.free.ncols(), |_, _| StandardNormal.sample(rng));
            theta += w * self.free.transpose() * mag;
        }
        theta
    }
}

/// Ball `{Θ : ‖Θ − Z‖ ≤ r}` in spectral norm containing a consistent set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphereApprox {
    pub center: DMatrix<f64>,
    pub radius: f64,
}

impl SphereApprox {
    pub fn contains(&self, theta: &DMatrix<f64>, tol: f64) -> bool {
        linalg::spectral_norm(&(theta - &self.center)) <= self.radius + tol
    }
}

/// Least-squares center `Z = X_+ [X_−; U_−]^†` and radius `√(q²T / λ_min(DDᵀ))`.
pub fn sphere_approx(data: &TrajectoryData, q: f64) -> Result<SphereApprox> {
    let d = data.stacked();
    let required = data.n() + data.m();
    let rank = linalg::numerical_rank(&d);
    if rank < required {
        return Err(Error::UnboundedSet { rank, required });
    }
    let center = data.x_plus() * pinv(&d);
    let gram = &d * d.transpose();
    let lmin = min_eig(&gram);
    let radius = (q * q * data.len() as f64 / lmin).sqrt();
    Ok(SphereApprox { center, radius })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_data() -> TrajectoryData {
        TrajectoryData::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_row_slice(1, 2, &[1.0, 2.0])).unwrap()
    }

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn trajectory_views() {
        let d = TrajectoryData::new(
            DMatrix::from_row_slice(1, 2, &[5.0, 6.0]),
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.x_minus(), DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 5.0]));
        assert_eq!(d.x_plus(), DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 5.0, 6.0]));
        assert_eq!(d.stacked().nrows(), 3);
        assert!(TrajectoryData::new(DMatrix::zeros(1, 2), DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn push_appends_transition() {
        let mut d = TrajectoryData::initial(&DVector::from_vec(vec![1.0, 0.0]), 1);
        assert!(d.is_empty());
        d.push(&DVector::from_vec(vec![0.5]), &DVector::from_vec(vec![0.0, 1.0]));
        assert_eq!(d.len(), 1);
        assert_eq!(d.last_state(), DVector::from_vec(vec![0.0, 1.0]));
    }

    #[test]
    fn scalar_noiseless_membership() {
        let d = scalar_data();
        let set = build_consistent_set(&d, &NoiseModel::noiseless(1, 1)).unwrap();
        assert!(set.membership(&m1(0.0), &m1(2.0), MEMBERSHIP_TOL).unwrap());
        assert!(set.membership(&m1(1.5), &m1(0.5), MEMBERSHIP_TOL).unwrap());
        assert!(!set.membership(&m1(0.0), &m1(3.0), MEMBERSHIP_TOL).unwrap());
    }

    #[test]
    fn lower_right_block_is_negative_gram() {
        let d = TrajectoryData::new(
            DMatrix::from_row_slice(1, 3, &[1.0, -1.0, 0.5]),
            DMatrix::from_row_slice(1, 4, &[1.0, 0.3, 2.0, -1.0]),
        )
        .unwrap();
        let set = build_consistent_set(&d, &NoiseModel::energy_bound(0.1, 1, 3).unwrap()).unwrap();
        let st = d.stacked();
        let want = -(&st * st.transpose());
        assert_relative_eq!(set.n_matrix.view((1, 1), (2, 2)).into_owned(), want, epsilon = 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = scalar_data();
        assert!(build_consistent_set(&d, &NoiseModel::noiseless(1, 2)).is_err());
        let set = build_consistent_set(&d, &NoiseModel::noiseless(1, 1)).unwrap();
        assert!(set.membership(&DMatrix::zeros(2, 2), &m1(1.0), 1e-8).is_err());
    }

    #[test]
    fn noise_model_validation() {
        assert!(NoiseModel::energy_bound(-1.0, 2, 2).is_err());
        assert!(NoiseModel::general(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).is_err());
        assert!(NoiseModel::general(-DMatrix::identity(1, 1), DMatrix::zeros(1, 1), -DMatrix::identity(1, 1)).is_err());
        assert!(NoiseModel::general(DMatrix::identity(1, 1), DMatrix::zeros(1, 1), -DMatrix::identity(1, 1)).is_ok());
    }

    #[test]
    fn sphere_hand_example() {
        // X_− = [1 0], U_− = [0 1], q = 1, T = 2: Gram = I so r = √2.
        let d = TrajectoryData::new(
            DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.7]),
        )
        .unwrap();
        let s = sphere_approx(&d, 1.0).unwrap();
        assert_relative_eq!(s.radius, 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s.center, DMatrix::from_row_slice(1, 2, &[0.0, 0.7]), epsilon = 1e-12);
    }

    #[test]
    fn sphere_rank_deficient_is_unbounded() {
        let d = scalar_data();
        assert!(matches!(sphere_approx(&d, 0.1), Err(Error::UnboundedSet { rank: 1, required: 2 })));
    }

    #[test]
    fn shape_center_matches_sphere_center() {
        let d = TrajectoryData::new(
            DMatrix::from_row_slice(1, 4, &[1.0, -1.0, 0.5, 0.2]),
            DMatrix::from_row_slice(1, 5, &[1.0, 0.3, 2.0, -1.0, 0.4]),
        )
        .unwrap();
        let set = build_consistent_set(&d, &NoiseModel::energy_bound(0.05, 1, 4).unwrap()).unwrap();
        let s = sphere_approx(&d, 0.05).unwrap();
        assert_relative_eq!(set.shape().center, s.center, epsilon = 1e-10);
    }

    #[test]
    fn rank_deficient_samples_are_members() {
        let d = scalar_data();
        let set = build_consistent_set(&d, &NoiseModel::noiseless(1, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep = set.rejection_sample(&mut rng, 50, 500, 1e-6);
        assert!(!rep.starved);
        for t in &rep.members {
            assert_relative_eq!(t[(0, 0)] + t[(0, 1)], 2.0, epsilon = 1e-6);
        }
    }
}
