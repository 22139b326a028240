//! Closed-loop simulation: plant, switching signals, noise and initialization experiments.

pub mod fixture;
pub mod scenario;

use crate::data_model::TrajectoryData;
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

/// One mode `x(t+1) = A x(t) + B u(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Mode {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() || b.nrows() != a.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}×{}, B is {}×{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

/// Piecewise-constant switching signal given by `(start time, mode)` segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    /// Strictly increasing start times beginning at 0; modes are 0-based.
    pub segments: Vec<(usize, usize)>,
}

impl Schedule {
    pub fn constant(mode: usize) -> Self {
        Self { segments: vec![(0, mode)] }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self.segments.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Precondition("schedule must start at time 0".into())),
        }
        for w in self.segments.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::Precondition("schedule start times must increase strictly".into()));
            }
        }
        if let Some((_, m)) = self.segments.iter().find(|(_, m)| *m >= p) {
            return Err(Error::Precondition(format!("schedule uses mode {} of {p}", m + 1)));
        }
        Ok(())
    }

    pub fn mode_at(&self, t: usize) -> usize {
        let k = self.segments.partition_point(|&(s, _)| s <= t);
        self.segments[k.saturating_sub(1)].1
    }

    /// Times `t ≥ 1` with `σ(t) ≠ σ(t−1)` up to `horizon` (exclusive).
    pub fn switch_times(&self, horizon: usize) -> Vec<usize> {
        self.segments.windows(2).filter(|w| w[0].1 != w[1].1).map(|w| w[1].0).filter(|&t| t < horizon).collect()
    }
}

/// Random schedule with dwell times `⌊mean/2⌋ + Exp` of the requested mean; consecutive modes differ.
pub fn make_switching_signal<R: Rng + ?Sized>(
    rng: &mut R,
    mean_dwell: f64,
    p: usize,
    horizon: usize,
) -> Result<Schedule> {
    if !(mean_dwell >= 1.0) || p == 0 {
        return Err(Error::Precondition(format!("mean dwell {mean_dwell} must be ≥ 1 with p ≥ 1 modes")));
    }
    let floor = (mean_dwell / 2.0).floor().max(1.0);
    let extra = mean_dwell - floor;
    let mut mode = rng.random_range(0..p);
    let mut segments = vec![(0, mode)];
    let mut t = 0usize;
    if p == 1 {
        return Ok(Schedule { segments });
    }
    loop {
        let tail = if extra > 0.0 { Exp::new(1.0 / extra).expect("positive rate").sample(rng) } else { 0.0 };
        t += (floor + tail).round().max(1.0) as usize;
        if t >= horizon {
            break;
        }
        let next = rng.random_range(0..p - 1);
        mode = if next >= mode { next + 1 } else { next };
        segments.push((t, mode));
    }
    Ok(Schedule { segments })
}

/// Uniform sample of the closed ball of radius `q` in `R^n`.
pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R, q: f64, n: usize) -> DVector<f64> {
    if q == 0.0 || n == 0 {
        return DVector::zeros(n);
    }
    loop {
        let g = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm = g.norm();
        if norm > 1e-12 {
            let radius = q * rng.random::<f64>().powf(1.0 / n as f64);
            return g * (radius / norm);
        }
    }
}

/// Switched plant with bounded additive noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub modes: Vec<Mode>,
    pub schedule: Schedule,
    pub q: f64,
}

impl Plant {
    pub fn new(modes: Vec<Mode>, schedule: Schedule, q: f64) -> Result<Self> {
        let first = modes.first().ok_or_else(|| Error::Precondition("plant needs at least one mode".into()))?;
        let (n, m) = (first.n(), first.m());
        if modes.iter().any(|md| md.n() != n || md.m() != m) {
            return Err(Error::DimensionMismatch("modes differ in (n, m)".into()));
        }
        schedule.validate(modes.len())?;
        if !(q >= 0.0) {
            return Err(Error::InvalidNoiseModel(format!("noise bound q = {q} must be nonnegative")));
        }
        Ok(Self { modes, schedule, q })
    }

    pub fn n(&self) -> usize {
        self.modes[0].n()
    }

    pub fn m(&self) -> usize {
        self.modes[0].m()
    }

    /// `x(t+1) = A_σ(t) x + B_σ(t) u + w`.
    pub fn step(&self, t: usize, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        self.modes[self.schedule.mode_at(t)].step(x, u) + w
    }
}

/// Experiment on one mode from a standard-normal initial state with inputs uniform on `[−e, e]^m`.
pub fn generate_init_data<R: Rng + ?Sized>(
    rng: &mut R,
    mode: &Mode,
    t: usize,
    excitation: f64,
    q: f64,
) -> Result<TrajectoryData> {
    if t == 0 {
        return Err(Error::Precondition("initialization experiments need T ≥ 1".into()));
    }
    let (n, m) = (mode.n(), mode.m());
    let mut x = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
    let mut data = TrajectoryData::initial(&x, m);
    for _ in 0..t {
        let u = DVector::from_fn(m, |_, _| rng.random_range(-excitation..=excitation));
        let xn = mode.step(&x, &u) + sample_noise(rng, q, n);
        data.push(&u, &xn);
        x = xn;
    }
    Ok(data)
}
