//! Two-phase online switched controller: mode detection, then stabilization with a
//! Lyapunov-based switch monitor.

use crate::data_model::TrajectoryData;
use crate::detect::{noiseless, noisy, DetectionState, StepReport};
use crate::error::{Error, Result};
use crate::informativity::StabilizationCertificate;
use crate::linalg::{max_eig, spectral_norm, sqrtm_psd};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    ModeDetection,
    Stabilization,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::ModeDetection => "detection",
            Phase::Stabilization => "stabilization",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    /// The plant announces every switch; the Lyapunov monitor is not used.
    pub known_switches: bool,
    pub noisy: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub lambda: f64,
    pub q: f64,
    /// Input bound `‖u‖ ≤ c‖x‖` during detection.
    pub c: f64,
    pub scenario: Scenario,
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Precondition(format!("λ = {} must lie in (0, 1)", self.lambda)));
        }
        if !(self.c > 0.0) {
            return Err(Error::Precondition(format!("input gain c = {} must be positive", self.c)));
        }
        if !(self.q >= 0.0) || (self.q > 0.0) != self.scenario.noisy {
            return Err(Error::Precondition(format!(
                "noise bound q = {} is inconsistent with noisy = {}",
                self.q, self.scenario.noisy
            )));
        }
        Ok(())
    }
}

/// A certificate with its cached Lyapunov square root.
#[derive(Debug, Clone)]
pub struct ModeCertificate {
    pub cert: StabilizationCertificate,
    pub p_sqrt: DMatrix<f64>,
    /// `λ_max(P^{1/2})`.
    pub p_sqrt_max: f64,
}

impl ModeCertificate {
    pub fn new(cert: StabilizationCertificate) -> Self {
        let p_sqrt = sqrtm_psd(&cert.lyapunov);
        let p_sqrt_max = max_eig(&p_sqrt);
        Self { cert, p_sqrt, p_sqrt_max }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (&self.p_sqrt * x).norm()
    }
}

/// `V(x) = ‖P^{1/2} x‖`.
pub fn lyapunov_value(cert: &StabilizationCertificate, x: &DVector<f64>) -> f64 {
    (sqrtm_psd(&cert.lyapunov) * x).norm()
}

/// Whether `V(x_next) > √λ V(x) + λ_max(P^{1/2}) q` for the certificate of the assumed mode.
pub fn switch_detected(cert: &ModeCertificate, lambda: f64, q: f64, x: &DVector<f64>, x_next: &DVector<f64>) -> bool {
    cert.value(x_next) > lambda.sqrt() * cert.value(x) + cert.p_sqrt_max * q
}

/// What one observed transition changed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    /// Modes removed by the detection step (0-based).
    pub eliminated: Vec<usize>,
    pub entered_detection: bool,
    pub entered_stabilization: bool,
}

#[derive(Debug, Clone)]
pub struct ControllerState {
    pub phase: Phase,
    /// Mode whose gain is applied; `None` before the first detection finishes.
    pub sigma_d: Option<usize>,
    pub detection: DetectionState,
    pub certificates: Vec<ModeCertificate>,
    pub init_data: Vec<TrajectoryData>,
    pub config: ControllerConfig,
}

impl ControllerState {
    /// Fresh controller at `x0`, starting in the detection phase.
    pub fn new(
        certificates: Vec<StabilizationCertificate>,
        init_data: Vec<TrajectoryData>,
        config: ControllerConfig,
        x0: &DVector<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if certificates.is_empty() || certificates.len() != init_data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} certificates for {} initialization datasets",
                certificates.len(),
                init_data.len()
            )));
        }
        let m = certificates[0].m();
        let p = certificates.len();
        Ok(Self {
            phase: Phase::ModeDetection,
            sigma_d: None,
            detection: DetectionState::new(p, x0, m, config.c),
            certificates: certificates.into_iter().map(ModeCertificate::new).collect(),
            init_data,
            config,
        })
    }

    pub fn modes(&self) -> usize {
        self.certificates.len()
    }

    /// `V_{σ_d}(x)` for the applied mode, if any.
    pub fn lyapunov(&self, x: &DVector<f64>) -> Option<f64> {
        self.sigma_d.map(|i| self.certificates[i].value(x))
    }

    /// Input for the current state.
    pub fn control_step<R: Rng + ?Sized>(&self, x: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        match self.phase {
            Phase::Stabilization => {
                let i = self.sigma_d.expect("stabilization has a detected mode");
                &self.certificates[i].cert.gain * x
            }
            Phase::ModeDetection if self.config.scenario.noisy => {
                noisy::random_input(rng, x, self.detection.online.m(), self.config.c)
            }
            Phase::ModeDetection => noiseless::design_input(&self.detection, x),
        }
    }

    /// Bound `max(‖K_i‖, c)` on `‖u‖ / ‖x‖` over both phases.
    pub fn input_bound(&self) -> f64 {
        self.certificates.iter().map(|c| spectral_norm(&c.cert.gain)).fold(self.config.c, f64::max)
    }

    /// Processes the executed step `x → x_next` under `u`.
    ///
    /// `switch_notice` tells a known-switch controller that this transition was produced by a new mode.
    pub fn observe(
        &mut self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_next: &DVector<f64>,
        switch_notice: bool,
    ) -> Result<Observation> {
        match self.phase {
            Phase::ModeDetection if self.config.scenario.known_switches && switch_notice => {
                self.detection = DetectionState::seeded(self.modes(), x, u, x_next, self.config.c);
                Ok(Observation { eliminated: Vec::new(), entered_detection: true, entered_stabilization: false })
            }
            Phase::ModeDetection => {
                let StepReport { eliminated, .. } = if self.config.scenario.noisy {
                    noisy::step_detection_noisy(&mut self.detection, &self.init_data, self.config.q, u, x_next)?
                } else {
                    noiseless::step_detection(&mut self.detection, &self.init_data, u, x_next)?
                };
                let mut obs = Observation { eliminated, entered_detection: false, entered_stabilization: false };
                if let Some(i) = self.detection.detected() {
                    self.sigma_d = Some(i);
                    self.phase = Phase::Stabilization;
                    obs.entered_stabilization = true;
                }
                Ok(obs)
            }
            Phase::Stabilization => {
                let fire = if self.config.scenario.known_switches {
                    switch_notice
                } else {
                    let i = self.sigma_d.expect("stabilization has a detected mode");
                    switch_detected(&self.certificates[i], self.config.lambda, self.config.q, x, x_next)
                };
                if fire {
                    self.phase = Phase::ModeDetection;
                    self.detection = DetectionState::seeded(self.modes(), x, u, x_next, self.config.c);
                }
                Ok(Observation { eliminated: Vec::new(), entered_detection: fire, entered_stabilization: false })
            }
        }
    }

    /// Abandons the current episode and starts a fresh one at `x`.
    pub fn restart_detection(&mut self, x: &DVector<f64>) {
        self.phase = Phase::ModeDetection;
        self.detection = DetectionState::new(self.modes(), x, self.detection.online.m(), self.config.c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::NoiseModel;
    use crate::informativity::synthesize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn scalar_modes() -> Vec<(DMatrix<f64>, DMatrix<f64>)> {
        vec![(mat(1, 1, &[1.5]), mat(1, 1, &[1.0])), (mat(1, 1, &[-1.2]), mat(1, 1, &[0.5]))]
    }

    fn init_data(a: &DMatrix<f64>, b: &DMatrix<f64>) -> TrajectoryData {
        let mut x = DVector::from_vec(vec![1.0]);
        let mut d = TrajectoryData::initial(&x, 1);
        for u in [1.0, -0.7, 0.4] {
            let u = DVector::from_vec(vec![u]);
            let xn = a * &x + b * &u;
            d.push(&u, &xn);
            x = xn;
        }
        d
    }

    fn controller(known: bool) -> (ControllerState, Vec<(DMatrix<f64>, DMatrix<f64>)>) {
        let modes = scalar_modes();
        let data: Vec<_> = modes.iter().map(|(a, b)| init_data(a, b)).collect();
        let certs = data.iter().map(|d| synthesize(d, &NoiseModel::noiseless(1, 3), 0.8).unwrap()).collect();
        let cfg = ControllerConfig {
            lambda: 0.8,
            q: 0.0,
            c: 0.1,
            scenario: Scenario { known_switches: known, noisy: false },
        };
        (ControllerState::new(certs, data, cfg, &DVector::from_vec(vec![1.0])).unwrap(), modes)
    }

    #[test]
    fn starts_in_detection_and_zero_state_gives_zero_input() {
        let (mut ctl, _) = controller(false);
        assert_eq!(ctl.phase, Phase::ModeDetection);
        ctl.phase = Phase::Stabilization;
        ctl.sigma_d = Some(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(ctl.control_step(&DVector::zeros(1), &mut rng), DVector::zeros(1));
    }

    #[test]
    fn lyapunov_value_cases() {
        let (ctl, _) = controller(false);
        let mut cert = ctl.certificates[0].cert.clone();
        assert_eq!(lyapunov_value(&cert, &DVector::zeros(1)), 0.0);
        cert.lyapunov = DMatrix::identity(1, 1);
        assert!((lyapunov_value(&cert, &DVector::from_vec(vec![-3.0])) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn closed_loop_detects_then_never_false_alarms() {
        let (mut ctl, modes) = controller(false);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (a, b) = &modes[1];
        let mut x = DVector::from_vec(vec![1.0]);
        for _ in 0..40 {
            let u = ctl.control_step(&x, &mut rng);
            assert!(u.norm() <= ctl.input_bound() * x.norm() + 1e-12);
            let xn = a * &x + b * &u;
            let obs = ctl.observe(&x, &u, &xn, false).unwrap();
            assert!(!obs.entered_detection);
            x = xn;
        }
        assert_eq!(ctl.sigma_d, Some(1));
        assert_eq!(ctl.phase, Phase::Stabilization);
    }

    #[test]
    fn switch_resets_buffers_to_straddling_pair() {
        let (mut ctl, modes) = controller(true);
        ctl.phase = Phase::Stabilization;
        ctl.sigma_d = Some(0);
        let x = DVector::from_vec(vec![2.0]);
        let u = &ctl.certificates[0].cert.gain * &x;
        let xn = &modes[1].0 * &x + &modes[1].1 * &u;
        let obs = ctl.observe(&x, &u, &xn, true).unwrap();
        assert!(obs.entered_detection);
        assert_eq!(ctl.phase, Phase::ModeDetection);
        assert_eq!(ctl.detection.online.states(), &mat(1, 2, &[x[0], xn[0]]));
        assert_eq!(ctl.detection.online.inputs(), &mat(1, 1, &[u[0]]));
    }

    #[test]
    fn notice_during_detection_restarts_episode() {
        let (mut ctl, modes) = controller(true);
        let x = DVector::from_vec(vec![1.0]);
        let u = DVector::from_vec(vec![0.3]);
        let xn = &modes[1].0 * &x + &modes[1].1 * &u;
        let obs = ctl.observe(&x, &u, &xn, true).unwrap();
        assert!(obs.entered_detection && obs.eliminated.is_empty());
        assert_eq!(ctl.detection.candidates, vec![0, 1]);
        assert_eq!(ctl.detection.online.states(), &mat(1, 2, &[x[0], xn[0]]));
    }

    #[test]
    fn inconsistent_noise_flags_rejected() {
        let cfg = ControllerConfig {
            lambda: 0.8,
            q: 0.01,
            c: 1.0,
            scenario: Scenario { known_switches: false, noisy: false },
        };
        assert!(cfg.validate().is_err());
    }
}
