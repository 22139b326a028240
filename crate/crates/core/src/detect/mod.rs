//! Online mode detection by elimination of incompatible modes.

pub mod noiseless;
pub mod noisy;

use crate::data_model::TrajectoryData;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// One detection episode: surviving candidates and the online data collected so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionState {
    /// Surviving mode indices (0-based, increasing).
    pub candidates: Vec<usize>,
    pub online: TrajectoryData,
    /// Input bound `‖u‖ ≤ c‖x‖` during detection.
    pub input_gain: f64,
}

impl DetectionState {
    /// Fresh episode at state `x0` with every one of `p` modes a candidate.
    pub fn new(p: usize, x0: &DVector<f64>, m: usize, input_gain: f64) -> Self {
        Self { candidates: (0..p).collect(), online: TrajectoryData::initial(x0, m), input_gain }
    }

    /// Episode seeded with one transition, as after leaving the stabilization phase.
    pub fn seeded(p: usize, x: &DVector<f64>, u: &DVector<f64>, x_next: &DVector<f64>, input_gain: f64) -> Self {
        Self { candidates: (0..p).collect(), online: TrajectoryData::single(x, u, x_next), input_gain }
    }

    /// The detected mode once a single candidate survives.
    pub fn detected(&self) -> Option<usize> {
        match self.candidates.as_slice() {
            [i] => Some(*i),
            _ => None,
        }
    }

    pub fn current_state(&self) -> DVector<f64> {
        self.online.last_state()
    }

    /// Removes the modes failing `compatible`, returning the eliminated ones.
    fn eliminate(&mut self, mut compatible: impl FnMut(usize) -> crate::Result<bool>) -> crate::Result<Vec<usize>> {
        let mut kept = Vec::with_capacity(self.candidates.len());
        let mut removed = Vec::new();
        for &i in &self.candidates {
            if compatible(i)? {
                kept.push(i);
            } else {
                removed.push(i);
            }
        }
        self.candidates = kept;
        Ok(removed)
    }
}

/// Outcome of one detection step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    pub eliminated: Vec<usize>,
    pub remaining: Vec<usize>,
}
/// Detection test applied at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectionTest {
    Noiseless,
    Noisy { q: f64 },
}

/// Result of replaying a recorded online trajectory through the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayTrace {
    pub steps: Vec<StepReport>,
    /// Set when the detector stopped with an error before the record ended.
    pub error: Option<String>,
}

impl ReplayTrace {
    pub fn survivors(&self, p: usize) -> Vec<usize> {
        self.steps.last().map_or_else(|| (0..p).collect(), |s| s.remaining.clone())
    }

    /// 0-based step index at which a single candidate first remained.
    pub fn detection_step(&self) -> Option<usize> {
        self.steps.iter().position(|s| s.remaining.len() == 1)
    }
}

/// Feeds the transitions of `online` one at a time, stopping once one mode survives.
pub fn replay_detection(
    init: &[TrajectoryData],
    online: &TrajectoryData,
    test: DetectionTest,
) -> crate::Result<ReplayTrace> {
    if let Some(d) = init.iter().find(|d| d.n() != online.n() || d.m() != online.m()) {
        return Err(crate::Error::DimensionMismatch(format!(
            "online data is {}x{}, initialization data is {}x{}",
            online.n(),
            online.m(),
            d.n(),
            d.m()
        )));
    }
    let mut state = DetectionState::new(init.len(), &online.states().column(0).into_owned(), online.m(), 0.0);
    let mut trace = ReplayTrace { steps: Vec::new(), error: None };
    for (_, u, xn) in online.transitions() {
        let r = match test {
            DetectionTest::Noiseless => noiseless::step_detection(&mut state, init, &u, &xn),
            DetectionTest::Noisy { q } => noisy::step_detection_noisy(&mut state, init, q, &u, &xn),
        };
        match r {
            Ok(rep) => {
                let done = rep.remaining.len() == 1;
                trace.steps.push(rep);
                if done {
                    break;
                }
            }
            Err(e) => {
                trace.error = Some(e.to_string());
                break;
            }
        }
    }
    Ok(trace)
}
