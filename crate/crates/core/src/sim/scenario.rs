//! Scenario configuration, initialization step and closed-loop runs with logging.

use super::{fixture, generate_init_data, make_switching_signal, sample_noise, Mode, Plant, Schedule};
use crate::controller::{ControllerConfig, ControllerState, Phase, Scenario};
use crate::data_model::{NoiseModel, TrajectoryData};
use crate::detect::noiseless::kernel_compatible;
use crate::detect::noisy::joint_lmi;
use crate::error::{Error, Result};
use crate::informativity::{synthesize, StabilizationCertificate};
use crate::sdp::IpmSettings;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::Path;

/// Row-major matrix literal used in configuration files.
pub type MatrixRows = Vec<Vec<f64>>;

pub fn matrix_from_rows(rows: &MatrixRows) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::Parse("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlantSpec {
    Fixture,
    Custom { modes: Vec<ModeSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub a: MatrixRows,
    pub b: MatrixRows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleSpec {
    Fixture,
    /// `(start time, mode)` pairs with 1-based modes.
    Explicit {
        segments: Vec<(usize, usize)>,
    },
    Random {
        mean_dwell: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub noise: u64,
    pub controller: u64,
    pub schedule: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { init: 0, noise: 1, controller: 2, schedule: 3 }
    }
}

fn default_excitation() -> f64 {
    1.0
}

fn default_attempts() -> u64 {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default = "fixture_plant")]
    pub plant: PlantSpec,
    pub lambda: f64,
    pub c: f64,
    pub q: f64,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub known_switches: bool,
    /// Length `T` of every initialization experiment.
    pub init_length: usize,
    #[serde(default = "default_excitation")]
    pub excitation: f64,
    #[serde(default = "fixture_schedule")]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub seeds: Seeds,
    /// Number of consecutive initialization seeds tried before giving up.
    #[serde(default = "default_attempts")]
    pub max_seed_attempts: u64,
}

fn fixture_plant() -> PlantSpec {
    PlantSpec::Fixture
}

fn fixture_schedule() -> ScheduleSpec {
    ScheduleSpec::Fixture
}

impl ScenarioConfig {
    /// The four benchmark runs: 1 noiseless/known, 2 noiseless/unknown, 3 noisy/known, 4 noisy/unknown.
    pub fn benchmark(k: usize) -> Self {
        let noisy = k >= 3;
        Self {
            plant: PlantSpec::Fixture,
            lambda: fixture::LAMBDA,
            c: if noisy { fixture::NOISY_C } else { fixture::NOISELESS_C },
            q: if noisy { fixture::NOISY_Q } else { 0.0 },
            horizon: fixture::HORIZON,
            x0: fixture::x0().as_slice().to_vec(),
            known_switches: k % 2 == 1,
            init_length: if noisy { fixture::NOISY_T } else { fixture::NOISELESS_T },
            excitation: 1.0,
            schedule: ScheduleSpec::Fixture,
            seeds: Seeds {
                init: if noisy { fixture::NOISY_INIT_SEED } else { fixture::NOISELESS_INIT_SEED },
                ..Seeds::default()
            },
            max_seed_attempts: default_attempts(),
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario { known_switches: self.known_switches, noisy: self.q > 0.0 }
    }

    pub fn modes(&self) -> Result<Vec<Mode>> {
        match &self.plant {
            PlantSpec::Fixture => Ok(fixture::modes()),
            PlantSpec::Custom { modes } => {
                modes.iter().map(|s| Mode::new(matrix_from_rows(&s.a)?, matrix_from_rows(&s.b)?)).collect()
            }
        }
    }

    pub fn build_schedule(&self, p: usize) -> Result<Schedule> {
        let s = match &self.schedule {
            ScheduleSpec::Fixture => fixture::schedule(),
            ScheduleSpec::Explicit { segments } => {
                if segments.iter().any(|&(_, m)| m == 0) {
                    return Err(Error::Precondition("schedule modes are 1-based".into()));
                }
                Schedule { segments: segments.iter().map(|&(t, m)| (t, m - 1)).collect() }
            }
            ScheduleSpec::Random { mean_dwell } => make_switching_signal(
                &mut ChaCha8Rng::seed_from_u64(self.seeds.schedule),
                *mean_dwell,
                p,
                self.horizon,
            )?,
        };
        s.validate(p)?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.init_length == 0 {
            return Err(Error::Precondition("init_length must be at least 1".into()));
        }
        if !(self.q >= 0.0) {
            return Err(Error::InvalidNoiseModel(format!("q = {} must be nonnegative", self.q)));
        }
        Ok(())
    }
}

/// Initialization data of every mode with the certificates synthesized from them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Initialization {
    pub seed: u64,
    pub data: Vec<TrajectoryData>,
    pub certificates: Vec<StabilizationCertificate>,
}

/// Whether two initialization datasets admit no common explaining system.
pub fn pairwise_incompatible(d1: &TrajectoryData, d2: &TrajectoryData, q: f64) -> Result<bool> {
    if q == 0.0 {
        Ok(!kernel_compatible(d1, d2)?)
    } else {
        Ok(!joint_lmi(d1, d2, q, &IpmSettings::default())?.compatible())
    }
}

/// Draws initialization data from `seed` and checks informativity and pairwise incompatibility.
pub fn try_initialization(
    modes: &[Mode],
    t: usize,
    excitation: f64,
    q: f64,
    lambda: f64,
    seed: u64,
) -> Result<Initialization> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<TrajectoryData> =
        modes.iter().map(|m| generate_init_data(&mut rng, m, t, excitation, q)).collect::<Result<_>>()?;
    for i in 0..data.len() {
        for j in i + 1..data.len() {
            if !pairwise_incompatible(&data[i], &data[j], q)? {
                return Err(Error::Precondition(format!("modes {} and {} have compatible data", i + 1, j + 1)));
            }
        }
    }
    let noise = NoiseModel::energy_bound(q, modes[0].n(), t)?;
    let certificates = data.iter().map(|d| synthesize(d, &noise, lambda)).collect::<Result<_>>()?;
    Ok(Initialization { seed, data, certificates })
}

/// First seed from `start` whose initialization data satisfy both data assumptions.
pub fn find_initialization(
    modes: &[Mode],
    t: usize,
    excitation: f64,
    q: f64,
    lambda: f64,
    start: u64,
    attempts: u64,
) -> Result<Initialization> {
    let mut last = None;
    for seed in start..start.saturating_add(attempts.max(1)) {
        match try_initialization(modes, t, excitation, q, lambda, seed) {
            Ok(init) => return Ok(init),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or(Error::Precondition("no initialization attempt made".into())))
}

/// One logged time step. Modes are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub phase: Phase,
    pub sigma: usize,
    pub sigma_d: Option<usize>,
    pub x_norm: f64,
    /// `‖P^{1/2} x‖` for the applied mode.
    pub v: Option<f64>,
    pub eliminated_modes: Vec<usize>,
    pub x: Vec<f64>,
    /// Input and noise of the step `t → t+1`; absent on the final record.
    pub u: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub start: usize,
    /// First stabilization step after the episode, if any.
    pub end: Option<usize>,
    pub length: usize,
    pub detected: Option<usize>,
    pub true_mode: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub known_switches: bool,
    pub noisy: bool,
    pub init_seed: u64,
    pub horizon: usize,
    pub initial_norm: f64,
    pub final_norm: f64,
    pub norm_ratio: f64,
    /// `sup_{t ≥ 50} ‖x(t)‖`.
    pub sup_norm_after_50: f64,
    pub switches: usize,
    pub silent_switches: usize,
    pub detection_restarts: usize,
    pub detection_steps: usize,
    pub detection_fraction: f64,
    pub episodes: Vec<Episode>,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub config: ScenarioConfig,
    pub plant: Plant,
    pub init: Initialization,
    pub records: Vec<StepRecord>,
    pub summary: Summary,
}

/// Runs the initialization step and the closed loop for `cfg.horizon` steps.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let modes = cfg.modes()?;
    let init = find_initialization(
        &modes,
        cfg.init_length,
        cfg.excitation,
        cfg.q,
        cfg.lambda,
        cfg.seeds.init,
        cfg.max_seed_attempts,
    )?;
    run_with_initialization(cfg, init)
}

/// Closed-loop run reusing an existing initialization.
pub fn run_with_initialization(cfg: &ScenarioConfig, init: Initialization) -> Result<ScenarioRun> {
    cfg.validate()?;
    let modes = cfg.modes()?;
    let schedule = cfg.build_schedule(modes.len())?;
    let plant = Plant::new(modes, schedule, cfg.q)?;
    let n = plant.n();
    if cfg.x0.len() != n {
        return Err(Error::DimensionMismatch(format!("x0 has {} entries, plant has n = {n}", cfg.x0.len())));
    }
    let control = ControllerConfig { lambda: cfg.lambda, q: cfg.q, c: cfg.c, scenario: cfg.scenario() };
    let mut x = DVector::from_column_slice(&cfg.x0);
    let mut ctl = ControllerState::new(init.certificates.clone(), init.data.clone(), control, &x)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.noise);
    let mut ctl_rng = ChaCha8Rng::seed_from_u64(cfg.seeds.controller);
    let mut records = Vec::with_capacity(cfg.horizon + 1);
    let (mut silent, mut restarts) = (0, 0);

    for t in 0..cfg.horizon {
        let phase = ctl.phase;
        let sigma = plant.schedule.mode_at(t);
        let sigma_d = ctl.sigma_d;
        let v = ctl.lyapunov(&x);
        let u = ctl.control_step(&x, &mut ctl_rng);
        let w = sample_noise(&mut noise_rng, cfg.q, n);
        let xn = plant.step(t, &x, &u, &w);
        let switched = t >= 1 && plant.schedule.mode_at(t - 1) != sigma;
        let mut notes = Vec::new();
        let mut eliminated = Vec::new();
        match ctl.observe(&x, &u, &xn, switched) {
            Ok(obs) => {
                eliminated = obs.eliminated.iter().map(|i| i + 1).collect();
                if obs.entered_detection {
                    notes.push("detection_start".to_string());
                }
                if obs.entered_stabilization {
                    notes.push(format!("mode_detected:{}", ctl.sigma_d.map_or(0, |i| i + 1)));
                }
                if switched && phase == Phase::Stabilization && !obs.entered_detection {
                    silent += 1;
                    notes.push("silent_switch".to_string());
                }
            }
            Err(e @ (Error::EmptyCandidates | Error::NonTermination { .. })) => {
                restarts += 1;
                notes.push(format!("detection_restart:{e}"));
                ctl.restart_detection(&xn);
            }
            Err(e) => return Err(e),
        }
        if switched {
            notes.insert(
                0,
                if phase == Phase::ModeDetection { "switch_during_detection" } else { "switch" }.to_string(),
            );
        }
        records.push(StepRecord {
            t,
            phase,
            sigma: sigma + 1,
            sigma_d: sigma_d.map(|i| i + 1),
            x_norm: x.norm(),
            v,
            eliminated_modes: eliminated,
            x: x.as_slice().to_vec(),
            u: Some(u.as_slice().to_vec()),
            w: Some(w.as_slice().to_vec()),
            notes,
        });
        x = xn;
    }
    records.push(StepRecord {
        t: cfg.horizon,
        phase: ctl.phase,
        sigma: plant.schedule.mode_at(cfg.horizon) + 1,
        sigma_d: ctl.sigma_d.map(|i| i + 1),
        x_norm: x.norm(),
        v: ctl.lyapunov(&x),
        eliminated_modes: Vec::new(),
        x: x.as_slice().to_vec(),
        u: None,
        w: None,
        notes: Vec::new(),
    });
    let summary = summarize(cfg, &plant, &init, &records, silent, restarts);
    Ok(ScenarioRun { config: cfg.clone(), plant, init, records, summary })
}

/// Detection episodes as maximal runs of detection-phase steps.
pub fn episodes(records: &[StepRecord]) -> Vec<Episode> {
    let mut out: Vec<Episode> = Vec::new();
    let mut open: Option<usize> = None;
    for r in records {
        match (r.phase, open) {
            (Phase::ModeDetection, None) => open = Some(r.t),
            (Phase::Stabilization, Some(start)) => {
                out.push(Episode {
                    start,
                    end: Some(r.t),
                    length: r.t - start,
                    detected: r.sigma_d,
                    true_mode: records[start].sigma,
                });
                open = None;
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        let last = records.last().map_or(start, |r| r.t);
        out.push(Episode { start, end: None, length: last - start, detected: None, true_mode: records[start].sigma });
    }
    out
}

fn summarize(
    cfg: &ScenarioConfig,
    plant: &Plant,
    init: &Initialization,
    records: &[StepRecord],
    silent: usize,
    restarts: usize,
) -> Summary {
    let initial_norm = records[0].x_norm;
    let final_norm = records.last().map_or(initial_norm, |r| r.x_norm);
    let steps = records.iter().filter(|r| r.u.is_some());
    let detection_steps = steps.filter(|r| r.phase == Phase::ModeDetection).count();
    Summary {
        known_switches: cfg.known_switches,
        noisy: cfg.q > 0.0,
        init_seed: init.seed,
        horizon: cfg.horizon,
        initial_norm,
        final_norm,
        norm_ratio: if initial_norm > 0.0 { final_norm / initial_norm } else { 0.0 },
        sup_norm_after_50: records.iter().filter(|r| r.t >= 50).map(|r| r.x_norm).fold(0.0, f64::max),
        switches: plant.schedule.switch_times(cfg.horizon).len(),
        silent_switches: silent,
        detection_restarts: restarts,
        detection_steps,
        detection_fraction: if cfg.horizon > 0 { detection_steps as f64 / cfg.horizon as f64 } else { 0.0 },
        episodes: episodes(records),
    }
}

impl ScenarioRun {
    /// Writes `trajectory.csv`, `events.jsonl` and `summary.json` into `dir`,
    /// with the certificates under `certs/` and the initialization dataset under `init/`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_trajectory(&dir.join("trajectory.csv"), &self.records, self.plant.n(), self.plant.m())?;
        write_events(&dir.join("events.jsonl"), &self.records)?;
        fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        crate::io::write_certificates(&dir.join("certs"), &self.init.certificates, self.config.lambda)?;
        crate::io::write_dataset(
            &dir.join("init"),
            &self.init.data,
            crate::io::NoiseSpec::from_q(self.config.q),
            Some(&self.plant.modes),
        )?;
        Ok(())
    }
}

pub fn write_trajectory(path: &Path, records: &[StepRecord], n: usize, m: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.extend(["sigma", "sigma_d", "phase", "V"].map(String::from));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.t.to_string()];
        row.extend(r.x.iter().map(f64::to_string));
        match &r.u {
            Some(u) => row.extend(u.iter().map(f64::to_string)),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        row.push(r.sigma.to_string());
        row.push(r.sigma_d.map_or(String::new(), |s| s.to_string()));
        row.push(r.phase.label().to_string());
        row.push(r.v.map_or(String::new(), |v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events(path: &Path, records: &[StepRecord]) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<StepRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}
