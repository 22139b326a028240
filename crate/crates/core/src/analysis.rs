//! Closed-loop stability apparatus: mode-coupling constant μ, detection growth rate λ_u,
//! dwell/activation-time fits, discrete timers and the ISS envelope check.

use crate::controller::Phase;
use crate::error::{Error, Result};
use crate::linalg::{inv_sqrtm_pd, max_eig, min_eig, spectral_norm, sqrtm_psd};
use crate::sim::scenario::StepRecord;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Absolute slack for timer ranges and update rules.
pub const TIMER_TOL: f64 = 1e-9;
/// Relative slack for the envelope and the one-step inequality.
pub const ENVELOPE_TOL: f64 = 1e-9;
/// Relative bisection gap for λ_u.
pub const LAMBDA_U_GAP: f64 = 1e-3;

/// `μ = max_{i,j} ‖P_i^{1/2} P_j^{−1/2}‖²`.
pub fn compute_mu(lyapunov: &[DMatrix<f64>]) -> f64 {
    let roots: Vec<_> = lyapunov.iter().map(sqrtm_psd).collect();
    let inv: Vec<_> = lyapunov.iter().map(inv_sqrtm_pd).collect();
    let mut mu: f64 = 1.0;
    for ri in &roots {
        for ij in &inv {
            mu = mu.max(spectral_norm(&(ri * ij)).powi(2));
        }
    }
    mu
}

/// `[λ_u P − k c² I, 0, Aᵀ; 0, k I, Bᵀ; A, B, P⁻¹]`.
pub fn growth_lmi(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, lambda_u: f64, k: f64, c: f64) -> DMatrix<f64> {
    let (n, m) = (a.nrows(), b.ncols());
    let p_inv = p.clone().try_inverse().unwrap_or_else(|| crate::linalg::pinv(p));
    let mut f = DMatrix::zeros(2 * n + m, 2 * n + m);
    f.view_mut((0, 0), (n, n)).copy_from(&(p * lambda_u - DMatrix::identity(n, n) * (k * c * c)));
    f.view_mut((n, n), (m, m)).copy_from(&(DMatrix::identity(m, m) * k));
    f.view_mut((n + m, 0), (n, n)).copy_from(a);
    f.view_mut((n + m, n), (n, m)).copy_from(b);
    f.view_mut((0, n + m), (n, n)).copy_from(&a.transpose());
    f.view_mut((n, n + m), (m, n)).copy_from(&b.transpose());
    f.view_mut((n + m, n + m), (n, n)).copy_from(&p_inv);
    f
}

/// Multiplier `k ≥ 0` maximizing the smallest eigenvalue of the growth LMI, with that eigenvalue.
///
/// Golden-section search over `k`; the smallest eigenvalue is concave in `k`.
pub fn best_multiplier(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, lambda_u: f64, c: f64) -> (f64, f64) {
    let f = |k: f64| min_eig(&growth_lmi(a, b, p, lambda_u, k, c));
    let hi = 2.0 * lambda_u * max_eig(p) / (c * c) + 1.0;
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut up) = (0.0, hi);
    let mut x1 = up - g * (up - lo);
    let mut x2 = lo + g * (up - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..120 {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (up - lo);
            f2 = f(x2);
        } else {
            up = x2;
            x2 = x1;
            f2 = f1;
            x1 = up - g * (up - lo);
            f1 = f(x1);
        }
    }
    [(0.0, f(0.0)), (x1, f1), (x2, f2), (hi, f(hi))].into_iter().max_by(|p, q| p.1.total_cmp(&q.1)).expect("nonempty")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub lambda_u: f64,
    /// Multipliers `k_i` certifying the growth LMI at `lambda_u`.
    pub k: Vec<f64>,
    /// Smallest feasible growth rate of each mode (before taking the maximum with 1).
    pub per_mode: Vec<f64>,
}

fn feasible(a: &DMatrix<f64>, b: &DMatrix<f64>, p: &DMatrix<f64>, lambda_u: f64, c: f64) -> bool {
    best_multiplier(a, b, p, lambda_u, c).1 >= 0.0
}

/// Smallest `λ_u ≥ 1` (to relative gap 1e-3) for which every mode admits a multiplier `k_i`.
pub fn compute_lambda_u(
    truth: &[(DMatrix<f64>, DMatrix<f64>)],
    lyapunov: &[DMatrix<f64>],
    c: f64,
) -> Result<GrowthBound> {
    if truth.len() != lyapunov.len() {
        return Err(Error::DimensionMismatch(format!("{} true modes, {} certificates", truth.len(), lyapunov.len())));
    }
    if !(c > 0.0) {
        return Err(Error::Precondition(format!("input gain c = {c} must be positive")));
    }
    let mut per_mode = Vec::with_capacity(truth.len());
    for ((a, b), p) in truth.iter().zip(lyapunov) {
        if a.nrows() != p.nrows() || b.nrows() != p.nrows() {
            return Err(Error::DimensionMismatch("true system and certificate differ in n".into()));
        }
        let mut lo = 0.0;
        let mut hi = 1.0;
        let mut doublings = 0;
        while !feasible(a, b, p, hi, c) {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 80 {
                return Err(Error::BackendFailure {
                    iterations: doublings,
                    reason: "growth LMI infeasible for every λ_u".into(),
                });
            }
        }
        while hi - lo > LAMBDA_U_GAP * hi {
            let mid = 0.5 * (lo + hi);
            if feasible(a, b, p, mid, c) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        per_mode.push(hi);
    }
    let lambda_u = per_mode.iter().cloned().fold(1.0, f64::max);
    let k = truth.iter().zip(lyapunov).map(|((a, b), p)| best_multiplier(a, b, p, lambda_u, c).0).collect();
    Ok(GrowthBound { lambda_u, k, per_mode })
}

/// Detection-phase start instants, stabilization start instants and the activity indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimeline {
    pub horizon: usize,
    /// A detection phase starts at `t` when the log opens in detection or a switch is flagged at `t`.
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    /// `1(t)` for `t ∈ [0, horizon)`: `t` lies in some `[t_m, t_s)`.
    pub active: Vec<bool>,
}

fn flags_start(r: &StepRecord) -> bool {
    r.notes.iter().any(|n| n == "detection_start" || n.starts_with("detection_restart"))
}

/// Steps of a log: records carrying an input, indexed `0..horizon`.
fn steps(records: &[StepRecord]) -> Result<&[StepRecord]> {
    let horizon = records.iter().take_while(|r| r.u.is_some()).count();
    for (t, r) in records.iter().enumerate() {
        if r.t != t {
            return Err(Error::Parse(format!("log record {t} carries time {}", r.t)));
        }
    }
    if records.len() < horizon + 1 {
        return Err(Error::Parse("log lacks the final state record".into()));
    }
    Ok(&records[..horizon])
}

pub fn phase_timeline(records: &[StepRecord]) -> Result<PhaseTimeline> {
    let steps = steps(records)?;
    let horizon = steps.len();
    let mut starts = Vec::new();
    let mut active = Vec::with_capacity(horizon);
    for (t, r) in steps.iter().enumerate() {
        let start = (t == 0 && r.phase == Phase::ModeDetection) || flags_start(r);
        if start {
            starts.push(t);
        }
        active.push(start || r.phase == Phase::ModeDetection);
    }
    let ends = (1..horizon).filter(|&t| active[t - 1] && !active[t]).collect();
    Ok(PhaseTimeline { horizon, starts, ends, active })
}

impl PhaseTimeline {
    /// `N(0,t)` for `t = 0..=horizon`.
    pub fn start_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.horizon + 1];
        for &s in &self.starts {
            out[s + 1] += 1;
        }
        for t in 1..out.len() {
            out[t] += out[t - 1];
        }
        out
    }

    /// `M(0,t)` for `t = 0..=horizon`.
    pub fn active_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.horizon + 1];
        for t in 0..self.horizon {
            out[t + 1] = out[t] + usize::from(self.active[t]);
        }
        out
    }

    pub fn is_start(&self, t: usize) -> bool {
        self.starts.binary_search(&t).is_ok()
    }
}

/// Dwell-time `(τ, N₀)` and activation-time `(η, T₀)` parameters of a log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchRegularity {
    /// `1/τ`; zero when no detection phase occurs.
    pub inv_tau: f64,
    pub n0: f64,
    pub eta: f64,
    pub t0: f64,
}

impl SwitchRegularity {
    pub fn tau(&self) -> f64 {
        if self.inv_tau > 0.0 {
            1.0 / self.inv_tau
        } else {
            f64::INFINITY
        }
    }
}

fn max_window_excess(counts: &[usize], rate: f64) -> f64 {
    // max_{a<b} (C(b) − rate·b) − (C(a) − rate·a)
    let mut best = f64::NEG_INFINITY;
    let mut low = f64::INFINITY;
    for (t, &c) in counts.iter().enumerate() {
        let g = c as f64 - rate * t as f64;
        if t > 0 {
            best = best.max(g - low);
        }
        low = low.min(g);
    }
    best
}

/// Long-run rates `1/τ = N(0,L)/L`, `η = M(0,L)/L` with the smallest offsets valid over all windows.
pub fn check_adt_aat(timeline: &PhaseTimeline) -> SwitchRegularity {
    let l = timeline.horizon;
    if l == 0 {
        return SwitchRegularity { inv_tau: 0.0, n0: 1.0, eta: 0.0, t0: 0.0 };
    }
    let nc = timeline.start_counts();
    let mc = timeline.active_counts();
    let inv_tau = nc[l] as f64 / l as f64;
    let eta = mc[l] as f64 / l as f64;
    SwitchRegularity {
        inv_tau,
        n0: max_window_excess(&nc, inv_tau).max(1.0),
        eta,
        t0: max_window_excess(&mc, eta).max(0.0),
    }
}

/// Discrete dwell and activation timers on `t = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerTrace {
    pub tau_d: Vec<f64>,
    pub tau_a: Vec<f64>,
}

fn timer(counts: &[usize], rate: f64, offset: f64) -> Vec<f64> {
    let mut low = f64::INFINITY;
    counts
        .iter()
        .enumerate()
        .map(|(t, &c)| {
            let g = c as f64 - rate * t as f64;
            low = low.min(g);
            offset + low - g
        })
        .collect()
}

/// `τ_d(t) = N₀ + n_d(t) − (N(0,t) − t/τ)` and `τ_a(t) = T₀ + n_a(t) − (M(0,t) − ηt)`, range-checked.
pub fn build_timers(timeline: &PhaseTimeline, reg: &SwitchRegularity) -> Result<TimerTrace> {
    let tau_d = timer(&timeline.start_counts(), reg.inv_tau, reg.n0);
    let tau_a = timer(&timeline.active_counts(), reg.eta, reg.t0);
    for (name, trace, top) in [("tau_d", &tau_d, reg.n0), ("tau_a", &tau_a, reg.t0)] {
        if let Some((t, &v)) = trace.iter().enumerate().find(|(_, &v)| v < -TIMER_TOL || v > top + TIMER_TOL) {
            return Err(Error::RangeViolation { timer: name, t, value: v });
        }
    }
    Ok(TimerTrace { tau_d, tau_a })
}

impl TimerTrace {
    /// Steps `t` at which a stepwise update rule fails.
    pub fn rule_violations(&self, timeline: &PhaseTimeline, reg: &SwitchRegularity) -> Vec<usize> {
        let within = |d: f64, hi: f64| d >= -TIMER_TOL && d <= hi + TIMER_TOL;
        (0..timeline.horizon)
            .filter(|&t| {
                let dd = self.tau_d[t + 1] - self.tau_d[t];
                let da = self.tau_a[t + 1] - self.tau_a[t];
                let d_ok = if timeline.is_start(t) {
                    (dd - (reg.inv_tau - 1.0)).abs() <= TIMER_TOL
                } else {
                    within(dd, reg.inv_tau)
                };
                let a_ok =
                    if timeline.active[t] { (da - (reg.eta - 1.0)).abs() <= TIMER_TOL } else { within(da, reg.eta) };
                !(d_ok && a_ok)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    /// `(1 − ln λ_u/ln λ) η + (1 − ln μ/ln λ)/τ`.
    pub value: f64,
    pub holds: bool,
    pub a: f64,
    pub b: f64,
}

pub fn stability_condition(reg: &SwitchRegularity, mu: f64, lambda_u: f64, lambda: f64) -> Result<Condition> {
    if !(lambda > 0.0 && lambda < 1.0) || !(mu >= 1.0) || !(lambda_u >= 1.0) {
        return Err(Error::Precondition(format!("need λ ∈ (0,1), μ ≥ 1, λ_u ≥ 1; got {lambda}, {mu}, {lambda_u}")));
    }
    let ll = lambda.ln();
    let value = (1.0 - lambda_u.ln() / ll) * reg.eta + (1.0 - mu.ln() / ll) * reg.inv_tau;
    let a = (lambda * (mu / lambda).powf(reg.inv_tau) * (lambda_u / lambda).powf(reg.eta)).sqrt();
    let b = ((mu / lambda).powf(reg.n0) * (lambda_u / lambda).powf(reg.t0)).sqrt();
    Ok(Condition { value, holds: value < 1.0, a, b })
}

/// Constants of the closed-loop bound for one log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub mu: f64,
    pub growth: GrowthBound,
    pub lambda: f64,
    pub regularity: SwitchRegularity,
    pub condition: Condition,
    /// `max_i λ_max(P_i^{1/2})`.
    pub p_max: f64,
    /// `min_i λ_min(P_i^{1/2})`.
    pub p_min: f64,
}

impl StabilityCertificate {
    /// `(p_max/p_min)·b`.
    pub fn iss_gain(&self) -> f64 {
        self.p_max / self.p_min * self.condition.b
    }

    /// `(p_max/p_min)·ab/((1−a)√λ)`, multiplying `q`.
    pub fn iss_offset(&self) -> f64 {
        let Condition { a, b, .. } = self.condition;
        self.p_max / self.p_min * a * b / ((1.0 - a) * self.lambda.sqrt())
    }

    /// `b̃ = (ab/√λ)·p_max`.
    pub fn b_tilde(&self) -> f64 {
        self.condition.a * self.condition.b / self.lambda.sqrt() * self.p_max
    }

    pub fn envelope(&self, t: usize, x0_norm: f64, q: f64) -> f64 {
        self.iss_gain() * self.condition.a.powi(t as i32) * x0_norm + self.iss_offset() * q
    }
}

pub fn lyapunov_bounds(lyapunov: &[DMatrix<f64>]) -> (f64, f64) {
    let p_max = lyapunov.iter().map(|p| max_eig(p).max(0.0).sqrt()).fold(0.0, f64::max);
    let p_min = lyapunov.iter().map(|p| min_eig(p).max(0.0).sqrt()).fold(f64::INFINITY, f64::min);
    (p_max, p_min)
}

/// Mode whose Lyapunov function enters the composite value at each `t = 0..=horizon` (0-based).
///
/// Inside a detection phase this is the mode identified at its end (the active mode if the phase
/// never ends); elsewhere it is the logged controller mode.
pub fn composite_modes(records: &[StepRecord], timeline: &PhaseTimeline) -> Vec<usize> {
    let l = timeline.horizon;
    let mut modes: Vec<usize> = (0..=l).map(|t| records[t].sigma_d.unwrap_or(records[t].sigma) - 1).collect();
    for &tm in &timeline.starts {
        let ts = timeline.ends.iter().copied().find(|&e| e > tm);
        let detected = ts.and_then(|e| records[e].sigma_d);
        let from = if tm == 0 && records[0].sigma_d.is_none() { 0 } else { tm + 1 };
        for t in from..=ts.unwrap_or(l).min(l) {
            modes[t] = detected.unwrap_or(records[t].sigma) - 1;
        }
    }
    modes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    /// `min_t (envelope(t) − ‖x(t)‖)/envelope(t)`.
    pub slack: f64,
    pub first_violation: Option<usize>,
    pub final_envelope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssReport {
    /// Present only when `a < 1`.
    pub envelope: Option<EnvelopeCheck>,
    /// `min_t (a W(t) + b̃ q − W(t+1)) / max(1, a W(t) + b̃ q)`.
    pub one_step_margin: f64,
    pub first_one_step_violation: Option<usize>,
    pub final_norm: f64,
}

impl IssReport {
    pub fn envelope_ok(&self) -> bool {
        self.envelope.as_ref().is_some_and(|e| e.first_violation.is_none())
    }

    pub fn one_step_ok(&self) -> bool {
        self.first_one_step_violation.is_none()
    }
}

/// `W(ξ(t)) = U(ξ(t))·V(ξ(t))` along a log, for `t = 0..=horizon`.
pub fn composite_values(
    records: &[StepRecord],
    lyapunov: &[DMatrix<f64>],
    cert: &StabilityCertificate,
) -> Result<Vec<f64>> {
    let timeline = phase_timeline(records)?;
    let timers = build_timers(&timeline, &cert.regularity)?;
    let modes = composite_modes(records, &timeline);
    if modes.iter().any(|&i| i >= lyapunov.len()) {
        return Err(Error::DimensionMismatch("log refers to a mode without certificate".into()));
    }
    let roots: Vec<_> = lyapunov.iter().map(sqrtm_psd).collect();
    let (lambda, mu, lu) = (cert.lambda, cert.mu, cert.growth.lambda_u);
    Ok((0..=timeline.horizon)
        .map(|t| {
            let u = ((mu / lambda).powf(timers.tau_d[t]) * (lu / lambda).powf(timers.tau_a[t])).sqrt();
            u * (&roots[modes[t]] * DVector::from_column_slice(&records[t].x)).norm()
        })
        .collect())
}

/// Evaluates the one-step inequality of `W` along a log and, when `a < 1`, the state envelope.
pub fn evaluate_iss(
    records: &[StepRecord],
    lyapunov: &[DMatrix<f64>],
    cert: &StabilityCertificate,
    q: f64,
) -> Result<IssReport> {
    let w = composite_values(records, lyapunov, cert)?;
    let l = w.len() - 1;
    let (a, bt) = (cert.condition.a, cert.b_tilde());
    let mut report = IssReport {
        envelope: None,
        one_step_margin: f64::INFINITY,
        first_one_step_violation: None,
        final_norm: records[l].x_norm,
    };
    for t in 0..l {
        let bound = a * w[t] + bt * q;
        let margin = (bound - w[t + 1]) / bound.max(1.0);
        report.one_step_margin = report.one_step_margin.min(margin);
        if margin < -ENVELOPE_TOL && report.first_one_step_violation.is_none() {
            report.first_one_step_violation = Some(t);
        }
    }
    if a < 1.0 {
        let x0 = records[0].x_norm;
        let mut env =
            EnvelopeCheck { slack: f64::INFINITY, first_violation: None, final_envelope: cert.envelope(l, x0, q) };
        for (t, r) in records.iter().enumerate().take(l + 1) {
            let bound = cert.envelope(t, x0, q);
            let slack = if bound > 0.0 {
                (bound - r.x_norm) / bound
            } else if r.x_norm == 0.0 {
                0.0
            } else {
                -1.0
            };
            env.slack = env.slack.min(slack);
            if slack < -ENVELOPE_TOL && env.first_violation.is_none() {
                env.first_violation = Some(t);
            }
        }
        report.envelope = Some(env);
    }
    Ok(report)
}

/// Like [`evaluate_iss`] but requires `a < 1` and fails on the first violated step.
pub fn check_iss_envelope(
    records: &[StepRecord],
    lyapunov: &[DMatrix<f64>],
    cert: &StabilityCertificate,
    q: f64,
) -> Result<IssReport> {
    if !(cert.condition.a < 1.0) {
        return Err(Error::Precondition(format!("rate a = {} is not below 1", cert.condition.a)));
    }
    let report = evaluate_iss(records, lyapunov, cert, q)?;
    let env_t = report.envelope.as_ref().and_then(|e| e.first_violation);
    match (env_t, report.first_one_step_violation) {
        (Some(t), s) if s.is_none_or(|s| t <= s) => Err(Error::EnvelopeViolation {
            t,
            detail: format!("‖x‖ = {:e} exceeds the envelope", records[t].x_norm),
        }),
        (_, Some(t)) => Err(Error::EnvelopeViolation { t, detail: "W(ξ(t+1)) > a W(ξ(t)) + b̃ q".into() }),
        _ => Ok(report),
    }
}

/// Full bound check of a closed-loop log against the certificates and the true modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub certificate: StabilityCertificate,
    pub timer_rule_violations: Vec<usize>,
    pub iss: IssReport,
}

pub fn stability_certificate(
    records: &[StepRecord],
    lyapunov: &[DMatrix<f64>],
    truth: &[(DMatrix<f64>, DMatrix<f64>)],
    lambda: f64,
    c: f64,
) -> Result<StabilityCertificate> {
    let mu = compute_mu(lyapunov);
    let growth = compute_lambda_u(truth, lyapunov, c)?;
    let regularity = check_adt_aat(&phase_timeline(records)?);
    let condition = stability_condition(&regularity, mu, growth.lambda_u, lambda)?;
    let (p_max, p_min) = lyapunov_bounds(lyapunov);
    Ok(StabilityCertificate { mu, growth, lambda, regularity, condition, p_max, p_min })
}

pub fn verify_bound(
    records: &[StepRecord],
    lyapunov: &[DMatrix<f64>],
    truth: &[(DMatrix<f64>, DMatrix<f64>)],
    lambda: f64,
    c: f64,
    q: f64,
) -> Result<BoundReport> {
    let certificate = stability_certificate(records, lyapunov, truth, lambda, c)?;
    let timeline = phase_timeline(records)?;
    let timers = build_timers(&timeline, &certificate.regularity)?;
    let timer_rule_violations = timers.rule_violations(&timeline, &certificate.regularity);
    let iss = evaluate_iss(records, lyapunov, &certificate, q)?;
    Ok(BoundReport { certificate, timer_rule_violations, iss })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(r, c, v)
    }

    fn record(t: usize, phase: Phase, notes: &[&str], last: bool) -> StepRecord {
        StepRecord {
            t,
            phase,
            sigma: 1,
            sigma_d: Some(1),
            x_norm: 1.0,
            v: None,
            eliminated_modes: vec![],
            x: vec![1.0],
            u: (!last).then(|| vec![0.0]),
            w: (!last).then(|| vec![0.0]),
            notes: notes.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Detection phases of length `len` starting every `period` steps.
    fn periodic_log(horizon: usize, period: usize, len: usize) -> Vec<StepRecord> {
        (0..=horizon)
            .map(|t| {
                let k = t % period;
                let phase = if k > 0 && k < len { Phase::ModeDetection } else { Phase::Stabilization };
                let notes: &[&str] = if k == 0 && t < horizon { &["detection_start"] } else { &[] };
                record(t, phase, notes, t == horizon)
            })
            .collect()
    }

    #[test]
    fn mu_cases() {
        let p = mat(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!((compute_mu(&[p.clone(), p.clone()]) - 1.0).abs() < 1e-12);
        assert_eq!(compute_mu(std::slice::from_ref(&p)), 1.0);
        let mu = compute_mu(&[DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 4.0]);
        assert!((mu - 4.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_u_is_one_for_contracting_autonomous_modes() {
        let a = mat(2, 2, &[0.5, 0.0, 0.0, 0.3]);
        let b = DMatrix::zeros(2, 1);
        let g = compute_lambda_u(&[(a, b)], &[DMatrix::identity(2, 2)], 0.7).unwrap();
        assert_eq!(g.lambda_u, 1.0);
        assert!(g.per_mode[0] <= 0.25 * (1.0 + 2.0 * LAMBDA_U_GAP));
    }

    #[test]
    fn lambda_u_matches_scalar_closed_form() {
        // (a x + b u)² ≤ λ x² for |u| ≤ c|x| is tight at λ = (|a| + |b| c)²
        let (a, b, c) = (1.5, 2.0, 0.5);
        let g = compute_lambda_u(&[(mat(1, 1, &[a]), mat(1, 1, &[b]))], &[mat(1, 1, &[3.0])], c).unwrap();
        let exact = (a + b * c).powi(2);
        assert!(
            g.lambda_u >= exact * (1.0 - 1e-9) && g.lambda_u <= exact * (1.0 + 2.0 * LAMBDA_U_GAP),
            "{}",
            g.lambda_u
        );
    }

    #[test]
    fn periodic_log_fits_rates() {
        let log = periodic_log(200, 20, 2);
        let tl = phase_timeline(&log).unwrap();
        let reg = check_adt_aat(&tl);
        assert!((reg.tau() - 20.0).abs() < 1e-12);
        assert!((reg.eta - 0.1).abs() < 1e-12);
        let timers = build_timers(&tl, &reg).unwrap();
        assert!(timers.rule_violations(&tl, &reg).is_empty());
        let quiet = check_adt_aat(
            &phase_timeline(&(0..=50).map(|t| record(t, Phase::Stabilization, &[], t == 50)).collect::<Vec<_>>())
                .unwrap(),
        );
        assert_eq!((quiet.eta, quiet.inv_tau, quiet.tau()), (0.0, 0.0, f64::INFINITY));
    }

    #[test]
    fn too_tight_regularity_is_a_range_violation() {
        let log = periodic_log(100, 10, 3);
        let tl = phase_timeline(&log).unwrap();
        let mut reg = check_adt_aat(&tl);
        reg.n0 = 0.5;
        assert!(matches!(build_timers(&tl, &reg), Err(Error::RangeViolation { timer: "tau_d", .. })));
    }

    #[test]
    fn condition_reference_values() {
        let reg = SwitchRegularity { inv_tau: 1.0 / 20.0, n0: 1.0, eta: 0.1, t0: 0.0 };
        let c = stability_condition(&reg, 1.26, 5.86, 0.8).unwrap();
        assert!((c.value - 0.9942).abs() < 5e-4, "{}", c.value);
        assert!(c.holds && c.a < 1.0 && c.a > 0.8f64.sqrt());
        let noisy = SwitchRegularity { eta: 0.22, ..reg };
        let c = stability_condition(&noisy, 2.14, 264.0, 0.8).unwrap();
        assert!((c.value - 5.94).abs() < 5e-3, "{}", c.value);
        assert!(!c.holds && c.a > 1.0);
        let idle = SwitchRegularity { inv_tau: 0.0, n0: 1.0, eta: 0.0, t0: 0.0 };
        let c = stability_condition(&idle, 3.0, 7.0, 0.8).unwrap();
        assert_eq!(c.value, 0.0);
        assert!((c.a - 0.8f64.sqrt()).abs() < 1e-15);
    }
}
