//! Deterministic simulator of a checkpointed stream processing job
//! consuming a replayed trace.
//!
//! The job is modeled as a fluid queue ticked at 1 Hz with sub-second
//! segment resolution: events arrive at the recorded per-second rate,
//! processing drains up to `capacity_mu` events per second, checkpoints
//! stall processing for `checkpoint_pause` and persist the consumed offset
//! when they complete, and failures halt the job then roll the offset back
//! to the last completed checkpoint. Recovery ends when the consumer lag
//! re-enters its pre-failure steady band.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{write_json, write_metrics_csv, MetricsSample, Validate, Violation, WorkloadTrace};
use crate::error::{Error, Result};

const EPS: f64 = 1e-9;
/// Relative amplitude of the multiplicative measurement noise on the
/// reported throughput and latency metrics.
const METRIC_NOISE: f64 = 0.01;

// ---------------------------------------------------------------------------
// Pipeline parameters
// ---------------------------------------------------------------------------

/// Cost and timing parameters of the simulated job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSpec {
    /// Maximum sustained processing rate in events/s.
    pub capacity_mu: f64,
    /// Latency floor in milliseconds.
    pub base_latency: f64,
    /// Milliseconds of end-to-end latency per event of consumer lag.
    pub queue_latency_coeff: f64,
    /// Processing stall per checkpoint, in milliseconds.
    pub checkpoint_pause: f64,
    /// Seconds from checkpoint start until it completes and is usable.
    pub checkpoint_duration: f64,
    /// Seconds until a failure is detected.
    pub detection_timeout: f64,
    /// Seconds to restart the job after detection.
    pub restart_duration: f64,
    /// Downtime of a controlled (reconfiguration) restart, in seconds.
    pub controlled_restart_downtime: f64,
}

impl Default for PipelineSpec {
    fn default() -> Self {
        Self {
            capacity_mu: 2000.0,
            base_latency: 200.0,
            queue_latency_coeff: 0.5,
            checkpoint_pause: 400.0,
            checkpoint_duration: 2.0,
            detection_timeout: 50.0,
            restart_duration: 10.0,
            controlled_restart_downtime: 15.0,
        }
    }
}

impl PipelineSpec {
    /// Default parameters with capacity sized at twice a trace's peak rate.
    pub fn for_peak_rate(peak: f64) -> Self {
        Self {
            capacity_mu: 2.0 * peak,
            ..Self::default()
        }
    }

    /// Failure downtime: detection plus restart.
    pub fn failure_downtime(&self) -> f64 {
        self.detection_timeout + self.restart_duration
    }
}

impl Validate for PipelineSpec {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.capacity_mu > 0.0) {
            v.push(Violation::new("capacity_mu", "capacity_mu > 0"));
        }
        for (path, value) in [
            ("base_latency", self.base_latency),
            ("queue_latency_coeff", self.queue_latency_coeff),
            ("checkpoint_pause", self.checkpoint_pause),
            ("checkpoint_duration", self.checkpoint_duration),
            ("detection_timeout", self.detection_timeout),
            ("restart_duration", self.restart_duration),
            ("controlled_restart_downtime", self.controlled_restart_downtime),
        ] {
            if !value.is_finite() || value < 0.0 {
                v.push(Violation::new(path, "duration ≥ 0"));
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Run record
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum SimEvent {
    CheckpointStarted { t: f64 },
    CheckpointCompleted { t: f64 },
    FailureInjected { t: f64 },
    ProcessingResumed { t: f64 },
    CaughtUp { t: f64 },
    Reconfigured { t: f64, new_ci: f64 },
}

impl SimEvent {
    pub fn time(&self) -> f64 {
        match self {
            SimEvent::CheckpointStarted { t }
            | SimEvent::CheckpointCompleted { t }
            | SimEvent::FailureInjected { t }
            | SimEvent::ProcessingResumed { t }
            | SimEvent::CaughtUp { t }
            | SimEvent::Reconfigured { t, .. } => *t,
        }
    }
}

/// One failure injection paired with the tick at which the job caught
/// back up to the latest offset (absent when it never did).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoverySpan {
    pub injected_at: f64,
    pub caught_up: Option<f64>,
}

impl RecoverySpan {
    pub fn duration(&self) -> Option<f64> {
        self.caught_up.map(|c| c - self.injected_at)
    }
}

/// Deterministic execution record of one simulated deployment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimRun {
    pub metrics: Vec<MetricsSample>,
    pub events: Vec<SimEvent>,
    pub seed: u64,
}

impl SimRun {
    /// Pairs every failure injection with the next catch-up event.
    pub fn recovery_spans(&self) -> Vec<RecoverySpan> {
        let mut spans = Vec::new();
        let mut open: Vec<f64> = Vec::new();
        for ev in &self.events {
            match ev {
                SimEvent::FailureInjected { t } => open.push(*t),
                SimEvent::CaughtUp { t } => {
                    for injected_at in open.drain(..) {
                        spans.push(RecoverySpan {
                            injected_at,
                            caught_up: Some(*t),
                        });
                    }
                }
                _ => {}
            }
        }
        for injected_at in open {
            spans.push(RecoverySpan {
                injected_at,
                caught_up: None,
            });
        }
        spans.sort_by(|a, b| a.injected_at.partial_cmp(&b.injected_at).unwrap());
        spans
    }

    pub fn injection_times(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                SimEvent::FailureInjected { t } => Some(*t),
                _ => None,
            })
            .collect()
    }

    pub fn reconfiguration_count(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, SimEvent::Reconfigured { .. }))
            .count()
    }

    /// Mean of `avg_latency` over samples in `[from, to)`.
    pub fn mean_latency_between(&self, from: f64, to: f64) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for m in &self.metrics {
            if m.t >= from && m.t < to {
                sum += m.avg_latency;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }

    pub fn write_metrics_csv(&self, path: &Path) -> Result<()> {
        write_metrics_csv(path, &self.metrics)
    }

    pub fn write_events_json(&self, path: &Path) -> Result<()> {
        write_json(path, &self.events)
    }
}

// ---------------------------------------------------------------------------
// Injection plans
// ---------------------------------------------------------------------------

/// Whether worst-case injection is anchored just before the next checkpoint
/// completion (default) or the next scheduled start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InjectionReference {
    Completion,
    Start,
}

/// Failure schedule for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InjectionPlan {
    /// Inject at exactly these times.
    Fixed(Vec<f64>),
    /// For each nominal time, inject `epsilon` seconds before the next
    /// checkpoint boundary of the live schedule, maximizing reprocessing.
    WorstCase {
        nominals: Vec<f64>,
        epsilon: f64,
        reference: InjectionReference,
    },
}

impl InjectionPlan {
    pub fn none() -> Self {
        InjectionPlan::Fixed(Vec::new())
    }

    pub fn worst_case(nominals: Vec<f64>, epsilon: f64) -> Self {
        InjectionPlan::WorstCase {
            nominals,
            epsilon,
            reference: InjectionReference::Completion,
        }
    }

    fn nominal_times(&self) -> &[f64] {
        match self {
            InjectionPlan::Fixed(ts) => ts,
            InjectionPlan::WorstCase { nominals, .. } => nominals,
        }
    }
}

/// First checkpoint completion strictly after `after`, for a schedule
/// anchored at `origin` (starts at `origin + n*ci`, n ≥ 1, completing
/// `duration` later).
pub fn checkpoint_completion_after(origin: f64, ci: f64, duration: f64, after: f64) -> f64 {
    let mut n = (((after - origin - duration) / ci).floor() as i64).max(0) + 1;
    while origin + n as f64 * ci + duration <= after {
        n += 1;
    }
    origin + n as f64 * ci + duration
}

/// First checkpoint start strictly after `after` for the same schedule.
pub fn checkpoint_start_after(origin: f64, ci: f64, after: f64) -> f64 {
    checkpoint_completion_after(origin, ci, 0.0, after)
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Running,
    Down { until: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Recovering {
    band: f64,
}

/// A single simulated deployment. One instance owns its state and is
/// single-threaded; independent instances may run concurrently.
#[derive(Debug, Clone)]
pub struct Simulation {
    spec: PipelineSpec,
    trace: WorkloadTrace,
    ci: f64,
    seed: u64,

    now: f64,
    end: f64,
    produced: f64,
    consumed: f64,
    pulled_this_tick: f64,
    saved_offset: f64,
    phase: Phase,
    stall_until: f64,
    ckpt_origin: f64,
    next_ckpt_index: u64,
    pending_completions: Vec<f64>,
    injections: InjectionPlan,
    next_nominal: usize,
    armed_injection: Option<f64>,
    reconfig_commands: VecDeque<(f64, f64)>,
    pending_new_ci: Option<f64>,
    recovering: Option<Recovering>,
    last_steady_lag: f64,

    rng: ChaCha8Rng,
    metrics: Vec<MetricsSample>,
    events: Vec<SimEvent>,
}

impl Simulation {
    pub fn new(
        spec: PipelineSpec,
        trace: WorkloadTrace,
        ci: f64,
        injections: InjectionPlan,
        reconfig_commands: Vec<(f64, f64)>,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        trace.validate()?;
        if !(ci > 0.0) {
            return Err(Error::Parameter(format!("ci must be > 0, got {ci}")));
        }
        let start = trace.start_time as f64;
        let end = trace.end_time() as f64;
        for t in injections.nominal_times() {
            if *t < start || *t >= end {
                return Err(Error::Parameter(format!(
                    "injection time {t} outside trace range [{start}, {end})"
                )));
            }
        }
        let mut nominals_sorted = injections.nominal_times().to_vec();
        nominals_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let injections = match injections {
            InjectionPlan::Fixed(_) => InjectionPlan::Fixed(nominals_sorted),
            InjectionPlan::WorstCase {
                epsilon, reference, ..
            } => {
                if !(epsilon > 0.0 && epsilon < ci) {
                    return Err(Error::Parameter(format!(
                        "epsilon must satisfy 0 < epsilon < ci, got {epsilon} for ci {ci}"
                    )));
                }
                InjectionPlan::WorstCase {
                    nominals: nominals_sorted,
                    epsilon,
                    reference,
                }
            }
        };
        let mut reconfig_commands = reconfig_commands;
        reconfig_commands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(Self {
            spec,
            trace,
            ci,
            seed,
            now: start,
            end,
            produced: 0.0,
            consumed: 0.0,
            pulled_this_tick: 0.0,
            saved_offset: 0.0,
            phase: Phase::Running,
            stall_until: start,
            ckpt_origin: start,
            next_ckpt_index: 1,
            pending_completions: Vec::new(),
            injections,
            next_nominal: 0,
            armed_injection: None,
            reconfig_commands: reconfig_commands.into(),
            pending_new_ci: None,
            recovering: None,
            last_steady_lag: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            metrics: Vec::new(),
            events: Vec::new(),
        })
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn finished(&self) -> bool {
        self.now >= self.end - EPS
    }

    pub fn current_ci(&self) -> f64 {
        self.ci
    }

    pub fn trace(&self) -> &WorkloadTrace {
        &self.trace
    }

    pub fn metrics(&self) -> &[MetricsSample] {
        &self.metrics
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn produced(&self) -> f64 {
        self.produced
    }

    pub fn consumed(&self) -> f64 {
        self.consumed
    }

    pub fn lag(&self) -> f64 {
        (self.produced - self.consumed).max(0.0)
    }

    /// Issues a controlled restart to `new_ci` effective now.
    pub fn reconfigure_now(&mut self, new_ci: f64) -> Result<()> {
        if !(new_ci > 0.0) {
            return Err(Error::Parameter(format!("ci must be > 0, got {new_ci}")));
        }
        let t = self.now;
        self.apply_reconfig(t, new_ci);
        Ok(())
    }

    /// Advances one second of simulated time and reports that second's
    /// metrics sample; `None` once the trace is exhausted.
    pub fn step_second(&mut self) -> Option<MetricsSample> {
        if self.finished() {
            return None;
        }
        let sec_start = self.now;
        let sec_end = sec_start + 1.0;
        let rate = self.trace.rate_at(sec_start);
        self.pulled_this_tick = 0.0;

        self.fire_events_at(sec_start);
        self.try_arm(sec_start);
        let mut t = sec_start;
        loop {
            let next = self.next_event_time(t, sec_end);
            debug_assert!(next > t);
            self.advance_fluid(t, next, rate);
            t = next;
            if t >= sec_end - EPS {
                break;
            }
            self.fire_events_at(t);
            self.try_arm(t);
        }
        self.now = sec_end;

        // Catch-up check at the metric cadence.
        if let Some(rec) = self.recovering {
            if matches!(self.phase, Phase::Running) && self.lag() <= rec.band {
                self.events.push(SimEvent::CaughtUp { t: sec_end });
                self.recovering = None;
            }
        }
        if matches!(self.phase, Phase::Running) && self.recovering.is_none() {
            self.last_steady_lag = self.lag();
        }

        // Measurement noise is drawn every tick regardless of state so that
        // runs differing only in their injection schedule share a noise
        // stream up to the first divergence.
        let n_thr: f64 = self.rng.gen_range(-1.0..=1.0);
        let n_lat: f64 = self.rng.gen_range(-1.0..=1.0);
        let latency_raw =
            self.spec.base_latency + self.spec.queue_latency_coeff * self.lag() + self.spec.checkpoint_pause / self.ci;
        let sample = MetricsSample {
            t: sec_start,
            input_throughput: (self.pulled_this_tick * (1.0 + METRIC_NOISE * n_thr)).max(0.0),
            consumer_lag: self.lag(),
            avg_latency: (latency_raw * (1.0 + METRIC_NOISE * n_lat)).max(0.0),
        };
        self.metrics.push(sample);
        Some(sample)
    }

    pub fn run_to_end(&mut self) {
        while self.step_second().is_some() {}
    }

    pub fn into_run(self) -> SimRun {
        SimRun {
            metrics: self.metrics,
            events: self.events,
            seed: self.seed,
        }
    }

    // -- internals --------------------------------------------------------

    fn next_event_time(&self, t: f64, cap: f64) -> f64 {
        let mut next = cap;
        let mut consider = |candidate: f64| {
            if candidate > t + EPS && candidate < next {
                next = candidate;
            }
        };
        if self.stall_until > t {
            consider(self.stall_until);
        }
        if let Phase::Down { until } = self.phase {
            consider(until);
        }
        for c in &self.pending_completions {
            consider(*c);
        }
        if let Some(a) = self.armed_injection {
            consider(a);
        }
        if let Some((rt, _)) = self.reconfig_commands.front() {
            consider(*rt);
        }
        if matches!(self.phase, Phase::Running) {
            consider(self.ckpt_origin + self.next_ckpt_index as f64 * self.ci);
        }
        next
    }

    fn advance_fluid(&mut self, a: f64, b: f64, rate: f64) {
        let dt = b - a;
        if dt <= 0.0 {
            return;
        }
        self.produced += rate * dt;
        let processing = matches!(self.phase, Phase::Running) && a + EPS >= self.stall_until;
        if processing {
            let available = (self.produced - self.consumed).max(0.0);
            let capacity = self.spec.capacity_mu * dt;
            if available <= capacity {
                // Fully drained: snap to the produced counter so steady
                // state carries exactly zero lag instead of float dust.
                self.pulled_this_tick += available;
                self.consumed = self.produced;
            } else {
                self.pulled_this_tick += capacity;
                self.consumed += capacity;
            }
        }
    }

    fn fire_events_at(&mut self, t: f64) {
        // Resume first: later events at the same instant see a running job.
        if let Phase::Down { until } = self.phase {
            if until <= t + EPS {
                self.phase = Phase::Running;
                self.events.push(SimEvent::ProcessingResumed { t });
                if let Some(new_ci) = self.pending_new_ci.take() {
                    self.ci = new_ci;
                }
                self.ckpt_origin = t;
                self.next_ckpt_index = 1;
                self.stall_until = t;
            }
        }
        if matches!(self.phase, Phase::Running) {
            let mut completed: Vec<f64> = Vec::new();
            self.pending_completions.retain(|c| {
                if *c <= t + EPS {
                    completed.push(*c);
                    false
                } else {
                    true
                }
            });
            completed.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for c in completed {
                self.saved_offset = self.consumed;
                self.events.push(SimEvent::CheckpointCompleted { t: c });
            }
        }
        if let Some(a) = self.armed_injection {
            if a <= t + EPS {
                self.armed_injection = None;
                self.inject_failure(t);
            }
        }
        while let Some((rt, new_ci)) = self.reconfig_commands.front().copied() {
            if rt <= t + EPS {
                self.reconfig_commands.pop_front();
                self.apply_reconfig(t, new_ci);
            } else {
                break;
            }
        }
        if matches!(self.phase, Phase::Running) {
            let next_start = self.ckpt_origin + self.next_ckpt_index as f64 * self.ci;
            if next_start <= t + EPS && t < self.end {
                self.next_ckpt_index += 1;
                self.pending_completions.push(t + self.spec.checkpoint_duration);
                self.stall_until = t + self.spec.checkpoint_pause / 1000.0;
                self.events.push(SimEvent::CheckpointStarted { t });
            }
        }
    }

    fn inject_failure(&mut self, t: f64) {
        self.events.push(SimEvent::FailureInjected { t });
        if self.recovering.is_none() {
            // Steady band: the lag level held just before this failure,
            // floored at 1% of one second of input. A failure during a
            // controlled-restart downtime falls back to the last lag seen
            // in steady operation.
            let rate = self.trace.rate_at(t);
            let steady = match self.phase {
                Phase::Running => self.lag(),
                Phase::Down { .. } => self.last_steady_lag,
            };
            self.recovering = Some(Recovering {
                band: steady.max(0.01 * rate),
            });
        }
        self.consumed = self.saved_offset;
        self.pending_completions.clear();
        self.stall_until = t;
        self.phase = Phase::Down {
            until: t + self.spec.failure_downtime(),
        };
    }

    fn apply_reconfig(&mut self, t: f64, new_ci: f64) {
        self.events.push(SimEvent::Reconfigured { t, new_ci });
        match self.phase {
            Phase::Running => {
                // Controlled restart: state saved immediately, no rollback.
                self.saved_offset = self.consumed;
                self.pending_completions.clear();
                self.pending_new_ci = Some(new_ci);
                self.stall_until = t;
                self.phase = Phase::Down {
                    until: t + self.spec.controlled_restart_downtime,
                };
            }
            Phase::Down { .. } => {
                // Job already down: the new interval takes effect at resume
                // without additional downtime.
                self.pending_new_ci = Some(new_ci);
            }
        }
    }

    fn try_arm(&mut self, t: f64) {
        if self.armed_injection.is_some() {
            return;
        }
        let (nominals, epsilon, reference) = match &self.injections {
            InjectionPlan::Fixed(ts) => {
                if self.next_nominal < ts.len() {
                    self.armed_injection = Some(ts[self.next_nominal]);
                    self.next_nominal += 1;
                }
                return;
            }
            InjectionPlan::WorstCase {
                nominals,
                epsilon,
                reference,
            } => (nominals, *epsilon, *reference),
        };
        if self.next_nominal >= nominals.len() {
            return;
        }
        let nominal = nominals[self.next_nominal];
        if nominal > t + EPS || !matches!(self.phase, Phase::Running) {
            return;
        }
        let mut after = nominal.max(t);
        loop {
            let boundary = match reference {
                InjectionReference::Completion => checkpoint_completion_after(
                    self.ckpt_origin,
                    self.ci,
                    self.spec.checkpoint_duration,
                    after,
                ),
                InjectionReference::Start => {
                    checkpoint_start_after(self.ckpt_origin, self.ci, after)
                }
            };
            let fire = boundary - epsilon;
            if fire > t + EPS {
                self.next_nominal += 1;
                if fire < self.end {
                    self.armed_injection = Some(fire);
                }
                return;
            }
            after = boundary;
        }
    }
}

/// Runs a deployment to completion.
pub fn run(
    spec: &PipelineSpec,
    trace: &WorkloadTrace,
    ci: f64,
    injections: InjectionPlan,
    reconfig_commands: Vec<(f64, f64)>,
    seed: u64,
) -> Result<SimRun> {
    let mut sim = Simulation::new(*spec, trace.clone(), ci, injections, reconfig_commands, seed)?;
    sim.run_to_end();
    Ok(sim.into_run())
}

// ---------------------------------------------------------------------------
// Closed-form oracle
// ---------------------------------------------------------------------------

/// Closed-form worst-case recovery time under constant load: downtime `d`
/// plus catching up a backlog of one full interval of reprocessing and the
/// events accrued while down, `B = rate_w * (ci + d)`, at the spare
/// capacity `capacity_mu - rate_w`.
pub fn oracle_recovery_time(spec: &PipelineSpec, rate_w: f64, ci: f64) -> Result<f64> {
    if spec.capacity_mu <= rate_w {
        return Err(Error::NoCatchUp {
            capacity: spec.capacity_mu,
            rate: rate_w,
        });
    }
    let d = spec.failure_downtime();
    let backlog = rate_w * (ci + d);
    Ok(d + backlog / (spec.capacity_mu - rate_w))
}

// ---------------------------------------------------------------------------
// Replay windows
// ---------------------------------------------------------------------------

/// Clips the trace to per-failure-point windows `[t - margin_before,
/// t + margin_after)`, merging overlapping segments.
pub fn replay_window(
    trace: &WorkloadTrace,
    plan: &crate::domain::FailurePlan,
    margin_before: f64,
    margin_after: f64,
) -> Result<Vec<WorkloadTrace>> {
    if margin_before < 0.0 || margin_after < 0.0 {
        return Err(Error::Parameter("margins must be ≥ 0".into()));
    }
    let lo = trace.start_time;
    let hi = trace.end_time();
    let mut intervals: Vec<(i64, i64)> = plan
        .points
        .iter()
        .map(|p| {
            let a = ((p.timestamp as f64 - margin_before).floor() as i64).max(lo);
            let b = ((p.timestamp as f64 + margin_after).ceil() as i64).min(hi);
            (a, b)
        })
        .collect();
    intervals.sort_unstable();
    let mut merged: Vec<(i64, i64)> = Vec::new();
    for (a, b) in intervals {
        match merged.last_mut() {
            Some((_, prev_b)) if a <= *prev_b => *prev_b = (*prev_b).max(b),
            _ => merged.push((a, b)),
        }
    }
    Ok(merged
        .into_iter()
        .map(|(a, b)| {
            let i = (a - lo) as usize;
            let j = (b - lo) as usize;
            WorkloadTrace::new(a, trace.counts[i..j].to_vec())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FailurePlan, FailurePoint};
    use approx::assert_relative_eq;

    fn constant_trace(rate: i64, duration: usize) -> WorkloadTrace {
        WorkloadTrace::new(0, vec![rate; duration])
    }

    #[test]
    fn steady_state_has_no_lag_and_flat_latency() {
        let spec = PipelineSpec::for_peak_rate(1000.0);
        let trace = constant_trace(1000, 600);
        let run = run(&spec, &trace, 60.0, InjectionPlan::none(), vec![], 7).unwrap();
        let expected = spec.base_latency + spec.checkpoint_pause / 60.0;
        for m in &run.metrics[30..] {
            assert!(m.consumer_lag <= 1.0, "lag {} at t={}", m.consumer_lag, m.t);
            assert!(
                (m.avg_latency - expected).abs() <= expected * 0.03,
                "latency {} at t={}",
                m.avg_latency,
                m.t
            );
        }
    }

    #[test]
    fn identical_inputs_give_identical_runs() {
        let spec = PipelineSpec::for_peak_rate(1000.0);
        let trace = constant_trace(1000, 900);
        let plan = InjectionPlan::worst_case(vec![300.0], 1.0);
        let a = run(&spec, &trace, 30.0, plan.clone(), vec![(700.0, 60.0)], 7).unwrap();
        let b = run(&spec, &trace, 30.0, plan, vec![(700.0, 60.0)], 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_injection_recovery_matches_oracle_within_ten_percent() {
        let rate = 1000.0;
        let spec = PipelineSpec::for_peak_rate(rate);
        let trace = constant_trace(rate as i64, 1200);
        let ci = 60.0;
        let run = run(
            &spec,
            &trace,
            ci,
            InjectionPlan::worst_case(vec![300.0], 1.0),
            vec![],
            7,
        )
        .unwrap();
        let spans = run.recovery_spans();
        assert_eq!(spans.len(), 1);
        let measured = spans[0].duration().expect("caught up");
        let oracle = oracle_recovery_time(&spec, rate, ci).unwrap();
        assert!(
            (measured - oracle).abs() / oracle <= 0.10,
            "measured {measured}, oracle {oracle}"
        );
    }

    #[test]
    fn oracle_hand_evaluation() {
        let spec = PipelineSpec {
            capacity_mu: 2000.0,
            detection_timeout: 50.0,
            restart_duration: 10.0,
            ..PipelineSpec::default()
        };
        // 60 + 1000*120/1000 = 180
        assert_relative_eq!(oracle_recovery_time(&spec, 1000.0, 60.0).unwrap(), 180.0);
        // Zero rate: downtime only.
        assert_relative_eq!(oracle_recovery_time(&spec, 0.0, 60.0).unwrap(), 60.0);
        // Saturated pipeline is an error.
        assert!(oracle_recovery_time(&spec, 2000.0, 60.0).is_err());
    }

    #[test]
    fn oracle_is_monotone_in_ci() {
        let spec = PipelineSpec::for_peak_rate(1000.0);
        let mut prev = 0.0;
        for ci in [10.0, 30.0, 60.0, 90.0, 120.0] {
            let r = oracle_recovery_time(&spec, 1000.0, ci).unwrap();
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn worst_case_injection_rolls_back_one_full_interval() {
        let rate = 1000.0;
        let spec = PipelineSpec::for_peak_rate(rate);
        let trace = constant_trace(rate as i64, 900);
        let ci = 60.0;
        let epsilon = 0.001;
        let mut sim = Simulation::new(
            spec,
            trace,
            ci,
            InjectionPlan::worst_case(vec![300.0], epsilon),
            vec![],
            7,
        )
        .unwrap();
        let mut lag_before = 0.0;
        let mut jump = None;
        while let Some(m) = sim.step_second() {
            if jump.is_none() {
                let injected = sim
                    .events()
                    .iter()
                    .any(|e| matches!(e, SimEvent::FailureInjected { .. }));
                if injected {
                    jump = Some(m.consumer_lag - lag_before);
                } else {
                    lag_before = m.consumer_lag;
                }
            }
        }
        // As epsilon -> 0 the reprocessed span approaches one full interval
        // (plus the input that accrued between injection and the tick end).
        let jump = jump.expect("failure injected");
        assert!(
            (jump - rate * ci).abs() <= rate * 2.0,
            "rollback jump {jump}, expected ≈ {}",
            rate * ci
        );
    }

    #[test]
    fn conservation_holds_through_failure_and_rollback() {
        let spec = PipelineSpec::for_peak_rate(800.0);
        let trace = constant_trace(800, 700);
        let mut sim = Simulation::new(
            spec,
            trace,
            30.0,
            InjectionPlan::worst_case(vec![200.0], 1.0),
            vec![(500.0, 90.0)],
            3,
        )
        .unwrap();
        while sim.step_second().is_some() {
            let produced = sim.produced();
            let consumed = sim.consumed();
            let lag = sim.lag();
            assert!(consumed <= produced + 1e-6);
            assert_relative_eq!(produced - consumed, lag, epsilon = 1e-6);
        }
    }

    #[test]
    fn controlled_restart_never_rolls_back_the_offset() {
        let rate = 1000.0;
        let spec = PipelineSpec::for_peak_rate(rate);
        let trace = constant_trace(rate as i64, 600);
        let mut sim = Simulation::new(
            spec,
            trace,
            60.0,
            InjectionPlan::none(),
            vec![(300.0, 30.0)],
            7,
        )
        .unwrap();
        let mut max_lag: f64 = 0.0;
        while sim.step_second().is_some() {
            max_lag = max_lag.max(sim.lag());
        }
        // Lag accrues only during the controlled downtime, never a
        // reprocessing span on top.
        let downtime_lag = rate * spec.controlled_restart_downtime;
        assert!(
            max_lag <= downtime_lag + rate * 1.5,
            "max lag {max_lag} exceeds downtime accrual {downtime_lag}"
        );
        assert!(max_lag >= downtime_lag * 0.8, "reconfig downtime missing");
        let run = sim.into_run();
        assert_eq!(run.reconfiguration_count(), 1);
        // New interval takes effect after the restart.
        let started_after: Vec<f64> = run
            .events
            .iter()
            .filter_map(|e| match e {
                SimEvent::CheckpointStarted { t } if *t > 320.0 => Some(*t),
                _ => None,
            })
            .collect();
        assert!(started_after.windows(2).all(|w| (w[1] - w[0] - 30.0).abs() < 1e-6));
    }

    #[test]
    fn injection_outside_trace_is_rejected() {
        let spec = PipelineSpec::for_peak_rate(1000.0);
        let trace = constant_trace(1000, 100);
        assert!(run(
            &spec,
            &trace,
            30.0,
            InjectionPlan::Fixed(vec![500.0]),
            vec![],
            7
        )
        .is_err());
    }

    #[test]
    fn saturated_pipeline_reports_no_catch_up() {
        let spec = PipelineSpec {
            capacity_mu: 900.0,
            ..PipelineSpec::default()
        };
        let trace = constant_trace(1000, 400);
        let run = run(
            &spec,
            &trace,
            30.0,
            InjectionPlan::worst_case(vec![100.0], 1.0),
            vec![],
            7,
        )
        .unwrap();
        let spans = run.recovery_spans();
        assert_eq!(spans.len(), 1);
        assert!(spans[0].caught_up.is_none());
    }

    #[test]
    fn recovery_is_nondecreasing_in_ci() {
        let rate = 1000.0;
        let spec = PipelineSpec::for_peak_rate(rate);
        let trace = constant_trace(rate as i64, 1500);
        let mut prev = 0.0;
        for ci in [10.0, 37.5, 65.0, 92.5, 120.0] {
            let run = run(
                &spec,
                &trace,
                ci,
                InjectionPlan::worst_case(vec![400.0], 1.0),
                vec![],
                7,
            )
            .unwrap();
            let measured = run.recovery_spans()[0].duration().unwrap();
            assert!(
                measured >= prev - 1.0,
                "recovery {measured} at ci {ci} below previous {prev}"
            );
            prev = measured;
        }
    }

    #[test]
    fn steady_latency_is_nonincreasing_in_ci() {
        let spec = PipelineSpec::for_peak_rate(1000.0);
        let trace = constant_trace(1000, 900);
        let mut prev = f64::INFINITY;
        for ci in [10.0, 37.5, 65.0, 92.5, 120.0] {
            let run = run(&spec, &trace, ci, InjectionPlan::none(), vec![], 7).unwrap();
            let mean = run.mean_latency_between(60.0, 900.0).unwrap();
            assert!(
                mean <= prev * 1.05,
                "latency {mean} at ci {ci} above previous {prev}"
            );
            prev = mean;
        }
    }

    #[test]
    fn run_vs_oracle_across_grid_property() {
        let rates = [400.0, 800.0, 1200.0];
        for rate in rates {
            let spec = PipelineSpec::for_peak_rate(rate);
            let trace = constant_trace(rate as i64, 1500);
            for ci in [10.0, 37.5, 65.0, 92.5, 120.0] {
                let run = run(
                    &spec,
                    &trace,
                    ci,
                    InjectionPlan::worst_case(vec![400.0], 1.0),
                    vec![],
                    11,
                )
                .unwrap();
                let measured = run.recovery_spans()[0].duration().unwrap();
                let oracle = oracle_recovery_time(&spec, rate, ci).unwrap();
                assert!(
                    (measured - oracle).abs() / oracle <= 0.10,
                    "rate {rate} ci {ci}: measured {measured}, oracle {oracle}"
                );
            }
        }
    }

    #[test]
    fn completion_schedule_walk() {
        // Starts at 60, 120, ...; completions at 62, 122 for duration 2.
        assert_relative_eq!(checkpoint_completion_after(0.0, 60.0, 2.0, 100.0), 122.0);
        // Nominal exactly at a completion picks the next one.
        assert_relative_eq!(checkpoint_completion_after(0.0, 60.0, 2.0, 122.0), 182.0);
        // Before the first checkpoint.
        assert_relative_eq!(checkpoint_completion_after(0.0, 60.0, 2.0, 0.0), 62.0);
        assert_relative_eq!(checkpoint_start_after(0.0, 60.0, 100.0), 120.0);
    }

    #[test]
    fn replay_window_merges_and_clips() {
        let trace = WorkloadTrace::new(0, vec![1; 2000]);
        let plan = FailurePlan::new(vec![
            FailurePoint {
                timestamp: 500,
                rate: 1.0,
            },
            FailurePoint {
                timestamp: 1500,
                rate: 1.0,
            },
        ]);
        // Whole-trace margins: one segment equal to the full trace.
        let full = replay_window(&trace, &plan, 2000.0, 2000.0).unwrap();
        assert_eq!(full.len(), 1);
        assert_eq!(full[0], trace);

        // Disjoint: two segments of 400 s.
        let two = replay_window(&trace, &plan, 100.0, 300.0).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two[0].start_time, 400);
        assert_eq!(two[0].duration_k(), 400);
        assert_eq!(two[1].start_time, 1400);
        assert_eq!(two[1].duration_k(), 400);

        // Overlapping: merged into one.
        let close = FailurePlan::new(vec![
            FailurePoint {
                timestamp: 500,
                rate: 1.0,
            },
            FailurePoint {
                timestamp: 650,
                rate: 1.0,
            },
        ]);
        let merged = replay_window(&trace, &close, 100.0, 100.0).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged[0].start_time, 400);
        assert_eq!(merged[0].duration_k(), 350);
    }
}
