//! Runtime optimization loop: watch the QoS bounds, forecast the input
//! rate, pick the best feasible checkpoint interval on the grid, and issue
//! controlled restarts.

use serde::{Deserialize, Serialize};

use crate::domain::{ConfigGrid, MetricsSample, QoSConstraints};
use crate::error::Result;
use crate::modeling::{ForecastModel, RegressionModel, RescaleState};
use crate::pipeline_sim::{SimRun, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Seconds between optimization cycles.
    pub cycle_period: f64,
    /// Length of the metrics window each cycle evaluates, seconds.
    pub monitoring_window: f64,
    /// Number of past cycles feeding the prediction rescaling factor.
    pub rescale_window_k: usize,
    /// Forecast drop above which a reconfiguration is deferred.
    pub deferral_threshold: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            cycle_period: 60.0,
            monitoring_window: 120.0,
            rescale_window_k: 5,
            deferral_threshold: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violations {
    pub latency_violated: bool,
    pub recovery_violated: bool,
}

impl Violations {
    pub fn any(&self) -> bool {
        self.latency_violated || self.recovery_violated
    }
}

/// Aggregates of the monitoring window used by a cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSummary {
    pub tr_avg: f64,
    pub observed_latency: f64,
}

pub fn summarize_window(window: &[MetricsSample]) -> WindowSummary {
    let n = window.len().max(1) as f64;
    WindowSummary {
        tr_avg: window.iter().map(|m| m.input_throughput).sum::<f64>() / n,
        observed_latency: window.iter().map(|m| m.avg_latency).sum::<f64>() / n,
    }
}

/// Checks both bounds: the latency bound against the observed window
/// average (strictly above violates), the recovery bound against the
/// worst-case model prediction at the current interval and window-average
/// throughput.
pub fn detect_violation(
    window: &[MetricsSample],
    m_r: &RegressionModel,
    constraints: &QoSConstraints,
    current_ci: f64,
) -> (Violations, WindowSummary) {
    let summary = summarize_window(window);
    let predicted_recovery = m_r.predict(current_ci, summary.tr_avg).value;
    (
        Violations {
            latency_violated: summary.observed_latency > constraints.l_const,
            recovery_violated: predicted_recovery > constraints.r_const,
        },
        summary,
    )
}

/// Value of the selection objective for one candidate, or infeasibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Feasible(f64),
    Infeasible,
}

impl Objective {
    pub fn value(&self) -> Option<f64> {
        match self {
            Objective::Feasible(v) => Some(*v),
            Objective::Infeasible => None,
        }
    }
}

/// Both fractions must sit strictly inside (0, 1); the objective
/// `q_r + q_l* + |q_r - q_l*|` equals twice the larger fraction, so
/// minimizing it pushes the worse of the two bounds as far away as
/// possible.
pub fn evaluate_objective(q_r: f64, q_l_star: f64) -> Objective {
    if q_r > 0.0 && q_r < 1.0 && q_l_star > 0.0 && q_l_star < 1.0 {
        Objective::Feasible(q_r + q_l_star + (q_r - q_l_star).abs())
    } else {
        Objective::Infeasible
    }
}

/// A feasible grid value and its evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub ci: f64,
    pub q_r: f64,
    pub q_l_star: f64,
    pub objective: f64,
}

/// Fractions of their bounds for one candidate interval.
pub fn bound_fractions(
    m_r: &RegressionModel,
    m_l: &RegressionModel,
    p: f64,
    ci: f64,
    tr_avg: f64,
    constraints: &QoSConstraints,
) -> (f64, f64) {
    let q_r = m_r.predict(ci, tr_avg).value / constraints.r_const;
    let q_l_star = p * m_l.predict(ci, tr_avg).value / constraints.l_const;
    (q_r, q_l_star)
}

/// Scans the grid for the feasible interval minimizing the objective.
/// Ties break toward the larger interval (lower checkpoint overhead).
pub fn select_ci(
    grid: &ConfigGrid,
    m_r: &RegressionModel,
    m_l: &RegressionModel,
    p: f64,
    tr_avg: f64,
    constraints: &QoSConstraints,
) -> Option<Selection> {
    let mut best: Option<Selection> = None;
    for ci in &grid.values {
        let (q_r, q_l_star) = bound_fractions(m_r, m_l, p, *ci, tr_avg, constraints);
        if let Objective::Feasible(objective) = evaluate_objective(q_r, q_l_star) {
            let better = match &best {
                None => true,
                Some(b) => {
                    objective < b.objective - 1e-12
                        || ((objective - b.objective).abs() <= 1e-12 && *ci > b.ci)
                }
            };
            if better {
                best = Some(Selection {
                    ci: *ci,
                    q_r,
                    q_l_star,
                    objective,
                });
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionKind {
    NoViolation,
    Deferred,
    Reconfigure,
    InfeasibleKeepCurrent,
}

/// Outcome of one optimization cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerDecision {
    pub kind: DecisionKind,
    pub new_ci: Option<f64>,
    pub q_r: f64,
    pub q_l_star: f64,
    pub forecast_drop: f64,
}

/// Evaluation of the currently configured interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentEvaluation {
    pub ci: f64,
    pub q_r: f64,
    pub q_l_star: f64,
}

impl CurrentEvaluation {
    pub fn objective(&self) -> Objective {
        evaluate_objective(self.q_r, self.q_l_star)
    }
}

/// Pure decision rule over already-computed inputs; this is the part the
/// decision log can replay bit for bit.
pub fn decide_core(
    violations: Violations,
    forecast_drop: f64,
    deferral_threshold: f64,
    selection: Option<(f64, f64)>,
    current_objective: Option<f64>,
    current_ci: f64,
) -> (DecisionKind, Option<f64>) {
    if !violations.any() {
        return (DecisionKind::NoViolation, None);
    }
    if forecast_drop > deferral_threshold {
        return (DecisionKind::Deferred, None);
    }
    if let Some((ci, objective)) = selection {
        let current = current_objective.unwrap_or(f64::INFINITY);
        if ci != current_ci && objective < current {
            return (DecisionKind::Reconfigure, Some(ci));
        }
    }
    (DecisionKind::InfeasibleKeepCurrent, None)
}

/// Full decision for one violated-or-not cycle: forecasts the input rate
/// over the horizon, defers when it is expected to drop by more than the
/// threshold, otherwise reconfigures when the selection strictly improves
/// the predicted objective. A cold forecaster proceeds with a zero drop.
#[allow(clippy::too_many_arguments)]
pub fn decide(
    violations: Violations,
    forecaster: &ForecastModel,
    current_rate: f64,
    horizon_to_next_cycle: usize,
    selection: Option<&Selection>,
    current: &CurrentEvaluation,
    deferral_threshold: f64,
) -> (OptimizerDecision, bool) {
    let mut cold = false;
    let forecast_drop = if violations.any() && current_rate > 0.0 {
        match forecaster.forecast(horizon_to_next_cycle) {
            Ok(fc) => {
                let mean = fc.iter().sum::<f64>() / fc.len() as f64;
                (current_rate - mean) / current_rate
            }
            Err(_) => {
                cold = true;
                0.0
            }
        }
    } else {
        0.0
    };
    let (kind, new_ci) = decide_core(
        violations,
        forecast_drop,
        deferral_threshold,
        selection.map(|s| (s.ci, s.objective)),
        current.objective().value(),
        current.ci,
    );
    let (q_r, q_l_star) = match (kind, selection) {
        (DecisionKind::Reconfigure, Some(s)) => (s.q_r, s.q_l_star),
        _ => (current.q_r, current.q_l_star),
    };
    (
        OptimizerDecision {
            kind,
            new_ci,
            q_r,
            q_l_star,
            forecast_drop,
        },
        cold,
    )
}

/// One line of the decision log. Carries the decision plus every input the
/// pure rule needs, so the log replays exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    pub kind: DecisionKind,
    pub new_ci: Option<f64>,
    pub q_r: f64,
    pub q_l_star: f64,
    pub forecast_drop: f64,
    pub tr_avg: f64,
    pub latency_violated: bool,
    pub recovery_violated: bool,
    pub current_ci: f64,
    pub current_objective: Option<f64>,
    pub selected_ci: Option<f64>,
    pub selected_objective: Option<f64>,
    pub forecaster_cold: bool,
}

impl DecisionRecord {
    /// Re-runs the decision rule over the logged inputs.
    pub fn replay(&self, deferral_threshold: f64) -> (DecisionKind, Option<f64>) {
        decide_core(
            Violations {
                latency_violated: self.latency_violated,
                recovery_violated: self.recovery_violated,
            },
            self.forecast_drop,
            deferral_threshold,
            match (self.selected_ci, self.selected_objective) {
                (Some(ci), Some(obj)) => Some((ci, obj)),
                _ => None,
            },
            self.current_objective,
            self.current_ci,
        )
    }
}

pub struct ControlLoopOutcome {
    pub decisions: Vec<DecisionRecord>,
    pub run: SimRun,
}

/// Drives a simulated job to completion, evaluating the bounds every
/// `cycle_period` seconds of simulated time and issuing controlled
/// restarts for accepted reconfigurations.
pub fn control_loop(
    mut sim: Simulation,
    m_l: &RegressionModel,
    m_r: &RegressionModel,
    forecaster: &mut ForecastModel,
    constraints: &QoSConstraints,
    grid: &ConfigGrid,
    config: &OptimizerConfig,
) -> Result<ControlLoopOutcome> {
    let trace = sim.trace().clone();
    let mut rescale = RescaleState::new(config.rescale_window_k);
    let mut current_ci = sim.current_ci();
    let mut decisions = Vec::new();
    let mut next_cycle = trace.start_time as f64 + config.cycle_period;

    while let Some(sample) = sim.step_second() {
        forecaster.observe_rate(trace.rate_at(sample.t));
        let now = sim.now();
        if now + 1e-9 < next_cycle {
            continue;
        }
        next_cycle += config.cycle_period;

        let window_start = now - config.monitoring_window;
        let window: Vec<MetricsSample> = sim
            .metrics()
            .iter()
            .rev()
            .take_while(|m| m.t >= window_start)
            .copied()
            .collect();
        if window.is_empty() {
            continue;
        }

        let summary = summarize_window(&window);
        let predicted_latency = m_l.predict(current_ci, summary.tr_avg);
        if predicted_latency.value > 0.0 {
            rescale.update(summary.observed_latency, predicted_latency.value)?;
        }
        let p = rescale.p();

        let (violations, _) = detect_violation(&window, m_r, constraints, current_ci);
        let (q_r_cur, q_l_star_cur) =
            bound_fractions(m_r, m_l, p, current_ci, summary.tr_avg, constraints);
        let current = CurrentEvaluation {
            ci: current_ci,
            q_r: q_r_cur,
            q_l_star: q_l_star_cur,
        };

        let selection = if violations.any() {
            select_ci(grid, m_r, m_l, p, summary.tr_avg, constraints)
        } else {
            None
        };
        let current_rate = trace.rate_at(now - 1.0);
        let horizon = config.cycle_period.round().max(1.0) as usize;
        let (decision, cold) = decide(
            violations,
            forecaster,
            current_rate,
            horizon,
            selection.as_ref(),
            &current,
            config.deferral_threshold,
        );
        if let (DecisionKind::Reconfigure, Some(new_ci)) = (decision.kind, decision.new_ci) {
            sim.reconfigure_now(new_ci)?;
            current_ci = new_ci;
        }
        decisions.push(DecisionRecord {
            t: now,
            kind: decision.kind,
            new_ci: decision.new_ci,
            q_r: decision.q_r,
            q_l_star: decision.q_l_star,
            forecast_drop: decision.forecast_drop,
            tr_avg: summary.tr_avg,
            latency_violated: violations.latency_violated,
            recovery_violated: violations.recovery_violated,
            current_ci: current.ci,
            current_objective: current.objective().value(),
            selected_ci: selection.map(|s| s.ci),
            selected_objective: selection.map(|s| s.objective),
            forecaster_cold: cold,
        });
    }

    Ok(ControlLoopOutcome {
        decisions,
        run: sim.into_run(),
    })
}
