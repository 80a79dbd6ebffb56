//! Scenario-driven experiment harness: generate a workload, run the three
//! phases, execute the adaptive job next to static-interval baselines with
//! identical nominal failure times, and emit comparison reports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::domain::{
    read_json, write_json, ConfigGrid, FailurePlan, ProfilingMatrix, QoSConstraints, Validate,
    WorkloadTrace,
};
use crate::error::{Error, Result};
use crate::modeling::{fit, ForecastConfig, ForecastModel, ModelTarget, RegressionModel};
use crate::optimizer::{control_loop, DecisionRecord, OptimizerConfig};
use crate::pipeline_sim::{run, InjectionPlan, PipelineSpec, SimRun, Simulation};
use crate::profiler::{run_profiling, ProfilingOptions};
use crate::workload::{extract_failure_points_spaced, generate_trace, smooth, ExtractionMode, TraceKind};

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceSpec {
    pub kind: TraceKind,
    pub duration: usize,
    pub base_rate: f64,
    pub amplitude: f64,
}

impl Default for TraceSpec {
    fn default() -> Self {
        Self {
            kind: TraceKind::Diurnal,
            duration: 21_600,
            base_rate: 1000.0,
            amplitude: 500.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FailureSelection {
    pub m: usize,
    pub mode: ExtractionMode,
    pub smoothing_window: usize,
    /// Minimum spacing between failure points in rate-equidistant mode,
    /// seconds; keeps profiled recoveries from overlapping.
    pub min_separation: i64,
}

impl Default for FailureSelection {
    fn default() -> Self {
        Self {
            m: 12,
            mode: ExtractionMode::RateEquidistant,
            smoothing_window: 61,
            min_separation: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub ci_min: f64,
    pub ci_max: f64,
    pub z: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            ci_min: 10.0,
            ci_max: 120.0,
            z: 5,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<ConfigGrid> {
        ConfigGrid::new(self.ci_min, self.ci_max, self.z)
    }
}

/// One JSON document that fully determines an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub trace: TraceSpec,
    pub pipeline: PipelineSpec,
    /// When set, `capacity_mu` is re-derived as this factor times the
    /// generated trace's peak rate.
    pub capacity_factor: Option<f64>,
    pub grid: GridSpec,
    pub constraints: QoSConstraints,
    pub failures: FailureSelection,
    pub profiling: ProfilingOptions,
    pub model_degree: usize,
    pub forecaster: ForecastConfig,
    pub optimizer: OptimizerConfig,
    /// Static checkpoint intervals run as baselines.
    pub baselines: Vec<f64>,
    /// Starting interval of the adaptive run; defaults to the grid maximum.
    pub initial_ci: Option<f64>,
    /// Disable to measure failure-free operation; recovery columns are
    /// then zero everywhere.
    pub inject_experiment_failures: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            seed: 7,
            trace: TraceSpec::default(),
            pipeline: PipelineSpec::default(),
            capacity_factor: Some(2.0),
            grid: GridSpec::default(),
            constraints: QoSConstraints {
                l_const: 1000.0,
                r_const: 240.0,
            },
            failures: FailureSelection::default(),
            profiling: ProfilingOptions::default(),
            model_degree: 2,
            forecaster: ForecastConfig::default(),
            optimizer: OptimizerConfig::default(),
            baselines: vec![10.0, 30.0, 60.0, 90.0, 120.0],
            initial_ci: None,
            inject_experiment_failures: true,
        }
    }
}

impl Scenario {
    /// The bundled vehicle-stream analog: a compressed multi-day workload
    /// against a deliberately tight pipeline, so small intervals hurt
    /// latency while large intervals overrun the recovery bound.
    pub fn iot_analog() -> Self {
        let mut detector_cfg = crate::anomaly::DetectorConfig::default();
        // The heavy checkpoint pause below makes benign per-checkpoint lag
        // ripples part of normal operation; a wider multiplier keeps them
        // out of the anomaly set.
        detector_cfg.threshold_multiplier = 6.0;
        Self {
            name: "iot-analog".into(),
            seed: 7,
            trace: TraceSpec {
                kind: TraceKind::Diurnal,
                duration: 21_600,
                base_rate: 1000.0,
                amplitude: 500.0,
            },
            pipeline: PipelineSpec {
                capacity_mu: 0.0, // re-derived from the peak
                base_latency: 200.0,
                queue_latency_coeff: 0.5,
                checkpoint_pause: 4000.0,
                checkpoint_duration: 5.0,
                detection_timeout: 50.0,
                restart_duration: 10.0,
                controlled_restart_downtime: 15.0,
            },
            capacity_factor: Some(1.8),
            failures: FailureSelection {
                min_separation: 600,
                ..FailureSelection::default()
            },
            profiling: ProfilingOptions {
                detector: detector_cfg,
                ..ProfilingOptions::default()
            },
            ..Self::default()
        }
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn validate(&self) -> Result<()> {
        let mut violations = Vec::new();
        violations.extend(self.constraints.violations());
        if self.failures.m < 2 {
            violations.push(crate::domain::Violation::new("failures.m", "m ≥ 2"));
        }
        if !(self.model_degree == 1 || self.model_degree == 2) {
            violations.push(crate::domain::Violation::new(
                "model_degree",
                "degree ∈ {1, 2}",
            ));
        }
        if self.baselines.iter().any(|b| *b <= 0.0) {
            violations.push(crate::domain::Violation::new("baselines", "intervals > 0"));
        }
        self.grid.build().map_err(|e| match e {
            Error::Parameter(msg) => Error::Invalid(vec![crate::domain::Violation::new("grid", msg)]),
            other => other,
        })?;
        if violations.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(violations))
        }
    }
}

// ---------------------------------------------------------------------------
// Run statistics
// ---------------------------------------------------------------------------

/// Per-injection outcome within one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOutcome {
    pub injected_at: f64,
    pub caught_up: Option<f64>,
    /// Measured duration; for an unresolved recovery this is the time left
    /// until the trace ended (a lower bound).
    pub duration_s: f64,
    pub violation_s: f64,
    pub resolved: bool,
}

/// The comparison table row for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub avg_latency_ms: f64,
    pub latency_violation_fraction: f64,
    pub recovery_time_s: f64,
    pub recovery_violation_s: f64,
    pub reconfigurations: usize,
    pub recoveries: Vec<RecoveryOutcome>,
}

fn summarize_run(name: &str, run: &SimRun, constraints: &QoSConstraints, end_time: f64) -> RunReport {
    let n = run.metrics.len().max(1) as f64;
    let avg_latency_ms = run.metrics.iter().map(|m| m.avg_latency).sum::<f64>() / n;
    let violating = run
        .metrics
        .iter()
        .filter(|m| m.avg_latency > constraints.l_const)
        .count();
    let recoveries: Vec<RecoveryOutcome> = run
        .recovery_spans()
        .iter()
        .map(|span| {
            let duration = span
                .caught_up
                .map(|c| c - span.injected_at)
                .unwrap_or(end_time - span.injected_at);
            RecoveryOutcome {
                injected_at: span.injected_at,
                caught_up: span.caught_up,
                duration_s: duration,
                violation_s: (duration - constraints.r_const).max(0.0),
                resolved: span.caught_up.is_some(),
            }
        })
        .collect();
    RunReport {
        name: name.to_string(),
        avg_latency_ms,
        latency_violation_fraction: violating as f64 / n,
        recovery_time_s: recoveries.iter().map(|r| r.duration_s).sum(),
        recovery_violation_s: recoveries.iter().map(|r| r.violation_s).sum(),
        reconfigurations: run.reconfiguration_count(),
        recoveries,
    }
}

// ---------------------------------------------------------------------------
// Experiment execution
// ---------------------------------------------------------------------------

/// Everything an experiment produced, serializable as one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentBundle {
    pub scenario: Scenario,
    pub plan: FailurePlan,
    pub matrix: ProfilingMatrix,
    pub latency_model: RegressionModel,
    pub recovery_model: RegressionModel,
    pub runs: Vec<RunReport>,
    pub decisions: Vec<DecisionRecord>,
}

pub struct ExperimentOutput {
    pub bundle: ExperimentBundle,
    pub trace: WorkloadTrace,
    pub sim_runs: Vec<(String, SimRun)>,
}

/// Runs the full experiment: record, profile, fit, then the adaptive run
/// plus every static baseline against the same trace and the same nominal
/// failure times, each injected worst-case against its own live schedule.
pub fn run_experiment(scenario: &Scenario) -> Result<ExperimentOutput> {
    scenario.validate()?;
    let seed = scenario.seed;
    let trace = generate_trace(
        scenario.trace.kind,
        scenario.trace.duration,
        scenario.trace.base_rate,
        scenario.trace.amplitude,
        derive_seed(seed, "trace"),
    )?;
    let mut spec = scenario.pipeline;
    if let Some(factor) = scenario.capacity_factor {
        spec.capacity_mu = factor * trace.peak_rate();
    }
    spec.validate()?;

    let smoothed = smooth(&trace, scenario.failures.smoothing_window)?;
    let plan = extract_failure_points_spaced(
        &smoothed,
        scenario.failures.m,
        scenario.failures.mode,
        scenario.failures.min_separation,
    )?;
    let grid = scenario.grid.build()?;

    let matrix = run_profiling(
        &trace,
        &plan,
        &grid,
        &spec,
        &scenario.profiling,
        derive_seed(seed, "profile"),
    )?;
    let rows = matrix.flat_rows();
    let latency_samples: Vec<(f64, f64, f64)> =
        rows.iter().map(|(rate, ci, l, _)| (*ci, *rate, *l)).collect();
    let recovery_samples: Vec<(f64, f64, f64)> =
        rows.iter().map(|(rate, ci, _, r)| (*ci, *rate, *r)).collect();
    let latency_model = fit(&latency_samples, ModelTarget::Latency, scenario.model_degree)?;
    let recovery_model = fit(&recovery_samples, ModelTarget::Recovery, scenario.model_degree)?;

    let injections = if scenario.inject_experiment_failures {
        InjectionPlan::WorstCase {
            nominals: plan.points.iter().map(|p| p.timestamp as f64).collect(),
            epsilon: scenario.profiling.epsilon,
            reference: scenario.profiling.reference,
        }
    } else {
        InjectionPlan::none()
    };
    let end_time = trace.end_time() as f64;

    let initial_ci = scenario.initial_ci.unwrap_or(grid.ci_max);
    let adaptive_sim = Simulation::new(
        spec,
        trace.clone(),
        initial_ci,
        injections.clone(),
        vec![],
        derive_seed(seed, "run-adaptive"),
    )?;
    let mut forecaster = ForecastModel::new(
        scenario.forecaster,
        scenario.optimizer.cycle_period.round().max(1.0) as usize,
    );
    let outcome = control_loop(
        adaptive_sim,
        &latency_model,
        &recovery_model,
        &mut forecaster,
        &scenario.constraints,
        &grid,
        &scenario.optimizer,
    )?;

    let mut runs = Vec::new();
    let mut sim_runs = Vec::new();
    runs.push(summarize_run(
        "adaptive",
        &outcome.run,
        &scenario.constraints,
        end_time,
    ));
    sim_runs.push(("adaptive".to_string(), outcome.run));
    for ci in &scenario.baselines {
        let name = format!("static-{ci}s");
        let sim_run = run(
            &spec,
            &trace,
            *ci,
            injections.clone(),
            vec![],
            derive_seed(seed, &format!("run-static-{ci}")),
        )?;
        runs.push(summarize_run(&name, &sim_run, &scenario.constraints, end_time));
        sim_runs.push((name, sim_run));
    }

    Ok(ExperimentOutput {
        bundle: ExperimentBundle {
            scenario: scenario.clone(),
            plan,
            matrix,
            latency_model,
            recovery_model,
            runs,
            decisions: outcome.decisions,
        },
        trace,
        sim_runs,
    })
}

/// Writes the report bundle under `out_dir`: `report.json`, `summary.csv`,
/// `decisions.jsonl`, the generated trace, the profiling matrix, and
/// per-run metrics/event files.
pub fn write_bundle(output: &ExperimentOutput, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir.join("runs"))?;
    write_json(&out_dir.join("report.json"), &output.bundle)?;
    output.trace.write_csv(&out_dir.join("trace.csv"))?;
    output.bundle.matrix.save_json(&out_dir.join("matrix.json"))?;
    output.bundle.matrix.write_csv(&out_dir.join("matrix.csv"))?;

    let mut decisions = String::new();
    for d in &output.bundle.decisions {
        decisions.push_str(&serde_json::to_string(d)?);
        decisions.push('\n');
    }
    std::fs::write(out_dir.join("decisions.jsonl"), decisions)?;

    let mut w = csv::Writer::from_path(out_dir.join("summary.csv"))?;
    w.write_record([
        "run",
        "avg_latency_ms",
        "latency_violation_fraction",
        "recovery_time_s",
        "recovery_violation_s",
        "reconfigurations",
    ])?;
    for r in &output.bundle.runs {
        w.write_record([
            r.name.clone(),
            r.avg_latency_ms.to_string(),
            r.latency_violation_fraction.to_string(),
            r.recovery_time_s.to_string(),
            r.recovery_violation_s.to_string(),
            r.reconfigurations.to_string(),
        ])?;
    }
    w.flush()?;

    for (name, sim_run) in &output.sim_runs {
        sim_run.write_metrics_csv(&out_dir.join("runs").join(format!("{name}-metrics.csv")))?;
        sim_run.write_events_json(&out_dir.join("runs").join(format!("{name}-events.json")))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Normalized report
// ---------------------------------------------------------------------------

/// One row of the normalized violation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedRow {
    pub run: String,
    pub latency_violation_fraction: f64,
    pub recovery_time_s: f64,
    pub recovery_time_normalized: f64,
    pub recovery_violation_s: f64,
    pub recovery_violation_normalized: f64,
}

/// Normalizes every run against the adaptive run, whose own row comes out
/// at exactly 1.0.
pub fn normalized_report(bundle: &ExperimentBundle) -> (Vec<NormalizedRow>, Vec<String>) {
    let mut warnings = Vec::new();
    let reference = bundle
        .runs
        .iter()
        .find(|r| r.name == "adaptive")
        .or_else(|| {
            warnings.push("adaptive run missing; normalizing against the first run".to_string());
            bundle.runs.first()
        });
    let (ref_recovery, ref_violation) = match reference {
        Some(r) => (r.recovery_time_s, r.recovery_violation_s),
        None => {
            warnings.push("bundle contains no runs".to_string());
            (1.0, 1.0)
        }
    };
    let ratio = |value: f64, denom: f64| {
        if denom == 0.0 {
            if value == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            value / denom
        }
    };
    let rows = bundle
        .runs
        .iter()
        .map(|r| NormalizedRow {
            run: r.name.clone(),
            latency_violation_fraction: r.latency_violation_fraction,
            recovery_time_s: r.recovery_time_s,
            recovery_time_normalized: ratio(r.recovery_time_s, ref_recovery),
            recovery_violation_s: r.recovery_violation_s,
            recovery_violation_normalized: ratio(r.recovery_violation_s, ref_violation),
        })
        .collect();
    (rows, warnings)
}

pub fn write_normalized_csv(rows: &[NormalizedRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "run",
        "latency_violation_fraction",
        "recovery_time_s",
        "recovery_time_normalized",
        "recovery_violation_s",
        "recovery_violation_normalized",
    ])?;
    for r in rows {
        w.write_record([
            r.run.clone(),
            r.latency_violation_fraction.to_string(),
            r.recovery_time_s.to_string(),
            r.recovery_time_normalized.to_string(),
            r.recovery_violation_s.to_string(),
            r.recovery_violation_normalized.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario() -> Scenario {
        Scenario {
            name: "tiny".into(),
            seed: 7,
            trace: TraceSpec {
                kind: TraceKind::Sinusoidal,
                duration: 5400,
                base_rate: 1000.0,
                amplitude: 400.0,
            },
            capacity_factor: Some(2.0),
            failures: FailureSelection {
                m: 4,
                mode: ExtractionMode::TimeEquidistant,
                smoothing_window: 61,
                min_separation: 1,
            },
            grid: GridSpec {
                ci_min: 10.0,
                ci_max: 120.0,
                z: 3,
            },
            baselines: vec![10.0, 120.0],
            ..Scenario::default()
        }
    }

    #[test]
    fn experiment_produces_expected_report_columns() {
        let output = run_experiment(&tiny_scenario()).unwrap();
        let names: Vec<&str> = output.bundle.runs.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, vec!["adaptive", "static-10s", "static-120s"]);
        for r in &output.bundle.runs {
            assert!(r.avg_latency_ms > 0.0);
            assert!((0.0..=1.0).contains(&r.latency_violation_fraction));
            assert_eq!(r.recoveries.len(), 4, "{}", r.name);
        }
    }

    #[test]
    fn zero_injected_failures_zero_recovery_columns() {
        let scenario = Scenario {
            inject_experiment_failures: false,
            ..tiny_scenario()
        };
        let output = run_experiment(&scenario).unwrap();
        for r in &output.bundle.runs {
            assert_eq!(r.recovery_time_s, 0.0);
            assert_eq!(r.recovery_violation_s, 0.0);
            assert!(r.recoveries.is_empty());
        }
    }

    #[test]
    fn repeated_runs_are_identical() {
        let scenario = tiny_scenario();
        let a = run_experiment(&scenario).unwrap();
        let b = run_experiment(&scenario).unwrap();
        assert_eq!(a.bundle, b.bundle);
    }

    #[test]
    fn normalization_is_anchored_on_the_adaptive_run() {
        let output = run_experiment(&tiny_scenario()).unwrap();
        let (rows, warnings) = normalized_report(&output.bundle);
        assert!(warnings.is_empty());
        let adaptive = rows.iter().find(|r| r.run == "adaptive").unwrap();
        assert_eq!(adaptive.recovery_time_normalized, 1.0);
        for r in &rows {
            assert!((0.0..=1.0).contains(&r.latency_violation_fraction));
            if adaptive.recovery_time_s > 0.0 {
                let expected = r.recovery_time_s / adaptive.recovery_time_s;
                assert_eq!(r.recovery_time_normalized, expected);
            }
        }
    }

    #[test]
    fn doubled_recovery_normalizes_to_two() {
        let output = run_experiment(&tiny_scenario()).unwrap();
        let mut bundle = output.bundle;
        bundle.runs.truncate(2);
        let anchor = bundle.runs[0].recovery_time_s;
        bundle.runs[1].recovery_time_s = anchor * 2.0;
        let (rows, _) = normalized_report(&bundle);
        assert!((rows[1].recovery_time_normalized - 2.0).abs() < 1e-12);
    }

    #[test]
    fn scenario_json_round_trip() {
        let scenario = Scenario::iot_analog();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.json");
        scenario.save_json(&path).unwrap();
        assert_eq!(Scenario::load_json(&path).unwrap(), scenario);
    }

    #[test]
    fn invalid_scenarios_fail_validation_with_paths() {
        let mut scenario = tiny_scenario();
        scenario.constraints.l_const = -5.0;
        scenario.failures.m = 1;
        match scenario.validate() {
            Err(Error::Invalid(violations)) => {
                assert!(violations.iter().any(|v| v.path == "l_const"));
                assert!(violations.iter().any(|v| v.path == "failures.m"));
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }
}
