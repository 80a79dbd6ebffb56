//! Profiling orchestration: one simulated deployment per candidate
//! checkpoint interval, worst-case failure injection at every failure
//! point, and assembly of the latency/recovery observation matrix.

use serde::{Deserialize, Serialize};

use crate::anomaly::{measure_recovery, Detector, DetectorConfig};
use crate::derive_seed;
use crate::domain::{
    ConfigGrid, FailurePlan, InvalidCell, ProfilingMatrix, Validate, WorkloadTrace,
};
use crate::error::{Error, Result};
use crate::pipeline_sim::{
    checkpoint_completion_after, checkpoint_start_after, replay_window, run, InjectionPlan,
    InjectionReference, PipelineSpec, SimRun,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfilingOptions {
    /// Seconds before the checkpoint boundary at which to inject.
    pub epsilon: f64,
    /// Inject relative to checkpoint completions (worst case) or starts.
    pub reference: InjectionReference,
    /// Length of the pre-injection latency averaging window, seconds.
    pub latency_window: f64,
    /// Optional replay clipping margins (before, after) around each
    /// failure point, seconds.
    pub margins: Option<(f64, f64)>,
    /// Fraction of invalid cells above which profiling fails outright.
    pub max_invalid_fraction: f64,
    pub detector: DetectorConfig,
}

impl Default for ProfilingOptions {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            reference: InjectionReference::Completion,
            latency_window: 60.0,
            margins: None,
            max_invalid_fraction: 0.2,
            detector: DetectorConfig::default(),
        }
    }
}

/// Injection time for a failure nominally due at `nominal_time`: epsilon
/// seconds before the first checkpoint completion (or scheduled start)
/// strictly after it, which maximizes the work that must be reprocessed.
pub fn schedule_worst_case_injection(
    ci: f64,
    checkpoint_schedule_origin: f64,
    checkpoint_duration: f64,
    nominal_time: f64,
    epsilon: f64,
    reference: InjectionReference,
) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < ci) {
        return Err(Error::Parameter(format!(
            "epsilon must satisfy 0 < epsilon < ci, got {epsilon} for ci {ci}"
        )));
    }
    let boundary = match reference {
        InjectionReference::Completion => checkpoint_completion_after(
            checkpoint_schedule_origin,
            ci,
            checkpoint_duration,
            nominal_time,
        ),
        InjectionReference::Start => {
            checkpoint_start_after(checkpoint_schedule_origin, ci, nominal_time)
        }
    };
    Ok(boundary - epsilon)
}

/// Walks the failure plan through one deployment's checkpoint schedule,
/// producing the exact injection times the simulator would use: the
/// schedule re-anchors at each post-failure resume, and a nominal time that
/// falls inside a downtime defers to the resume instant.
fn precompute_injections(
    segment: &WorkloadTrace,
    nominals: &[i64],
    ci: f64,
    spec: &PipelineSpec,
    opts: &ProfilingOptions,
) -> Vec<Option<f64>> {
    let seg_start = segment.start_time as f64;
    let seg_end = segment.end_time() as f64;
    let mut origin = seg_start;
    let mut not_before = seg_start;
    let mut out = Vec::with_capacity(nominals.len());
    for nominal in nominals {
        let mut after = (*nominal as f64).max(not_before);
        let floor = after;
        let fire = loop {
            let boundary = match opts.reference {
                InjectionReference::Completion => {
                    checkpoint_completion_after(origin, ci, spec.checkpoint_duration, after)
                }
                InjectionReference::Start => checkpoint_start_after(origin, ci, after),
            };
            let fire = boundary - opts.epsilon;
            if fire > floor {
                break fire;
            }
            after = boundary;
        };
        if fire < seg_end {
            out.push(Some(fire));
            origin = fire + spec.failure_downtime();
            not_before = origin;
        } else {
            out.push(None);
        }
    }
    out
}

/// Profiles the full configuration grid against the failure plan.
///
/// Each grid value gets an isolated deployment that replays the trace (or
/// its clipped windows) at the recorded rate. A failure-free twin run warms
/// the anomaly detector, then worst-case failures are injected and each
/// cell records the pre-injection latency average and the anomaly-measured
/// recovery time. Cells that cannot be measured are left missing with a
/// reason; too many of them fail the profiling run.
pub fn run_profiling(
    trace: &WorkloadTrace,
    plan: &FailurePlan,
    grid: &ConfigGrid,
    spec: &PipelineSpec,
    opts: &ProfilingOptions,
    seed: u64,
) -> Result<ProfilingMatrix> {
    plan.validate()?;
    grid.validate()?;
    spec.validate()?;
    let violations = plan.violations_against(trace);
    if !violations.is_empty() {
        return Err(Error::Invalid(violations));
    }
    if spec.capacity_mu <= plan.max_rate() {
        return Err(Error::NoCatchUp {
            capacity: spec.capacity_mu,
            rate: plan.max_rate(),
        });
    }

    let segments = match opts.margins {
        Some((before, after)) => replay_window(trace, plan, before, after)?,
        None => vec![trace.clone()],
    };

    let m = plan.points.len();
    let z = grid.values.len();
    let mut latencies = vec![vec![None; z]; m];
    let mut recoveries = vec![vec![None; z]; m];
    let mut invalid: Vec<InvalidCell> = Vec::new();
    let grace = 2.0 * spec.detection_timeout;

    for (j, ci) in grid.values.iter().enumerate() {
        // Seeded by interval value, not column index, so deployments are
        // isolated: permuting the grid permutes matrix columns and nothing
        // else.
        let sub_seed = derive_seed(seed, &format!("deployment-ci-{ci}"));
        for segment in &segments {
            let nominal_indices: Vec<usize> = plan
                .points
                .iter()
                .enumerate()
                .filter(|(_, p)| segment.contains(p.timestamp))
                .map(|(i, _)| i)
                .collect();
            if nominal_indices.is_empty() {
                continue;
            }
            let nominals: Vec<i64> = nominal_indices
                .iter()
                .map(|i| plan.points[*i].timestamp)
                .collect();
            let fires = precompute_injections(segment, &nominals, *ci, spec, opts);

            let clean = run(spec, segment, *ci, InjectionPlan::none(), vec![], sub_seed)?;
            let mut detector = Detector::new(opts.detector);
            detector.warmup(&clean.metrics)?;

            let fixed: Vec<f64> = fires.iter().filter_map(|f| *f).collect();
            let injected: SimRun = run(
                spec,
                segment,
                *ci,
                InjectionPlan::Fixed(fixed),
                vec![],
                sub_seed,
            )?;
            let spans = injected.recovery_spans();

            for (slot, i) in nominal_indices.iter().enumerate() {
                let fire = match fires[slot] {
                    Some(f) => f,
                    None => {
                        invalid.push(InvalidCell {
                            failure_index: *i,
                            config_index: j,
                            reason: "injection fell outside the replay window".into(),
                        });
                        continue;
                    }
                };
                match injected.mean_latency_between(fire - opts.latency_window, fire) {
                    Some(l) => latencies[*i][j] = Some(l),
                    None => invalid.push(InvalidCell {
                        failure_index: *i,
                        config_index: j,
                        reason: "no metrics in the pre-injection latency window".into(),
                    }),
                }
                let caught_up = spans
                    .iter()
                    .find(|s| (s.injected_at - fire).abs() < 1e-6)
                    .and_then(|s| s.caught_up);
                if caught_up.is_none() {
                    invalid.push(InvalidCell {
                        failure_index: *i,
                        config_index: j,
                        reason: "no catch-up before the replay ended".into(),
                    });
                    continue;
                }
                match measure_recovery(&detector, &injected.metrics, fire, grace) {
                    Ok(r) => recoveries[*i][j] = Some(r),
                    Err(e) => invalid.push(InvalidCell {
                        failure_index: *i,
                        config_index: j,
                        reason: e.to_string(),
                    }),
                }
            }
        }
    }

    let total = m * z;
    let invalid_cells = {
        let mut keys: Vec<(usize, usize)> = invalid
            .iter()
            .map(|c| (c.failure_index, c.config_index))
            .collect();
        keys.sort_unstable();
        keys.dedup();
        keys.len()
    };
    if invalid_cells as f64 > opts.max_invalid_fraction * total as f64 {
        return Err(Error::ProfilingFailed {
            invalid: invalid_cells,
            total,
            limit_percent: (opts.max_invalid_fraction * 100.0).round() as u32,
        });
    }

    Ok(ProfilingMatrix {
        latencies,
        recoveries,
        grid: grid.clone(),
        plan: plan.clone(),
        invalid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{FailurePoint, Validate};
    use approx::assert_relative_eq;

    #[test]
    fn hand_walked_injection_schedule() {
        // Starts at 60, 120; completions at 62, 122; first completion after
        // nominal 100 is 122, so inject at 121.
        let t = schedule_worst_case_injection(
            60.0,
            0.0,
            2.0,
            100.0,
            1.0,
            InjectionReference::Completion,
        )
        .unwrap();
        assert_relative_eq!(t, 121.0);
    }

    #[test]
    fn nominal_on_a_completion_takes_the_next_one() {
        let t = schedule_worst_case_injection(
            60.0,
            0.0,
            2.0,
            122.0,
            1.0,
            InjectionReference::Completion,
        )
        .unwrap();
        assert_relative_eq!(t, 181.0);
    }

    #[test]
    fn start_reference_targets_the_scheduled_start() {
        let t =
            schedule_worst_case_injection(60.0, 0.0, 2.0, 100.0, 1.0, InjectionReference::Start)
                .unwrap();
        assert_relative_eq!(t, 119.0);
    }

    #[test]
    fn epsilon_bounds_are_enforced() {
        assert!(
            schedule_worst_case_injection(60.0, 0.0, 2.0, 0.0, 0.0, InjectionReference::Completion)
                .is_err()
        );
        assert!(schedule_worst_case_injection(
            10.0,
            0.0,
            2.0,
            0.0,
            10.0,
            InjectionReference::Completion
        )
        .is_err());
    }

    fn small_setup() -> (WorkloadTrace, FailurePlan, ConfigGrid, PipelineSpec) {
        let trace = WorkloadTrace::new(0, vec![1000; 3600]);
        let plan = FailurePlan::new(vec![
            FailurePoint {
                timestamp: 600,
                rate: 1000.0,
            },
            FailurePoint {
                timestamp: 1600,
                rate: 1000.0,
            },
            FailurePoint {
                timestamp: 2600,
                rate: 1000.0,
            },
        ]);
        let grid = ConfigGrid::new(10.0, 120.0, 3).unwrap();
        let spec = PipelineSpec::for_peak_rate(1000.0);
        (trace, plan, grid, spec)
    }

    #[test]
    fn matrix_has_plan_by_grid_shape_and_is_deterministic() {
        let (trace, plan, grid, spec) = small_setup();
        let opts = ProfilingOptions::default();
        let a = run_profiling(&trace, &plan, &grid, &spec, &opts, 7).unwrap();
        let b = run_profiling(&trace, &plan, &grid, &spec, &opts, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.latencies.len(), 3);
        assert_eq!(a.latencies[0].len(), 3);
        assert!(a.violations().is_empty());
        assert_eq!(a.valid_cells(), 9, "invalid: {:?}", a.invalid);
    }

    #[test]
    fn permuting_the_grid_permutes_columns_only() {
        let (trace, plan, grid, spec) = small_setup();
        let opts = ProfilingOptions::default();
        let forward = run_profiling(&trace, &plan, &grid, &spec, &opts, 7).unwrap();
        // Same values in a legal grid with a different middle: compare the
        // shared columns by interval value.
        let coarse = ConfigGrid::new(10.0, 120.0, 2).unwrap();
        let sparse = run_profiling(&trace, &plan, &coarse, &spec, &opts, 7).unwrap();
        for (j_sparse, ci) in coarse.values.iter().enumerate() {
            let j_full = grid.values.iter().position(|v| v == ci).unwrap();
            for i in 0..plan.points.len() {
                assert_eq!(
                    sparse.recoveries[i][j_sparse], forward.recoveries[i][j_full],
                    "ci {ci} row {i}"
                );
                assert_eq!(sparse.latencies[i][j_sparse], forward.latencies[i][j_full]);
            }
        }
    }

    #[test]
    fn recoveries_are_bounded_below_by_downtime_and_rise_with_ci() {
        let (trace, plan, grid, spec) = small_setup();
        let matrix =
            run_profiling(&trace, &plan, &grid, &spec, &ProfilingOptions::default(), 7).unwrap();
        let d = spec.failure_downtime();
        for row in &matrix.recoveries {
            let vals: Vec<f64> = row.iter().map(|c| c.unwrap()).collect();
            for v in &vals {
                assert!(*v >= d * 0.95, "recovery {v} below downtime {d}");
            }
            for w in vals.windows(2) {
                assert!(w[1] >= w[0] * 0.95, "row not nondecreasing: {vals:?}");
            }
        }
    }

    #[test]
    fn latency_column_means_do_not_increase_with_ci() {
        let (trace, plan, grid, spec) = small_setup();
        let matrix =
            run_profiling(&trace, &plan, &grid, &spec, &ProfilingOptions::default(), 7).unwrap();
        let mut prev = f64::INFINITY;
        for j in 0..grid.values.len() {
            let col: Vec<f64> = (0..plan.points.len())
                .map(|i| matrix.latencies[i][j].unwrap())
                .collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            assert!(mean <= prev * 1.05, "column {j} mean {mean} above {prev}");
            prev = mean;
        }
    }

    #[test]
    fn precomputed_times_match_the_simulators_internal_arming() {
        let (trace, plan, _, spec) = small_setup();
        let opts = ProfilingOptions::default();
        let ci = 37.5;
        let nominals: Vec<i64> = plan.timestamps();
        let fires = precompute_injections(&trace, &nominals, ci, &spec, &opts);
        let armed = run(
            &spec,
            &trace,
            ci,
            InjectionPlan::worst_case(nominals.iter().map(|t| *t as f64).collect(), opts.epsilon),
            vec![],
            7,
        )
        .unwrap();
        let expected: Vec<f64> = fires.into_iter().flatten().collect();
        assert_eq!(armed.injection_times(), expected);
    }

    #[test]
    fn clipped_replay_windows_still_fill_the_matrix() {
        let (trace, plan, grid, spec) = small_setup();
        let opts = ProfilingOptions {
            margins: Some((400.0, 500.0)),
            ..ProfilingOptions::default()
        };
        let matrix = run_profiling(&trace, &plan, &grid, &spec, &opts, 7).unwrap();
        assert_eq!(matrix.valid_cells(), 9, "invalid: {:?}", matrix.invalid);
    }

    #[test]
    fn saturated_capacity_is_rejected_upfront() {
        let (trace, plan, grid, mut spec) = small_setup();
        spec.capacity_mu = 900.0;
        let err =
            run_profiling(&trace, &plan, &grid, &spec, &ProfilingOptions::default(), 7).unwrap_err();
        assert!(matches!(err, Error::NoCatchUp { .. }));
    }
}
