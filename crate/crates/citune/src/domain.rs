//! Shared domain types, units, and invariants.
//!
//! Conventions: workload timestamps and schedule times are integer seconds,
//! times inside the simulator are fractional seconds, latencies are
//! milliseconds, rates are events per second.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One violated invariant, with the path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Invariant checking. Violations are data, not faults: a value that fails
/// validation is still inspectable.
pub trait Validate {
    /// Returns every violated invariant; an empty list means the value is ok.
    fn violations(&self) -> Vec<Violation>;

    /// Converts violations into an error for callers that need a hard stop.
    fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

// ---------------------------------------------------------------------------
// Workload trace
// ---------------------------------------------------------------------------

/// Per-second event counts over a recording period.
///
/// Entry `i` of `counts` is the number of events that arrived during second
/// `start_time + i`; the trace is contiguous by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadTrace {
    pub start_time: i64,
    pub counts: Vec<i64>,
}

impl WorkloadTrace {
    pub fn new(start_time: i64, counts: Vec<i64>) -> Self {
        Self { start_time, counts }
    }

    /// Recording duration in seconds.
    pub fn duration_k(&self) -> usize {
        self.counts.len()
    }

    /// First timestamp past the end of the trace.
    pub fn end_time(&self) -> i64 {
        self.start_time + self.counts.len() as i64
    }

    pub fn contains(&self, t: i64) -> bool {
        t >= self.start_time && t < self.end_time()
    }

    /// Count at an absolute timestamp; zero outside the recording.
    pub fn count_at(&self, t: i64) -> i64 {
        if self.contains(t) {
            self.counts[(t - self.start_time) as usize]
        } else {
            0
        }
    }

    /// Arrival rate at a fractional time, piecewise constant per second.
    pub fn rate_at(&self, t: f64) -> f64 {
        self.count_at(t.floor() as i64) as f64
    }

    pub fn peak_rate(&self) -> f64 {
        self.counts.iter().copied().max().unwrap_or(0) as f64
    }

    /// Writes the trace as CSV with a `timestamp,count` header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["timestamp", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([
                (self.start_time + i as i64).to_string(),
                c.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a trace from CSV, requiring contiguous timestamps.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
        let mut start_time = None;
        let mut counts = Vec::new();
        for (row, record) in r.records().enumerate() {
            let record = record?;
            let ts: i64 = record
                .get(0)
                .ok_or_else(|| Error::Parameter(format!("row {row}: missing timestamp")))?
                .trim()
                .parse()
                .map_err(|e| Error::Parameter(format!("row {row}: bad timestamp: {e}")))?;
            let count: i64 = record
                .get(1)
                .ok_or_else(|| Error::Parameter(format!("row {row}: missing count")))?
                .trim()
                .parse()
                .map_err(|e| Error::Parameter(format!("row {row}: bad count: {e}")))?;
            match start_time {
                None => start_time = Some(ts),
                Some(s) => {
                    let expected = s + counts.len() as i64;
                    if ts != expected {
                        return Err(Error::Parameter(format!(
                            "row {row}: timestamp {ts} is not contiguous (expected {expected})"
                        )));
                    }
                }
            }
            counts.push(count);
        }
        let start_time =
            start_time.ok_or_else(|| Error::Parameter("trace file is empty".into()))?;
        Ok(Self { start_time, counts })
    }
}

impl Validate for WorkloadTrace {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.counts.len() < 2 {
            v.push(Violation::new("counts", "duration_k ≥ 2"));
        }
        for (i, c) in self.counts.iter().enumerate() {
            if *c < 0 {
                v.push(Violation::new(format!("counts[{i}]"), "count ≥ 0"));
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Failure plan
// ---------------------------------------------------------------------------

/// A failure injection point: when to fail, and the smoothed workload rate
/// observed at that time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailurePoint {
    pub timestamp: i64,
    pub rate: f64,
}

/// The failure points extracted from a recorded workload, ordered by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailurePlan {
    pub m: usize,
    pub points: Vec<FailurePoint>,
}

impl FailurePlan {
    pub fn new(points: Vec<FailurePoint>) -> Self {
        Self {
            m: points.len(),
            points,
        }
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.points.iter().map(|p| p.timestamp).collect()
    }

    pub fn rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.rate).collect()
    }

    pub fn max_rate(&self) -> f64 {
        self.points.iter().map(|p| p.rate).fold(f64::MIN, f64::max)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Contextual checks against the trace the plan was extracted from.
    pub fn violations_against(&self, trace: &WorkloadTrace) -> Vec<Violation> {
        let mut v = self.violations();
        for (i, p) in self.points.iter().enumerate() {
            if !trace.contains(p.timestamp) {
                v.push(Violation::new(
                    format!("points[{i}].timestamp"),
                    "timestamp lies outside the trace's time range",
                ));
            }
        }
        v
    }
}

impl Validate for FailurePlan {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.m < 2 {
            v.push(Violation::new("m", "m ≥ 2"));
        }
        if self.points.len() != self.m {
            v.push(Violation::new("points", "|points| = m"));
        }
        for (i, w) in self.points.windows(2).enumerate() {
            if w[1].timestamp <= w[0].timestamp {
                v.push(Violation::new(
                    format!("points[{}].timestamp", i + 1),
                    "timestamps strictly increasing",
                ));
            }
        }
        for (i, p) in self.points.iter().enumerate() {
            if !p.rate.is_finite() || p.rate < 0.0 {
                v.push(Violation::new(format!("points[{i}].rate"), "rate ≥ 0 and finite"));
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Configuration grid
// ---------------------------------------------------------------------------

/// The candidate checkpoint intervals: `z` equidistant values in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigGrid {
    pub ci_min: f64,
    pub ci_max: f64,
    pub z: usize,
    pub values: Vec<f64>,
}

impl ConfigGrid {
    pub fn new(ci_min: f64, ci_max: f64, z: usize) -> Result<Self> {
        if !(ci_min > 0.0 && ci_min < ci_max) {
            return Err(Error::Parameter(format!(
                "grid requires 0 < ci_min < ci_max, got {ci_min}..{ci_max}"
            )));
        }
        if z < 2 {
            return Err(Error::Parameter(format!("grid requires z ≥ 2, got {z}")));
        }
        let step = (ci_max - ci_min) / (z - 1) as f64;
        let mut values: Vec<f64> = (0..z).map(|i| ci_min + step * i as f64).collect();
        values[0] = ci_min;
        values[z - 1] = ci_max;
        Ok(Self {
            ci_min,
            ci_max,
            z,
            values,
        })
    }

    /// Parses the `min:max:z` CLI form, e.g. `10:120:5`.
    pub fn parse(spec: &str) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(Error::Parameter(format!(
                "grid spec must be min:max:z, got '{spec}'"
            )));
        }
        let ci_min: f64 = parts[0]
            .parse()
            .map_err(|e| Error::Parameter(format!("bad grid min '{}': {e}", parts[0])))?;
        let ci_max: f64 = parts[1]
            .parse()
            .map_err(|e| Error::Parameter(format!("bad grid max '{}': {e}", parts[1])))?;
        let z: usize = parts[2]
            .parse()
            .map_err(|e| Error::Parameter(format!("bad grid count '{}': {e}", parts[2])))?;
        Self::new(ci_min, ci_max, z)
    }
}

impl Validate for ConfigGrid {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.ci_min > 0.0 && self.ci_min < self.ci_max) {
            v.push(Violation::new("ci_min", "0 < ci_min < ci_max"));
        }
        if self.z < 2 {
            v.push(Violation::new("z", "z ≥ 2"));
        }
        if self.values.len() != self.z {
            v.push(Violation::new("values", "|values| = z"));
            return v;
        }
        if self.values.first() != Some(&self.ci_min) {
            v.push(Violation::new("values[0]", "values[0] = ci_min"));
        }
        if self.values.last() != Some(&self.ci_max) {
            v.push(Violation::new("values[z-1]", "values[z-1] = ci_max"));
        }
        if self.z >= 2 {
            let step = self.values[1] - self.values[0];
            for (i, w) in self.values.windows(2).enumerate() {
                if ((w[1] - w[0]) - step).abs() > 1e-9 {
                    v.push(Violation::new(
                        format!("values[{}]", i + 1),
                        "consecutive differences equal within 1e-9",
                    ));
                }
            }
        }
        v
    }
}

// ---------------------------------------------------------------------------
// QoS constraints
// ---------------------------------------------------------------------------

/// User-defined bounds: `l_const` on average end-to-end latency in
/// milliseconds, `r_const` on predicted recovery time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoSConstraints {
    pub l_const: f64,
    pub r_const: f64,
}

impl Validate for QoSConstraints {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !(self.l_const > 0.0) {
            v.push(Violation::new("l_const", "l_const > 0"));
        }
        if !(self.r_const > 0.0) {
            v.push(Violation::new("r_const", "r_const > 0"));
        }
        v
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// One 1 Hz metrics observation from a (simulated) deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsSample {
    pub t: f64,
    pub input_throughput: f64,
    pub consumer_lag: f64,
    pub avg_latency: f64,
}

impl Validate for MetricsSample {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for (path, value) in [
            ("t", self.t),
            ("input_throughput", self.input_throughput),
            ("consumer_lag", self.consumer_lag),
            ("avg_latency", self.avg_latency),
        ] {
            if !value.is_finite() || value < 0.0 {
                v.push(Violation::new(path, "non-negative and finite"));
            }
        }
        v
    }
}

/// Writes a metric series as CSV (`t,input_throughput,consumer_lag,avg_latency`).
pub fn write_metrics_csv(path: &Path, metrics: &[MetricsSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "input_throughput", "consumer_lag", "avg_latency"])?;
    for m in metrics {
        w.write_record([
            m.t.to_string(),
            m.input_throughput.to_string(),
            m.consumer_lag.to_string(),
            m.avg_latency.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Profiling matrix
// ---------------------------------------------------------------------------

/// A profiling cell that produced no usable measurement, and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidCell {
    pub failure_index: usize,
    pub config_index: usize,
    pub reason: String,
}

/// Latency and recovery observations indexed by (failure point, configuration).
///
/// Cells that could not be measured are `None` and carry an entry in
/// `invalid`; they are excluded from model fitting rather than imputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilingMatrix {
    pub latencies: Vec<Vec<Option<f64>>>,
    pub recoveries: Vec<Vec<Option<f64>>>,
    pub grid: ConfigGrid,
    pub plan: FailurePlan,
    #[serde(default)]
    pub invalid: Vec<InvalidCell>,
}

impl ProfilingMatrix {
    /// Flat `(rate, ci, latency, recovery)` rows over valid cells, the
    /// training set for the regression models.
    pub fn flat_rows(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut rows = Vec::new();
        for (i, point) in self.plan.points.iter().enumerate() {
            for (j, ci) in self.grid.values.iter().enumerate() {
                if let (Some(l), Some(r)) = (self.latencies[i][j], self.recoveries[i][j]) {
                    rows.push((point.rate, *ci, l, r));
                }
            }
        }
        rows
    }

    pub fn valid_cells(&self) -> usize {
        self.flat_rows().len()
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        read_json(path)
    }

    /// Writes the flat CSV used for model fitting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["rate", "ci", "latency", "recovery"])?;
        for (rate, ci, latency, recovery) in self.flat_rows() {
            w.write_record([
                rate.to_string(),
                ci.to_string(),
                latency.to_string(),
                recovery.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

impl Validate for ProfilingMatrix {
    fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let m = self.plan.points.len();
        let z = self.grid.values.len();
        for (name, matrix) in [("latencies", &self.latencies), ("recoveries", &self.recoveries)] {
            if matrix.len() != m {
                v.push(Violation::new(name, format!("{m} rows (one per failure)")));
                continue;
            }
            for (i, row) in matrix.iter().enumerate() {
                if row.len() != z {
                    v.push(Violation::new(
                        format!("{name}[{i}]"),
                        format!("{z} columns (one per configuration)"),
                    ));
                    continue;
                }
                for (j, cell) in row.iter().enumerate() {
                    if let Some(x) = cell {
                        if !x.is_finite() || *x < 0.0 {
                            v.push(Violation::new(
                                format!("{name}[{i}][{j}]"),
                                "finite and ≥ 0",
                            ));
                        }
                    }
                }
            }
        }
        v.extend(self.grid.violations());
        v.extend(self.plan.violations());
        v
    }
}

// ---------------------------------------------------------------------------
// JSON helpers
// ---------------------------------------------------------------------------

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let data = std::fs::read(path)?;
    Ok(serde_json::from_slice(&data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_matches_hand_computed_values() {
        let grid = ConfigGrid::new(10.0, 120.0, 5).unwrap();
        assert_eq!(grid.values, vec![10.0, 37.5, 65.0, 92.5, 120.0]);
        assert!(grid.violations().is_empty());
    }

    #[test]
    fn grid_parse_round_trip() {
        let grid = ConfigGrid::parse("10:120:5").unwrap();
        assert_eq!(grid, ConfigGrid::new(10.0, 120.0, 5).unwrap());
        assert!(ConfigGrid::parse("120:10:5").is_err());
        assert!(ConfigGrid::parse("10:120").is_err());
    }

    #[test]
    fn failure_plan_with_single_point_is_rejected() {
        let plan = FailurePlan::new(vec![FailurePoint {
            timestamp: 5,
            rate: 100.0,
        }]);
        let v = plan.violations();
        assert!(v.iter().any(|x| x.path == "m" && x.message.contains("m ≥ 2")));
    }

    #[test]
    fn negative_count_is_flagged() {
        let trace = WorkloadTrace::new(0, vec![3, -1, 2]);
        let v = trace.violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "counts[1]");
        assert!(v[0].message.contains("count ≥ 0"));
    }

    #[test]
    fn trace_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = WorkloadTrace::new(100, vec![5, 0, 12, 7]);
        trace.write_csv(&path).unwrap();
        let back = WorkloadTrace::read_csv(&path).unwrap();
        assert_eq!(trace, back);
    }

    #[test]
    fn trace_csv_rejects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gap.csv");
        std::fs::write(&path, "timestamp,count\n0,5\n2,7\n").unwrap();
        let err = WorkloadTrace::read_csv(&path).unwrap_err();
        assert!(matches!(err, Error::Parameter(_)));
    }

    #[test]
    fn plan_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        let plan = FailurePlan::new(vec![
            FailurePoint {
                timestamp: 10,
                rate: 500.0,
            },
            FailurePoint {
                timestamp: 90,
                rate: 1500.0,
            },
        ]);
        plan.save_json(&path).unwrap();
        assert_eq!(FailurePlan::load_json(&path).unwrap(), plan);
    }

    proptest! {
        #[test]
        fn grid_construction_is_always_equidistant(
            ci_min in 0.1f64..500.0,
            span in 0.5f64..2000.0,
            z in 2usize..40,
        ) {
            let grid = ConfigGrid::new(ci_min, ci_min + span, z).unwrap();
            prop_assert!(grid.violations().is_empty());
        }

        #[test]
        fn profiling_matrix_json_round_trip(
            m in 2usize..5,
            z in 2usize..5,
            seed_val in 0f64..100.0,
        ) {
            let grid = ConfigGrid::new(10.0, 120.0, z).unwrap();
            let plan = FailurePlan::new(
                (0..m)
                    .map(|i| FailurePoint { timestamp: (i as i64) * 100, rate: seed_val + i as f64 })
                    .collect(),
            );
            let matrix = ProfilingMatrix {
                latencies: vec![vec![Some(seed_val); z]; m],
                recoveries: vec![vec![None; z]; m],
                grid,
                plan,
                invalid: vec![],
            };
            let text = serde_json::to_string(&matrix).unwrap();
            let back: ProfilingMatrix = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(matrix, back);
        }
    }
}
