//! Online anomaly detection over deployment metrics, used to measure
//! recovery time as the span of anomalous behavior after a failure.
//!
//! Two channels — input throughput and consumer lag — are watched
//! independently with one online AR model each; the system is anomalous if
//! either channel is. A channel turns anomalous when its one-step
//! prediction error exceeds `mean + threshold_multiplier * stddev` of its
//! recent-error window, and turns normal again only after a run of
//! consecutive sub-threshold samples. While anomalous, the error window is
//! frozen so the anomaly cannot inflate its own threshold.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::arima::OnlineArima;
use crate::domain::MetricsSample;
use crate::error::{Error, Result};

/// Window must hold at least this many errors before anomalies can trigger.
const MIN_WINDOW: usize = 10;
/// Numerical floor on the threshold so exact-zero error windows (an idle
/// lag channel) do not fire on floating-point dust.
const THRESHOLD_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub ar_order: usize,
    pub diff_order: usize,
    pub learning_rate: f64,
    pub threshold_multiplier: f64,
    pub error_window: usize,
    pub consecutive_normal_needed: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            ar_order: 5,
            diff_order: 1,
            learning_rate: 1e-6,
            threshold_multiplier: 4.0,
            error_window: 120,
            consecutive_normal_needed: 30,
        }
    }
}

impl DetectorConfig {
    pub fn min_warmup_samples(&self) -> usize {
        10 * self.ar_order
    }
}

/// A completed anomalous interval on one channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyInterval {
    pub start: f64,
    pub end: f64,
    pub channel: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ChannelStatus {
    Normal,
    Anomalous { since: f64 },
}

#[derive(Debug, Clone)]
struct Channel {
    name: &'static str,
    model: OnlineArima,
    errors: VecDeque<f64>,
    window_cap: usize,
    threshold_multiplier: f64,
    consecutive_normal_needed: usize,
    status: ChannelStatus,
    normal_streak: usize,
    streak_start: f64,
    completed: Vec<(f64, f64)>,
}

/// Per-channel view of one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelObservation {
    pub prediction: Option<f64>,
    pub abs_error: Option<f64>,
    pub anomalous: bool,
}

/// Result of feeding one metrics sample to the detector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub t: f64,
    pub throughput: ChannelObservation,
    pub lag: ChannelObservation,
    pub anomalous: bool,
}

impl Channel {
    fn new(name: &'static str, config: &DetectorConfig) -> Self {
        Self {
            name,
            model: OnlineArima::new(config.ar_order, config.diff_order, config.learning_rate),
            errors: VecDeque::with_capacity(config.error_window),
            window_cap: config.error_window,
            threshold_multiplier: config.threshold_multiplier,
            consecutive_normal_needed: config.consecutive_normal_needed,
            status: ChannelStatus::Normal,
            normal_streak: 0,
            streak_start: 0.0,
            completed: Vec::new(),
        }
    }

    fn threshold(&self) -> Option<f64> {
        if self.errors.len() < MIN_WINDOW {
            return None;
        }
        let n = self.errors.len() as f64;
        let mean: f64 = self.errors.iter().sum::<f64>() / n;
        let var: f64 = self.errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        Some(mean + self.threshold_multiplier * var.sqrt() + THRESHOLD_FLOOR)
    }

    fn push_error(&mut self, e: f64) {
        if self.errors.len() == self.window_cap {
            self.errors.pop_front();
        }
        self.errors.push_back(e);
    }

    fn warm(&mut self, value: f64) {
        if let Some(out) = self.model.advance(value, true) {
            self.push_error(out.abs_error);
        }
    }

    fn step(&mut self, t: f64, value: f64) -> ChannelObservation {
        let prediction = self.model.predict_next();
        let abs_error = prediction.map(|p| ((value - p) / self.model.scale()).abs());
        match self.status {
            ChannelStatus::Normal => {
                let triggered = match (abs_error, self.threshold()) {
                    (Some(e), Some(th)) => e > th,
                    _ => false,
                };
                if triggered {
                    self.status = ChannelStatus::Anomalous { since: t };
                    self.normal_streak = 0;
                    self.model.advance(value, false);
                } else {
                    if let Some(e) = abs_error {
                        self.push_error(e);
                    }
                    self.model.advance(value, true);
                }
            }
            ChannelStatus::Anomalous { since } => {
                let sub_threshold = match (abs_error, self.threshold()) {
                    (Some(e), Some(th)) => e <= th,
                    _ => false,
                };
                if sub_threshold {
                    if self.normal_streak == 0 {
                        self.streak_start = t;
                    }
                    self.normal_streak += 1;
                    if self.normal_streak >= self.consecutive_normal_needed {
                        // The anomaly ended when normal behavior began, not
                        // when it was finally confirmed.
                        self.completed.push((since, self.streak_start));
                        self.status = ChannelStatus::Normal;
                        self.normal_streak = 0;
                    }
                } else {
                    self.normal_streak = 0;
                }
                self.model.advance(value, false);
            }
        }
        ChannelObservation {
            prediction,
            abs_error,
            anomalous: matches!(self.status, ChannelStatus::Anomalous { .. }),
        }
    }

    fn open_since(&self) -> Option<f64> {
        match self.status {
            ChannelStatus::Anomalous { since } => Some(since),
            ChannelStatus::Normal => None,
        }
    }
}

/// Online detector over the two monitored metric channels.
#[derive(Debug, Clone)]
pub struct Detector {
    config: DetectorConfig,
    throughput: Channel,
    lag: Channel,
    warmed: bool,
}

impl Detector {
    pub fn new(config: DetectorConfig) -> Self {
        Self {
            config,
            throughput: Channel::new("input_throughput", &config),
            lag: Channel::new("consumer_lag", &config),
            warmed: false,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn is_warmed(&self) -> bool {
        self.warmed
    }

    /// Trains on a failure-free metric series: channel scales come from the
    /// series means, then coefficients and error windows are fitted by
    /// streaming every sample.
    pub fn warmup(&mut self, normal_metrics: &[MetricsSample]) -> Result<()> {
        let needed = self.config.min_warmup_samples();
        if normal_metrics.len() < needed {
            return Err(Error::InsufficientData {
                needed,
                got: normal_metrics.len(),
            });
        }
        let n = normal_metrics.len() as f64;
        let mean_thr: f64 = normal_metrics.iter().map(|m| m.input_throughput).sum::<f64>() / n;
        let mean_lag: f64 = normal_metrics.iter().map(|m| m.consumer_lag).sum::<f64>() / n;
        self.throughput.model.set_scale(mean_thr);
        self.lag.model.set_scale(mean_lag);
        for m in normal_metrics {
            self.throughput.warm(m.input_throughput);
            self.lag.warm(m.consumer_lag);
        }
        self.warmed = true;
        Ok(())
    }

    /// Feeds one sample; the detector must be warmed up first.
    pub fn observe(&mut self, sample: &MetricsSample) -> Observation {
        debug_assert!(self.warmed, "observe() before warmup()");
        let throughput = self.throughput.step(sample.t, sample.input_throughput);
        let lag = self.lag.step(sample.t, sample.consumer_lag);
        Observation {
            t: sample.t,
            throughput,
            lag,
            anomalous: throughput.anomalous || lag.anomalous,
        }
    }

    /// Completed per-channel anomalous intervals, in start order.
    pub fn closed_intervals(&self) -> Vec<AnomalyInterval> {
        let mut out: Vec<AnomalyInterval> = Vec::new();
        for ch in [&self.throughput, &self.lag] {
            out.extend(ch.completed.iter().map(|(s, e)| AnomalyInterval {
                start: *s,
                end: *e,
                channel: ch.name.to_string(),
            }));
        }
        out.sort_by(|a, b| a.start.partial_cmp(&b.start).unwrap());
        out
    }

    /// System-level anomalous intervals: the union of both channels,
    /// overlaps merged. `None` ends mark intervals still open when the
    /// stream stopped.
    pub fn system_intervals(&self) -> Vec<(f64, Option<f64>)> {
        let mut raw: Vec<(f64, Option<f64>)> = Vec::new();
        for ch in [&self.throughput, &self.lag] {
            raw.extend(ch.completed.iter().map(|(s, e)| (*s, Some(*e))));
            if let Some(s) = ch.open_since() {
                raw.push((s, None));
            }
        }
        raw.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let mut merged: Vec<(f64, Option<f64>)> = Vec::new();
        for (s, e) in raw {
            match merged.last_mut() {
                Some((_, prev_end)) => {
                    let reaches = match prev_end {
                        None => true,
                        Some(pe) => s <= *pe,
                    };
                    if reaches {
                        *prev_end = match (*prev_end, e) {
                            (None, _) | (_, None) => None,
                            (Some(a), Some(b)) => Some(a.max(b)),
                        };
                    } else {
                        merged.push((s, e));
                    }
                }
                None => merged.push((s, e)),
            }
        }
        merged
    }
}

/// Measures recovery time for a failure at `failure_time` by streaming
/// `metrics` through a clone of a warmed detector and taking the length of
/// the first system-level anomalous interval that begins within
/// `[failure_time, failure_time + grace]`.
pub fn measure_recovery(
    detector: &Detector,
    metrics: &[MetricsSample],
    failure_time: f64,
    grace: f64,
) -> Result<f64> {
    let mut d = detector.clone();
    for m in metrics {
        d.observe(m);
    }
    for (start, end) in d.system_intervals() {
        if start >= failure_time && start <= failure_time + grace {
            return match end {
                Some(e) => Ok(e - start.max(failure_time)),
                None => Err(Error::UnresolvedAnomaly { start }),
            };
        }
    }
    Err(Error::DetectionMiss { failure_time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline_sim::{run, InjectionPlan, PipelineSpec};
    use crate::workload::{generate_trace, TraceKind};
    use crate::domain::WorkloadTrace;

    fn constant_metrics(n: usize, throughput: f64, lag: f64) -> Vec<MetricsSample> {
        (0..n)
            .map(|i| MetricsSample {
                t: i as f64,
                input_throughput: throughput,
                consumer_lag: lag,
                avg_latency: 200.0,
            })
            .collect()
    }

    #[test]
    fn warmup_requires_enough_samples() {
        let mut d = Detector::new(DetectorConfig::default());
        let err = d.warmup(&constant_metrics(10, 100.0, 0.0)).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { needed: 50, .. }));
    }

    #[test]
    fn constant_series_converges_to_zero_error() {
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&constant_metrics(200, 1000.0, 0.0)).unwrap();
        let obs = d.observe(&MetricsSample {
            t: 200.0,
            input_throughput: 1000.0,
            consumer_lag: 0.0,
            avg_latency: 200.0,
        });
        assert!(obs.throughput.abs_error.unwrap() < 1e-9);
        assert!(obs.lag.abs_error.unwrap() < 1e-9);
        assert!(!obs.anomalous);
    }

    #[test]
    fn warmup_is_deterministic() {
        let series = constant_metrics(300, 800.0, 2.0);
        let mut a = Detector::new(DetectorConfig::default());
        let mut b = Detector::new(DetectorConfig::default());
        a.warmup(&series).unwrap();
        b.warmup(&series).unwrap();
        assert_eq!(a.throughput.model.weights(), b.throughput.model.weights());
        assert_eq!(a.lag.model.weights(), b.lag.model.weights());
        assert_eq!(a.throughput.errors, b.throughput.errors);
    }

    #[test]
    fn sample_equal_to_prediction_keeps_status() {
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&constant_metrics(100, 500.0, 0.0)).unwrap();
        let obs = d.observe(&MetricsSample {
            t: 100.0,
            input_throughput: 500.0,
            consumer_lag: 0.0,
            avg_latency: 200.0,
        });
        assert_eq!(obs.throughput.abs_error.unwrap(), 0.0);
        assert!(!obs.anomalous);
    }

    #[test]
    fn large_lag_step_flips_to_anomalous() {
        let mut d = Detector::new(DetectorConfig::default());
        // Mild jitter so the error window has nonzero spread.
        let series: Vec<MetricsSample> = (0..300)
            .map(|i| MetricsSample {
                t: i as f64,
                input_throughput: 1000.0 + (i % 7) as f64,
                consumer_lag: 5.0 + ((i % 3) as f64) * 0.5,
                avg_latency: 200.0,
            })
            .collect();
        d.warmup(&series).unwrap();
        let obs = d.observe(&MetricsSample {
            t: 300.0,
            input_throughput: 1000.0,
            consumer_lag: 50_000.0,
            avg_latency: 200.0,
        });
        assert!(obs.lag.anomalous);
        assert!(obs.anomalous);
    }

    fn failure_free_and_injected_runs(
        rate: f64,
        ci: f64,
        injection_nominal: f64,
        duration: usize,
    ) -> (crate::pipeline_sim::SimRun, crate::pipeline_sim::SimRun) {
        let spec = PipelineSpec::for_peak_rate(rate);
        let trace = WorkloadTrace::new(0, vec![rate as i64; duration]);
        let clean = run(&spec, &trace, ci, InjectionPlan::none(), vec![], 7).unwrap();
        let injected = run(
            &spec,
            &trace,
            ci,
            InjectionPlan::worst_case(vec![injection_nominal], 1.0),
            vec![],
            7,
        )
        .unwrap();
        (clean, injected)
    }

    #[test]
    fn self_consistency_no_anomalies_on_the_training_run() {
        let (clean, _) = failure_free_and_injected_runs(1000.0, 60.0, 300.0, 1200);
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&clean.metrics).unwrap();
        for m in &clean.metrics {
            let obs = d.observe(m);
            assert!(!obs.anomalous, "false anomaly at t={}", m.t);
        }
        assert!(d.system_intervals().is_empty());
    }

    #[test]
    fn one_injection_yields_exactly_one_interval() {
        let (clean, injected) = failure_free_and_injected_runs(1000.0, 60.0, 300.0, 1200);
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&clean.metrics).unwrap();
        for m in &injected.metrics {
            d.observe(m);
        }
        let intervals = d.system_intervals();
        assert_eq!(intervals.len(), 1, "intervals: {intervals:?}");
        assert!(intervals[0].1.is_some());
    }

    #[test]
    fn measured_recovery_tracks_ground_truth_within_fifteen_percent() {
        let (clean, injected) = failure_free_and_injected_runs(1000.0, 60.0, 300.0, 1200);
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&clean.metrics).unwrap();
        let spec = PipelineSpec::for_peak_rate(1000.0);
        let failure_time = injected.injection_times()[0];
        let measured =
            measure_recovery(&d, &injected.metrics, failure_time, 2.0 * spec.detection_timeout)
                .unwrap();
        let truth = injected.recovery_spans()[0].duration().unwrap();
        assert!(
            (measured - truth).abs() / truth <= 0.15,
            "measured {measured}, truth {truth}"
        );
    }

    #[test]
    fn failure_free_metrics_report_a_detection_miss() {
        let (clean, _) = failure_free_and_injected_runs(1000.0, 60.0, 300.0, 1200);
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&clean.metrics).unwrap();
        let err = measure_recovery(&d, &clean.metrics, 300.0, 100.0).unwrap_err();
        assert!(matches!(err, Error::DetectionMiss { .. }));
    }

    #[test]
    fn two_distant_injections_measure_independently() {
        let rate = 1000.0;
        let spec = PipelineSpec::for_peak_rate(rate);
        let trace = WorkloadTrace::new(0, vec![rate as i64; 2400]);
        let clean = run(&spec, &trace, 60.0, InjectionPlan::none(), vec![], 7).unwrap();
        let injected = run(
            &spec,
            &trace,
            60.0,
            InjectionPlan::worst_case(vec![400.0, 1500.0], 1.0),
            vec![],
            7,
        )
        .unwrap();
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&clean.metrics).unwrap();
        let times = injected.injection_times();
        assert_eq!(times.len(), 2);
        let grace = 2.0 * spec.detection_timeout;
        let r1 = measure_recovery(&d, &injected.metrics, times[0], grace).unwrap();
        let r2 = measure_recovery(&d, &injected.metrics, times[1], grace).unwrap();
        let truths = injected.recovery_spans();
        let t1 = truths[0].duration().unwrap();
        let t2 = truths[1].duration().unwrap();
        assert!((r1 - t1).abs() / t1 <= 0.15, "r1 {r1} vs {t1}");
        assert!((r2 - t2).abs() / t2 <= 0.15, "r2 {r2} vs {t2}");
    }

    #[test]
    fn no_false_anomalies_over_a_failure_free_day() {
        let trace = generate_trace(TraceKind::Diurnal, 86_400, 1000.0, 500.0, 13).unwrap();
        let spec = PipelineSpec::for_peak_rate(trace.peak_rate());
        let day = run(&spec, &trace, 60.0, InjectionPlan::none(), vec![], 13).unwrap();
        let mut d = Detector::new(DetectorConfig::default());
        d.warmup(&day.metrics[..3600]).unwrap();
        for m in &day.metrics[3600..] {
            d.observe(m);
        }
        let intervals = d.system_intervals();
        assert!(
            intervals.len() <= 1,
            "{} false anomalies: {intervals:?}",
            intervals.len()
        );
    }
}
