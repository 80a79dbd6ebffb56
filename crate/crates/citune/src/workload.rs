//! Workload recording and analysis: trace generation, smoothing, and
//! failure-point extraction across the observed throughput range.

use std::str::FromStr;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{FailurePlan, FailurePoint, WorkloadTrace};
use crate::error::{Error, Result};

/// Default centered smoothing window in seconds. Wide enough to swallow
/// per-second jitter, narrow enough to track diurnal shape.
pub const DEFAULT_SMOOTHING_WINDOW: usize = 61;

/// Synthetic workload shapes standing in for recorded production streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    /// Two full sine cycles across the duration.
    Sinusoidal,
    /// A compressed multi-day pattern: seven cycles with per-cycle peak
    /// variability, mimicking day-to-day differences in real streams.
    Diurnal,
    /// Bounded random walk reflected at `base ± amplitude`.
    RandomWalk,
    Constant,
}

impl FromStr for TraceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoidal" => Ok(Self::Sinusoidal),
            "diurnal" => Ok(Self::Diurnal),
            "random-walk" => Ok(Self::RandomWalk),
            "constant" => Ok(Self::Constant),
            other => Err(Error::Parameter(format!(
                "unknown trace kind '{other}' (expected sinusoidal|diurnal|random-walk|constant)"
            ))),
        }
    }
}

/// Generates a deterministic synthetic trace starting at timestamp 0.
///
/// For the bounded kinds (sinusoidal, diurnal) every count lies within
/// `[base_rate - amplitude, base_rate + amplitude]`.
pub fn generate_trace(
    kind: TraceKind,
    duration_k: usize,
    base_rate: f64,
    amplitude: f64,
    seed: u64,
) -> Result<WorkloadTrace> {
    if duration_k < 2 {
        return Err(Error::Parameter(format!(
            "duration_k must be ≥ 2, got {duration_k}"
        )));
    }
    if amplitude < 0.0 {
        return Err(Error::Parameter("amplitude must be ≥ 0".into()));
    }
    if matches!(kind, TraceKind::Sinusoidal | TraceKind::Diurnal) && base_rate < amplitude {
        return Err(Error::Parameter(format!(
            "bounded kinds need base_rate ≥ amplitude, got {base_rate} < {amplitude}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = (base_rate - amplitude).max(0.0);
    let hi = base_rate + amplitude;
    // Short-term burstiness rides on a slow bounded walk rather than
    // independent per-second draws: arrival jitter in real streams is
    // correlated, and the deterministic shape keeps 4% headroom for it so
    // the amplitude bound never truncates.
    const JITTER_FRACTION: f64 = 0.04;
    let mut jitter_walk = JitterWalk::new(JITTER_FRACTION * amplitude);

    let counts: Vec<i64> = match kind {
        TraceKind::Constant => {
            vec![base_rate.round() as i64; duration_k]
        }
        TraceKind::Sinusoidal => {
            let period = duration_k as f64 / 2.0;
            (0..duration_k)
                .map(|t| {
                    let phase = 2.0 * std::f64::consts::PI * t as f64 / period;
                    let shape = (1.0 - JITTER_FRACTION) * amplitude * phase.sin();
                    clamp_count(base_rate + shape + jitter_walk.step(&mut rng), lo, hi)
                })
                .collect()
        }
        TraceKind::Diurnal => {
            let cycles = 7usize;
            let period = duration_k as f64 / cycles as f64;
            // Per-cycle peak factor: real streams rarely hit the same peak
            // every day, and the spread gives the failure-point extraction
            // distinct throughput levels across the whole recording. The
            // factor is interpolated across the cycle so the rate stays
            // continuous at cycle boundaries.
            let cycle_amp: Vec<f64> = (0..cycles + 2)
                .map(|_| (1.0 - JITTER_FRACTION) * amplitude * (0.55 + 0.45 * rng.gen_range(0.0..=1.0)))
                .collect();
            (0..duration_k)
                .map(|t| {
                    let cycle = (((t as f64) / period) as usize).min(cycles);
                    let phase = (t as f64 - cycle as f64 * period) / period;
                    let arg = 2.0 * std::f64::consts::PI * (phase - 0.25);
                    let shape = 0.8 * arg.sin() + 0.2 * (2.0 * arg + 1.3).sin();
                    let amp = cycle_amp[cycle] * (1.0 - phase) + cycle_amp[cycle + 1] * phase;
                    clamp_count(base_rate + amp * shape + jitter_walk.step(&mut rng), lo, hi)
                })
                .collect()
        }
        TraceKind::RandomWalk => {
            let step = (amplitude / 100.0).max(1.0);
            let mut level = base_rate;
            (0..duration_k)
                .map(|_| {
                    level += rng.gen_range(-step..=step);
                    if level > hi {
                        level = hi - (level - hi);
                    }
                    if level < lo {
                        level = lo + (lo - level);
                    }
                    level = level.clamp(lo, hi);
                    clamp_count(level, lo, hi)
                })
                .collect()
        }
    };
    Ok(WorkloadTrace::new(0, counts))
}

fn clamp_count(x: f64, lo: f64, hi: f64) -> i64 {
    x.clamp(lo, hi).round().max(0.0) as i64
}

/// Bounded random walk in `[-limit, limit]`, reflected at the edges.
struct JitterWalk {
    limit: f64,
    step_size: f64,
    level: f64,
}

impl JitterWalk {
    fn new(limit: f64) -> Self {
        Self {
            limit,
            step_size: limit / 8.0,
            level: 0.0,
        }
    }

    fn step(&mut self, rng: &mut ChaCha8Rng) -> f64 {
        if self.limit <= 0.0 {
            return 0.0;
        }
        self.level += rng.gen_range(-self.step_size..=self.step_size);
        if self.level > self.limit {
            self.level = 2.0 * self.limit - self.level;
        }
        if self.level < -self.limit {
            self.level = -2.0 * self.limit - self.level;
        }
        self.level
    }
}

// ---------------------------------------------------------------------------
// Smoothing
// ---------------------------------------------------------------------------

/// A workload trace smoothed with a centered moving average; boundary
/// windows are truncated to the samples that exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothedWorkload {
    pub source: WorkloadTrace,
    pub window_w: usize,
    pub values: Vec<f64>,
}

impl SmoothedWorkload {
    /// Smoothed rate at an absolute timestamp.
    pub fn value_at(&self, t: i64) -> f64 {
        let idx = (t - self.source.start_time).clamp(0, self.values.len() as i64 - 1);
        self.values[idx as usize]
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Earliest timestamp attaining the minimum smoothed value.
    pub fn argmin_time(&self) -> i64 {
        self.arg_time(|a, b| a < b)
    }

    /// Earliest timestamp attaining the maximum smoothed value.
    pub fn argmax_time(&self) -> i64 {
        self.arg_time(|a, b| a > b)
    }

    fn arg_time(&self, better: impl Fn(f64, f64) -> bool) -> i64 {
        let mut best = 0usize;
        for (i, v) in self.values.iter().enumerate() {
            if better(*v, self.values[best]) {
                best = i;
            }
        }
        self.source.start_time + best as i64
    }
}

/// Centered moving average over an odd window of `window_w` seconds.
pub fn smooth(trace: &WorkloadTrace, window_w: usize) -> Result<SmoothedWorkload> {
    let k = trace.duration_k();
    if window_w % 2 == 0 {
        return Err(Error::Parameter(format!(
            "smoothing window must be odd, got {window_w}"
        )));
    }
    if window_w < 1 || window_w > k {
        return Err(Error::Parameter(format!(
            "smoothing window must satisfy 1 ≤ w ≤ duration_k ({k}), got {window_w}"
        )));
    }
    let half = window_w / 2;
    let mut prefix = vec![0i64; k + 1];
    for (i, c) in trace.counts.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    let values = (0..k)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(k - 1);
            (prefix[hi + 1] - prefix[lo]) as f64 / (hi + 1 - lo) as f64
        })
        .collect();
    Ok(SmoothedWorkload {
        source: trace.clone(),
        window_w,
        values,
    })
}

// ---------------------------------------------------------------------------
// Failure point extraction
// ---------------------------------------------------------------------------

/// How the `m` failure points are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtractionMode {
    /// Target `m` equidistant throughput rates between the smoothed minimum
    /// and maximum, picking for each the earliest timestamp whose smoothed
    /// value is nearest. Default: profiling coverage of the rate axis is
    /// what the downstream models interpolate over.
    RateEquidistant,
    /// Timestamps equidistant between the argmin and argmax times, with
    /// integer spacing `h = floor((t_max - t_min) / (m - 1))` and the final
    /// point forced to `t_max`.
    TimeEquidistant,
}

impl FromStr for ExtractionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rate" | "rate-equidistant" => Ok(Self::RateEquidistant),
            "time" | "time-equidistant" => Ok(Self::TimeEquidistant),
            other => Err(Error::Parameter(format!(
                "unknown extraction mode '{other}' (expected rate|time)"
            ))),
        }
    }
}

/// Selects `m` failure points from a smoothed workload.
pub fn extract_failure_points(
    sw: &SmoothedWorkload,
    m: usize,
    mode: ExtractionMode,
) -> Result<FailurePlan> {
    extract_failure_points_spaced(sw, m, mode, 1)
}

/// Like [`extract_failure_points`], but in rate-equidistant mode rejects
/// candidates closer than `min_separation` seconds to an already chosen
/// point, retrying with the next-nearest value. A separation of 1 is the
/// plain duplicate-timestamp rule; larger values keep injections far
/// enough apart that their recoveries cannot overlap during profiling.
pub fn extract_failure_points_spaced(
    sw: &SmoothedWorkload,
    m: usize,
    mode: ExtractionMode,
    min_separation: i64,
) -> Result<FailurePlan> {
    if m < 2 {
        return Err(Error::Parameter(format!("m must be ≥ 2, got {m}")));
    }
    if m > sw.values.len() {
        return Err(Error::Parameter(format!(
            "m = {m} exceeds the number of available timestamps ({})",
            sw.values.len()
        )));
    }
    if min_separation < 1 {
        return Err(Error::Parameter(format!(
            "min_separation must be ≥ 1, got {min_separation}"
        )));
    }
    match mode {
        ExtractionMode::RateEquidistant => extract_rate_equidistant(sw, m, min_separation),
        ExtractionMode::TimeEquidistant => extract_time_equidistant(sw, m),
    }
}

fn extract_rate_equidistant(
    sw: &SmoothedWorkload,
    m: usize,
    min_separation: i64,
) -> Result<FailurePlan> {
    let min = sw.min_value();
    let max = sw.max_value();
    if (max - min).abs() < f64::EPSILON && m > 2 {
        return Err(Error::DegenerateWorkload(format!(
            "constant smoothed workload cannot yield {m} distinct rate targets"
        )));
    }
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        let target = min + (max - min) * i as f64 / (m - 1) as f64;
        // Nearest admissible timestamp by smoothed value; ties go to the
        // earliest, conflicts retry with the next-nearest candidate.
        let mut best: Option<(f64, usize)> = None;
        for (idx, v) in sw.values.iter().enumerate() {
            let conflict = chosen
                .iter()
                .any(|c| (idx as i64 - *c as i64).abs() < min_separation);
            if conflict {
                continue;
            }
            let d = (v - target).abs();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, idx));
            }
        }
        let (_, idx) = best.ok_or_else(|| {
            Error::DegenerateWorkload(format!(
                "no admissible timestamp left for rate target {target:.1} at separation {min_separation}"
            ))
        })?;
        chosen.push(idx);
    }
    chosen.sort_unstable();
    Ok(FailurePlan::new(
        chosen
            .into_iter()
            .map(|idx| FailurePoint {
                timestamp: sw.source.start_time + idx as i64,
                rate: sw.values[idx],
            })
            .collect(),
    ))
}

fn extract_time_equidistant(sw: &SmoothedWorkload, m: usize) -> Result<FailurePlan> {
    let t_min = sw.argmin_time();
    let t_max = sw.argmax_time();
    let h = (t_max - t_min).div_euclid(m as i64 - 1);
    if h == 0 {
        return Err(Error::DegenerateWorkload(format!(
            "argmin and argmax are only {} s apart, too close for {m} distinct timestamps",
            (t_max - t_min).abs()
        )));
    }
    let mut times: Vec<i64> = (0..m as i64).map(|i| t_min + i * h).collect();
    *times.last_mut().expect("m ≥ 2") = t_max;
    times.sort_unstable();
    Ok(FailurePlan::new(
        times
            .into_iter()
            .map(|t| FailurePoint {
                timestamp: t,
                rate: sw.value_at(t),
            })
            .collect(),
    ))
}
