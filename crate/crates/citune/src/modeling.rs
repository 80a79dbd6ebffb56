//! Regression models mapping (checkpoint interval, throughput rate) to
//! latency or recovery time, the prediction rescaling state, and the
//! input-rate forecaster.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arima::OnlineArima;
use crate::domain::{read_json, write_json};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTarget {
    Latency,
    Recovery,
}

impl std::str::FromStr for ModelTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latency" => Ok(Self::Latency),
            "recovery" => Ok(Self::Recovery),
            other => Err(Error::Parameter(format!(
                "unknown model target '{other}' (expected latency|recovery)"
            ))),
        }
    }
}

/// Z-score transform fitted on the training inputs; coefficients live in
/// the standardized space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub ci_mean: f64,
    pub ci_std: f64,
    pub tr_mean: f64,
    pub tr_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub samples: usize,
    pub residual_rmse: f64,
}

/// Polynomial regression over standardized (ci, tr).
///
/// Degree 1 uses features {1, ci, tr}; degree 2 adds {ci², tr², ci·tr}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub target: ModelTarget,
    pub degree: usize,
    pub coefficients: Vec<f64>,
    pub standardization: Standardization,
    pub training_summary: TrainingSummary,
}

/// A model output; negative raw values are clamped to zero and flagged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: f64,
    pub clamped: bool,
}

const FEATURE_NAMES: [&str; 6] = ["1", "ci", "tr", "ci^2", "tr^2", "ci*tr"];

fn feature_count(degree: usize) -> usize {
    match degree {
        1 => 3,
        _ => 6,
    }
}

fn features(degree: usize, ci: f64, tr: f64) -> Vec<f64> {
    let mut f = vec![1.0, ci, tr];
    if degree == 2 {
        f.extend([ci * ci, tr * tr, ci * tr]);
    }
    f
}

/// Least-squares fit of `value ~ poly(ci, tr)` on `(ci, tr, value)` samples.
pub fn fit(samples: &[(f64, f64, f64)], target: ModelTarget, degree: usize) -> Result<RegressionModel> {
    if !(degree == 1 || degree == 2) {
        return Err(Error::Parameter(format!("degree must be 1 or 2, got {degree}")));
    }
    let p = feature_count(degree);
    if samples.len() < 2 * p {
        return Err(Error::InsufficientData {
            needed: 2 * p,
            got: samples.len(),
        });
    }
    for (ci, tr, value) in samples {
        if !(value.is_finite() && *value >= 0.0) || !ci.is_finite() || !tr.is_finite() {
            return Err(Error::Parameter(format!(
                "training sample (ci={ci}, tr={tr}, value={value}) is not finite and ≥ 0"
            )));
        }
    }
    let n = samples.len();
    let nf = n as f64;
    let ci_mean = samples.iter().map(|s| s.0).sum::<f64>() / nf;
    let tr_mean = samples.iter().map(|s| s.1).sum::<f64>() / nf;
    let ci_std = (samples.iter().map(|s| (s.0 - ci_mean).powi(2)).sum::<f64>() / nf).sqrt();
    let tr_std = (samples.iter().map(|s| (s.1 - tr_mean).powi(2)).sum::<f64>() / nf).sqrt();
    if ci_std < 1e-12 {
        return Err(Error::DegenerateFit { feature: "ci".into() });
    }
    if tr_std < 1e-12 {
        return Err(Error::DegenerateFit { feature: "tr".into() });
    }
    let standardization = Standardization {
        ci_mean,
        ci_std,
        tr_mean,
        tr_std,
    };

    let x = DMatrix::from_fn(n, p, |r, c| {
        let (ci, tr, _) = samples[r];
        features(
            degree,
            (ci - ci_mean) / ci_std,
            (tr - tr_mean) / tr_std,
        )[c]
    });
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.2));

    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * 1e-9;
    let rank = svd.singular_values.iter().filter(|s| **s > tol).count();
    if rank < p {
        // Name the feature dominating the first null direction.
        let v_t = svd.v_t.as_ref().expect("v_t requested");
        let null_row = v_t.row(rank);
        let worst = (0..p)
            .max_by(|a, b| null_row[*a].abs().partial_cmp(&null_row[*b].abs()).unwrap())
            .unwrap();
        return Err(Error::DegenerateFit {
            feature: FEATURE_NAMES[worst].into(),
        });
    }
    let coeffs = svd
        .solve(&y, tol)
        .map_err(|e| Error::Parameter(format!("least-squares solve failed: {e}")))?;
    let residual = (&x * &coeffs - &y).norm() / nf.sqrt();
    Ok(RegressionModel {
        target,
        degree,
        coefficients: coeffs.iter().copied().collect(),
        standardization,
        training_summary: TrainingSummary {
            samples: n,
            residual_rmse: residual,
        },
    })
}

impl RegressionModel {
    pub fn predict(&self, ci: f64, tr: f64) -> Prediction {
        let s = &self.standardization;
        let f = features(
            self.degree,
            (ci - s.ci_mean) / s.ci_std,
            (tr - s.tr_mean) / s.tr_std,
        );
        let raw: f64 = self
            .coefficients
            .iter()
            .zip(f.iter())
            .map(|(c, x)| c * x)
            .sum();
        Prediction {
            value: raw.max(0.0),
            clamped: raw < 0.0,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Mean absolute percent error, excluding zero-valued actuals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApeOutcome {
    pub value: f64,
    pub excluded_zero_actuals: usize,
}

pub fn avg_percent_error(
    model: &RegressionModel,
    observations: &[(f64, f64, f64)],
) -> Result<ApeOutcome> {
    if observations.is_empty() {
        return Err(Error::Parameter("no observations".into()));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut excluded = 0usize;
    for (ci, tr, actual) in observations {
        if *actual <= 0.0 {
            excluded += 1;
            continue;
        }
        let pred = model.predict(*ci, *tr).value;
        sum += (pred - actual).abs() / actual;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Parameter(
            "all observations had zero actual values".into(),
        ));
    }
    Ok(ApeOutcome {
        value: sum / used as f64,
        excluded_zero_actuals: excluded,
    })
}

// ---------------------------------------------------------------------------
// Prediction rescaling
// ---------------------------------------------------------------------------

/// Rolling window of (observed, predicted) latency pairs from the last
/// optimization cycles; `p` is the mean observed/predicted ratio used to
/// rescale model predictions toward current conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleState {
    pub rescale_window_k: usize,
    history: VecDeque<(f64, f64)>,
    p: f64,
}

impl RescaleState {
    pub fn new(rescale_window_k: usize) -> Self {
        Self {
            rescale_window_k: rescale_window_k.max(1),
            history: VecDeque::new(),
            p: 1.0,
        }
    }

    /// Pushes one pair and returns the refreshed factor.
    pub fn update(&mut self, observed_latency: f64, predicted_latency: f64) -> Result<f64> {
        if !(predicted_latency > 0.0) {
            return Err(Error::Parameter(format!(
                "predicted latency must be > 0, got {predicted_latency}"
            )));
        }
        if self.history.len() == self.rescale_window_k {
            self.history.pop_front();
        }
        self.history.push_back((observed_latency, predicted_latency));
        self.p = self
            .history
            .iter()
            .map(|(o, pred)| o / pred)
            .sum::<f64>()
            / self.history.len() as f64;
        Ok(self.p)
    }

    /// Neutral factor 1 while the history is empty.
    pub fn p(&self) -> f64 {
        if self.history.is_empty() {
            1.0
        } else {
            self.p
        }
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

// ---------------------------------------------------------------------------
// Input-rate forecasting
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecastConfig {
    pub ar_order: usize,
    pub diff_order: usize,
    pub learning_rate: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            ar_order: 5,
            diff_order: 1,
            learning_rate: 1e-6,
        }
    }
}

/// Single-channel online model of the incoming message rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    model: OnlineArima,
    pub horizon: usize,
}

impl ForecastModel {
    pub fn new(config: ForecastConfig, horizon: usize) -> Self {
        Self {
            model: OnlineArima::new(config.ar_order, config.diff_order, config.learning_rate),
            horizon: horizon.max(1),
        }
    }

    pub fn observe_rate(&mut self, rate: f64) {
        self.model.advance(rate, true);
    }

    pub fn is_warm(&self) -> bool {
        self.model.observed() >= 10 * self.model.ar_order()
    }

    /// Iterated multi-step forecast of the input rate.
    pub fn forecast(&self, horizon: usize) -> Result<Vec<f64>> {
        if !self.is_warm() {
            return Err(Error::InsufficientData {
                needed: 10 * self.model.ar_order(),
                got: self.model.observed(),
            });
        }
        let out = self.model.forecast(horizon.max(1));
        debug_assert!(!out.is_empty());
        Ok(out)
    }
}
