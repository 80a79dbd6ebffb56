//! Online autoregressive prediction with optional differencing, shared by
//! the anomaly detector and the workload forecaster.
//!
//! The model predicts the next value of a 1 Hz series from the last
//! `ar_order` (differenced) values and refines its weights by a small
//! gradient step on the one-step-ahead squared error. Weights start at the
//! persistence predictor: with differencing the initial prediction is the
//! previous value, matching an idealized identity predictor.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// One-step prediction produced before a new observation was absorbed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    /// Predicted raw value for the observation just seen.
    pub predicted: f64,
    /// Absolute prediction error on the normalized scale.
    pub abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineArima {
    ar_order: usize,
    diff_order: usize,
    learning_rate: f64,
    weights: Vec<f64>,
    /// Trailing normalized levels, newest last.
    history: VecDeque<f64>,
    scale: f64,
    observed: usize,
}

impl OnlineArima {
    /// `diff_order` must be 0 or 1.
    pub fn new(ar_order: usize, diff_order: usize, learning_rate: f64) -> Self {
        assert!(ar_order >= 1, "ar_order ≥ 1");
        assert!(diff_order <= 1, "diff_order ∈ {{0, 1}}");
        let mut weights = vec![0.0; ar_order];
        if diff_order == 0 {
            weights[0] = 1.0;
        }
        Self {
            ar_order,
            diff_order,
            learning_rate,
            weights,
            history: VecDeque::with_capacity(ar_order + 2),
            scale: 1.0,
            observed: 0,
        }
    }

    pub fn ar_order(&self) -> usize {
        self.ar_order
    }

    pub fn observed(&self) -> usize {
        self.observed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sets the normalization scale; meant to be the warmup mean, floored
    /// at 1 so near-zero channels stay on their raw scale.
    pub fn set_scale(&mut self, scale: f64) {
        self.scale = scale.abs().max(1.0);
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    fn lagged_inputs(&self) -> Option<Vec<f64>> {
        let needed = self.ar_order + self.diff_order;
        if self.history.len() < needed {
            return None;
        }
        let h = &self.history;
        let n = h.len();
        let inputs = (0..self.ar_order)
            .map(|i| {
                if self.diff_order == 1 {
                    h[n - 1 - i] - h[n - 2 - i]
                } else {
                    h[n - 1 - i]
                }
            })
            .collect();
        Some(inputs)
    }

    /// Predicted next normalized level, if enough history exists.
    fn predict_normalized(&self) -> Option<f64> {
        let inputs = self.lagged_inputs()?;
        let dot: f64 = self
            .weights
            .iter()
            .zip(inputs.iter())
            .map(|(w, x)| w * x)
            .sum();
        Some(if self.diff_order == 1 {
            self.history.back().unwrap() + dot
        } else {
            dot
        })
    }

    /// Predicted next raw value.
    pub fn predict_next(&self) -> Option<f64> {
        self.predict_normalized().map(|v| v * self.scale)
    }

    /// Absorbs an observation. Returns the prediction that was made for it
    /// (once warm). `adapt` gates the weight update so a caller can freeze
    /// the model while the series is anomalous.
    pub fn advance(&mut self, raw: f64, adapt: bool) -> Option<StepOutput> {
        let normalized = raw / self.scale;
        let output = self.predict_normalized().map(|pred| {
            let err = normalized - pred;
            if adapt {
                if let Some(inputs) = self.lagged_inputs() {
                    for (w, x) in self.weights.iter_mut().zip(inputs.iter()) {
                        *w += 2.0 * self.learning_rate * err * x;
                    }
                }
            }
            StepOutput {
                predicted: pred * self.scale,
                abs_error: err.abs(),
            }
        });
        self.history.push_back(normalized);
        if self.history.len() > self.ar_order + 2 {
            self.history.pop_front();
        }
        self.observed += 1;
        output
    }

    /// Iterated multi-step forecast: each predicted value is fed back as if
    /// observed, without weight updates. Empty when the model is cold.
    pub fn forecast(&self, horizon: usize) -> Vec<f64> {
        let mut clone = self.clone();
        let mut out = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            match clone.predict_normalized() {
                Some(pred) => {
                    out.push(pred * clone.scale);
                    clone.history.push_back(pred);
                    if clone.history.len() > clone.ar_order + 2 {
                        clone.history.pop_front();
                    }
                }
                None => return Vec::new(),
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn persistence_is_the_initial_predictor() {
        let mut m = OnlineArima::new(5, 1, 1e-6);
        for x in [10.0, 10.0, 12.0, 14.0, 13.0, 15.0, 16.0] {
            m.advance(x, true);
        }
        // Differenced weights start near zero, so the prediction tracks the
        // last observed value closely.
        let pred = m.predict_next().unwrap();
        assert!((pred - 16.0).abs() < 0.1, "pred {pred}");
    }

    #[test]
    fn constant_series_predicts_the_constant_exactly() {
        let mut m = OnlineArima::new(5, 1, 1e-6);
        m.set_scale(42.0);
        let mut last = None;
        for _ in 0..50 {
            last = m.advance(42.0, true);
        }
        let out = last.unwrap();
        assert_relative_eq!(out.predicted, 42.0);
        assert_relative_eq!(out.abs_error, 0.0);
        let fc = m.forecast(10);
        assert_eq!(fc.len(), 10);
        for v in fc {
            assert_relative_eq!(v, 42.0);
        }
    }

    #[test]
    fn differenced_forecast_continues_a_ramp_monotonically() {
        let mut m = OnlineArima::new(3, 1, 1e-3);
        for i in 0..200 {
            m.advance(100.0 + i as f64, true);
        }
        let fc = m.forecast(20);
        assert!(fc[0] > 295.0);
        for w in fc.windows(2) {
            assert!(w[1] >= w[0], "forecast not monotone: {fc:?}");
        }
    }

    #[test]
    fn unit_coefficient_ar1_is_identity_prediction() {
        let mut m = OnlineArima::new(1, 0, 0.0);
        m.advance(7.0, true);
        assert_relative_eq!(m.predict_next().unwrap(), 7.0);
    }
}
