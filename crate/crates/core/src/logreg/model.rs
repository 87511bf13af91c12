//! Logistic regression model, feature mapping, and the clean-data trainer.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::math::{log_sigmoid, sigmoid};

/// Affine map from raw feature values to model inputs.
///
/// Raw values are scaled, optionally shifted by per-dimension offsets, and
/// a constant-1 bias feature is appended. The map travels with the trained
/// model so clean evaluation data goes through the same transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub scale: f64,
    /// Per-dimension offsets subtracted after scaling; empty means none.
    #[serde(default)]
    pub offsets: Vec<f64>,
    pub append_bias: bool,
}

impl FeatureMap {
    pub fn identity() -> Self {
        FeatureMap {
            scale: 1.0,
            offsets: Vec::new(),
            append_bias: true,
        }
    }

    /// Scales raw values by `scale` (e.g. 1/(K-1) for K-state pixels).
    pub fn scaled(scale: f64) -> Self {
        FeatureMap {
            scale,
            offsets: Vec::new(),
            append_bias: true,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        input_dim + usize::from(self.append_bias)
    }

    /// Maps one record into `out`, which must have `output_dim` slots.
    pub fn map_into(&self, raw: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.output_dim(raw.len()));
        if self.offsets.is_empty() {
            for (o, &r) in out.iter_mut().zip(raw) {
                *o = r * self.scale;
            }
        } else {
            debug_assert_eq!(self.offsets.len(), raw.len());
            for ((o, &r), &off) in out.iter_mut().zip(raw).zip(&self.offsets) {
                *o = r * self.scale - off;
            }
        }
        if self.append_bias {
            out[raw.len()] = 1.0;
        }
    }
}

/// p(c = 1 | x) for mapped features.
pub fn predict(weights: &[f64], mapped_features: &[f64]) -> f64 {
    sigmoid(dot(weights, mapped_features))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-datapoint average class log likelihood
/// (1/N) sum_n log sigmoid((2 c_n - 1) w . x_n).
///
/// Only the class term; the input-prior term of the joint model is reported
/// separately by the training trace.
pub fn logistic_loglik(weights: &[f64], data: &LabeledDataset, map: &FeatureMap) -> Result<f64> {
    let d_out = map.output_dim(data.dim());
    if weights.len() != d_out {
        return Err(Error::DimensionMismatch {
            expected: d_out,
            got: weights.len(),
        });
    }
    let mut raw = vec![0.0; data.dim()];
    let mut mapped = vec![0.0; d_out];
    let mut total = 0.0;
    for n in 0..data.num_records() {
        data.copy_record_f64(n, &mut raw);
        map.map_into(&raw, &mut mapped);
        let sign = 2.0 * f64::from(data.labels()[n]) - 1.0;
        total += log_sigmoid(sign * dot(weights, &mapped));
    }
    Ok(total / data.num_records() as f64)
}

/// Full-batch gradient ascent on the logistic log likelihood.
///
/// This is the clean-data reference trainer; feeding it corrupted data
/// gives the naive noisy baseline.
pub fn train_logistic(
    data: &LabeledDataset,
    map: &FeatureMap,
    learning_rate: f64,
    iterations: usize,
) -> Result<LogisticFit> {
    if data.num_records() == 0 {
        return Err(Error::Data("empty training set".into()));
    }
    let d_out = map.output_dim(data.dim());
    let n = data.num_records();
    // Pre-map all features once; full-batch training revisits them often.
    let mut x = vec![0.0; n * d_out];
    let mut raw = vec![0.0; data.dim()];
    for rec in 0..n {
        data.copy_record_f64(rec, &mut raw);
        map.map_into(&raw, &mut x[rec * d_out..(rec + 1) * d_out]);
    }
    let mut w = vec![0.0; d_out];
    let mut grad = vec![0.0; d_out];
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut ll = 0.0;
        for rec in 0..n {
            let xr = &x[rec * d_out..(rec + 1) * d_out];
            let c = f64::from(data.labels()[rec]);
            let z = dot(&w, xr);
            let p = sigmoid(z);
            let sign = 2.0 * c - 1.0;
            ll += log_sigmoid(sign * z);
            let resid = c - p;
            for (g, &xv) in grad.iter_mut().zip(xr) {
                *g += resid * xv;
            }
        }
        let ll = ll / n as f64;
        if !ll.is_finite() {
            return Err(Error::Numerical("logistic log likelihood diverged".into()));
        }
        trace.push(ll);
        for (wv, g) in w.iter_mut().zip(&grad) {
            *wv += learning_rate * g / n as f64;
        }
    }
    let final_loglik = logistic_loglik(&w, data, map)?;
    Ok(LogisticFit {
        weights: w,
        loglik_trace: trace,
        final_loglik,
    })
}

/// Result of [`train_logistic`].
#[derive(Debug, Clone)]
pub struct LogisticFit {
    pub weights: Vec<f64>,
    /// Mean log likelihood before each gradient step.
    pub loglik_trace: Vec<f64>,
    pub final_loglik: f64,
}
