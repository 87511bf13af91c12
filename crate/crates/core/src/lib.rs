//! Privacy-preserving machine learning from randomised-response data.
//!
//! Data owners release exactly one corrupted copy of each record through a
//! known spread-noise channel; the learner maximizes the likelihood of the
//! corrupted observations under the corrupted model, which recovers a
//! consistent estimate of the clean-data model. The crate covers:
//!
//! - [`channels`]: corruption mechanisms, spread-noise validity checks, and
//!   the multi-release posterior-concentration attack they guard against;
//! - [`estimators`]: the closed-form voting correction and the K-state
//!   simplex EM for corrupted count data;
//! - [`logreg`]: private logistic regression trained by importance-sampled
//!   EM over corrupted labels and inputs, with learnable discrete priors;
//! - [`baselines`]: naive training on noisy data, the biased reconstruction
//!   approach, and the flipped-label stationarity analysis;
//! - [`data`]: datasets, synthetic generators, IDX/CSV ingestion;
//! - [`experiments`]: the config-driven harness producing CSV reports and
//!   SVG figures.

pub mod baselines;
pub mod channels;
pub mod data;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod logreg;
pub mod math;
pub mod plot;
pub mod prior;
pub mod quadrature;
pub mod rng;

pub use error::{Error, Result};
