//! Factorised input priors p(x) = prod_d p(x[d] | d).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default mass floor applied to discrete prior entries so the importance
/// proposal stays well-defined for states unseen in the samples.
pub const PRIOR_FLOOR: f64 = 1e-6;

const SIMPLEX_TOL: f64 = 1e-10;

/// Per-dimension discrete tables p(k | d), each on the K-simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretePrior {
    tables: Vec<Vec<f64>>,
}

impl DiscretePrior {
    /// Uniform prior over `num_states` states in each of `dim` dimensions.
    pub fn uniform(dim: usize, num_states: usize) -> Self {
        let table = vec![1.0 / num_states as f64; num_states];
        DiscretePrior {
            tables: vec![table; dim],
        }
    }

    /// Builds tables from nonnegative weights, flooring each entry at `floor`
    /// and renormalizing.
    pub fn from_weights(weights: Vec<Vec<f64>>, floor: f64) -> Result<Self> {
        let mut tables = Vec::with_capacity(weights.len());
        for (d, mut w) in weights.into_iter().enumerate() {
            if w.is_empty() {
                return Err(Error::Data(format!("dimension {d} has no states")));
            }
            let sum: f64 = w.iter().sum();
            if !(sum > 0.0) || w.iter().any(|&x| x < 0.0) {
                return Err(Error::Data(format!(
                    "dimension {d}: weights must be nonnegative with positive sum"
                )));
            }
            for x in &mut w {
                *x = (*x / sum).max(floor);
            }
            let sum2: f64 = w.iter().sum();
            for x in &mut w {
                *x /= sum2;
            }
            tables.push(w);
        }
        Ok(DiscretePrior { tables })
    }

    pub fn dim(&self) -> usize {
        self.tables.len()
    }

    pub fn num_states(&self) -> usize {
        self.tables.first().map_or(0, Vec::len)
    }

    pub fn table(&self, d: usize) -> &[f64] {
        &self.tables[d]
    }

    pub fn tables(&self) -> &[Vec<f64>] {
        &self.tables
    }

    /// Checks each table sums to 1 within 1e-10.
    pub fn is_normalized(&self) -> bool {
        self.tables.iter().all(|t| {
            let s: f64 = t.iter().sum();
            (s - 1.0).abs() <= SIMPLEX_TOL && t.iter().all(|&p| p >= 0.0)
        })
    }
}

/// Per-dimension Gaussian prior with mean mu_d and variance sigma_bar^2_d.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrior {
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianPrior {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::DimensionMismatch {
                expected: means.len(),
                got: variances.len(),
            });
        }
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Data(
                "gaussian prior variances must be strictly positive".into(),
            ));
        }
        Ok(GaussianPrior { means, variances })
    }

    /// Same mean and variance in every dimension.
    pub fn isotropic(mean: f64, variance: f64, dim: usize) -> Result<Self> {
        Self::new(vec![mean; dim], vec![variance; dim])
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, d: usize) -> f64 {
        self.means[d]
    }

    pub fn variance(&self, d: usize) -> f64 {
        self.variances[d]
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}
