//! Baseline estimators the spread approach is measured against: naive
//! maximum likelihood on corrupted data, and the reconstruction approach
//! (impute the clean point from its posterior, then train on the
//! imputation), which is biased for any nonzero flip noise.
//!
//! Also hosts the isotropic-Gaussian analysis of training logistic
//! regression on flipped labels: the angular gradient vanishes at the true
//! direction and the curvature there is negative when p_1to1 > p_0to1, so
//! naive training keeps the right direction in that special case. Both
//! quantities are estimated by Monte Carlo with reported standard errors,
//! cross-checked by Gauss-Hermite quadrature.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::channels::FlipChannel;
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::logreg::{logistic_loglik, FeatureMap};
use crate::math::{mean_and_se, sigmoid};
use crate::quadrature::GaussHermite;
use crate::rng::stream_rng;

/// Theta grid used for reconstruction argmax searches: step 1e-4 on (0, 1)
/// with the endpoints pulled in by a 1e-6 margin to dodge the log
/// singularities.
pub const RECON_THETA_STEP: f64 = 1e-4;
const RECON_MARGIN: f64 = 1e-6;

/// Standard logistic log likelihood evaluated on corrupted data. Training
/// this objective is the "log reg on noisy data" baseline; it is not a
/// consistent estimator in general.
pub fn naive_loglik_noisy(
    weights: &[f64],
    noisy: &LabeledDataset,
    map: &FeatureMap,
) -> Result<f64> {
    logistic_loglik(weights, noisy, map)
}

/// Exact large-N reconstruction objective for the two-state model:
/// J(theta) = sum_noisy ptilde_theta0(noisy) sum_x p_theta(x|noisy) log p_theta(x),
/// where p_theta(x|noisy) is the model posterior under the flip channel.
pub fn recon_objective_bernoulli(theta: f64, theta0: f64, p_f: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Numerical(format!(
            "theta {theta} must lie strictly inside (0, 1)"
        )));
    }
    if !(0.0..=1.0).contains(&theta0) || !(0.0..=0.5).contains(&p_f) {
        return Err(Error::Data(format!(
            "theta0 {theta0} or p_f {p_f} out of range"
        )));
    }
    let p = [1.0 - theta, theta];
    let p0 = [1.0 - theta0, theta0];
    let flip = |noisy: usize, clean: usize| -> f64 {
        if noisy == clean {
            1.0 - p_f
        } else {
            p_f
        }
    };
    let mut j = 0.0;
    for noisy in 0..2 {
        let tilde0: f64 = (0..2).map(|x| flip(noisy, x) * p0[x]).sum();
        let tilde: f64 = (0..2).map(|x| flip(noisy, x) * p[x]).sum();
        if tilde <= 0.0 {
            return Err(Error::Numerical("zero posterior normalizer".into()));
        }
        for x in 0..2 {
            let posterior = flip(noisy, x) * p[x] / tilde;
            if posterior > 0.0 {
                j += tilde0 * posterior * p[x].ln();
            }
        }
    }
    Ok(j)
}

/// The argmax of the reconstruction objective for each true theta0 on a
/// grid; the identity curve appears only at p_f = 0.
#[derive(Debug, Clone)]
pub struct ReconstructionCurve {
    pub p_f: f64,
    pub theta0: Vec<f64>,
    pub argmax: Vec<f64>,
}

impl ReconstructionCurve {
    /// Largest deviation |argmax - theta0| over the grid.
    pub fn max_identity_deviation(&self) -> f64 {
        self.theta0
            .iter()
            .zip(&self.argmax)
            .map(|(t0, t)| (t0 - t).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `p_f,theta0,argmax` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["p_f", "theta0", "argmax"])?;
        for (t0, t) in self.theta0.iter().zip(&self.argmax) {
            w.write_record(&[self.p_f.to_string(), t0.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn recon_theta_grid() -> Vec<f64> {
    let mut grid = Vec::with_capacity(10_001);
    grid.push(RECON_MARGIN);
    let steps = (1.0 / RECON_THETA_STEP) as usize;
    for k in 1..steps {
        grid.push(k as f64 * RECON_THETA_STEP);
    }
    grid.push(1.0 - RECON_MARGIN);
    grid
}

/// Sweeps theta0 over [0, 1] with the given step and records the
/// reconstruction argmax at each point.
pub fn recon_curve(p_f: f64, theta0_step: f64) -> Result<ReconstructionCurve> {
    if !(0.0..0.5).contains(&p_f) {
        return Err(Error::Data(format!("p_f {p_f} outside [0, 0.5)")));
    }
    if !(theta0_step > 0.0 && theta0_step < 1.0) {
        return Err(Error::Data(format!("theta0 step {theta0_step} invalid")));
    }
    let grid = recon_theta_grid();
    let n0 = (1.0 / theta0_step).round() as usize;
    let theta0: Vec<f64> = (0..=n0).map(|k| (k as f64 * theta0_step).min(1.0)).collect();
    let argmax: Vec<f64> = theta0
        .par_iter()
        .map(|&t0| {
            let mut best = (f64::NEG_INFINITY, grid[0]);
            for &t in &grid {
                let j = recon_objective_bernoulli(t, t0, p_f).expect("grid stays in range");
                if j > best.0 {
                    best = (j, t);
                }
            }
            best.1
        })
        .collect();
    Ok(ReconstructionCurve {
        p_f,
        theta0,
        argmax,
    })
}

/// A Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl McEstimate {
    /// |mean| expressed in standard errors.
    pub fn sigmas(&self) -> f64 {
        if self.std_error == 0.0 {
            if self.mean == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            self.mean.abs() / self.std_error
        }
    }
}

/// Setting for the flipped-label stationarity analysis: isotropic Gaussian
/// inputs of scale `s`, flip channel (p_1to1, p_0to1), candidate direction
/// at angle `alpha` from the true one.
#[derive(Debug, Clone, Copy)]
pub struct NoisyLabelAnalysis {
    pub p_1to1: f64,
    pub p_0to1: f64,
    pub s: f64,
    pub alpha: f64,
    pub mc_samples: u64,
}

impl NoisyLabelAnalysis {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_1to1) || !(0.0..=1.0).contains(&self.p_0to1) {
            return Err(Error::Data("flip probabilities must lie in [0, 1]".into()));
        }
        if !(self.s > 0.0) {
            return Err(Error::Data("input scale s must be positive".into()));
        }
        if self.mc_samples < 100_000 {
            return Err(Error::Data(format!(
                "need at least 1e5 Monte-Carlo draws, got {}",
                self.mc_samples
            )));
        }
        Ok(())
    }

    /// gamma(x) = p_1to1 sigmoid(x) + p_0to1 (1 - sigmoid(x)): the
    /// probability that the released label is 1 given logit x.
    pub fn gamma(&self, x: f64) -> f64 {
        let p = sigmoid(x);
        self.p_1to1 * p + self.p_0to1 * (1.0 - p)
    }
}

const MC_CHUNK: u64 = 1 << 16;

/// Runs a chunked Monte-Carlo mean/SE estimate with per-chunk seed streams
/// and fixed-order reduction.
fn mc_estimate(
    samples: u64,
    seed: u64,
    per_draw: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
) -> McEstimate {
    let n_chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<(f64, f64)> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * MC_CHUNK;
            let hi = ((ci + 1) * MC_CHUNK).min(samples);
            let mut rng = stream_rng(seed, ci);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in lo..hi {
                let v = per_draw(&mut rng);
                sum += v;
                sum_sq += v * v;
            }
            (sum, sum_sq)
        })
        .collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (a, b) in partials {
        sum += a;
        sum_sq += b;
    }
    let (mean, std_error) = mean_and_se(sum, sum_sq, samples);
    McEstimate {
        mean,
        std_error,
        samples,
    }
}

/// Monte-Carlo estimate of the angular derivative of the infinite-data
/// noisy-label objective:
/// s E[(gamma(Z1) - sigmoid(Z2)) (e2 cos a - e1 sin a)],
/// Z1 = s e1, Z2 = s (e1 cos a + e2 sin a), (e1, e2) standard normal.
///
/// With `antithetic` set, draws come in (e1, e2)/(e1, -e2) pairs whose
/// average is one sample; at alpha = 0 the integrand is odd in e2, so the
/// estimate is exactly zero by construction.
pub fn noisy_label_gradient_at_alpha(
    analysis: &NoisyLabelAnalysis,
    seed: u64,
    antithetic: bool,
) -> Result<McEstimate> {
    analysis.validate()?;
    let a = *analysis;
    let (cos_a, sin_a) = (a.alpha.cos(), a.alpha.sin());
    let integrand = move |e1: f64, e2: f64| -> f64 {
        let z1 = a.s * e1;
        let z2 = a.s * (e1 * cos_a + e2 * sin_a);
        a.s * (a.gamma(z1) - sigmoid(z2)) * (e2 * cos_a - e1 * sin_a)
    };
    if antithetic {
        let pairs = analysis.mc_samples.div_ceil(2);
        Ok(mc_estimate(pairs, seed, move |rng| {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            0.5 * (integrand(e1, e2) + integrand(e1, -e2))
        }))
    } else {
        Ok(mc_estimate(analysis.mc_samples, seed, move |rng| {
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            integrand(e1, e2)
        }))
    }
}

/// The two terms of the angular second derivative at alpha = 0.
#[derive(Debug, Clone, Copy)]
pub struct HessianEstimate {
    /// s E[-e1 gamma(s e1)].
    pub term1: McEstimate,
    /// -s^2 E[sigmoid(s e1) (1 - sigmoid(s e1))].
    pub term2: McEstimate,
    pub total: McEstimate,
}

/// Monte-Carlo estimate of the curvature of the noisy-label objective at
/// alpha = 0: s E[-e1 gamma(s e1)] - s^2 E[phi'(s e1)] over a univariate
/// standard normal.
pub fn noisy_label_hessian_at_zero(
    analysis: &NoisyLabelAnalysis,
    seed: u64,
) -> Result<HessianEstimate> {
    analysis.validate()?;
    let a = *analysis;
    let t1 = mc_estimate(analysis.mc_samples, seed, move |rng| {
        let e1: f64 = rng.sample(StandardNormal);
        -a.s * e1 * a.gamma(a.s * e1)
    });
    let t2 = mc_estimate(analysis.mc_samples, seed.wrapping_add(1), move |rng| {
        let e1: f64 = rng.sample(StandardNormal);
        let p = sigmoid(a.s * e1);
        -a.s * a.s * p * (1.0 - p)
    });
    // Independent streams: variances add.
    let total = McEstimate {
        mean: t1.mean + t2.mean,
        std_error: (t1.std_error * t1.std_error + t2.std_error * t2.std_error).sqrt(),
        samples: analysis.mc_samples,
    };
    Ok(HessianEstimate {
        term1: t1,
        term2: t2,
        total,
    })
}

/// Gauss-Hermite evaluation of the same two Hessian terms; the quadrature
/// path is the independent cross-check for the Monte-Carlo one.
pub fn hessian_terms_quadrature(
    p_1to1: f64,
    p_0to1: f64,
    s: f64,
    nodes: usize,
) -> (f64, f64, f64) {
    let gh = GaussHermite::new(nodes);
    let gamma = |x: f64| {
        let p = sigmoid(x);
        p_1to1 * p + p_0to1 * (1.0 - p)
    };
    let term1 = gh.expect_standard_normal(|e| -s * e * gamma(s * e));
    let term2 = gh.expect_standard_normal(|e| {
        let p = sigmoid(s * e);
        -s * s * p * (1.0 - p)
    });
    (term1, term2, term1 + term2)
}

/// Report of the anisotropic counterexample: the naive noisy-label gradient
/// at the true direction, split into the angular (tangential) component and
/// the full coordinate gradient.
#[derive(Debug, Clone)]
pub struct AnisotropyReport {
    /// Tangential directional derivative; zero for isotropic inputs.
    pub angular: McEstimate,
    /// Full gradient components E[(noisy c - sigmoid(theta0 . x)) x].
    pub gradient: [McEstimate; 2],
    /// True when |angular mean| exceeds 5 standard errors.
    pub exceeds_threshold: bool,
}

/// Estimates the gradient of the naive noisy-label objective at theta0 for
/// 2-D zero-mean Gaussian inputs with covariance `cov`.
///
/// For isotropic covariance the angular component vanishes; for anisotropic
/// covariance it is nonzero whenever theta0 is not an eigenvector of the
/// covariance, so naive training then drifts away from the true direction.
pub fn anisotropy_counterexample(
    cov: [[f64; 2]; 2],
    theta0: [f64; 2],
    channel: &FlipChannel,
    samples: u64,
    seed: u64,
) -> Result<AnisotropyReport> {
    if (cov[0][1] - cov[1][0]).abs() > 1e-12 {
        return Err(Error::Data("covariance must be symmetric".into()));
    }
    // 2x2 Cholesky; fails on non-positive-definite input.
    let l11 = cov[0][0];
    if !(l11 > 0.0) {
        return Err(Error::Data("covariance is not positive definite".into()));
    }
    let l11 = l11.sqrt();
    let l21 = cov[1][0] / l11;
    let d = cov[1][1] - l21 * l21;
    if !(d > 0.0) {
        return Err(Error::Data("covariance is not positive definite".into()));
    }
    let l22 = d.sqrt();

    let norm = (theta0[0] * theta0[0] + theta0[1] * theta0[1]).sqrt();
    if !(norm > 0.0) {
        return Err(Error::Data("theta0 must be nonzero".into()));
    }
    let t0 = [theta0[0] / norm, theta0[1] / norm];
    let tangent = [-t0[1], t0[0]];
    let p_0to1 = channel.p_0to1();
    let p_1to0 = channel.p_1to0();

    // One pass accumulating the tangential component and both coordinates.
    let n_chunks = samples.div_ceil(MC_CHUNK);
    let partials: Vec<[[f64; 2]; 3]> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let lo = ci * MC_CHUNK;
            let hi = ((ci + 1) * MC_CHUNK).min(samples);
            let mut rng = stream_rng(seed, ci);
            let mut acc = [[0.0f64; 2]; 3];
            for _ in lo..hi {
                let e1: f64 = rng.sample(StandardNormal);
                let e2: f64 = rng.sample(StandardNormal);
                let x = [l11 * e1, l21 * e1 + l22 * e2];
                let p = sigmoid(t0[0] * x[0] + t0[1] * x[1]);
                let clean = rng.random::<f64>() < p;
                let flip_p = if clean { p_1to0 } else { p_0to1 };
                let noisy = if rng.random::<f64>() < flip_p {
                    !clean
                } else {
                    clean
                };
                let resid = f64::from(noisy) - p;
                let g = [resid * x[0], resid * x[1]];
                let ang = g[0] * tangent[0] + g[1] * tangent[1];
                for (slot, v) in acc.iter_mut().zip([ang, g[0], g[1]]) {
                    slot[0] += v;
                    slot[1] += v * v;
                }
            }
            acc
        })
        .collect();
    let mut sums = [[0.0f64; 2]; 3];
    for part in partials {
        for (tot, p) in sums.iter_mut().zip(part) {
            tot[0] += p[0];
            tot[1] += p[1];
        }
    }
    let to_est = |sum: [f64; 2]| {
        let (mean, std_error) = mean_and_se(sum[0], sum[1], samples);
        McEstimate {
            mean,
            std_error,
            samples,
        }
    };
    let angular = to_est(sums[0]);
    let gradient = [to_est(sums[1]), to_est(sums[2])];
    let exceeds_threshold = angular.sigmas() > 5.0;
    Ok(AnisotropyReport {
        angular,
        gradient,
        exceeds_threshold,
    })
}
