//! Closed-form and EM spread-likelihood estimators for discrete models.
//!
//! The voting correction inverts the corrupted-frequency map
//! f1 = P11 * theta + P10 * (1 - theta); its closed form is
//! (f1 - P10) / (1 - P10 - P01), clipped to [0, 1]. The generic K-state
//! estimator maximizes sum_i counts_i * log(P q)_i over the simplex by EM
//! and doubles as a cross-check oracle for the closed form.

use crate::channels::{DiscreteChannel, FlipChannel};
use crate::error::{Error, Result};

/// Denominator magnitude below which the flip channel cannot be inverted.
pub const DEGENERATE_DENOMINATOR_TOL: f64 = 1e-9;

/// Result of the closed-form voting correction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VotingEstimate {
    /// Estimated clean fraction, clipped to [0, 1].
    pub theta: f64,
    /// Closed-form value before clipping.
    pub raw: f64,
    /// True when the raw value fell outside [0, 1].
    pub clipped: bool,
}

/// Closed-form spread-MLE of the clean fraction of ones from the corrupted
/// fraction `f_tilde`.
pub fn voting_estimate(f_tilde: f64, channel: &FlipChannel) -> Result<VotingEstimate> {
    let p10 = channel.p_0to1(); // p(noisy=1 | clean=0)
    let p01 = channel.p_1to0(); // p(noisy=0 | clean=1)
    let denom = 1.0 - p10 - p01;
    if denom.abs() < DEGENERATE_DENOMINATOR_TOL {
        return Err(Error::Numerical(format!(
            "flip channel is uninvertible: 1 - P10 - P01 = {denom}"
        )));
    }
    let raw = (f_tilde - p10) / denom;
    let theta = raw.clamp(0.0, 1.0);
    Ok(VotingEstimate {
        theta,
        raw,
        clipped: theta != raw,
    })
}

/// Per-datapoint average spread log likelihood of a Bernoulli model under a
/// flip channel:
/// f0 * log(P00 (1-theta) + P01 theta) + f1 * log(P10 (1-theta) + P11 theta).
pub fn spread_loglik_bernoulli(theta: f64, f_tilde: f64, channel: &FlipChannel) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::Data(format!("theta {theta} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&f_tilde) {
        return Err(Error::Data(format!("f_tilde {f_tilde} outside [0, 1]")));
    }
    let p10 = channel.p_0to1();
    let p01 = channel.p_1to0();
    let mix1 = p10 * (1.0 - theta) + (1.0 - p01) * theta;
    let mix0 = (1.0 - p10) * (1.0 - theta) + p01 * theta;
    // Terms with zero frequency contribute nothing even when their mixture
    // vanishes (0 log 0 = 0); only a weighted zero mixture is an error.
    let mut ll = 0.0;
    for (weight, mix) in [(1.0 - f_tilde, mix0), (f_tilde, mix1)] {
        if weight > 0.0 {
            if mix <= 0.0 {
                return Err(Error::Numerical(format!(
                    "nonpositive mixture probability {mix} with weight {weight}"
                )));
            }
            ll += weight * mix.ln();
        }
    }
    Ok(ll)
}

/// Strategy for the K-state spread MLE.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MleStrategy {
    /// Multiplicative EM on the simplex; the default.
    Em { max_iters: usize, tol: f64 },
    /// Dense grid over theta; only valid for K = 2.
    Grid { step: f64 },
}

impl Default for MleStrategy {
    fn default() -> Self {
        MleStrategy::Em {
            max_iters: 500,
            tol: 1e-10,
        }
    }
}

/// Output of [`spread_mle_discrete`].
#[derive(Debug, Clone)]
pub struct SimplexEstimate {
    /// Estimated clean distribution on the simplex.
    pub probs: Vec<f64>,
    /// Per-datapoint spread log likelihood at the estimate.
    pub loglik: f64,
    /// Objective value after each EM iteration (empty for grid search).
    pub trace: Vec<f64>,
}

/// Per-datapoint spread log likelihood of counts under clean distribution q:
/// (1/C) sum_i counts_i * log( sum_j P_ij q_j ).
pub fn spread_loglik_discrete(counts: &[u64], channel: &DiscreteChannel, q: &[f64]) -> f64 {
    let k = channel.num_states();
    let total: u64 = counts.iter().sum();
    let mut ll = 0.0;
    for i in 0..k {
        if counts[i] == 0 {
            continue;
        }
        let mut m = 0.0;
        for (j, &qj) in q.iter().enumerate() {
            m += channel.prob(i, j) * qj;
        }
        ll += counts[i] as f64 * m.ln();
    }
    ll / total as f64
}

/// Maximum spread-likelihood estimate of the clean state distribution from
/// corrupted-state counts.
pub fn spread_mle_discrete(
    counts: &[u64],
    channel: &DiscreteChannel,
    strategy: MleStrategy,
) -> Result<SimplexEstimate> {
    let k = channel.num_states();
    if counts.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: counts.len(),
        });
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Data("zero total count".into()));
    }
    match strategy {
        MleStrategy::Em { max_iters, tol } => em_simplex(counts, channel, max_iters, tol),
        MleStrategy::Grid { step } => {
            if k != 2 {
                return Err(Error::Config(format!(
                    "grid strategy only supports K = 2, got K = {k}"
                )));
            }
            grid_k2(counts, channel, step)
        }
    }
}

/// Multiplicative EM for q maximizing sum_i counts_i log (P q)_i.
///
/// The E-step responsibility of clean state j for noisy state i is
/// P_ij q_j / (P q)_i; the M-step sets q to the responsibility-weighted
/// count average. The objective is concave in q, so EM converges to the
/// global simplex optimum and is non-decreasing at every step.
fn em_simplex(
    counts: &[u64],
    channel: &DiscreteChannel,
    max_iters: usize,
    tol: f64,
) -> Result<SimplexEstimate> {
    let k = channel.num_states();
    let total: f64 = counts.iter().sum::<u64>() as f64;
    let mut q = vec![1.0 / k as f64; k];
    let mut trace = Vec::new();
    let mut last = f64::NEG_INFINITY;
    for _ in 0..max_iters {
        // Mixture probabilities of each noisy state under current q.
        let mut mix = vec![0.0; k];
        for i in 0..k {
            for (j, &qj) in q.iter().enumerate() {
                mix[i] += channel.prob(i, j) * qj;
            }
        }
        let mut next = vec![0.0; k];
        for (j, slot) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..k {
                if counts[i] > 0 && mix[i] > 0.0 {
                    acc += counts[i] as f64 * channel.prob(i, j) / mix[i];
                }
            }
            *slot = q[j] * acc / total;
        }
        // Guard against drift off the simplex.
        let sum: f64 = next.iter().sum();
        for v in &mut next {
            *v /= sum;
        }
        q = next;
        let ll = spread_loglik_discrete(counts, channel, &q);
        trace.push(ll);
        if ll - last < tol {
            break;
        }
        last = ll;
    }
    let loglik = spread_loglik_discrete(counts, channel, &q);
    Ok(SimplexEstimate { probs: q, loglik, trace })
}

fn grid_k2(counts: &[u64], channel: &DiscreteChannel, step: f64) -> Result<SimplexEstimate> {
    if !(step > 0.0 && step < 1.0) {
        return Err(Error::Config(format!("grid step {step} outside (0, 1)")));
    }
    let mut best_theta = 0.5;
    let mut best = f64::NEG_INFINITY;
    let steps = (1.0 / step).round() as usize;
    for s in 0..=steps {
        let theta = (s as f64 * step).min(1.0);
        let ll = spread_loglik_discrete(counts, channel, &[1.0 - theta, theta]);
        if ll > best {
            best = ll;
            best_theta = theta;
        }
    }
    Ok(SimplexEstimate {
        probs: vec![1.0 - best_theta, best_theta],
        loglik: best,
        trace: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::UniformStateChannel;
    use approx::assert_relative_eq;

    #[test]
    fn voting_with_no_noise_returns_noisy_fraction() {
        let ch = FlipChannel::symmetric(0.0).unwrap();
        let est = voting_estimate(0.4, &ch).unwrap();
        assert_relative_eq!(est.theta, 0.4);
        assert!(!est.clipped);
    }

    #[test]
    fn voting_inverts_the_forward_map() {
        // theta = 0.3 under p_f = 0.2 gives f = 0.8*0.3 + 0.2*0.7 = 0.38.
        let ch = FlipChannel::symmetric(0.2).unwrap();
        let est = voting_estimate(0.38, &ch).unwrap();
        assert_relative_eq!(est.theta, 0.3, epsilon = 1e-12);
    }

    #[test]
    fn voting_clips_out_of_range_estimates() {
        let ch = FlipChannel::symmetric(0.2).unwrap();
        let est = voting_estimate(0.1, &ch).unwrap();
        assert_relative_eq!(est.raw, -1.0 / 6.0, epsilon = 1e-12);
        assert_eq!(est.theta, 0.0);
        assert!(est.clipped);
    }

    #[test]
    fn voting_rejects_degenerate_channel() {
        let ch = FlipChannel::symmetric(0.5).unwrap();
        assert!(voting_estimate(0.4, &ch).is_err());
    }

    #[test]
    fn loglik_zero_noise_theta_one() {
        let ch = FlipChannel::symmetric(0.0).unwrap();
        assert_relative_eq!(spread_loglik_bernoulli(1.0, 1.0, &ch).unwrap(), 0.0);
    }

    #[test]
    fn loglik_relabeling_symmetry() {
        let ch = FlipChannel::symmetric(0.15).unwrap();
        for &(theta, f) in &[(0.3, 0.42), (0.7, 0.1), (0.05, 0.95)] {
            let a = spread_loglik_bernoulli(theta, f, &ch).unwrap();
            let b = spread_loglik_bernoulli(1.0 - theta, 1.0 - f, &ch).unwrap();
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn loglik_grid_argmax_is_the_matching_theta() {
        // f = 0.38 is produced exactly by theta = 0.3 under p_f = 0.2, so
        // the grid argmax must land there.
        let ch = FlipChannel::symmetric(0.2).unwrap();
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut t: f64 = 0.0;
        while t <= 1.0 + 1e-12 {
            let ll = spread_loglik_bernoulli(t.min(1.0), 0.38, &ch).unwrap();
            if ll > best.0 {
                best = (ll, t);
            }
            t += 1e-4;
        }
        assert!((best.1 - 0.3).abs() < 1.5e-4, "argmax {}", best.1);
    }

    #[test]
    fn voting_matches_grid_argmax_across_settings() {
        for &p_f in &[0.05, 0.2, 0.4] {
            let ch = FlipChannel::symmetric(p_f).unwrap();
            let mut f: f64 = 0.0;
            while f <= 1.0 + 1e-12 {
                let f_t = f.min(1.0);
                let est = voting_estimate(f_t, &ch).unwrap();
                let counts = to_counts(f_t, 1_000_000);
                let grid = spread_mle_discrete(
                    &counts,
                    &ch.to_discrete(),
                    MleStrategy::Grid { step: 1e-4 },
                )
                .unwrap();
                assert!(
                    (est.theta - grid.probs[1]).abs() < 2e-4,
                    "p_f={p_f} f={f_t}: closed form {} vs grid {}",
                    est.theta,
                    grid.probs[1]
                );
                f += 0.01;
            }
        }
    }

    fn to_counts(f_tilde: f64, n: u64) -> Vec<u64> {
        let ones = (f_tilde * n as f64).round() as u64;
        vec![n - ones, ones]
    }

    #[test]
    fn em_matches_voting_estimate_for_k2() {
        let mut state = 0x12345u64;
        let mut next = || {
            // xorshift is plenty for test-case generation
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let f_tilde = next();
            let p_f = 0.05 + 0.35 * next();
            let ch = FlipChannel::symmetric(p_f).unwrap();
            let est = voting_estimate(f_tilde, &ch).unwrap();
            let counts = to_counts(f_tilde, 10_000_000);
            // The equivalence is a statement about the converged MLE, so
            // run EM past the default iteration budget; near-boundary
            // optima converge geometrically but slowly.
            let em = spread_mle_discrete(
                &counts,
                &ch.to_discrete(),
                MleStrategy::Em {
                    max_iters: 200_000,
                    tol: 1e-15,
                },
            )
            .unwrap();
            assert!(
                (em.probs[1] - est.theta).abs() < 1e-4,
                "f={f_tilde} p_f={p_f}: em {} vs closed {}",
                em.probs[1],
                est.theta
            );
        }
    }

    #[test]
    fn em_near_identity_channel_recovers_counts() {
        let ch = UniformStateChannel::new(3, 1e-6).unwrap().to_discrete();
        let counts = vec![500, 300, 200];
        let est = spread_mle_discrete(&counts, &ch, MleStrategy::default()).unwrap();
        assert!((est.probs[0] - 0.5).abs() < 1e-3);
        assert!((est.probs[1] - 0.3).abs() < 1e-3);
        assert!((est.probs[2] - 0.2).abs() < 1e-3);
    }

    #[test]
    fn em_trace_is_monotone_and_output_on_simplex() {
        let ch = UniformStateChannel::new(4, 0.35).unwrap().to_discrete();
        let counts = vec![40, 350, 10, 600];
        let est = spread_mle_discrete(&counts, &ch, MleStrategy::default()).unwrap();
        for w in est.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-13, "EM objective decreased: {w:?}");
        }
        let sum: f64 = est.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(est.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn em_objective_beats_naive_plugin() {
        let ch = UniformStateChannel::new(3, 0.3).unwrap().to_discrete();
        let counts = vec![700, 200, 100];
        let est = spread_mle_discrete(&counts, &ch, MleStrategy::default()).unwrap();
        let total: u64 = counts.iter().sum();
        let plugin: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
        let plugin_ll = spread_loglik_discrete(&counts, &ch, &plugin);
        assert!(est.loglik >= plugin_ll - 1e-9);
    }

    #[test]
    fn em_rejects_zero_counts() {
        let ch = UniformStateChannel::new(2, 0.1).unwrap().to_discrete();
        assert!(spread_mle_discrete(&[0, 0], &ch, MleStrategy::default()).is_err());
    }
}
