//! Corruption channels (spread noise) and their validity checks.
//!
//! A discrete channel is a column-stochastic matrix P with entry (i, j) =
//! p(noisy = i | clean = j). Randomised response releases exactly one draw
//! per record. A channel is usable for spread-likelihood estimation when
//! all entries are positive and the matrix is invertible; the verdict is
//! reported by [`validate_spread_noise`].

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::det_lu;
use crate::rng::stream_rng;

/// Default tolerance on |det P| below which a channel counts as singular.
pub const DEFAULT_SINGULARITY_TOL: f64 = 1e-9;

const COLUMN_SUM_TOL: f64 = 1e-12;

/// Verdict of the spread-noise sufficient condition.
#[derive(Debug, Clone, PartialEq)]
pub enum SpreadValidity {
    Valid,
    Invalid(InvalidReason),
}

impl SpreadValidity {
    pub fn is_valid(&self) -> bool {
        matches!(self, SpreadValidity::Valid)
    }
}

/// Why a channel fails the sufficient condition.
#[derive(Debug, Clone, PartialEq)]
pub enum InvalidReason {
    /// Some transition probability is not strictly positive.
    ZeroEntry { noisy: usize, clean: usize },
    /// The transition matrix is numerically singular.
    Singular { det: f64 },
}

/// Column-stochastic K x K corruption matrix over discrete states.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteChannel {
    num_states: usize,
    /// Column-major storage: `cols[j * K + i]` = p(noisy = i | clean = j).
    cols: Vec<f64>,
}

impl DiscreteChannel {
    /// Builds a channel from a row-major matrix with entry (i, j) = p(noisy=i|clean=j).
    ///
    /// Rejects matrices whose entries leave [0, 1] or whose columns do not
    /// sum to 1 within 1e-12.
    pub fn from_matrix(matrix: &[Vec<f64>]) -> Result<Self> {
        let k = matrix.len();
        if k == 0 {
            return Err(Error::InvalidChannel("empty matrix".into()));
        }
        if matrix.iter().any(|row| row.len() != k) {
            return Err(Error::InvalidChannel("matrix is not square".into()));
        }
        let mut cols = vec![0.0; k * k];
        for j in 0..k {
            let mut sum = 0.0;
            for i in 0..k {
                let p = matrix[i][j];
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::InvalidChannel(format!(
                        "entry ({i}, {j}) = {p} outside [0, 1]"
                    )));
                }
                cols[j * k + i] = p;
                sum += p;
            }
            if (sum - 1.0).abs() > COLUMN_SUM_TOL {
                return Err(Error::InvalidChannel(format!(
                    "column {j} sums to {sum}, not 1"
                )));
            }
        }
        Ok(Self { num_states: k, cols })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    /// p(noisy | clean).
    pub fn prob(&self, noisy: usize, clean: usize) -> f64 {
        self.cols[clean * self.num_states + noisy]
    }

    /// The distribution of the noisy state given a clean state.
    pub fn column(&self, clean: usize) -> &[f64] {
        let k = self.num_states;
        &self.cols[clean * k..(clean + 1) * k]
    }

    pub fn determinant(&self) -> f64 {
        det_lu(&self.cols, self.num_states)
    }
}

/// Validity of a discrete channel as spread noise: all entries strictly
/// positive and |det| above `tol`.
pub fn validate_spread_noise(channel: &DiscreteChannel, tol: f64) -> SpreadValidity {
    let k = channel.num_states();
    for clean in 0..k {
        for noisy in 0..k {
            if channel.prob(noisy, clean) <= 0.0 {
                return SpreadValidity::Invalid(InvalidReason::ZeroEntry { noisy, clean });
            }
        }
    }
    let det = channel.determinant();
    if det.abs() <= tol {
        return SpreadValidity::Invalid(InvalidReason::Singular { det });
    }
    SpreadValidity::Valid
}

/// Binary label-flip channel.
///
/// `p_0to1` = p(noisy=1 | clean=0), `p_1to0` = p(noisy=0 | clean=1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipChannel {
    p_0to1: f64,
    p_1to0: f64,
}

impl FlipChannel {
    pub fn new(p_0to1: f64, p_1to0: f64) -> Result<Self> {
        for p in [p_0to1, p_1to0] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidChannel(format!(
                    "flip probability {p} outside [0, 1]"
                )));
            }
        }
        Ok(Self { p_0to1, p_1to0 })
    }

    /// Symmetric flip: both directions with probability `p_flip`.
    pub fn symmetric(p_flip: f64) -> Result<Self> {
        Self::new(p_flip, p_flip)
    }

    pub fn p_0to1(&self) -> f64 {
        self.p_0to1
    }

    pub fn p_1to0(&self) -> f64 {
        self.p_1to0
    }

    /// p(noisy = 1 | clean), for clean in {0, 1}.
    pub fn prob_noisy_one(&self, clean: u8) -> f64 {
        if clean == 0 {
            self.p_0to1
        } else {
            1.0 - self.p_1to0
        }
    }

    /// p(noisy | clean).
    pub fn prob(&self, noisy: u8, clean: u8) -> f64 {
        let p1 = self.prob_noisy_one(clean);
        if noisy == 1 {
            p1
        } else {
            1.0 - p1
        }
    }

    /// Lossless 2x2 discrete channel with columns
    /// [1 - p_0to1, p_0to1] and [p_1to0, 1 - p_1to0].
    pub fn to_discrete(&self) -> DiscreteChannel {
        DiscreteChannel {
            num_states: 2,
            cols: vec![
                1.0 - self.p_0to1,
                self.p_0to1,
                self.p_1to0,
                1.0 - self.p_1to0,
            ],
        }
    }
}

/// K-state resampling channel: keep the state with probability 1 - p_f,
/// otherwise draw uniformly from the K - 1 other states.
///
/// Stored as (K, p_f); the dense K x K matrix is only materialized on
/// request, so 256-state pixel channels stay O(1) in memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformStateChannel {
    num_states: usize,
    p_f: f64,
}

impl UniformStateChannel {
    pub fn new(num_states: usize, p_f: f64) -> Result<Self> {
        if num_states < 2 {
            return Err(Error::InvalidChannel(format!(
                "uniform-state channel needs at least 2 states, got {num_states}"
            )));
        }
        if !(0.0..=1.0).contains(&p_f) {
            return Err(Error::InvalidChannel(format!(
                "resample probability {p_f} outside [0, 1]"
            )));
        }
        Ok(Self { num_states, p_f })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn p_f(&self) -> f64 {
        self.p_f
    }

    /// p(noisy | clean).
    pub fn prob(&self, noisy: usize, clean: usize) -> f64 {
        if noisy == clean {
            1.0 - self.p_f
        } else {
            self.p_f / (self.num_states as f64 - 1.0)
        }
    }

    pub fn to_discrete(&self) -> DiscreteChannel {
        let k = self.num_states;
        let off = self.p_f / (k as f64 - 1.0);
        let mut cols = vec![off; k * k];
        for j in 0..k {
            cols[j * k + j] = 1.0 - self.p_f;
        }
        DiscreteChannel { num_states: k, cols }
    }

    /// Closed-form spread validity.
    ///
    /// The matrix has eigenvalue 1 once and 1 - p_f - p_f/(K-1) with
    /// multiplicity K - 1, so for large K the determinant underflows even
    /// though the matrix is well conditioned; the check therefore uses the
    /// smallest eigenvalue magnitude instead of the raw determinant.
    pub fn validity(&self, tol: f64) -> SpreadValidity {
        let k = self.num_states as f64;
        if self.p_f <= 0.0 {
            return SpreadValidity::Invalid(InvalidReason::ZeroEntry { noisy: 1, clean: 0 });
        }
        if self.p_f >= 1.0 {
            return SpreadValidity::Invalid(InvalidReason::ZeroEntry { noisy: 0, clean: 0 });
        }
        let eig = 1.0 - self.p_f - self.p_f / (k - 1.0);
        if eig.abs() <= tol {
            return SpreadValidity::Invalid(InvalidReason::Singular { det: eig });
        }
        SpreadValidity::Valid
    }
}

/// Additive Gaussian noise with a per-dimension variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianChannel {
    variances: Vec<f64>,
}

impl GaussianChannel {
    pub fn per_dim(variances: Vec<f64>) -> Result<Self> {
        if variances.is_empty() || variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidChannel(
                "gaussian channel variances must all be strictly positive".into(),
            ));
        }
        Ok(Self { variances })
    }

    /// Same variance in every dimension.
    pub fn shared(variance: f64, dim: usize) -> Result<Self> {
        Self::per_dim(vec![variance; dim])
    }

    pub fn dim(&self) -> usize {
        self.variances.len()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }
}

fn check_states(data: &[u16], num_states: usize) -> Result<()> {
    for &x in data {
        if usize::from(x) >= num_states {
            return Err(Error::StateOutOfRange {
                state: usize::from(x),
                num_states,
            });
        }
    }
    Ok(())
}

/// Corrupts a sequence of discrete states through a dense channel.
///
/// Record `n` draws from stream `n` of the seed, so the output is
/// reproducible and independent of parallel scheduling.
pub fn corrupt_discrete(data: &[u16], channel: &DiscreteChannel, seed: u64) -> Result<Vec<u16>> {
    check_states(data, channel.num_states())?;
    Ok(data
        .par_iter()
        .enumerate()
        .map(|(n, &x)| {
            let mut rng = stream_rng(seed, n as u64);
            sample_column(channel.column(usize::from(x)), rng.random::<f64>())
        })
        .collect())
}

/// Corrupts discrete states through a (K, p_f) resampling channel without
/// materializing the dense matrix: one branch draw, then a uniform draw
/// over the other states when resampling.
pub fn corrupt_uniform_state(
    data: &[u16],
    channel: &UniformStateChannel,
    seed: u64,
) -> Result<Vec<u16>> {
    check_states(data, channel.num_states())?;
    let k = channel.num_states();
    Ok(data
        .par_iter()
        .enumerate()
        .map(|(n, &x)| {
            let mut rng = stream_rng(seed, n as u64);
            sample_uniform_state(usize::from(x), k, channel.p_f(), &mut rng) as u16
        })
        .collect())
}

pub(crate) fn sample_uniform_state(
    clean: usize,
    num_states: usize,
    p_f: f64,
    rng: &mut impl Rng,
) -> usize {
    if rng.random::<f64>() < 1.0 - p_f {
        clean
    } else {
        let mut other = rng.random_range(0..num_states - 1);
        if other >= clean {
            other += 1;
        }
        other
    }
}

pub(crate) fn sample_column(column: &[f64], u: f64) -> u16 {
    let mut acc = 0.0;
    for (i, &p) in column.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u16;
        }
    }
    (column.len() - 1) as u16
}

/// Flips binary labels; labels must be 0 or 1.
pub fn corrupt_flip(labels: &[u8], channel: &FlipChannel, seed: u64) -> Result<Vec<u8>> {
    if let Some(&bad) = labels.iter().find(|&&c| c > 1) {
        return Err(Error::StateOutOfRange {
            state: usize::from(bad),
            num_states: 2,
        });
    }
    Ok(labels
        .par_iter()
        .enumerate()
        .map(|(n, &c)| {
            let mut rng = stream_rng(seed, n as u64);
            let flip_p = if c == 0 {
                channel.p_0to1()
            } else {
                channel.p_1to0()
            };
            if rng.random::<f64>() < flip_p {
                1 - c
            } else {
                c
            }
        })
        .collect())
}

/// Adds independent zero-mean Gaussian noise to an N x D row-major matrix.
pub fn corrupt_gaussian(
    data: &[f64],
    num_records: usize,
    dim: usize,
    channel: &GaussianChannel,
    seed: u64,
) -> Result<Vec<f64>> {
    if dim != channel.dim() {
        return Err(Error::DimensionMismatch {
            expected: channel.dim(),
            got: dim,
        });
    }
    if data.len() != num_records * dim {
        return Err(Error::Data(format!(
            "matrix length {} does not match {num_records} x {dim}",
            data.len()
        )));
    }
    let normals: Vec<Normal<f64>> = channel
        .variances()
        .iter()
        .map(|&v| Normal::new(0.0, v.sqrt()).expect("positive variance"))
        .collect();
    let mut out = vec![0.0; data.len()];
    out.par_chunks_mut(dim)
        .enumerate()
        .for_each(|(n, row)| {
            let mut rng = stream_rng(seed, n as u64);
            for (d, slot) in row.iter_mut().enumerate() {
                *slot = data[n * dim + d] + normals[d].sample(&mut rng);
            }
        });
    Ok(out)
}

/// Posterior over the clean state after observing M independent corruptions
/// of the same record: p(c | c_1..c_M) proportional to prior(c) * prod_m P[c_m, c].
///
/// This is the multi-release attack: the posterior concentrates
/// exponentially fast in M, which is why the protocol releases one copy.
/// The prior may be unnormalized; the result is normalized.
pub fn posterior_over_clean(
    prior: &[f64],
    observations: &[usize],
    channel: &DiscreteChannel,
) -> Result<Vec<f64>> {
    let k = channel.num_states();
    if prior.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            got: prior.len(),
        });
    }
    if prior.iter().any(|&p| p < 0.0) || prior.iter().all(|&p| p == 0.0) {
        return Err(Error::Data("prior must be nonnegative and not all zero".into()));
    }
    for &obs in observations {
        if obs >= k {
            return Err(Error::StateOutOfRange {
                state: obs,
                num_states: k,
            });
        }
    }
    // Work in log space: M can be large enough to underflow direct products.
    let mut log_unnorm: Vec<f64> = prior
        .iter()
        .map(|&p| if p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    for (j, lw) in log_unnorm.iter_mut().enumerate() {
        if !lw.is_finite() {
            continue;
        }
        for &obs in observations {
            let p = channel.prob(obs, j);
            if p > 0.0 {
                *lw += p.ln();
            } else {
                *lw = f64::NEG_INFINITY;
                break;
            }
        }
    }
    let max = log_unnorm.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::DegenerateEvidence);
    }
    let mut post: Vec<f64> = log_unnorm.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = post.iter().sum();
    for p in &mut post {
        *p /= total;
    }
    Ok(post)
}

/// JSON description of a channel, as it appears in experiment configs.
///
/// `p_flip` / `p_f` may be omitted in experiment configs, in which case the
/// sweep value is substituted; resolving a spec with missing parameters
/// outside a sweep is an error.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelSpec {
    Flip {
        #[serde(skip_serializing_if = "Option::is_none")]
        p_flip: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        p_0to1: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        p_1to0: Option<f64>,
    },
    UniformState {
        num_states: usize,
        p_f: Option<f64>,
    },
    Gaussian {
        #[serde(skip_serializing_if = "Option::is_none")]
        variance: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        variances: Option<Vec<f64>>,
    },
    Discrete {
        matrix: Vec<Vec<f64>>,
    },
}

/// A resolved channel ready to corrupt data.
#[derive(Debug, Clone, PartialEq)]
pub enum Channel {
    Flip(FlipChannel),
    UniformState(UniformStateChannel),
    Gaussian(GaussianChannel),
    Discrete(DiscreteChannel),
}

impl Channel {
    /// Short descriptor used in provenance tags.
    pub fn id(&self) -> String {
        match self {
            Channel::Flip(c) => {
                if c.p_0to1() == c.p_1to0() {
                    format!("flip({})", c.p_0to1())
                } else {
                    format!("flip({},{})", c.p_0to1(), c.p_1to0())
                }
            }
            Channel::UniformState(c) => {
                format!("uniform_state({},{})", c.num_states(), c.p_f())
            }
            Channel::Gaussian(c) => {
                let v = c.variances();
                if v.windows(2).all(|w| w[0] == w[1]) {
                    format!("gaussian({})", v[0])
                } else {
                    format!("gaussian(per-dim,{})", v.len())
                }
            }
            Channel::Discrete(c) => format!("discrete({})", c.num_states()),
        }
    }
}

impl ChannelSpec {
    /// Fills a missing flip/resample probability with a sweep value.
    pub fn with_sweep_value(&self, p: f64) -> ChannelSpec {
        match self.clone() {
            ChannelSpec::Flip {
                p_flip,
                p_0to1,
                p_1to0,
            } => {
                let filled = if p_flip.is_none() && p_0to1.is_none() && p_1to0.is_none() {
                    Some(p)
                } else {
                    p_flip
                };
                ChannelSpec::Flip {
                    p_flip: filled,
                    p_0to1,
                    p_1to0,
                }
            }
            ChannelSpec::UniformState { num_states, p_f } => ChannelSpec::UniformState {
                num_states,
                p_f: p_f.or(Some(p)),
            },
            other => other,
        }
    }

    /// Resolves the spec into a concrete channel. `dim` is the feature
    /// dimension, needed to expand a shared Gaussian variance.
    pub fn resolve(&self, dim: usize) -> Result<Channel> {
        match self {
            ChannelSpec::Flip {
                p_flip,
                p_0to1,
                p_1to0,
            } => match (p_flip, p_0to1, p_1to0) {
                (Some(p), None, None) => Ok(Channel::Flip(FlipChannel::symmetric(*p)?)),
                (None, Some(a), Some(b)) => Ok(Channel::Flip(FlipChannel::new(*a, *b)?)),
                _ => Err(Error::Config(
                    "flip channel needs p_flip or both p_0to1 and p_1to0".into(),
                )),
            },
            ChannelSpec::UniformState { num_states, p_f } => {
                let p = p_f.ok_or_else(|| Error::Config("uniform_state channel needs p_f".into()))?;
                Ok(Channel::UniformState(UniformStateChannel::new(
                    *num_states,
                    p,
                )?))
            }
            ChannelSpec::Gaussian {
                variance,
                variances,
            } => match (variance, variances) {
                (Some(v), None) => Ok(Channel::Gaussian(GaussianChannel::shared(*v, dim)?)),
                (None, Some(vs)) => {
                    if vs.len() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: vs.len(),
                        });
                    }
                    Ok(Channel::Gaussian(GaussianChannel::per_dim(vs.clone())?))
                }
                _ => Err(Error::Config(
                    "gaussian channel needs variance or variances".into(),
                )),
            },
            ChannelSpec::Discrete { matrix } => {
                Ok(Channel::Discrete(DiscreteChannel::from_matrix(matrix)?))
            }
        }
    }
}

/// Label and feature channels, as stored in a channels JSON file.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChannelsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<ChannelSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub features: Option<ChannelSpec>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::mean_and_se;
    use approx::assert_relative_eq;

    fn symmetric_flip(p: f64) -> DiscreteChannel {
        FlipChannel::symmetric(p).unwrap().to_discrete()
    }

    #[test]
    fn constructor_rejects_bad_columns() {
        assert!(DiscreteChannel::from_matrix(&[vec![0.9, 0.2], vec![0.2, 0.8]]).is_err());
        assert!(DiscreteChannel::from_matrix(&[vec![1.1, 0.0], vec![-0.1, 1.0]]).is_err());
        assert!(DiscreteChannel::from_matrix(&[vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn columns_sum_to_one() {
        for ch in [
            symmetric_flip(0.2),
            UniformStateChannel::new(5, 0.3).unwrap().to_discrete(),
            FlipChannel::new(0.1, 0.4).unwrap().to_discrete(),
        ] {
            for j in 0..ch.num_states() {
                let sum: f64 = ch.column(j).iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "column {j} sums to {sum}");
            }
        }
    }

    #[test]
    fn validity_identity_is_zero_entry() {
        let identity = symmetric_flip(0.0);
        match validate_spread_noise(&identity, DEFAULT_SINGULARITY_TOL) {
            SpreadValidity::Invalid(InvalidReason::ZeroEntry { .. }) => {}
            v => panic!("expected zero-entry verdict, got {v:?}"),
        }
    }

    #[test]
    fn validity_half_flip_is_singular() {
        let half = symmetric_flip(0.5);
        match validate_spread_noise(&half, DEFAULT_SINGULARITY_TOL) {
            SpreadValidity::Invalid(InvalidReason::Singular { det }) => {
                assert!(det.abs() < 1e-12);
            }
            v => panic!("expected singular verdict, got {v:?}"),
        }
    }

    #[test]
    fn validity_flip_02_is_valid() {
        assert!(validate_spread_noise(&symmetric_flip(0.2), DEFAULT_SINGULARITY_TOL).is_valid());
    }

    #[test]
    fn uniform_state_closed_form_validity_matches_dense_when_k_small() {
        for &(k, p_f) in &[(3usize, 0.3), (5, 0.1), (4, 0.75)] {
            let ch = UniformStateChannel::new(k, p_f).unwrap();
            let dense = validate_spread_noise(&ch.to_discrete(), DEFAULT_SINGULARITY_TOL);
            assert_eq!(ch.validity(DEFAULT_SINGULARITY_TOL).is_valid(), dense.is_valid());
        }
        // p_f = (K-1)/K makes the matrix exactly uniform, hence singular.
        let ch = UniformStateChannel::new(4, 0.75).unwrap();
        assert!(!ch.validity(DEFAULT_SINGULARITY_TOL).is_valid());
        // 256-state pixel channel at p_f = 0.2 is well conditioned even
        // though its determinant underflows any fixed tolerance.
        let pixel = UniformStateChannel::new(256, 0.2).unwrap();
        assert!(pixel.validity(DEFAULT_SINGULARITY_TOL).is_valid());
    }

    #[test]
    fn corrupt_with_zero_noise_is_identity() {
        let ch = FlipChannel::symmetric(0.0).unwrap();
        let data: Vec<u16> = vec![0, 1, 1, 0, 1];
        let labels: Vec<u8> = data.iter().map(|&x| x as u8).collect();
        assert_eq!(corrupt_flip(&labels, &ch, 9).unwrap(), labels);
        let out = corrupt_discrete(&data, &ch.to_discrete(), 9).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn corrupt_discrete_rejects_out_of_range_state() {
        let ch = symmetric_flip(0.2);
        let err = corrupt_discrete(&[0, 2], &ch, 1).unwrap_err();
        assert!(matches!(err, Error::StateOutOfRange { state: 2, .. }));
    }

    #[test]
    fn flip_fraction_matches_binomial_expectation() {
        // 10^6 zeros through p_f = 0.2: expected fraction of ones is exactly
        // 0.2 with binomial standard error 4e-4; 0.002 is a 5-sigma band.
        let n = 1_000_000usize;
        let labels = vec![0u8; n];
        let ch = FlipChannel::symmetric(0.2).unwrap();
        let noisy = corrupt_flip(&labels, &ch, 1234).unwrap();
        let ones = noisy.iter().filter(|&&c| c == 1).count() as f64 / n as f64;
        assert!((ones - 0.2).abs() < 0.002, "fraction of ones {ones}");
    }

    #[test]
    fn corrupt_is_deterministic_given_seed() {
        let data: Vec<u16> = (0..500).map(|i| (i % 3) as u16).collect();
        let ch = UniformStateChannel::new(3, 0.4).unwrap();
        let a = corrupt_uniform_state(&data, &ch, 77).unwrap();
        let b = corrupt_uniform_state(&data, &ch, 77).unwrap();
        assert_eq!(a, b);
        let c = corrupt_uniform_state(&data, &ch, 78).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_transition_frequencies_converge_to_matrix() {
        // 1e5 records per source state; each empirical frequency must sit
        // within 5 binomial standard errors of the matrix entry.
        let k = 3;
        let per_state = 100_000usize;
        let ch = UniformStateChannel::new(k, 0.3).unwrap().to_discrete();
        for clean in 0..k {
            let data = vec![clean as u16; per_state];
            let noisy = corrupt_discrete(&data, &ch, 42 + clean as u64).unwrap();
            let mut counts = vec![0usize; k];
            for &x in &noisy {
                counts[usize::from(x)] += 1;
            }
            for noisy_state in 0..k {
                let p = ch.prob(noisy_state, clean);
                let freq = counts[noisy_state] as f64 / per_state as f64;
                let band = 5.0 * (p * (1.0 - p) / per_state as f64).sqrt();
                assert!(
                    (freq - p).abs() < band,
                    "transition {clean}->{noisy_state}: {freq} vs {p}"
                );
            }
        }
    }

    #[test]
    fn gaussian_noise_has_requested_moments() {
        let n = 1_000_000usize;
        let d = 2usize;
        let data = vec![0.0; n * d];
        let ch = GaussianChannel::shared(0.1, d).unwrap();
        let noisy = corrupt_gaussian(&data, n, d, &ch, 5).unwrap();
        for col in 0..d {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for row in 0..n {
                let delta = noisy[row * d + col];
                sum += delta;
                sum_sq += delta * delta;
            }
            let (mean, _) = mean_and_se(sum, sum_sq, n as u64);
            let var = sum_sq / n as f64 - mean * mean;
            assert!(mean.abs() < 0.001, "column {col} mean {mean}");
            assert!((var - 0.1).abs() < 0.001, "column {col} variance {var}");
        }
    }

    #[test]
    fn tiny_gaussian_variance_is_near_identity() {
        let data = vec![1.0, -2.0, 0.5, 3.0];
        let ch = GaussianChannel::shared(1e-12, 2).unwrap();
        let noisy = corrupt_gaussian(&data, 2, 2, &ch, 3).unwrap();
        for (a, b) in data.iter().zip(&noisy) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn gaussian_dimension_mismatch_is_rejected() {
        let ch = GaussianChannel::shared(0.1, 3).unwrap();
        assert!(corrupt_gaussian(&[0.0; 4], 2, 2, &ch, 0).is_err());
    }

    #[test]
    fn posterior_with_no_observations_returns_prior() {
        let ch = symmetric_flip(0.2);
        let post = posterior_over_clean(&[0.3, 0.7], &[], &ch).unwrap();
        assert_relative_eq!(post[0], 0.3, epsilon = 1e-12);
        assert_relative_eq!(post[1], 0.7, epsilon = 1e-12);
    }

    #[test]
    fn posterior_three_matching_observations() {
        let ch = symmetric_flip(0.2);
        let post = posterior_over_clean(&[0.5, 0.5], &[1, 1, 1], &ch).unwrap();
        let expect = 0.8f64.powi(3) / (0.8f64.powi(3) + 0.2f64.powi(3));
        assert_relative_eq!(post[1], expect, epsilon = 1e-12);
        assert_relative_eq!(post[1], 0.9846, epsilon = 5e-5);
    }

    #[test]
    fn posterior_under_uninformative_channel_stays_uniform() {
        let ch = symmetric_flip(0.5);
        let post = posterior_over_clean(&[0.5, 0.5], &[0, 1, 1, 0, 0], &ch).unwrap();
        assert_relative_eq!(post[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn posterior_is_invariant_to_prior_rescaling() {
        let ch = symmetric_flip(0.3);
        let a = posterior_over_clean(&[0.25, 0.75], &[1, 0, 1], &ch).unwrap();
        let b = posterior_over_clean(&[1.0, 3.0], &[1, 0, 1], &ch).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, epsilon = 1e-12);
        }
        let sum: f64 = a.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn posterior_degenerate_evidence_errors() {
        // Zero prior mass on state 1 plus a noiseless channel makes the
        // observation 1 impossible.
        let identity = symmetric_flip(0.0);
        let err = posterior_over_clean(&[1.0, 0.0], &[1], &identity).unwrap_err();
        assert!(matches!(err, Error::DegenerateEvidence));
    }

    #[test]
    fn channel_spec_round_trips_through_json() {
        let specs = [
            r#"{"kind":"flip","p_flip":0.2}"#,
            r#"{"kind":"uniform_state","num_states":256,"p_f":0.3}"#,
            r#"{"kind":"gaussian","variance":0.1}"#,
        ];
        for s in specs {
            let spec: ChannelSpec = serde_json::from_str(s).unwrap();
            let back = serde_json::to_string(&spec).unwrap();
            let again: ChannelSpec = serde_json::from_str(&back).unwrap();
            assert_eq!(spec, again);
        }
        let spec: ChannelSpec = serde_json::from_str(r#"{"kind":"flip","p_flip":0.2}"#).unwrap();
        match spec.resolve(1).unwrap() {
            Channel::Flip(f) => assert_eq!(f.p_0to1(), 0.2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
