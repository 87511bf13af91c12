//! Dataset representation, synthetic generators with known ground truth,
//! and IDX/CSV ingestion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::channels::{self, Channel, FlipChannel};
use crate::error::{Error, Result};
use crate::math::sigmoid;
use crate::prior::{DiscretePrior, PRIOR_FLOOR};
use crate::rng::{stream_rng, sub_seed};

/// What a feature column holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Discrete { num_states: usize },
    Continuous,
}

/// Feature storage; all columns of a dataset share one kind.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureData {
    /// Row-major state indices in [0, K).
    Discrete(Vec<u16>),
    /// Row-major real values.
    Continuous(Vec<f64>),
}

/// Where the values came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    Clean,
    Corrupted { channel_id: String, seed: u64 },
}

/// N records of (feature vector, binary label).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    num_records: usize,
    dim: usize,
    features: FeatureData,
    labels: Vec<u8>,
    domains: Vec<FeatureKind>,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new_discrete(
        states: Vec<u16>,
        labels: Vec<u8>,
        dim: usize,
        num_states: usize,
    ) -> Result<Self> {
        let n = labels.len();
        if states.len() != n * dim {
            return Err(Error::Data(format!(
                "feature length {} does not match {n} records x {dim} dims",
                states.len()
            )));
        }
        if let Some(&bad) = states.iter().find(|&&s| usize::from(s) >= num_states) {
            return Err(Error::StateOutOfRange {
                state: usize::from(bad),
                num_states,
            });
        }
        if labels.iter().any(|&c| c > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(LabeledDataset {
            num_records: n,
            dim,
            features: FeatureData::Discrete(states),
            labels,
            domains: vec![FeatureKind::Discrete { num_states }; dim],
            provenance: Provenance::Clean,
        })
    }

    pub fn new_continuous(values: Vec<f64>, labels: Vec<u8>, dim: usize) -> Result<Self> {
        let n = labels.len();
        if values.len() != n * dim {
            return Err(Error::Data(format!(
                "feature length {} does not match {n} records x {dim} dims",
                values.len()
            )));
        }
        if labels.iter().any(|&c| c > 1) {
            return Err(Error::Data("labels must be 0 or 1".into()));
        }
        Ok(LabeledDataset {
            num_records: n,
            dim,
            features: FeatureData::Continuous(values),
            labels,
            domains: vec![FeatureKind::Continuous; dim],
            provenance: Provenance::Clean,
        })
    }

    pub fn num_records(&self) -> usize {
        self.num_records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn domains(&self) -> &[FeatureKind] {
        &self.domains
    }

    pub fn feature_kind(&self) -> FeatureKind {
        self.domains
            .first()
            .copied()
            .unwrap_or(FeatureKind::Continuous)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn discrete_states(&self) -> Option<&[u16]> {
        match &self.features {
            FeatureData::Discrete(s) => Some(s),
            FeatureData::Continuous(_) => None,
        }
    }

    pub fn continuous_values(&self) -> Option<&[f64]> {
        match &self.features {
            FeatureData::Continuous(v) => Some(v),
            FeatureData::Discrete(_) => None,
        }
    }

    /// Raw feature value as f64, regardless of the storage kind.
    pub fn feature_f64(&self, record: usize, d: usize) -> f64 {
        match &self.features {
            FeatureData::Discrete(s) => f64::from(s[record * self.dim + d]),
            FeatureData::Continuous(v) => v[record * self.dim + d],
        }
    }

    /// Copies record features (as f64) into `out`.
    pub fn copy_record_f64(&self, record: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        for (d, slot) in out.iter_mut().enumerate() {
            *slot = self.feature_f64(record, d);
        }
    }

    /// New dataset with the selected records, preserving domain metadata
    /// and provenance.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.num_records {
                return Err(Error::Data(format!("record index {i} out of range")));
            }
        }
        let labels: Vec<u8> = indices.iter().map(|&i| self.labels[i]).collect();
        let features = match &self.features {
            FeatureData::Discrete(s) => {
                let mut out = Vec::with_capacity(indices.len() * self.dim);
                for &i in indices {
                    out.extend_from_slice(&s[i * self.dim..(i + 1) * self.dim]);
                }
                FeatureData::Discrete(out)
            }
            FeatureData::Continuous(v) => {
                let mut out = Vec::with_capacity(indices.len() * self.dim);
                for &i in indices {
                    out.extend_from_slice(&v[i * self.dim..(i + 1) * self.dim]);
                }
                FeatureData::Continuous(out)
            }
        };
        Ok(LabeledDataset {
            num_records: indices.len(),
            dim: self.dim,
            features,
            labels,
            domains: self.domains.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Reinterprets discrete states as continuous values scaled by `scale`
    /// (continuous data is passed through unchanged).
    pub fn to_continuous(&self, scale: f64) -> LabeledDataset {
        let values = match &self.features {
            FeatureData::Discrete(s) => s.iter().map(|&x| f64::from(x) * scale).collect(),
            FeatureData::Continuous(v) => v.clone(),
        };
        LabeledDataset {
            num_records: self.num_records,
            dim: self.dim,
            features: FeatureData::Continuous(values),
            labels: self.labels.clone(),
            domains: vec![FeatureKind::Continuous; self.dim],
            provenance: self.provenance.clone(),
        }
    }

    /// Releases the randomised-response copy of this dataset: labels through
    /// the flip channel, features through the input channel. Only clean data
    /// can be corrupted; provenance is set exactly once.
    pub fn corrupt(
        &self,
        label_channel: Option<&FlipChannel>,
        feature_channel: Option<&Channel>,
        seed: u64,
    ) -> Result<LabeledDataset> {
        if self.provenance != Provenance::Clean {
            return Err(Error::Data(
                "dataset is already corrupted; randomised response releases one copy".into(),
            ));
        }
        let labels = match label_channel {
            Some(ch) => channels::corrupt_flip(&self.labels, ch, sub_seed(seed, "labels"))?,
            None => self.labels.clone(),
        };
        let feature_seed = sub_seed(seed, "features");
        let features = match (feature_channel, &self.features) {
            (None, f) => f.clone(),
            (Some(Channel::UniformState(ch)), FeatureData::Discrete(s)) => {
                if ch.num_states() != self.expect_num_states()? {
                    return Err(Error::DimensionMismatch {
                        expected: self.expect_num_states()?,
                        got: ch.num_states(),
                    });
                }
                FeatureData::Discrete(channels::corrupt_uniform_state(s, ch, feature_seed)?)
            }
            (Some(Channel::Discrete(ch)), FeatureData::Discrete(s)) => {
                FeatureData::Discrete(channels::corrupt_discrete(s, ch, feature_seed)?)
            }
            (Some(Channel::Gaussian(ch)), FeatureData::Continuous(v)) => FeatureData::Continuous(
                channels::corrupt_gaussian(v, self.num_records, self.dim, ch, feature_seed)?,
            ),
            (Some(ch), _) => {
                return Err(Error::Data(format!(
                    "channel {} does not match the feature domain",
                    ch.id()
                )))
            }
        };
        let mut ids = Vec::new();
        if let Some(ch) = label_channel {
            ids.push(Channel::Flip(*ch).id());
        }
        if let Some(ch) = feature_channel {
            ids.push(ch.id());
        }
        Ok(LabeledDataset {
            num_records: self.num_records,
            dim: self.dim,
            features,
            labels,
            domains: self.domains.clone(),
            provenance: Provenance::Corrupted {
                channel_id: ids.join("+"),
                seed,
            },
        })
    }

    fn expect_num_states(&self) -> Result<usize> {
        match self.feature_kind() {
            FeatureKind::Discrete { num_states } => Ok(num_states),
            FeatureKind::Continuous => {
                Err(Error::Data("expected discrete features".into()))
            }
        }
    }

    /// Stable content hash of labels and feature values (FNV-1a over bytes).
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for &c in &self.labels {
            eat(c);
        }
        match &self.features {
            FeatureData::Discrete(s) => {
                for &x in s {
                    for b in x.to_le_bytes() {
                        eat(b);
                    }
                }
            }
            FeatureData::Continuous(v) => {
                for &x in v {
                    for b in x.to_bits().to_le_bytes() {
                        eat(b);
                    }
                }
            }
        }
        h
    }

    /// Writes the dataset as CSV with header `c,x0..x{D-1}`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["c".to_string()];
        header.extend((0..self.dim).map(|d| format!("x{d}")));
        w.write_record(&header)?;
        let mut row = Vec::with_capacity(self.dim + 1);
        for n in 0..self.num_records {
            row.clear();
            row.push(self.labels[n].to_string());
            match &self.features {
                FeatureData::Discrete(s) => {
                    row.extend(s[n * self.dim..(n + 1) * self.dim].iter().map(u16::to_string));
                }
                FeatureData::Continuous(v) => {
                    row.extend(v[n * self.dim..(n + 1) * self.dim].iter().map(f64::to_string));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Loads a dataset from CSV (`c,x0..x{D-1}` header). `kind` decides whether
/// feature cells are parsed as state indices or reals.
pub fn load_csv(path: &Path, kind: FeatureKind) -> Result<LabeledDataset> {
    let file = BufReader::new(File::open(path)?);
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    if headers.is_empty() || &headers[0] != "c" {
        return Err(Error::Data(format!(
            "{}: first CSV column must be `c`",
            path.display()
        )));
    }
    let dim = headers.len() - 1;
    let mut labels = Vec::new();
    let mut states: Vec<u16> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dim + 1 {
            return Err(Error::Data(format!(
                "{}: row {line} has {} cells, expected {}",
                path.display(),
                rec.len(),
                dim + 1
            )));
        }
        let c: u8 = rec[0]
            .parse()
            .map_err(|_| Error::Data(format!("bad label {:?} on row {line}", &rec[0])))?;
        labels.push(c);
        for d in 0..dim {
            let cell = &rec[d + 1];
            match kind {
                FeatureKind::Discrete { .. } => {
                    let s: u16 = cell.parse().map_err(|_| {
                        Error::Data(format!("bad state {cell:?} on row {line}"))
                    })?;
                    states.push(s);
                }
                FeatureKind::Continuous => {
                    let v: f64 = cell.parse().map_err(|_| {
                        Error::Data(format!("bad value {cell:?} on row {line}"))
                    })?;
                    values.push(v);
                }
            }
        }
    }
    match kind {
        FeatureKind::Discrete { num_states } => {
            LabeledDataset::new_discrete(states, labels, dim, num_states)
        }
        FeatureKind::Continuous => LabeledDataset::new_continuous(values, labels, dim),
    }
}

/// Synthetic Gaussian-input logistic data with known true direction.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_records: usize,
    pub mean: Vec<f64>,
    /// Diagonal of the input covariance.
    pub cov_diag: Vec<f64>,
    /// True weight vector; must have unit norm.
    pub theta0: Vec<f64>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Zero-mean isotropic inputs with theta0 along a fixed direction.
    pub fn isotropic(num_records: usize, dim: usize, seed: u64) -> Self {
        let mut theta0 = vec![1.0; dim];
        let norm = (dim as f64).sqrt();
        for t in &mut theta0 {
            *t /= norm;
        }
        SyntheticSpec {
            num_records,
            mean: vec![0.0; dim],
            cov_diag: vec![1.0; dim],
            theta0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.theta0.len();
        if self.mean.len() != d || self.cov_diag.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.mean.len().min(self.cov_diag.len()),
            });
        }
        if self.cov_diag.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Data("covariance diagonal must be positive".into()));
        }
        let norm: f64 = self.theta0.iter().map(|t| t * t).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Data(format!("theta0 must have unit norm, got {norm}")));
        }
        Ok(())
    }
}

/// Draws x_n ~ N(mean, diag) and c_n ~ Bernoulli(sigmoid(theta0 . x_n)).
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    let d = spec.theta0.len();
    let normals: Vec<Normal<f64>> = spec
        .cov_diag
        .iter()
        .zip(&spec.mean)
        .map(|(&v, &m)| Normal::new(m, v.sqrt()).expect("positive variance"))
        .collect();
    let n = spec.num_records;
    let mut values = vec![0.0; n * d];
    let mut labels = vec![0u8; n];
    for rec in 0..n {
        let mut rng = stream_rng(spec.seed, rec as u64);
        let mut logit = 0.0;
        for dd in 0..d {
            let x = normals[dd].sample(&mut rng);
            values[rec * d + dd] = x;
            logit += spec.theta0[dd] * x;
        }
        labels[rec] = u8::from(rng.random::<f64>() < sigmoid(logit));
    }
    LabeledDataset::new_continuous(values, labels, d)
}

/// Synthetic discrete-state surrogate for the pixel experiment, shaped
/// like a tiny image problem. Informative dimensions carry the class
/// signal through exponential-ramp state tables (class 1 favors high
/// states, class 0 low states), so the Bayes rule is logistic in the
/// scaled states. Background dimensions sit at state 0 with probability
/// `retention` and are otherwise uniform; their concentrated marginals are
/// what an informative input prior can exploit, the way pixel backgrounds
/// are in images.
#[derive(Debug, Clone)]
pub struct SyntheticDiscreteSpec {
    pub records_per_class: usize,
    pub informative_dims: usize,
    pub background_dims: usize,
    pub num_states: usize,
    /// Ramp strength of the informative dimensions.
    pub sharpness: f64,
    /// Probability a background dimension sits at state 0.
    pub retention: f64,
    pub seed: u64,
}

impl SyntheticDiscreteSpec {
    pub fn dim(&self) -> usize {
        self.informative_dims + self.background_dims
    }

    /// Class-conditional table for an informative dimension.
    pub fn ramp_table(&self, class: u8) -> Vec<f64> {
        let k = self.num_states;
        let sign = if class == 1 { 1.0 } else { -1.0 };
        let mut t: Vec<f64> = (0..k)
            .map(|s| {
                let u = s as f64 / (k as f64 - 1.0) - 0.5;
                (self.sharpness * sign * 2.0 * u).exp()
            })
            .collect();
        let sum: f64 = t.iter().sum();
        for v in &mut t {
            *v /= sum;
        }
        t
    }
}

/// Generates a balanced two-class discrete dataset (classes interleaved).
pub fn generate_synthetic_discrete(spec: &SyntheticDiscreteSpec) -> Result<LabeledDataset> {
    if spec.num_states < 2 || spec.dim() == 0 || spec.records_per_class == 0 {
        return Err(Error::Data("degenerate synthetic discrete spec".into()));
    }
    if !(0.0..=1.0).contains(&spec.retention) {
        return Err(Error::Data(format!(
            "retention {} outside [0, 1]",
            spec.retention
        )));
    }
    let dim = spec.dim();
    let n = spec.records_per_class * 2;
    let cdfs: [Vec<f64>; 2] = [cumsum(&spec.ramp_table(0)), cumsum(&spec.ramp_table(1))];
    let mut states = vec![0u16; n * dim];
    let mut labels = vec![0u8; n];
    for rec in 0..n {
        let c = (rec % 2) as u8;
        labels[rec] = c;
        let mut rng = stream_rng(spec.seed, rec as u64);
        let cdf = &cdfs[usize::from(c)];
        for d in 0..dim {
            states[rec * dim + d] = if d < spec.informative_dims {
                search_cdf(cdf, rng.random::<f64>()) as u16
            } else if rng.random::<f64>() < spec.retention {
                0
            } else {
                rng.random_range(0..spec.num_states) as u16
            };
        }
    }
    LabeledDataset::new_discrete(states, labels, dim, spec.num_states)
}

fn cumsum(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|&x| {
            acc += x;
            acc
        })
        .collect()
}

/// Smallest index with cdf[i] > u.
pub(crate) fn search_cdf(cdf: &[f64], u: f64) -> usize {
    let mut lo = 0usize;
    let mut hi = cdf.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        if cdf[mid] > u {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Data("truncated IDX header".into()))?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an MNIST-style IDX image/label pair, keeps two digit classes, and
/// maps them to binary labels (first class -> 0, second -> 1). When
/// `per_class` is given the records are subsampled to that count per class
/// with the seed; pixels become 256-state discrete features.
pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    keep_classes: (u8, u8),
    per_class: Option<usize>,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut img = BufReader::new(File::open(images_path)?);
    let magic = read_u32_be(&mut img)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad IDX image magic 0x{magic:08x}",
            images_path.display()
        )));
    }
    let n_img = read_u32_be(&mut img)? as usize;
    let rows = read_u32_be(&mut img)? as usize;
    let cols = read_u32_be(&mut img)? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; n_img * dim];
    img.read_exact(&mut pixels)
        .map_err(|_| Error::Data(format!("{}: truncated image data", images_path.display())))?;

    let mut lab = BufReader::new(File::open(labels_path)?);
    let magic = read_u32_be(&mut lab)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad IDX label magic 0x{magic:08x}",
            labels_path.display()
        )));
    }
    let n_lab = read_u32_be(&mut lab)? as usize;
    if n_lab != n_img {
        return Err(Error::Data(format!(
            "image/label count mismatch: {n_img} vs {n_lab}"
        )));
    }
    let mut digits = vec![0u8; n_lab];
    lab.read_exact(&mut digits)
        .map_err(|_| Error::Data(format!("{}: truncated label data", labels_path.display())))?;

    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &digit) in digits.iter().enumerate() {
        if digit == keep_classes.0 {
            by_class[0].push(i);
        } else if digit == keep_classes.1 {
            by_class[1].push(i);
        }
    }
    for (slot, class) in [keep_classes.0, keep_classes.1].iter().enumerate() {
        if by_class[slot].is_empty() {
            return Err(Error::Data(format!("class {class} absent from {}", labels_path.display())));
        }
    }
    let mut selected: Vec<(usize, u8)> = Vec::new();
    for (binary, indices) in by_class.iter_mut().enumerate() {
        let take = match per_class {
            Some(k) => {
                if k > indices.len() {
                    return Err(Error::Data(format!(
                        "requested {k} records of class {} but only {} available",
                        if binary == 0 { keep_classes.0 } else { keep_classes.1 },
                        indices.len()
                    )));
                }
                // Seeded partial Fisher-Yates over the class indices.
                let mut rng = stream_rng(sub_seed(seed, "idx-subsample"), binary as u64);
                for i in 0..k {
                    let j = rng.random_range(i..indices.len());
                    indices.swap(i, j);
                }
                k
            }
            None => indices.len(),
        };
        selected.extend(indices[..take].iter().map(|&i| (i, binary as u8)));
    }
    selected.sort_unstable();

    let mut states = Vec::with_capacity(selected.len() * dim);
    let mut labels = Vec::with_capacity(selected.len());
    for &(i, c) in &selected {
        states.extend(pixels[i * dim..(i + 1) * dim].iter().map(|&b| u16::from(b)));
        labels.push(c);
    }
    LabeledDataset::new_discrete(states, labels, dim, 256)
}

/// Empirical per-dimension state frequencies of a discrete dataset, with
/// the standard prior floor. Used for the "true prior" experimental arm.
pub fn true_marginal_prior(data: &LabeledDataset) -> Result<DiscretePrior> {
    let states = data
        .discrete_states()
        .ok_or_else(|| Error::Data("true marginal prior needs discrete features".into()))?;
    let num_states = match data.feature_kind() {
        FeatureKind::Discrete { num_states } => num_states,
        FeatureKind::Continuous => unreachable!(),
    };
    let d = data.dim();
    let mut counts = vec![vec![0.0f64; num_states]; d];
    for rec in 0..data.num_records() {
        for (dd, row) in counts.iter_mut().enumerate() {
            row[usize::from(states[rec * d + dd])] += 1.0;
        }
    }
    DiscretePrior::from_weights(counts, PRIOR_FLOOR)
}
