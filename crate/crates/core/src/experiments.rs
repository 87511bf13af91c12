//! Config-driven experiment harness: corrupt, train every arm on the same
//! released data, evaluate on clean held-out data, aggregate over
//! repetitions, and render figures.
//!
//! Cells run sequentially in (sweep, repetition) order so the report CSV is
//! appended deterministically and runs are resumable; parallelism lives
//! inside corruption, training, and evaluation.

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::ReconstructionCurve;
use crate::channels::{Channel, ChannelSpec, FlipChannel};
use crate::data::{
    generate_synthetic, generate_synthetic_discrete, load_csv, load_idx, true_marginal_prior,
    FeatureKind, LabeledDataset, SyntheticDiscreteSpec, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::logreg::{
    predict, train_logistic, train_spread_logreg, FeatureMap, InputNoise, PriorMode, TrainConfig,
};
use crate::plot::{panel_row, GrayImage, LinePlot, Series, SvgOutput};
use crate::prior::GaussianPrior;
use crate::rng::{stable_hash, stream_rng};

/// The training arms the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    CleanLogreg,
    NoisyLogreg,
    SpreadFlat,
    SpreadLearned,
    SpreadTrue,
    SpreadGaussian,
}

impl Arm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::CleanLogreg => "clean-logreg",
            Arm::NoisyLogreg => "noisy-logreg",
            Arm::SpreadFlat => "spread-flat",
            Arm::SpreadLearned => "spread-learned",
            Arm::SpreadTrue => "spread-true",
            Arm::SpreadGaussian => "spread-gaussian",
        }
    }

    pub const ALL: [Arm; 6] = [
        Arm::CleanLogreg,
        Arm::NoisyLogreg,
        Arm::SpreadFlat,
        Arm::SpreadLearned,
        Arm::SpreadTrue,
        Arm::SpreadGaussian,
    ];
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm {s:?}")))
    }
}

/// Where the clean data comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Isotropic Gaussian inputs with a known unit direction; a fresh
    /// training set is drawn per repetition.
    Synthetic {
        train_records: usize,
        test_records: usize,
        dim: usize,
    },
    /// Two-class discrete surrogate with prototype patterns: informative
    /// dimensions separate the classes at opposite extreme states,
    /// background dimensions share a concentrated state.
    SyntheticDiscrete {
        train_per_class: usize,
        test_per_class: usize,
        informative_dims: usize,
        background_dims: usize,
        num_states: usize,
        sharpness: f64,
        retention: f64,
    },
    /// MNIST-style IDX pairs, filtered to two digit classes.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: [u8; 2],
        train_per_class: Option<usize>,
        test_per_class: Option<usize>,
    },
    /// Pre-existing CSV files; `num_states` present means discrete features.
    Csv {
        train: PathBuf,
        test: PathBuf,
        num_states: Option<usize>,
    },
}

fn default_samples() -> usize {
    2
}
fn default_lr() -> f64 {
    0.2
}
fn default_iters() -> usize {
    400
}

/// Trainer hyperparameters shared by all arms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainParams {
    #[serde(default = "default_samples")]
    pub samples_per_point: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_iters")]
    pub max_outer_iters: usize,
    /// Optional early-stop tolerance on the smoothed energy; by default
    /// every arm runs the full iteration budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            samples_per_point: default_samples(),
            learning_rate: default_lr(),
            max_outer_iters: default_iters(),
            tolerance: None,
        }
    }
}

fn default_prior_var() -> f64 {
    10.0
}

/// Gaussian prior used by the spread-gaussian arm; fixed, not learned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPriorSpec {
    #[serde(default)]
    pub mean: f64,
    #[serde(default = "default_prior_var")]
    pub variance: f64,
}

impl Default for GaussianPriorSpec {
    fn default() -> Self {
        GaussianPriorSpec {
            mean: 0.0,
            variance: default_prior_var(),
        }
    }
}

/// Full experiment description, as serialized in the config JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub arms: Vec<Arm>,
    /// Flip probabilities swept on the x axis.
    pub sweep: Vec<f64>,
    pub label_channel: Option<ChannelSpec>,
    pub input_channel: Option<ChannelSpec>,
    pub repetitions: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub train: TrainParams,
    #[serde(default)]
    pub gaussian_prior: GaussianPriorSpec,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.arms.is_empty() || self.sweep.is_empty() {
            return Err(Error::Config("need at least one arm and one sweep value".into()));
        }
        for &p in &self.sweep {
            if !(0.0..0.5).contains(&p) {
                return Err(Error::Config(format!("sweep value {p} outside [0, 0.5)")));
            }
        }
        Ok(())
    }
}

/// One report row; metric cells are empty for failed rows.
#[derive(Debug, Clone)]
pub struct ReportRow {
    pub arm: Arm,
    pub p_f: f64,
    pub rep: usize,
    pub seed: u64,
    pub train_acc: Option<f64>,
    pub test_acc: Option<f64>,
    pub energy: Option<f64>,
    pub wall_ms: u64,
    pub ok: bool,
}

/// All rows of a run, in report order.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

/// Mean/stddev of clean-test accuracy for one (arm, p_f) cell.
#[derive(Debug, Clone)]
pub struct CellAggregate {
    pub arm: Arm,
    pub p_f: f64,
    pub count_ok: usize,
    pub count_failed: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
    pub mean_train_acc: f64,
}

impl ExperimentReport {
    /// Aggregates the ok rows per (arm, p_f); failed rows are counted but
    /// excluded from the means.
    pub fn aggregate(&self) -> Vec<CellAggregate> {
        let mut cells: Vec<(Arm, f64)> = Vec::new();
        for row in &self.rows {
            if !cells.iter().any(|&(a, p)| a == row.arm && p == row.p_f) {
                cells.push((row.arm, row.p_f));
            }
        }
        cells
            .into_iter()
            .map(|(arm, p_f)| {
                let ok: Vec<&ReportRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.arm == arm && r.p_f == p_f && r.ok)
                    .collect();
                let failed = self
                    .rows
                    .iter()
                    .filter(|r| r.arm == arm && r.p_f == p_f && !r.ok)
                    .count();
                let n = ok.len().max(1) as f64;
                let mean_test: f64 =
                    ok.iter().filter_map(|r| r.test_acc).sum::<f64>() / n;
                let mean_train: f64 =
                    ok.iter().filter_map(|r| r.train_acc).sum::<f64>() / n;
                let var: f64 = ok
                    .iter()
                    .filter_map(|r| r.test_acc)
                    .map(|a| (a - mean_test) * (a - mean_test))
                    .sum::<f64>()
                    / n;
                CellAggregate {
                    arm,
                    p_f,
                    count_ok: ok.len(),
                    count_failed: failed,
                    mean_test_acc: mean_test,
                    std_test_acc: var.sqrt(),
                    mean_train_acc: mean_train,
                }
            })
            .collect()
    }
}

/// Accuracy and mean log likelihood of a model on clean data.
#[derive(Debug, Clone, Copy)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loglik: f64,
}

/// Threshold-0.5 accuracy and mean class log likelihood.
pub fn evaluate(weights: &[f64], map: &FeatureMap, data: &LabeledDataset) -> Result<Evaluation> {
    let d_out = map.output_dim(data.dim());
    if weights.len() != d_out {
        return Err(Error::DimensionMismatch {
            expected: d_out,
            got: weights.len(),
        });
    }
    let mut raw = vec![0.0; data.dim()];
    let mut mapped = vec![0.0; d_out];
    let mut correct = 0usize;
    let mut ll = 0.0;
    for rec in 0..data.num_records() {
        data.copy_record_f64(rec, &mut raw);
        map.map_into(&raw, &mut mapped);
        let p1 = predict(weights, &mapped);
        let label = data.labels()[rec];
        if u8::from(p1 >= 0.5) == label {
            correct += 1;
        }
        let p = if label == 1 { p1 } else { 1.0 - p1 };
        ll += p.max(f64::MIN_POSITIVE).ln();
    }
    let n = data.num_records() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loglik: ll / n,
    })
}

/// Seed for a non-arm-specific cell quantity (data draw, corruption, ...).
pub fn cell_seed(base_seed: u64, tag: &str, p_f: f64, rep: usize) -> u64 {
    stable_hash(&format!("{base_seed}|{tag}|{p_f}|{rep}"))
}

/// Per-arm training seed.
pub fn arm_seed(base_seed: u64, arm: Arm, p_f: f64, rep: usize) -> u64 {
    stable_hash(&format!("{base_seed}|{arm}|{p_f}|{rep}"))
}

struct DataPlan {
    source: DatasetSource,
    base_seed: u64,
    /// Scale applied when discrete sources feed continuous (Gaussian) arms.
    continuous_scale: Option<f64>,
    test: LabeledDataset,
    idx_pool: Option<LabeledDataset>,
    csv_train: Option<LabeledDataset>,
}

impl DataPlan {
    fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let gaussian_input = matches!(cfg.input_channel, Some(ChannelSpec::Gaussian { .. }));
        let mut idx_pool = None;
        let mut csv_train = None;
        let (test, source_states) = match &cfg.dataset {
            DatasetSource::Synthetic {
                test_records, dim, ..
            } => {
                let mut spec = SyntheticSpec::isotropic(
                    *test_records,
                    *dim,
                    stable_hash(&format!("{}|test", cfg.base_seed)),
                );
                spec.num_records = *test_records;
                (generate_synthetic(&spec)?, None)
            }
            DatasetSource::SyntheticDiscrete {
                test_per_class,
                informative_dims,
                background_dims,
                num_states,
                sharpness,
                retention,
                ..
            } => {
                let spec = SyntheticDiscreteSpec {
                    records_per_class: *test_per_class,
                    informative_dims: *informative_dims,
                    background_dims: *background_dims,
                    num_states: *num_states,
                    sharpness: *sharpness,
                    retention: *retention,
                    seed: stable_hash(&format!("{}|test", cfg.base_seed)),
                };
                (generate_synthetic_discrete(&spec)?, Some(*num_states))
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
                test_per_class,
                ..
            } => {
                idx_pool = Some(load_idx(
                    train_images,
                    train_labels,
                    (classes[0], classes[1]),
                    None,
                    0,
                )?);
                let test = load_idx(
                    test_images,
                    test_labels,
                    (classes[0], classes[1]),
                    *test_per_class,
                    stable_hash(&format!("{}|test", cfg.base_seed)),
                )?;
                (test, Some(256))
            }
            DatasetSource::Csv {
                train,
                test,
                num_states,
            } => {
                let kind = match num_states {
                    Some(k) => FeatureKind::Discrete { num_states: *k },
                    None => FeatureKind::Continuous,
                };
                csv_train = Some(load_csv(train, kind)?);
                (load_csv(test, kind)?, *num_states)
            }
        };
        let continuous_scale = match (gaussian_input, source_states) {
            (true, Some(k)) => Some(1.0 / (k as f64 - 1.0)),
            _ => None,
        };
        if matches!(cfg.input_channel, Some(ChannelSpec::UniformState { .. }))
            && source_states.is_none()
        {
            return Err(Error::Config(
                "uniform_state input channel needs a discrete dataset".into(),
            ));
        }
        let test = match continuous_scale {
            Some(s) => test.to_continuous(s),
            None => test,
        };
        Ok(DataPlan {
            source: cfg.dataset.clone(),
            base_seed: cfg.base_seed,
            continuous_scale,
            test,
            idx_pool,
            csv_train,
        })
    }

    /// Clean training subset for one cell; fresh draw per repetition.
    fn train_subset(&self, p_f: f64, rep: usize) -> Result<LabeledDataset> {
        let seed = cell_seed(self.base_seed, "data", p_f, rep);
        let subset = match &self.source {
            DatasetSource::Synthetic {
                train_records, dim, ..
            } => {
                let mut spec = SyntheticSpec::isotropic(*train_records, *dim, seed);
                spec.num_records = *train_records;
                generate_synthetic(&spec)?
            }
            DatasetSource::SyntheticDiscrete {
                train_per_class,
                informative_dims,
                background_dims,
                num_states,
                sharpness,
                retention,
                ..
            } => generate_synthetic_discrete(&SyntheticDiscreteSpec {
                records_per_class: *train_per_class,
                informative_dims: *informative_dims,
                background_dims: *background_dims,
                num_states: *num_states,
                sharpness: *sharpness,
                retention: *retention,
                seed,
            })?,
            DatasetSource::Idx { train_per_class, .. } => {
                let pool = self.idx_pool.as_ref().expect("pool loaded");
                match train_per_class {
                    Some(k) => balanced_subsample(pool, *k, seed)?,
                    None => pool.clone(),
                }
            }
            DatasetSource::Csv { .. } => self.csv_train.as_ref().expect("csv loaded").clone(),
        };
        Ok(match self.continuous_scale {
            Some(s) => subset.to_continuous(s),
            None => subset,
        })
    }
}

/// Draws `per_class` records of each class without replacement (seeded).
pub fn balanced_subsample(
    data: &LabeledDataset,
    per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    use rand::Rng;
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &c) in data.labels().iter().enumerate() {
        by_class[usize::from(c)].push(i);
    }
    let mut selected = Vec::with_capacity(per_class * 2);
    for (class, indices) in by_class.iter_mut().enumerate() {
        if indices.len() < per_class {
            return Err(Error::Data(format!(
                "class {class} has {} records, need {per_class}",
                indices.len()
            )));
        }
        let mut rng = stream_rng(seed, class as u64);
        for i in 0..per_class {
            let j = rng.random_range(i..indices.len());
            indices.swap(i, j);
        }
        selected.extend_from_slice(&indices[..per_class]);
    }
    selected.sort_unstable();
    data.subset(&selected)
}

/// Feature map for a training set: scaled states for discrete data,
/// mean-centering for continuous data (the corrupted mean is an unbiased
/// estimate of the clean mean, so centering leaks nothing extra).
pub fn default_feature_map(data: &LabeledDataset) -> FeatureMap {
    match data.feature_kind() {
        FeatureKind::Discrete { num_states } => {
            FeatureMap::scaled(1.0 / (num_states as f64 - 1.0))
        }
        FeatureKind::Continuous => {
            let d = data.dim();
            let n = data.num_records() as f64;
            let mut offsets = vec![0.0; d];
            for rec in 0..data.num_records() {
                for (dd, slot) in offsets.iter_mut().enumerate() {
                    *slot += data.feature_f64(rec, dd);
                }
            }
            for o in &mut offsets {
                *o /= n;
            }
            FeatureMap {
                scale: 1.0,
                offsets,
                append_bias: true,
            }
        }
    }
}

struct CellData<'a> {
    clean: &'a LabeledDataset,
    corrupted: &'a LabeledDataset,
    test: &'a LabeledDataset,
    label_channel: Option<FlipChannel>,
    input_noise: Option<InputNoise>,
    train: &'a TrainParams,
    gaussian_prior: &'a GaussianPriorSpec,
}

fn run_arm(ctx: &CellData<'_>, arm: Arm, seed: u64) -> Result<(f64, f64, f64)> {
    let tp = ctx.train;
    match arm {
        Arm::CleanLogreg | Arm::NoisyLogreg => {
            let train_data = if arm == Arm::CleanLogreg {
                ctx.clean
            } else {
                ctx.corrupted
            };
            let map = default_feature_map(train_data);
            let fit = train_logistic(train_data, &map, tp.learning_rate, tp.max_outer_iters)?;
            let train_eval = evaluate(&fit.weights, &map, ctx.clean)?;
            let test_eval = evaluate(&fit.weights, &map, ctx.test)?;
            Ok((train_eval.accuracy, test_eval.accuracy, fit.final_loglik))
        }
        Arm::SpreadFlat | Arm::SpreadLearned | Arm::SpreadTrue => {
            if !matches!(ctx.corrupted.feature_kind(), FeatureKind::Discrete { .. }) {
                return Err(Error::Data(format!(
                    "{arm} needs discrete features, got continuous"
                )));
            }
            if matches!(ctx.input_noise, Some(InputNoise::Gaussian(_))) {
                return Err(Error::Data(format!(
                    "{arm} cannot model gaussian input noise"
                )));
            }
            let prior_mode = match arm {
                Arm::SpreadFlat => PriorMode::Flat,
                Arm::SpreadLearned => PriorMode::Learned,
                Arm::SpreadTrue => PriorMode::FixedTrue(true_marginal_prior(ctx.clean)?),
                _ => unreachable!(),
            };
            let map = default_feature_map(ctx.corrupted);
            let cfg = TrainConfig {
                samples_per_point: tp.samples_per_point,
                learning_rate: tp.learning_rate,
                max_outer_iters: tp.max_outer_iters,
                seed,
                prior_mode,
                tolerance: tp.tolerance.unwrap_or(f64::NEG_INFINITY),
            };
            let fit = train_spread_logreg(
                ctx.corrupted,
                ctx.label_channel.as_ref(),
                ctx.input_noise.as_ref(),
                &map,
                &cfg,
            )?;
            let train_eval = evaluate(&fit.weights, &map, ctx.clean)?;
            let test_eval = evaluate(&fit.weights, &map, ctx.test)?;
            Ok((train_eval.accuracy, test_eval.accuracy, fit.final_energy))
        }
        Arm::SpreadGaussian => {
            if ctx.corrupted.continuous_values().is_none() {
                return Err(Error::Data(
                    "spread-gaussian needs continuous features".into(),
                ));
            }
            if matches!(ctx.input_noise, Some(InputNoise::UniformState(_))) {
                return Err(Error::Data(
                    "spread-gaussian cannot model uniform-state input noise".into(),
                ));
            }
            let prior = GaussianPrior::isotropic(
                ctx.gaussian_prior.mean,
                ctx.gaussian_prior.variance,
                ctx.corrupted.dim(),
            )?;
            let map = default_feature_map(ctx.corrupted);
            let cfg = TrainConfig {
                samples_per_point: tp.samples_per_point,
                learning_rate: tp.learning_rate,
                max_outer_iters: tp.max_outer_iters,
                seed,
                prior_mode: PriorMode::Gaussian(prior),
                tolerance: tp.tolerance.unwrap_or(f64::NEG_INFINITY),
            };
            let fit = train_spread_logreg(
                ctx.corrupted,
                ctx.label_channel.as_ref(),
                ctx.input_noise.as_ref(),
                &map,
                &cfg,
            )?;
            let train_eval = evaluate(&fit.weights, &map, ctx.clean)?;
            let test_eval = evaluate(&fit.weights, &map, ctx.test)?;
            Ok((train_eval.accuracy, test_eval.accuracy, fit.final_energy))
        }
    }
}

const REPORT_HEADER: [&str; 9] = [
    "arm", "p_f", "rep", "seed", "train_acc", "test_acc", "energy", "wall_ms", "status",
];

fn row_fields(row: &ReportRow) -> [String; 9] {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    [
        row.arm.to_string(),
        row.p_f.to_string(),
        row.rep.to_string(),
        row.seed.to_string(),
        opt(row.train_acc),
        opt(row.test_acc),
        opt(row.energy),
        row.wall_ms.to_string(),
        if row.ok { "ok" } else { "failed" }.to_string(),
    ]
}

/// Reads rows back from a report CSV.
pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let mut rows = Vec::new();
    let mut reader = csv::Reader::from_path(path)?;
    for rec in reader.records() {
        let rec = rec?;
        let parse_opt = |s: &str| -> Option<f64> { s.parse().ok() };
        rows.push(ReportRow {
            arm: rec[0].parse()?,
            p_f: rec[1]
                .parse()
                .map_err(|_| Error::Data(format!("bad p_f {:?}", &rec[1])))?,
            rep: rec[2]
                .parse()
                .map_err(|_| Error::Data(format!("bad rep {:?}", &rec[2])))?,
            seed: rec[3]
                .parse()
                .map_err(|_| Error::Data(format!("bad seed {:?}", &rec[3])))?,
            train_acc: parse_opt(&rec[4]),
            test_acc: parse_opt(&rec[5]),
            energy: parse_opt(&rec[6]),
            wall_ms: rec[7].parse().unwrap_or(0),
            ok: &rec[8] == "ok",
        });
    }
    Ok(ExperimentReport { rows })
}

/// Runs the full protocol. Rows already present in `<out_dir>/report.csv`
/// are skipped, so interrupted runs resume where they stopped.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::create_dir_all(cfg.out_dir.join("figures"))?;
    fs::write(
        cfg.out_dir.join("config-echo.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;

    let plan = DataPlan::prepare(cfg)?;
    let report_path = cfg.out_dir.join("report.csv");
    let mut existing: HashSet<(String, String, usize)> = HashSet::new();
    let mut rows: Vec<ReportRow> = Vec::new();
    if report_path.exists() {
        let prior = read_report(&report_path)?;
        for row in &prior.rows {
            existing.insert((row.arm.to_string(), row.p_f.to_string(), row.rep));
        }
        rows = prior.rows;
    } else {
        let mut f = fs::File::create(&report_path)?;
        writeln!(f, "{}", REPORT_HEADER.join(","))?;
    }
    let mut report_file = fs::OpenOptions::new().append(true).open(&report_path)?;
    let mut hash_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(cfg.out_dir.join("data-hashes.csv"))?;
    if hash_file.metadata()?.len() == 0 {
        writeln!(hash_file, "p_f,rep,hash")?;
    }

    for &p_f in &cfg.sweep {
        for rep in 0..cfg.repetitions {
            let all_done = cfg.arms.iter().all(|arm| {
                existing.contains(&(arm.to_string(), p_f.to_string(), rep))
            });
            if all_done {
                continue;
            }
            let clean = plan.train_subset(p_f, rep)?;
            let label_channel = match &cfg.label_channel {
                Some(spec) => match spec.with_sweep_value(p_f).resolve(clean.dim())? {
                    Channel::Flip(f) => Some(f),
                    other => {
                        return Err(Error::Config(format!(
                            "label channel must be a flip channel, got {}",
                            other.id()
                        )))
                    }
                },
                None => None,
            };
            let input_channel = match &cfg.input_channel {
                Some(spec) => Some(spec.with_sweep_value(p_f).resolve(clean.dim())?),
                None => None,
            };
            let corrupted = clean.corrupt(
                label_channel.as_ref(),
                input_channel.as_ref(),
                cell_seed(cfg.base_seed, "corrupt", p_f, rep),
            )?;
            writeln!(hash_file, "{p_f},{rep},{:016x}", corrupted.content_hash())?;
            let input_noise = match &input_channel {
                Some(Channel::UniformState(ch)) => Some(InputNoise::UniformState(*ch)),
                Some(Channel::Gaussian(ch)) => Some(InputNoise::Gaussian(ch.clone())),
                Some(other) => {
                    return Err(Error::Config(format!(
                        "unsupported input channel {}",
                        other.id()
                    )))
                }
                None => None,
            };
            let ctx = CellData {
                clean: &clean,
                corrupted: &corrupted,
                test: &plan.test,
                label_channel,
                input_noise,
                train: &cfg.train,
                gaussian_prior: &cfg.gaussian_prior,
            };
            for &arm in &cfg.arms {
                if existing.contains(&(arm.to_string(), p_f.to_string(), rep)) {
                    continue;
                }
                let seed = arm_seed(cfg.base_seed, arm, p_f, rep);
                let start = Instant::now();
                let outcome = run_arm(&ctx, arm, seed);
                let wall_ms = start.elapsed().as_millis() as u64;
                let row = match outcome {
                    Ok((train_acc, test_acc, energy)) => ReportRow {
                        arm,
                        p_f,
                        rep,
                        seed,
                        train_acc: Some(train_acc),
                        test_acc: Some(test_acc),
                        energy: Some(energy),
                        wall_ms,
                        ok: true,
                    },
                    Err(err) => {
                        eprintln!("arm {arm} failed at p_f={p_f} rep={rep}: {err}");
                        ReportRow {
                            arm,
                            p_f,
                            rep,
                            seed,
                            train_acc: None,
                            test_acc: None,
                            energy: None,
                            wall_ms,
                            ok: false,
                        }
                    }
                };
                writeln!(report_file, "{}", row_fields(&row).join(","))?;
                report_file.flush()?;
                rows.push(row);
            }
        }
    }
    let report = ExperimentReport { rows };
    let figures = render_figures(cfg, &report, &plan)?;
    for warning in figures {
        eprintln!("figure warning: {warning}");
    }
    Ok(report)
}

/// Accuracy-vs-noise line plot plus, for image-shaped data, clean/corrupted
/// digit rasters. Returns accumulated plot warnings.
fn render_figures(
    cfg: &ExperimentConfig,
    report: &ExperimentReport,
    plan: &DataPlan,
) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    let aggregates = report.aggregate();
    let series: Vec<Series> = cfg
        .arms
        .iter()
        .map(|&arm| Series {
            name: arm.to_string(),
            points: cfg
                .sweep
                .iter()
                .filter_map(|&p_f| {
                    aggregates
                        .iter()
                        .find(|c| c.arm == arm && c.p_f == p_f && c.count_ok > 0)
                        .map(|c| (p_f, c.mean_test_acc))
                })
                .collect(),
        })
        .collect();
    let plot = LinePlot {
        title: "Clean-test accuracy vs corruption probability".into(),
        x_label: "flip probability p_f".into(),
        y_label: "test accuracy".into(),
        series,
    };
    let out = plot.to_svg(760, 520);
    warnings.extend(out.warnings);
    fs::write(cfg.out_dir.join("figures/accuracy-vs-noise.svg"), out.svg)?;

    if plan.test.dim() == 784 {
        let out = digit_grid_svg(cfg, plan)?;
        warnings.extend(out.warnings);
        fs::write(cfg.out_dir.join("figures/noisy-digits.svg"), out.svg)?;
    }
    Ok(warnings)
}

/// One clean example per class alongside its corruption at each sweep level.
fn digit_grid_svg(cfg: &ExperimentConfig, plan: &DataPlan) -> Result<SvgOutput> {
    let test = &plan.test;
    let mut picks = Vec::new();
    for class in 0..2u8 {
        if let Some(idx) = test.labels().iter().position(|&c| c == class) {
            picks.push(idx);
        }
    }
    let sample = test.subset(&picks)?;
    let value_scale = match sample.feature_kind() {
        FeatureKind::Discrete { num_states } => 1.0 / (num_states as f64 - 1.0),
        FeatureKind::Continuous => 1.0,
    };
    let mut images = Vec::new();
    let mut push_images = |data: &LabeledDataset, caption: &str| {
        for rec in 0..data.num_records() {
            let mut pixels = vec![0.0; 784];
            for (d, slot) in pixels.iter_mut().enumerate() {
                *slot = data.feature_f64(rec, d) * value_scale;
            }
            images.push(GrayImage {
                width: 28,
                height: 28,
                pixels,
                caption: format!("{caption} (c={})", data.labels()[rec]),
            });
        }
    };
    push_images(&sample, "clean");
    for &p_f in &cfg.sweep {
        let label_channel = match &cfg.label_channel {
            Some(spec) => match spec.with_sweep_value(p_f).resolve(sample.dim())? {
                Channel::Flip(f) => Some(f),
                _ => None,
            },
            None => None,
        };
        let input_channel = match &cfg.input_channel {
            Some(spec) => Some(spec.with_sweep_value(p_f).resolve(sample.dim())?),
            None => None,
        };
        let corrupted = sample.corrupt(
            label_channel.as_ref(),
            input_channel.as_ref(),
            stable_hash(&format!("{}|figures|{p_f}", cfg.base_seed)),
        )?;
        push_images(&corrupted, &format!("p_f={p_f}"));
    }
    Ok(crate::plot::raster_grid(&images, 2, 84))
}

/// Five-panel reconstruction figure: argmax curves with the identity
/// reference, one panel per flip probability.
pub fn recon_panels_svg(curves: &[ReconstructionCurve]) -> SvgOutput {
    let panels: Vec<LinePlot> = curves
        .iter()
        .map(|curve| LinePlot {
            title: format!("p_f = {}", curve.p_f),
            x_label: "true theta0".into(),
            y_label: "argmax theta".into(),
            series: vec![
                Series {
                    name: "argmax".into(),
                    points: curve
                        .theta0
                        .iter()
                        .zip(&curve.argmax)
                        .map(|(&a, &b)| (a, b))
                        .collect(),
                },
                Series {
                    name: "x = y".into(),
                    points: vec![(0.0, 0.0), (1.0, 1.0)],
                },
            ],
        })
        .collect();
    panel_row(&panels, 260, 260)
}

/// Simulation helper for the concentration demo and its tests: average
/// posterior mass on the true state after M corrupted releases.
pub fn concentration_trials(
    p_f: f64,
    m: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let flip = FlipChannel::symmetric(p_f)?;
    let dense = flip.to_discrete();
    let prior = [0.5, 0.5];
    let mut total = 0.0;
    let mut total_sq = 0.0;
    for t in 0..trials {
        let mut rng = stream_rng(seed, t as u64);
        use rand::Rng;
        let true_state = usize::from(rng.random::<f64>() < 0.5);
        let observations: Vec<usize> = (0..m)
            .map(|_| {
                let flip_draw: f64 = rng.random();
                if flip_draw < p_f {
                    1 - true_state
                } else {
                    true_state
                }
            })
            .collect();
        let post = crate::channels::posterior_over_clean(&prior, &observations, &dense)?;
        total += post[true_state];
        total_sq += post[true_state] * post[true_state];
    }
    let (mean, se) = crate::math::mean_and_se(total, total_sq, trials as u64);
    Ok((mean, se))
}

/// Exact mean and per-trial variance of the posterior mass on the true
/// state after M releases, by summing over the binomial distribution of
/// matching observations. The variance is what a simulation's error band
/// must be based on: it is dominated by rare low-mass draws that small
/// trial counts can miss entirely.
pub fn concentration_exact_moments(p_f: f64, m: usize) -> (f64, f64) {
    let keep = 1.0 - p_f;
    let mut mean = 0.0;
    let mut second = 0.0;
    for k in 0..=m {
        // C(m, k) keep^k p_f^(m-k) is the probability of k matching draws.
        let mut log_choose = 0.0;
        for i in 0..k {
            log_choose += ((m - i) as f64).ln() - ((i + 1) as f64).ln();
        }
        let log_p = log_choose + k as f64 * keep.ln() + (m - k) as f64 * p_f.ln();
        let w_true = keep.powi(k as i32) * p_f.powi((m - k) as i32);
        let w_other = p_f.powi(k as i32) * keep.powi((m - k) as i32);
        let mass = w_true / (w_true + w_other);
        let p = log_p.exp();
        mean += p * mass;
        second += p * mass * mass;
    }
    (mean, (second - mean * mean).max(0.0))
}

/// Exact expected posterior mass on the true state after M releases.
pub fn concentration_exact(p_f: f64, m: usize) -> f64 {
    concentration_exact_moments(p_f, m).0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetSource::SyntheticDiscrete {
                train_per_class: 30,
                test_per_class: 40,
                informative_dims: 4,
                background_dims: 2,
                num_states: 4,
                sharpness: 1.4,
                retention: 0.8,
            },
            arms: vec![Arm::CleanLogreg, Arm::NoisyLogreg, Arm::SpreadFlat],
            sweep: vec![0.2],
            label_channel: Some(ChannelSpec::Flip {
                p_flip: None,
                p_0to1: None,
                p_1to0: None,
            }),
            input_channel: Some(ChannelSpec::UniformState {
                num_states: 4,
                p_f: None,
            }),
            repetitions: 2,
            base_seed: 5,
            train: TrainParams {
                samples_per_point: 2,
                learning_rate: 0.2,
                max_outer_iters: 60,
                tolerance: None,
            },
            gaussian_prior: GaussianPriorSpec::default(),
            out_dir: dir.to_path_buf(),
        }
    }

    #[test]
    fn evaluate_zero_weights_gives_base_rate() {
        let data = LabeledDataset::new_continuous(vec![1.0, -1.0, 2.0, 0.5], vec![1, 0], 2)
            .unwrap();
        let map = FeatureMap::identity();
        let eval = evaluate(&[0.0, 0.0, 0.0], &map, &data).unwrap();
        assert_eq!(eval.accuracy, 0.5);
        assert!((eval.mean_loglik - 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_perfect_separator_and_scale_invariance() {
        let data = LabeledDataset::new_continuous(
            vec![2.0, -3.0, 1.0, -0.5],
            vec![1, 1, 1, 0],
            1,
        )
        .unwrap();
        let map = FeatureMap {
            scale: 1.0,
            offsets: Vec::new(),
            append_bias: false,
        };
        let eval = evaluate(&[10.0], &map, &data).unwrap();
        // x > 0 <=> class 1 except the -3.0 record, which is class 1 too,
        // so a positive weight classifies 3 of 4 correctly.
        assert!((eval.accuracy - 0.75).abs() < 1e-12);
        let scaled = evaluate(&[1000.0], &map, &data).unwrap();
        assert_eq!(eval.accuracy, scaled.accuracy);
    }

    #[test]
    fn experiment_writes_report_and_is_resumable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 3 * 2); // arms x reps
        assert!(report.rows.iter().all(|r| r.ok));
        let csv_bytes = fs::read(dir.path().join("report.csv")).unwrap();
        // Re-running skips everything and leaves the CSV untouched.
        let report2 = run_experiment(&cfg).unwrap();
        assert_eq!(report2.rows.len(), report.rows.len());
        assert_eq!(fs::read(dir.path().join("report.csv")).unwrap(), csv_bytes);
        assert!(dir.path().join("figures/accuracy-vs-noise.svg").exists());
        assert!(dir.path().join("config-echo.json").exists());
    }

    #[test]
    fn experiment_rows_reproduce_up_to_wall_time() {
        let dir1 = tempfile::tempdir().unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let mut cfg1 = tiny_config(dir1.path());
        cfg1.train.max_outer_iters = 30;
        let mut cfg2 = tiny_config(dir2.path());
        cfg2.train.max_outer_iters = 30;
        let r1 = run_experiment(&cfg1).unwrap();
        let r2 = run_experiment(&cfg2).unwrap();
        assert_eq!(r1.rows.len(), r2.rows.len());
        for (a, b) in r1.rows.iter().zip(&r2.rows) {
            assert_eq!(a.arm, b.arm);
            assert_eq!(a.seed, b.seed);
            assert_eq!(a.train_acc, b.train_acc);
            assert_eq!(a.test_acc, b.test_acc);
            assert_eq!(a.energy, b.energy);
        }
    }

    #[test]
    fn inapplicable_arm_yields_failed_row_but_run_continues() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.arms = vec![Arm::SpreadGaussian, Arm::CleanLogreg];
        cfg.repetitions = 1;
        let report = run_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(!report.rows[0].ok);
        assert!(report.rows[1].ok);
        let agg = report.aggregate();
        let gaussian = agg.iter().find(|c| c.arm == Arm::SpreadGaussian).unwrap();
        assert_eq!(gaussian.count_failed, 1);
        assert_eq!(gaussian.count_ok, 0);
    }

    #[test]
    fn cell_seeds_differ_by_arm_but_corruption_is_shared() {
        assert_ne!(
            arm_seed(1, Arm::CleanLogreg, 0.2, 0),
            arm_seed(1, Arm::NoisyLogreg, 0.2, 0)
        );
        assert_eq!(cell_seed(1, "corrupt", 0.2, 0), cell_seed(1, "corrupt", 0.2, 0));
        assert_ne!(cell_seed(1, "corrupt", 0.2, 0), cell_seed(1, "corrupt", 0.2, 1));
    }

    #[test]
    fn concentration_exact_matches_hand_computation() {
        // M = 1, p_f = 0.2: with probability 0.8 the posterior mass on the
        // true state is 0.8, else 0.2.
        let e = concentration_exact(0.2, 1);
        assert!((e - (0.8 * 0.8 + 0.2 * 0.2)).abs() < 1e-12);
    }
}
