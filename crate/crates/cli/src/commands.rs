//! Subcommand implementations. Each one parses flags, calls the library,
//! and serializes results; no numerics happen here.

use std::path::{Path, PathBuf};

use clap::{Args, Subcommand, ValueEnum};
use serde_json::json;

use spreadlearn::baselines::{
    anisotropy_counterexample, hessian_terms_quadrature, noisy_label_gradient_at_alpha,
    noisy_label_hessian_at_zero, recon_curve, McEstimate, NoisyLabelAnalysis,
};
use spreadlearn::channels::{Channel, ChannelSpec, ChannelsConfig, FlipChannel};
use spreadlearn::data::{load_csv, load_idx, true_marginal_prior, FeatureKind, LabeledDataset};
use spreadlearn::error::{Error, Result};
use spreadlearn::estimators::{spread_mle_discrete, MleStrategy};
use spreadlearn::experiments::{
    default_feature_map, evaluate, recon_panels_svg, run_experiment, ExperimentConfig,
};
use spreadlearn::logreg::{
    train_logistic, train_spread_logreg, InputNoise, PriorMode, TrainConfig, TrainedPrior,
};
use spreadlearn::prior::GaussianPrior;

use crate::model_file::{ConfigEcho, ModelFile, PriorFile};

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

/// Feature domain implied by the channel configuration, with an optional
/// explicit override for channel-free discrete data.
fn feature_kind_for(channels: &ChannelsConfig, num_states: Option<usize>) -> FeatureKind {
    match &channels.features {
        Some(ChannelSpec::UniformState { num_states, .. }) => FeatureKind::Discrete {
            num_states: *num_states,
        },
        Some(ChannelSpec::Discrete { matrix }) => FeatureKind::Discrete {
            num_states: matrix.len(),
        },
        _ => match num_states {
            Some(k) => FeatureKind::Discrete { num_states: k },
            None => FeatureKind::Continuous,
        },
    }
}

/// Loads `--data`: either a CSV path or an `images.idx,labels.idx` pair.
fn load_data(
    data: &str,
    kind: FeatureKind,
    classes: (u8, u8),
    per_class: Option<usize>,
    seed: u64,
) -> Result<LabeledDataset> {
    if let Some((images, labels)) = data.split_once(',') {
        load_idx(
            Path::new(images),
            Path::new(labels),
            classes,
            per_class,
            seed,
        )
    } else {
        load_csv(Path::new(data), kind)
    }
}

fn parse_classes(s: &str) -> Result<(u8, u8)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::Config(format!("expected two classes, got {s:?}")));
    }
    let a = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad class {:?}", parts[0])))?;
    let b = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad class {:?}", parts[1])))?;
    Ok((a, b))
}

#[derive(Args)]
pub struct CorruptArgs {
    /// CSV dataset or `images.idx,labels.idx` pair.
    #[arg(long)]
    data: String,
    /// Channels JSON: {"label": {...}, "features": {...}}.
    #[arg(long)]
    channels: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Digit classes kept from IDX input.
    #[arg(long, default_value = "7,9")]
    classes: String,
    /// Per-class subsample count for IDX input.
    #[arg(long)]
    per_class: Option<usize>,
}

pub fn run_corrupt(args: CorruptArgs, verbose: u8) -> Result<()> {
    let channels: ChannelsConfig = read_json(&args.channels)?;
    let kind = feature_kind_for(&channels, None);
    let classes = parse_classes(&args.classes)?;
    let mut data = load_data(&args.data, kind, classes, args.per_class, args.seed)?;
    // Gaussian feature noise acts on state data rescaled to [0, 1].
    if matches!(channels.features, Some(ChannelSpec::Gaussian { .. })) {
        if let FeatureKind::Discrete { num_states } = data.feature_kind() {
            data = data.to_continuous(1.0 / (num_states as f64 - 1.0));
        }
    }
    let label = match &channels.label {
        Some(spec) => match spec.resolve(data.dim())? {
            Channel::Flip(f) => Some(f),
            other => {
                return Err(Error::Config(format!(
                    "label channel must be flip, got {}",
                    other.id()
                )))
            }
        },
        None => None,
    };
    let features = channels
        .features
        .as_ref()
        .map(|spec| spec.resolve(data.dim()))
        .transpose()?;
    let noisy = data.corrupt(label.as_ref(), features.as_ref(), args.seed)?;
    noisy.save_csv(&args.out)?;
    if verbose > 0 {
        eprintln!(
            "corrupted {} records -> {}",
            noisy.num_records(),
            args.out.display()
        );
    }
    Ok(())
}

#[derive(Copy, Clone, ValueEnum)]
pub enum EstimateStrategy {
    Em,
    Grid,
}

#[derive(Args)]
pub struct EstimateArgs {
    /// CSV of corrupted-state counts with header `state,count`.
    #[arg(long)]
    counts: PathBuf,
    /// Channel JSON (single channel spec).
    #[arg(long)]
    channel: PathBuf,
    /// Output JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "em")]
    strategy: EstimateStrategy,
    /// EM iteration budget (run well past the flat tail).
    #[arg(long, default_value_t = 200_000)]
    max_iters: usize,
}

fn read_counts(path: &Path) -> Result<Vec<u64>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "state" || &headers[1] != "count" {
        return Err(Error::Data(format!(
            "{}: counts CSV must have header state,count",
            path.display()
        )));
    }
    let mut pairs = Vec::new();
    let mut max_state = 0usize;
    for rec in reader.records() {
        let rec = rec?;
        let state: usize = rec[0]
            .parse()
            .map_err(|_| Error::Data(format!("bad state {:?}", &rec[0])))?;
        let count: u64 = rec[1]
            .parse()
            .map_err(|_| Error::Data(format!("bad count {:?}", &rec[1])))?;
        max_state = max_state.max(state);
        pairs.push((state, count));
    }
    if pairs.is_empty() {
        return Err(Error::Data("empty counts file".into()));
    }
    let mut counts = vec![0u64; max_state + 1];
    for (state, count) in pairs {
        counts[state] += count;
    }
    Ok(counts)
}

pub fn run_estimate(args: EstimateArgs, verbose: u8) -> Result<()> {
    let spec: ChannelSpec = read_json(&args.channel)?;
    let counts = read_counts(&args.counts)?;
    let channel = match spec.resolve(1)? {
        Channel::Flip(f) => f.to_discrete(),
        Channel::UniformState(u) => u.to_discrete(),
        Channel::Discrete(d) => d,
        Channel::Gaussian(_) => {
            return Err(Error::Config(
                "estimate works on discrete channels only".into(),
            ))
        }
    };
    let mut counts = counts;
    counts.resize(counts.len().max(channel.num_states()), 0);
    let strategy = match args.strategy {
        EstimateStrategy::Em => MleStrategy::Em {
            max_iters: args.max_iters,
            tol: 1e-15,
        },
        EstimateStrategy::Grid => MleStrategy::Grid { step: 1e-4 },
    };
    let est = spread_mle_discrete(&counts, &channel, strategy)?;
    if verbose > 0 {
        eprintln!("estimate converged in {} recorded iterations", est.trace.len());
    }
    let mut out = json!({
        "probs": est.probs,
        "loglik": est.loglik,
        "strategy": match args.strategy { EstimateStrategy::Em => "em", EstimateStrategy::Grid => "grid" },
    });
    if est.probs.len() == 2 {
        out["theta"] = json!(est.probs[1]);
    }
    emit(args.out.as_deref(), &out)
}

#[derive(Copy, Clone, ValueEnum)]
pub enum PriorFlag {
    Flat,
    Learn,
    True,
    Gaussian,
}

#[derive(Args)]
pub struct TrainArgs {
    /// CSV dataset or `images.idx,labels.idx` pair (corrupted data).
    #[arg(long)]
    data: String,
    /// Channels JSON describing how the data was corrupted. An empty
    /// object trains standard logistic regression on the data as-is.
    #[arg(long)]
    channels: PathBuf,
    #[arg(long, value_enum, default_value = "flat")]
    prior: PriorFlag,
    /// Importance samples per noisy record.
    #[arg(long, default_value_t = 2)]
    samples: usize,
    #[arg(long, default_value_t = 0.2)]
    lr: f64,
    #[arg(long, default_value_t = 400)]
    iters: usize,
    #[arg(long)]
    seed: u64,
    /// Output model JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Clean dataset for the true-prior arm; defaults to the training data.
    #[arg(long)]
    prior_data: Option<PathBuf>,
    /// Gaussian prior mean (gaussian prior only).
    #[arg(long, default_value_t = 0.0)]
    prior_mean: f64,
    /// Gaussian prior variance (gaussian prior only).
    #[arg(long, default_value_t = 10.0)]
    prior_var: f64,
    /// Optional early-stop tolerance on the smoothed energy; by default
    /// training runs the full iteration budget.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Digit classes kept from IDX input.
    #[arg(long, default_value = "7,9")]
    classes: String,
    #[arg(long)]
    per_class: Option<usize>,
    /// Treat channel-free CSV features as K-state discrete data.
    #[arg(long)]
    num_states: Option<usize>,
}

pub fn run_train(args: TrainArgs, verbose: u8) -> Result<()> {
    let channels: ChannelsConfig = read_json(&args.channels)?;
    let kind = feature_kind_for(&channels, args.num_states);
    let classes = parse_classes(&args.classes)?;
    let mut data = load_data(&args.data, kind, classes, args.per_class, args.seed)?;
    let mut states_to_unit = None;
    if matches!(channels.features, Some(ChannelSpec::Gaussian { .. })) {
        if let FeatureKind::Discrete { num_states } = data.feature_kind() {
            data = data.to_continuous(1.0 / (num_states as f64 - 1.0));
            states_to_unit = Some(num_states);
        }
    }
    let map = default_feature_map(&data);
    let channels_echo = serde_json::to_value(&channels)?;

    let label = match &channels.label {
        Some(spec) => match spec.resolve(data.dim())? {
            Channel::Flip(f) => Some(f),
            other => {
                return Err(Error::Config(format!(
                    "label channel must be flip, got {}",
                    other.id()
                )))
            }
        },
        None => None,
    };
    let input = match &channels.features {
        Some(spec) => match spec.resolve(data.dim())? {
            Channel::UniformState(u) => Some(InputNoise::UniformState(u)),
            Channel::Gaussian(g) => Some(InputNoise::Gaussian(g)),
            other => {
                return Err(Error::Config(format!(
                    "train supports uniform_state or gaussian feature channels, got {}",
                    other.id()
                )))
            }
        },
        None => None,
    };

    let model = if label.is_none() && input.is_none() {
        // No corruption declared: standard logistic regression.
        if verbose > 0 {
            eprintln!("no channels configured; training standard logistic regression");
        }
        let fit = train_logistic(&data, &map, args.lr, args.iters)?;
        ModelFile {
            weights: fit.weights,
            feature_map: map,
            prior: PriorFile::None,
            states_to_unit,
            config: ConfigEcho {
                mode: "logistic".into(),
                prior: "none".into(),
                samples_per_point: 0,
                learning_rate: args.lr,
                max_outer_iters: args.iters,
                seed: args.seed,
                channels: channels_echo,
            },
            final_energy: fit.final_loglik,
            iterations: args.iters,
        }
    } else {
        let prior_mode = match args.prior {
            PriorFlag::Flat => PriorMode::Flat,
            PriorFlag::Learn => PriorMode::Learned,
            PriorFlag::True => {
                let marginal_source = match &args.prior_data {
                    Some(path) => load_csv(path, data.feature_kind())?,
                    None => {
                        eprintln!(
                            "warning: --prior true without --prior-data uses the training \
                             data marginals"
                        );
                        data.clone()
                    }
                };
                PriorMode::FixedTrue(true_marginal_prior(&marginal_source)?)
            }
            PriorFlag::Gaussian => PriorMode::Gaussian(GaussianPrior::isotropic(
                args.prior_mean,
                args.prior_var,
                data.dim(),
            )?),
        };
        let prior_name = prior_mode.name().to_string();
        let cfg = TrainConfig {
            samples_per_point: args.samples,
            learning_rate: args.lr,
            max_outer_iters: args.iters,
            seed: args.seed,
            prior_mode,
            tolerance: args.tolerance.unwrap_or(f64::NEG_INFINITY),
        };
        let fit = train_spread_logreg(&data, label.as_ref(), input.as_ref(), &map, &cfg)?;
        ModelFile {
            weights: fit.weights,
            feature_map: map,
            prior: PriorFile::from(&fit.prior),
            states_to_unit,
            config: ConfigEcho {
                mode: "spread".into(),
                prior: prior_name,
                samples_per_point: args.samples,
                learning_rate: args.lr,
                max_outer_iters: args.iters,
                seed: args.seed,
                channels: channels_echo,
            },
            final_energy: fit.final_energy,
            iterations: fit.iterations,
        }
    };
    model.save(&args.out)?;
    if verbose > 0 {
        eprintln!(
            "trained model ({} iterations, final energy {}) -> {}",
            model.iterations,
            model.final_energy,
            args.out.display()
        );
    }
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Clean CSV dataset or `images.idx,labels.idx` pair.
    #[arg(long)]
    data: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "7,9")]
    classes: String,
    #[arg(long)]
    per_class: Option<usize>,
}

pub fn run_eval(args: EvalArgs, _verbose: u8) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let classes = parse_classes(&args.classes)?;
    // CSV files produced by this toolchain are already in model units;
    // raw IDX states are rescaled when the model was trained on [0, 1].
    let is_idx = args.data.contains(',');
    let kind = if is_idx {
        FeatureKind::Discrete { num_states: 256 }
    } else {
        FeatureKind::Continuous
    };
    let mut data = load_data(&args.data, kind, classes, args.per_class, 0)?;
    if is_idx {
        if let Some(k) = model.states_to_unit {
            data = data.to_continuous(1.0 / (k as f64 - 1.0));
        }
    }
    let eval = evaluate(&model.weights, &model.feature_map, &data)?;
    // Exercise the stored prior so malformed files fail loudly here.
    let _prior: TrainedPrior = model.prior.to_trained()?;
    emit(
        args.out.as_deref(),
        &json!({
            "accuracy": eval.accuracy,
            "mean_loglik": eval.mean_loglik,
            "records": data.num_records(),
        }),
    )
}

#[derive(Subcommand)]
pub enum AnalyzeCmd {
    /// Reconstruction-approach argmax curves over theta0 (biased for any
    /// nonzero flip probability).
    ReconCurve(ReconCurveArgs),
    /// Angular gradient of the noisy-label objective at a given angle.
    NoisyLabelGrad(NoisyLabelGradArgs),
    /// Curvature of the noisy-label objective at the true direction,
    /// Monte Carlo plus quadrature cross-check.
    NoisyLabelHess(NoisyLabelHessArgs),
    /// Naive-gradient norm at theta0 for anisotropic Gaussian inputs.
    Anisotropy(AnisotropyArgs),
}

#[derive(Args)]
pub struct ReconCurveArgs {
    /// Comma-separated flip probabilities, one panel each.
    #[arg(long, default_value = "0,0.001,0.002,0.003,0.004")]
    pf: String,
    /// theta0 grid step.
    #[arg(long, default_value_t = 0.01)]
    step: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
pub struct NoisyLabelGradArgs {
    #[arg(long)]
    p11: f64,
    #[arg(long)]
    p01: f64,
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long)]
    seed: u64,
    /// Pair each draw with its epsilon_2-negated twin.
    #[arg(long)]
    antithetic: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct NoisyLabelHessArgs {
    #[arg(long)]
    p11: f64,
    #[arg(long)]
    p01: f64,
    #[arg(long, default_value_t = 1.0)]
    s: f64,
    #[arg(long, default_value_t = 1_000_000)]
    samples: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    quad_nodes: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AnisotropyArgs {
    /// Row-major 2x2 covariance, e.g. "1,0,0,25".
    #[arg(long, default_value = "1,0,0,25")]
    sigma: String,
    /// True direction, e.g. "1,1".
    #[arg(long, default_value = "1,1")]
    theta0: String,
    #[arg(long, default_value_t = 0.2)]
    pf: f64,
    #[arg(long, default_value_t = 1_000_000)]
    n: u64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_f64_list(s: &str, expect: Option<usize>) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|_| Error::Config(format!("bad numeric list {s:?}")))?;
    if let Some(n) = expect {
        if vals.len() != n {
            return Err(Error::Config(format!(
                "expected {n} comma-separated values in {s:?}"
            )));
        }
    }
    Ok(vals)
}

fn mc_json(est: &McEstimate) -> serde_json::Value {
    json!({
        "mean": est.mean,
        "std_error": est.std_error,
        "samples": est.samples,
        "sigmas": est.sigmas(),
    })
}

pub fn run_analyze(cmd: AnalyzeCmd, verbose: u8) -> Result<()> {
    match cmd {
        AnalyzeCmd::ReconCurve(args) => {
            std::fs::create_dir_all(&args.out_dir)?;
            let pfs = parse_f64_list(&args.pf, None)?;
            let mut curves = Vec::new();
            for &pf in &pfs {
                let curve = recon_curve(pf, args.step)?;
                curve.write_csv(&args.out_dir.join(format!("recon-curve-p{pf}.csv")))?;
                curves.push(curve);
            }
            let svg = recon_panels_svg(&curves);
            for w in &svg.warnings {
                eprintln!("figure warning: {w}");
            }
            std::fs::write(args.out_dir.join("recon-curves.svg"), svg.svg)?;
            if verbose > 0 {
                eprintln!("wrote {} curves to {}", curves.len(), args.out_dir.display());
            }
            Ok(())
        }
        AnalyzeCmd::NoisyLabelGrad(args) => {
            let analysis = NoisyLabelAnalysis {
                p_1to1: args.p11,
                p_0to1: args.p01,
                s: args.s,
                alpha: args.alpha,
                mc_samples: args.samples,
            };
            let est = noisy_label_gradient_at_alpha(&analysis, args.seed, args.antithetic)?;
            emit(args.out.as_deref(), &mc_json(&est))
        }
        AnalyzeCmd::NoisyLabelHess(args) => {
            let analysis = NoisyLabelAnalysis {
                p_1to1: args.p11,
                p_0to1: args.p01,
                s: args.s,
                alpha: 0.0,
                mc_samples: args.samples,
            };
            let mc = noisy_label_hessian_at_zero(&analysis, args.seed)?;
            let (q1, q2, q_total) =
                hessian_terms_quadrature(args.p11, args.p01, args.s, args.quad_nodes);
            emit(
                args.out.as_deref(),
                &json!({
                    "mc": {
                        "term1": mc_json(&mc.term1),
                        "term2": mc_json(&mc.term2),
                        "total": mc_json(&mc.total),
                    },
                    "quadrature": { "term1": q1, "term2": q2, "total": q_total },
                    "term2_gap": (mc.term2.mean - q2).abs(),
                }),
            )
        }
        AnalyzeCmd::Anisotropy(args) => {
            let sig = parse_f64_list(&args.sigma, Some(4))?;
            let theta0 = parse_f64_list(&args.theta0, Some(2))?;
            let flip = FlipChannel::symmetric(args.pf)?;
            let report = anisotropy_counterexample(
                [[sig[0], sig[1]], [sig[2], sig[3]]],
                [theta0[0], theta0[1]],
                &flip,
                args.n,
                args.seed,
            )?;
            emit(
                args.out.as_deref(),
                &json!({
                    "angular": mc_json(&report.angular),
                    "gradient": [mc_json(&report.gradient[0]), mc_json(&report.gradient[1])],
                    "exceeds_threshold": report.exceeds_threshold,
                }),
            )
        }
    }
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
}

pub fn run_experiment_cmd(args: ExperimentArgs, verbose: u8) -> Result<()> {
    let cfg: ExperimentConfig = read_json(&args.config)?;
    let report = run_experiment(&cfg)?;
    eprintln!(
        "experiment complete: {} rows -> {}",
        report.rows.len(),
        cfg.out_dir.join("report.csv").display()
    );
    if verbose > 0 {
        for cell in report.aggregate() {
            eprintln!(
                "  {} p_f={}: mean test acc {:.4} (sd {:.4}, ok {}, failed {})",
                cell.arm,
                cell.p_f,
                cell.mean_test_acc,
                cell.std_test_acc,
                cell.count_ok,
                cell.count_failed
            );
        }
    }
    Ok(())
}
