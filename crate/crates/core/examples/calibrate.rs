//! Scratch calibration runs for the acceptance thresholds.

use spreadlearn::channels::ChannelSpec;
use spreadlearn::experiments::{
    run_experiment, Arm, DatasetSource, ExperimentConfig, GaussianPriorSpec, TrainParams,
};

fn main() {
    for (info, bg, sharp, retention, iters, samples) in [
        (14usize, 4usize, 1.6f64, 0.85f64, 3000usize, 4usize),
        (14, 4, 1.6, 0.85, 2000, 8),
    ] {
        let t1 = std::time::Instant::now();
        let dir = std::env::temp_dir().join(format!(
            "calib-{}-{info}-{bg}-{sharp}-{retention}-{iters}-{samples}",
            std::process::id()
        ));
        let _ = std::fs::remove_dir_all(&dir);
        let cfg = ExperimentConfig {
            dataset: DatasetSource::SyntheticDiscrete {
                train_per_class: 250,
                test_per_class: 900,
                informative_dims: info,
                background_dims: bg,
                num_states: 8,
                sharpness: sharp,
                retention,
            },
            arms: vec![
                Arm::CleanLogreg,
                Arm::NoisyLogreg,
                Arm::SpreadFlat,
                Arm::SpreadLearned,
                Arm::SpreadTrue,
            ],
            sweep: vec![0.3, 0.4],
            label_channel: Some(ChannelSpec::Flip {
                p_flip: None,
                p_0to1: None,
                p_1to0: None,
            }),
            input_channel: Some(ChannelSpec::UniformState {
                num_states: 8,
                p_f: None,
            }),
            repetitions: 10,
            base_seed: 90,
            train: TrainParams {
                max_outer_iters: iters,
                samples_per_point: samples,
                ..TrainParams::default()
            },
            gaussian_prior: GaussianPriorSpec::default(),
            out_dir: dir.clone(),
        };
        let report = run_experiment(&cfg).unwrap();
        println!(
            "=== info {info} bg {bg} sharp {sharp} retention {retention} iters {iters} S {samples} ({:?})",
            t1.elapsed()
        );
        let agg = report.aggregate();
        for p_f in [0.3, 0.4] {
            let get = |arm: Arm| {
                agg.iter()
                    .find(|c| c.arm == arm && c.p_f == p_f)
                    .map(|c| (c.mean_test_acc, c.std_test_acc / (c.count_ok as f64).sqrt()))
                    .unwrap()
            };
            let (clean, _) = get(Arm::CleanLogreg);
            let (noisy, se_n) = get(Arm::NoisyLogreg);
            print!("p_f={p_f}: clean {clean:.4} noisy {noisy:.4}");
            for arm in [Arm::SpreadFlat, Arm::SpreadLearned, Arm::SpreadTrue] {
                let (m, se) = get(arm);
                let pooled = (se * se + se_n * se_n).sqrt();
                print!(" | {arm} {m:.4}±{se:.4} g/SE {:.2}", (m - noisy) / pooled.max(1e-12));
            }
            println!();
        }
        let _ = std::fs::remove_dir_all(&dir);
    }
}
