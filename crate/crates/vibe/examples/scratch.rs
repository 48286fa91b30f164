// Temporary tuning harness; removed before release.

use std::time::Instant;

use vibe::pipeline::{disentanglement_gap, run_synthetic_pipeline, run_synthetic_stage1};
use vibe::synth::DriftSpec;
use vibe::train::TrainConfig;

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "probe".into());
    match mode.as_str() {
        "probe" => probe_experiment(),
        "adapt" => adapt_experiment(),
        other => eprintln!("unknown mode {other}"),
    }
}

fn probe_experiment() {
    let spec = DriftSpec::default();
    for seed in 0..3u64 {
        let t0 = Instant::now();
        let mut gaps = Vec::new();
        for lambda in [0.0, 1.0] {
            let config = TrainConfig {
                seed,
                lambda,
                mu: 1.0,
                ..TrainConfig::desk_scale()
            };
            let run = run_synthetic_stage1(&spec, &config).unwrap();
            let (acc_v, acc_s) =
                disentanglement_gap(&run.state, &run.docs, &run.vocab, seed).unwrap();
            println!(
                "seed {seed} lambda {lambda}: acc_variant {acc_v:.3} acc_shared {acc_s:.3} gap {:.3}",
                acc_v - acc_s
            );
            gaps.push(acc_v - acc_s);
        }
        println!(
            "seed {seed}: gap(l=1) - gap(l=0) = {:.4}  [{:?} elapsed]",
            gaps[1] - gaps[0],
            t0.elapsed()
        );
    }
}

fn adapt_experiment() {
    let spec = DriftSpec { label_period_corr: 0.8, ..DriftSpec::default() };
    for seed in 0..3u64 {
        let t0 = Instant::now();
        let config = TrainConfig { seed, ..TrainConfig::desk_scale() };
        let run = run_synthetic_pipeline(&spec, &config).unwrap();
        println!(
            "seed {seed}: vibe {:.3} baseline {:.3} pseudo {:.3} diff {:+.3}  [{:?}]",
            run.vibe_accuracy,
            run.baseline_accuracy,
            run.pseudo_accuracy,
            run.vibe_accuracy - run.baseline_accuracy,
            t0.elapsed()
        );
    }
}
