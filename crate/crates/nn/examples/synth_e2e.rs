//! Train the tiny localizer on seeded synthetic videos and report held-out
//! metrics.
//!
//! ```text
//! cargo run --release -p talkit-nn --example synth_e2e -- [seed] [fusion]
//! ```

use std::time::Instant;

use talkit_core::fusion::AlignMode;
use talkit_core::metrics::{evaluate, EvalConfig};
use talkit_core::synth::{generate, SynthConfig, SynthSource};
use talkit_core::DecodeConfig;
use talkit_nn::data::samples_from_synth;
use talkit_nn::model::{doubling_ranges, FusionMode, InputSource, Localizer, ModelConfig};
use talkit_nn::train::{predict_all, train, TrainConfig};

fn env<T: std::str::FromStr>(key: &str, default: T) -> T {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let fusion = match args.get(2).map(String::as_str) {
        Some("cat") => FusionMode::Cat,
        _ => FusionMode::ProjCat,
    };

    let scales: Vec<f64> = std::env::var("SCALES")
        .map(|v| v.split(',').map(|x| x.parse().unwrap()).collect())
        .unwrap_or(vec![1.0, 1.0, 1.0]);
    let sources: Vec<SynthSource> = [
        SynthSource::new("slowfast", 32, 32, 16),
        SynthSource::new("omnivore", 24, 32, 16),
        SynthSource::new("egovlp", 16, 4, 4),
    ]
    .into_iter()
    .zip(&scales)
    .map(|(s, &scale)| SynthSource { scale, ..s })
    .collect();
    let synth = |n, s, prefix: &str| SynthConfig {
        num_videos: n,
        sources: sources.clone(),
        noise: env("NOISE", 1.0),
        signal: env("SIGNAL", 1.0),
        seed: s,
        video_prefix: prefix.into(),
        ..Default::default()
    };
    let ntrain = env("NTRAIN", 200);
    let mut train_ds = generate(&synth(ntrain + 50, seed, "synth")).unwrap();
    let test_ds = train_ds.split_off(ntrain);

    let model_cfg = ModelConfig {
        num_classes: 5,
        max_seq_len: 256,
        num_levels: 4,
        embed_dim: 64,
        num_heads: 4,
        attention_window: env("WINDOW", 19),
        fusion,
        sources: vec![
            InputSource::new("slowfast", 32, 24),
            InputSource::new("omnivore", 24, 24),
            InputSource::new("egovlp", 16, 16),
        ],
        mlp_ratio: env("MLP", 2),
        regression_ranges: doubling_ranges(4),
        ..Default::default()
    };
    let train_cfg = TrainConfig {
        epochs: env("EPOCHS", 20),
        warmup_epochs: env("WARMUP", 2),
        base_lr: env("LR", 1e-3),
        seed,
        ..Default::default()
    };
    let mut model = Localizer::new(model_cfg.clone(), seed).unwrap();
    let tr = samples_from_synth(&train_ds, &model_cfg.sources, AlignMode::Nearest).unwrap();
    let te = samples_from_synth(&test_ds, &model_cfg.sources, AlignMode::Nearest).unwrap();
    let t0 = Instant::now();
    let report = train(&tr, &mut model, &train_cfg, None).unwrap();
    println!("train {:.1}s, epoch losses {:?}", t0.elapsed().as_secs_f64(), report.epoch_losses);
    let dets = predict_all(&model, &te, &DecodeConfig::default()).unwrap();
    let r = evaluate(&dets, &test_ds.records(), &EvalConfig::default());
    println!("{}", r.table());
    if env("EVAL_TRAIN", 0) == 1 {
        let dets = predict_all(&model, &tr, &DecodeConfig::default()).unwrap();
        for (vid, d) in dets.iter().take(2) {
            println!("{vid}: top {:?}", &d[..d.len().min(5)]);
            let rec = train_ds.records().into_iter().find(|r| &r.video_id == vid).unwrap();
            println!("  gt {:?}", rec.instances);
        }
        let r = evaluate(&dets, &train_ds.records(), &EvalConfig::default());
        println!("train set:\n{}", r.table());
    }
}
