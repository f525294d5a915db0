#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use talkit_core::{ActionInstance, Segment, VideoRecord};
use talkit_nn::data::Sample;
use talkit_nn::model::{doubling_ranges, FusionMode, InputSource, Localizer, ModelConfig};

/// Two small sources `a` (width 5) and `b` (width 3).
pub fn tiny_config(fusion: FusionMode, max_seq_len: usize, num_levels: usize) -> ModelConfig {
    ModelConfig {
        num_classes: 3,
        max_seq_len,
        num_levels,
        embed_dim: 16,
        num_heads: 2,
        attention_window: 5,
        fusion,
        sources: vec![InputSource::new("a", 5, 4), InputSource::new("b", 3, 4)],
        regression_ranges: doubling_ranges(num_levels),
        mlp_ratio: 2,
        ..Default::default()
    }
}

pub fn tiny_model(fusion: FusionMode) -> Localizer {
    Localizer::new(tiny_config(fusion, 32, 3), 11).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// A `t`-step sample (one second per step) with three instances.
pub fn tiny_sample(seed: u64, t: usize) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inst = |label_id, s, e| ActionInstance {
        label_id,
        segment: Segment::new(s, e).unwrap(),
    };
    let record = VideoRecord::new(
        format!("v{seed}"),
        t as f64,
        vec![inst(0, 2.3, 7.6), inst(2, 10.2, 24.9), inst(1, 14.1, 15.7)],
    )
    .unwrap();
    Sample {
        record,
        sources: vec![random_matrix(t, 5, &mut rng), random_matrix(t, 3, &mut rng)],
        seconds_per_step: 1.0,
    }
}
