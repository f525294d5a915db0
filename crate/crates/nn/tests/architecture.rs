//! Pyramid shapes, attention locality, mask soundness, the dense-attention
//! limit, and determinism of initialization.

mod common;

use std::rc::Rc;

use common::{random_matrix, tiny_config};
use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use talkit_nn::autograd::Graph;
use talkit_nn::model::{dense_attention, doubling_ranges, FusionMode, InputSource, Localizer, ModelConfig};

fn rows_changed(a: &Array2<f64>, b: &Array2<f64>) -> Vec<usize> {
    (0..a.nrows()).filter(|&i| a.row(i) != b.row(i)).collect()
}

/// Output of level 0's blocks for `x` with every row valid.
fn level0(model: &Localizer, x: &Array2<f64>) -> Array2<f64> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let mask: Rc<[bool]> = vec![true; x.nrows()].into();
    let xv = g.leaf(x.clone());
    let y = model.run_level_blocks(&mut g, &p, 0, xv, &mask);
    g.value(y).clone()
}

#[test]
fn full_scale_level_lengths() {
    let cfg = ModelConfig {
        embed_dim: 8,
        num_heads: 2,
        num_classes: 4,
        sources: vec![InputSource::new("x", 6, 4)],
        ..Default::default()
    };
    assert_eq!(cfg.max_seq_len, 1024);
    assert_eq!(cfg.num_levels, 6);
    assert_eq!(cfg.level_lengths(), vec![1024, 512, 256, 128, 64, 32]);
    let model = Localizer::new(cfg, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = model.predict(&[random_matrix(700, 6, &mut rng)]).unwrap();
    let lens: Vec<usize> = out.levels.iter().map(|l| l.class_logits.nrows()).collect();
    assert_eq!(lens, vec![1024, 512, 256, 128, 64, 32]);
    for (l, level) in out.levels.iter().enumerate() {
        assert_eq!(level.stride, 1 << l);
        assert_eq!(level.class_logits.ncols(), 4);
        assert_eq!(level.offsets.ncols(), 2);
        let valid = level.mask.iter().filter(|&&m| m).count();
        assert_eq!(valid, 700usize.div_ceil(1 << l));
        assert!(level.offsets.iter().all(|&d| d >= 0.0));
    }
}

#[test]
fn single_block_receptive_field_is_the_window() {
    for window in [3, 5, 9] {
        let cfg = ModelConfig {
            attention_window: window,
            ..tiny_config(FusionMode::Cat, 48, 1)
        };
        let model = Localizer::new(cfg, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(window as u64);
        let x = random_matrix(48, 16, &mut rng);
        let base = level0(&model, &x);
        for j in [0, 7, 24, 47] {
            // not a constant shift, which layer norm would cancel
            let mut x2 = x.clone();
            x2.row_mut(j).assign(&random_matrix(1, 16, &mut rng).row(0));
            let changed = rows_changed(&base, &level0(&model, &x2));
            let half = window / 2;
            let expected: Vec<usize> = (j.saturating_sub(half)..=(j + half).min(47)).collect();
            assert_eq!(changed, expected, "window {window}, perturbed row {j}");
        }
    }
}

#[test]
fn stacked_blocks_grow_receptive_field_linearly() {
    let window = 5;
    for k in 1..=3 {
        let cfg = ModelConfig {
            attention_window: window,
            blocks_per_level: k,
            ..tiny_config(FusionMode::Cat, 64, 1)
        };
        let model = Localizer::new(cfg, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let x = random_matrix(64, 16, &mut rng);
        let base = level0(&model, &x);
        let mut x2 = x.clone();
        x2.row_mut(32).assign(&random_matrix(1, 16, &mut rng).row(0));
        let changed = rows_changed(&base, &level0(&model, &x2));
        let span = changed.last().unwrap() - changed.first().unwrap() + 1;
        assert!(span <= k * (window - 1) + 1, "k={k}: span {span}");
        assert_eq!(span, k * (window - 1) + 1, "k={k}: receptive field should be exactly reached");
        assert!(changed.iter().all(|&i| i.abs_diff(32) <= k * (window / 2)));
    }
}

#[test]
fn padded_rows_never_reach_valid_outputs() {
    for fusion in [FusionMode::Cat, FusionMode::ProjCat] {
        let cfg = tiny_config(fusion, 64, 4);
        let model = Localizer::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let valid = 37;
        let mask: Rc<[bool]> = (0..64).map(|i| i < valid).collect();
        let clean: Vec<Array2<f64>> = [5, 3]
            .iter()
            .map(|&d| {
                let mut m = random_matrix(64, d, &mut rng);
                m.slice_mut(s![valid.., ..]).fill(0.0);
                m
            })
            .collect();
        let noisy: Vec<Array2<f64>> = clean
            .iter()
            .map(|m| {
                let mut m = m.clone();
                let noise = random_matrix(64 - valid, m.ncols(), &mut rng) * 100.0;
                m.slice_mut(s![valid.., ..]).assign(&noise);
                m
            })
            .collect();
        let run = |inputs: &[Array2<f64>]| {
            let mut g = Graph::new();
            let p = model.params().bind(&mut g);
            let levels = model.forward_padded(&mut g, &p, inputs, &mask).unwrap();
            levels
                .iter()
                .map(|l| {
                    let keep: Vec<usize> = (0..l.mask.len()).filter(|&i| l.mask[i]).collect();
                    (g.value(l.logits).select(ndarray::Axis(0), &keep), g.value(l.offsets).select(ndarray::Axis(0), &keep))
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(run(&clean), run(&noisy), "{fusion:?}");
        // and padding with zeros through the public entry point agrees
        let trimmed: Vec<Array2<f64>> = clean.iter().map(|m| m.slice(s![..valid, ..]).to_owned()).collect();
        let out = model.predict(&trimmed).unwrap();
        for (level, (logits, _)) in out.levels.iter().zip(run(&clean)) {
            let n = logits.nrows();
            assert_eq!(level.class_logits.slice(s![..n, ..]), logits);
        }
    }
}

#[test]
fn full_window_equals_dense_attention() {
    let t = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let q = random_matrix(t, 8, &mut rng);
    let k = random_matrix(t, 8, &mut rng);
    let v = random_matrix(t, 8, &mut rng);
    let want = dense_attention(&q, &k, &v, 2);
    for window in [2 * t - 1, 2 * t + 1, 4 * t + 1] {
        let mut g = Graph::new();
        let (qv, kv, vv) = (g.leaf(q.clone()), g.leaf(k.clone()), g.leaf(v.clone()));
        let mask: Rc<[bool]> = vec![true; t].into();
        let got = g.local_attention(qv, kv, vv, 2, window, &mask);
        let diff = (g.value(got) - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-5, "window {window}: max diff {diff:e}");
    }
}

#[test]
fn initialization_is_deterministic() {
    let cfg = tiny_config(FusionMode::ProjCat, 32, 3);
    let a = Localizer::new(cfg.clone(), 42).unwrap();
    let b = Localizer::new(cfg.clone(), 42).unwrap();
    let c = Localizer::new(cfg, 43).unwrap();
    let names_a: Vec<_> = a.params().iter().collect();
    assert_eq!(names_a, b.params().iter().collect::<Vec<_>>());
    assert_ne!(names_a, c.params().iter().collect::<Vec<_>>());
    assert_eq!(a.config().regression_ranges, doubling_ranges(3));
}
