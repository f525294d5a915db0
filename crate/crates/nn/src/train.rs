//! Training loop: per-batch loss and gradients, AdamW under a warm-up +
//! cosine schedule, JSONL logging and one checkpoint per epoch.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use talkit_core::{DecodeConfig, Detection, DetectionMap};

use crate::autograd::Graph;
use crate::checkpoint::save_checkpoint;
use crate::data::{crop_sample, Sample};
use crate::error::{Error, Result};
use crate::loss::{loss_sums, FocalParams, LevelPrediction, LossValue};
use crate::model::Localizer;
use crate::optim::{clip_grad_norm, AdamW, AdamWConfig};
use crate::schedule::WarmupCosine;
use crate::targets::{assign_targets, pyramid_geometry, AssignConfig, GridInstance, PointTargets};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay: f64,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub center_sampling_radius: f64,
    /// Global gradient-norm clip; 0 disables.
    pub clip_grad_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            batch_size: 2,
            base_lr: 1e-4,
            warmup_epochs: 5,
            weight_decay: 0.05,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            center_sampling_radius: 1.5,
            clip_grad_norm: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be < epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        Ok(())
    }

    pub fn focal(&self) -> FocalParams {
        FocalParams {
            alpha: self.focal_alpha,
            gamma: self.focal_gamma,
        }
    }

    pub fn assign(&self) -> AssignConfig {
        AssignConfig {
            center_sampling_radius: self.center_sampling_radius,
        }
    }
}

/// Point targets of a sample under the model's pyramid.
pub fn sample_targets(model: &Localizer, sample: &Sample, cfg: &AssignConfig) -> PointTargets {
    let mc = model.config();
    let instances: Vec<GridInstance> = sample
        .record
        .instances
        .iter()
        .map(|i| {
            GridInstance::from_seconds(i.label_id, i.segment.start(), i.segment.end(), sample.seconds_per_step)
        })
        .collect();
    let geo = pyramid_geometry(mc, sample.len());
    assign_targets(&instances, &geo, mc.num_classes, cfg)
}

/// Loss over a batch, normalized by the batch's total positives, and its
/// gradient for every parameter in registration order.
pub fn batch_loss_and_grads(
    model: &Localizer,
    batch: &[&Sample],
    cfg: &TrainConfig,
) -> Result<(LossValue, Vec<Array2<f64>>)> {
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let mut seeds = Vec::new();
    let (mut cls, mut reg) = (0.0, 0.0);
    let (mut num_pos, mut num_valid) = (0, 0);
    let mut per_sample = Vec::with_capacity(batch.len());
    for sample in batch {
        let levels = model.forward(&mut g, &p, &sample.sources)?;
        let targets = sample_targets(model, sample, &cfg.assign());
        let preds: Vec<LevelPrediction<'_>> = levels
            .iter()
            .map(|l| LevelPrediction {
                logits: g.value(l.logits),
                offsets: g.value(l.offsets),
            })
            .collect();
        let sums = loss_sums(&preds, &targets, cfg.focal())?;
        cls += sums.cls;
        reg += sums.reg;
        num_pos += sums.num_pos;
        num_valid += sums.num_valid;
        per_sample.push((levels, sums));
    }
    if num_valid == 0 {
        return Err(Error::EmptyBatch);
    }
    let norm = num_pos.max(1) as f64;
    for (levels, sums) in per_sample {
        for (l, (gl, go)) in levels.iter().zip(sums.grad_logits.into_iter().zip(sums.grad_offsets)) {
            seeds.push((l.logits, gl / norm));
            seeds.push((l.offsets, go / norm));
        }
    }
    let mut grads = g.backward(&seeds);
    let param_grads = p.collect_grads(model.params(), &mut grads);
    let value = LossValue {
        cls: cls / norm,
        reg: reg / norm,
        total: (cls + reg) / norm,
        num_pos,
    };
    Ok((value, param_grads))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub cls_loss: f64,
    pub reg_loss: f64,
    pub num_pos: usize,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
}

pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

/// Train `model` in place. With `out_dir`, writes `train_log.jsonl` and
/// `epoch_NNN.{json,bin}` checkpoints there.
pub fn train(samples: &[Sample], model: &mut Localizer, cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(TRAIN_LOG_FILE);
            Some((BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?), path))
        }
        None => None,
    };

    let steps_per_epoch = samples.len().div_ceil(cfg.batch_size);
    let schedule = WarmupCosine::new(
        cfg.base_lr,
        cfg.warmup_epochs * steps_per_epoch,
        cfg.epochs * steps_per_epoch,
    );
    let mut opt = AdamW::new(
        model.params(),
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..Default::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let max_len = model.config().max_seq_len;
    let mut report = TrainReport::default();
    let mut step = 0;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let cropped: Vec<Sample> = chunk.iter().map(|&i| crop_sample(&samples[i], max_len, &mut rng)).collect();
            let batch: Vec<&Sample> = cropped.iter().collect();
            let (value, mut grads) = batch_loss_and_grads(model, &batch, cfg)?;
            if !value.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    step,
                    cls: value.cls,
                    reg: value.reg,
                });
            }
            let grad_norm = clip_grad_norm(&mut grads, cfg.clip_grad_norm);
            let lr = schedule.lr_at(step)?;
            opt.step(model.params_mut(), &grads, lr);
            let entry = StepLog {
                epoch,
                step,
                lr,
                loss: value.total,
                cls_loss: value.cls,
                reg_loss: value.reg,
                num_pos: value.num_pos,
                grad_norm,
            };
            if let Some((w, path)) = log.as_mut() {
                let line = serde_json::to_string(&entry).expect("log entry serializes");
                writeln!(w, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            epoch_loss += value.total;
            report.steps.push(entry);
            step += 1;
        }
        report.epoch_losses.push(epoch_loss / steps_per_epoch as f64);
        if let Some(dir) = out_dir {
            let stem = format!("epoch_{:03}", epoch + 1);
            report.checkpoints.push(save_checkpoint(dir, &stem, model, epoch + 1, cfg.seed)?);
        }
    }
    if let Some((mut w, path)) = log {
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}

/// Decode one sample into capped, SoftNMS-filtered detections.
pub fn predict_sample(model: &Localizer, sample: &Sample, cfg: &DecodeConfig) -> Result<Vec<Detection>> {
    let out = model.predict(&sample.sources)?;
    let cfg = DecodeConfig {
        seconds_per_step: sample.seconds_per_step,
        ..cfg.clone()
    };
    Ok(talkit_core::decode::decode_video(&out, &cfg, sample.record.duration)?)
}

pub fn predict_all(model: &Localizer, samples: &[Sample], cfg: &DecodeConfig) -> Result<DetectionMap> {
    samples
        .iter()
        .map(|s| Ok((s.record.video_id.clone(), predict_sample(model, s, cfg)?)))
        .collect()
}
