//! From pyramid outputs to a capped, SoftNMS-filtered list of detections.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segment::{detection_order, Detection, Segment};

/// One pyramid level as produced by the localizer heads.
///
/// Point `i` sits at finest-grid position `i * stride`. Offsets are
/// non-negative distances to onset and offset measured in units of this
/// level's stride, so `offsets * stride` is in finest-grid steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidLevel {
    pub stride: usize,
    /// `T_l x C` raw logits; probabilities are their sigmoids.
    pub class_logits: Array2<f64>,
    /// `T_l x 2` as `(d_start, d_end)`.
    pub offsets: Array2<f64>,
    pub mask: Vec<bool>,
}

impl PyramidLevel {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PyramidOutput {
    pub levels: Vec<PyramidLevel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub pre_nms_topk: usize,
    pub softnms_sigma: f64,
    pub softnms_floor: f64,
    pub max_predictions: usize,
    /// Seconds per finest-grid step.
    pub seconds_per_step: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            score_threshold: 0.001,
            pre_nms_topk: 2000,
            softnms_sigma: 0.9,
            softnms_floor: 0.001,
            max_predictions: crate::io::MAX_DETECTIONS_PER_VIDEO,
            seconds_per_step: 16.0 / 30.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("score_threshold", self.score_threshold),
            ("softnms_sigma", self.softnms_sigma),
            ("softnms_floor", self.softnms_floor),
            ("seconds_per_step", self.seconds_per_step),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("decode.{name} must be positive, got {v}")));
            }
        }
        if self.pre_nms_topk == 0 || self.max_predictions == 0 {
            return Err(Error::Config(
                "decode.pre_nms_topk and decode.max_predictions must be positive".into(),
            ));
        }
        if self.max_predictions > crate::io::MAX_DETECTIONS_PER_VIDEO {
            return Err(Error::Config(format!(
                "decode.max_predictions {} exceeds the per-video cap of {}",
                self.max_predictions,
                crate::io::MAX_DETECTIONS_PER_VIDEO
            )));
        }
        Ok(())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Turn every valid pyramid point whose class probability clears the
/// threshold into a clipped segment; keeps the per-level top-k before pooling.
pub fn decode_points(p: &PyramidOutput, cfg: &DecodeConfig, duration: f64) -> Result<Vec<Detection>> {
    cfg.validate()?;
    let delta = cfg.seconds_per_step;
    let mut out = Vec::new();
    for level in &p.levels {
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for (i, row) in level.class_logits.outer_iter().enumerate() {
            if !level.mask[i] {
                continue;
            }
            for (c, &logit) in row.iter().enumerate() {
                let prob = sigmoid(logit);
                if prob > cfg.score_threshold {
                    cand.push((prob, i, c));
                }
            }
        }
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cand.truncate(cfg.pre_nms_topk);
        let s = level.stride as f64;
        for (prob, i, c) in cand {
            let center = (i * level.stride) as f64;
            let start = (center - level.offsets[[i, 0]] * s) * delta;
            let end = (center + level.offsets[[i, 1]] * s) * delta;
            let Ok(seg) = Segment::new(start, end) else {
                continue;
            };
            let Some(seg) = seg.clip(duration) else {
                continue;
            };
            out.push(Detection {
                label_id: c,
                score: prob,
                segment: seg,
            });
        }
    }
    out.sort_by(detection_order);
    Ok(out)
}

/// Gaussian-decay SoftNMS, independently per class.
pub fn soft_nms(dets: &[Detection], cfg: &DecodeConfig) -> Vec<Detection> {
    let mut by_class: std::collections::BTreeMap<usize, Vec<Detection>> = Default::default();
    for d in dets {
        by_class.entry(d.label_id).or_default().push(*d);
    }
    let mut out = Vec::with_capacity(dets.len());
    for (_, mut remaining) in by_class {
        while !remaining.is_empty() {
            let best = remaining
                .iter()
                .enumerate()
                .min_by(|a, b| detection_order(a.1, b.1))
                .map(|(i, _)| i)
                .expect("non-empty");
            let picked = remaining.swap_remove(best);
            out.push(picked);
            remaining.retain_mut(|d| {
                let iou = picked.segment.tiou(&d.segment);
                d.score *= (-(iou * iou) / cfg.softnms_sigma).exp();
                d.score >= cfg.softnms_floor
            });
        }
    }
    out.sort_by(detection_order);
    out
}

pub fn cap_predictions(mut dets: Vec<Detection>, max_predictions: usize) -> Vec<Detection> {
    dets.sort_by(detection_order);
    dets.truncate(max_predictions);
    dets
}

/// decode_points -> soft_nms -> cap_predictions.
pub fn decode_video(p: &PyramidOutput, cfg: &DecodeConfig, duration: f64) -> Result<Vec<Detection>> {
    let raw = decode_points(p, cfg, duration)?;
    Ok(cap_predictions(soft_nms(&raw, cfg), cfg.max_predictions))
}
