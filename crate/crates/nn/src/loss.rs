//! Sigmoid focal classification loss and 1-D IoU regression loss, with
//! closed-form gradients with respect to logits and offsets.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autograd::softplus;
use crate::error::{Error, Result};
use crate::targets::PointTargets;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Focal loss of one logit and its derivative.
pub fn focal_term(logit: f64, target: f64, fp: FocalParams) -> (f64, f64) {
    // ln p and ln(1 - p) without cancellation
    let log_p = -softplus(-logit);
    let log_q = -softplus(logit);
    let p = log_p.exp();
    let q = log_q.exp();
    if target > 0.5 {
        let w = q.powf(fp.gamma);
        let loss = -fp.alpha * w * log_p;
        let grad = fp.alpha * w * (fp.gamma * p * log_p - q);
        (loss, grad)
    } else {
        let w = p.powf(fp.gamma);
        let loss = -(1.0 - fp.alpha) * w * log_q;
        let grad = (1.0 - fp.alpha) * w * (p - fp.gamma * q * log_q);
        (loss, grad)
    }
}

/// `1 - tIoU` of two intervals sharing an anchor, given as distances
/// `(left, right)` from it, with the derivative w.r.t. the predicted pair.
pub fn iou_term(pred: [f64; 2], target: [f64; 2]) -> (f64, [f64; 2]) {
    let inter = pred[0].min(target[0]) + pred[1].min(target[1]);
    // max + max rather than sum - inter, so equal pairs give exactly 1
    let union = pred[0].max(target[0]) + pred[1].max(target[1]);
    if union <= 0.0 {
        return (1.0, [0.0; 2]);
    }
    let iou = inter / union;
    let mut grad = [0.0; 2];
    for k in 0..2 {
        let d_inter = if pred[k] < target[k] { 1.0 } else { 0.0 };
        let d_union = 1.0 - d_inter;
        let d_iou = (d_inter * union - inter * d_union) / (union * union);
        grad[k] = -d_iou;
    }
    (1.0 - iou, grad)
}

/// Per-level model outputs as plain arrays.
#[derive(Debug, Clone, Copy)]
pub struct LevelPrediction<'a> {
    pub logits: &'a Array2<f64>,
    /// Offsets in units of the level stride.
    pub offsets: &'a Array2<f64>,
}

/// Unnormalized loss sums for one video plus their gradients.
#[derive(Debug, Clone)]
pub struct LossSums {
    pub cls: f64,
    pub reg: f64,
    pub num_pos: usize,
    pub num_valid: usize,
    pub grad_logits: Vec<Array2<f64>>,
    pub grad_offsets: Vec<Array2<f64>>,
}

impl LossSums {
    /// Divide sums and gradients by `norm`.
    pub fn scale(&mut self, norm: f64) {
        self.cls /= norm;
        self.reg /= norm;
        for g in self.grad_logits.iter_mut().chain(self.grad_offsets.iter_mut()) {
            *g /= norm;
        }
    }
}

pub fn loss_sums(preds: &[LevelPrediction<'_>], targets: &PointTargets, fp: FocalParams) -> Result<LossSums> {
    if preds.len() != targets.levels.len() {
        return Err(Error::Input(format!(
            "{} prediction levels vs {} target levels",
            preds.len(),
            targets.levels.len()
        )));
    }
    let mut out = LossSums {
        cls: 0.0,
        reg: 0.0,
        num_pos: 0,
        num_valid: 0,
        grad_logits: Vec::with_capacity(preds.len()),
        grad_offsets: Vec::with_capacity(preds.len()),
    };
    for (p, t) in preds.iter().zip(&targets.levels) {
        if p.logits.dim() != t.cls.dim() || p.offsets.dim() != t.reg.dim() {
            return Err(Error::Input(format!(
                "shape mismatch: logits {:?} vs targets {:?}",
                p.logits.dim(),
                t.cls.dim()
            )));
        }
        let mut gl = Array2::zeros(p.logits.dim());
        let mut go = Array2::zeros(p.offsets.dim());
        let s = t.stride as f64;
        for i in 0..t.valid.len() {
            if !t.valid[i] {
                continue;
            }
            out.num_valid += 1;
            for c in 0..t.cls.ncols() {
                let (l, g) = focal_term(p.logits[[i, c]], t.cls[[i, c]], fp);
                out.cls += l;
                gl[[i, c]] = g;
            }
            if t.is_positive(i) {
                out.num_pos += 1;
                let pred = [p.offsets[[i, 0]], p.offsets[[i, 1]]];
                let target = [t.reg[[i, 0]] / s, t.reg[[i, 1]] / s];
                let (l, g) = iou_term(pred, target);
                out.reg += l;
                go[[i, 0]] = g[0];
                go[[i, 1]] = g[1];
            }
        }
        out.grad_logits.push(gl);
        out.grad_offsets.push(go);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub cls: f64,
    pub reg: f64,
    pub total: f64,
    pub num_pos: usize,
}

/// Loss for one video normalized by `max(1, #positives)`.
pub fn loss(preds: &[LevelPrediction<'_>], targets: &PointTargets, fp: FocalParams) -> Result<(LossValue, LossSums)> {
    let mut sums = loss_sums(preds, targets, fp)?;
    if sums.num_valid == 0 {
        return Err(Error::EmptyBatch);
    }
    sums.scale(sums.num_pos.max(1) as f64);
    let value = LossValue {
        cls: sums.cls,
        reg: sums.reg,
        total: sums.cls + sums.reg,
        num_pos: sums.num_pos,
    };
    Ok((value, sums))
}
