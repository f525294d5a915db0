//! Deliberately naive reference implementations used as test oracles for
//! the optimized code paths in [`crate::metrics`] and [`crate::decode`].

use std::collections::BTreeMap;

use crate::metrics::DetectionMap;
use crate::segment::{detection_order, Detection, VideoRecord};

/// Area under the interpolated precision-recall curve, computed straight
/// from its definition: for every distinct recall level reached, the
/// interpolated precision is the best precision at any rank whose recall is
/// at least that level.
pub fn envelope_ap(is_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut points = Vec::with_capacity(is_tp.len());
    let mut tp = 0usize;
    for (i, &hit) in is_tp.iter().enumerate() {
        tp += usize::from(hit);
        points.push((tp, (tp as f64) / (i + 1) as f64));
    }
    let mut ap = 0.0;
    for level in 1..=tp {
        let best = points
            .iter()
            .filter(|(t, _)| *t >= level)
            .map(|(_, p)| *p)
            .fold(0.0, f64::max);
        ap += best / num_gt as f64;
    }
    ap
}

/// Average precision with exhaustive greedy matching: detections are
/// visited in score order (ties by start, then video id) and each takes the
/// unmatched same-video GT with the highest tIoU >= `thr` (lowest index on
/// ties).
pub fn brute_force_ap(dets: &DetectionMap, gts: &[VideoRecord], class_id: usize, thr: f64) -> Option<f64> {
    let mut gt: Vec<(&str, crate::Segment, bool)> = Vec::new();
    for v in gts {
        for inst in &v.instances {
            if inst.label_id == class_id {
                gt.push((&v.video_id, inst.segment, false));
            }
        }
    }
    if gt.is_empty() {
        return None;
    }
    let mut flat: Vec<(&str, &Detection)> = dets
        .iter()
        .flat_map(|(v, list)| list.iter().filter(|d| d.label_id == class_id).map(move |d| (v.as_str(), d)))
        .collect();
    flat.sort_by(|a, b| {
        b.1.score
            .total_cmp(&a.1.score)
            .then(a.1.segment.start().total_cmp(&b.1.segment.start()))
            .then(a.0.cmp(b.0))
    });
    let mut is_tp = Vec::with_capacity(flat.len());
    for (vid, d) in flat {
        let mut best: Option<(usize, f64)> = None;
        for (j, (gv, seg, used)) in gt.iter().enumerate() {
            if *gv != vid || *used {
                continue;
            }
            let iou = d.segment.tiou(seg);
            if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        if let Some((j, _)) = best {
            gt[j].2 = true;
        }
        is_tp.push(best.is_some());
    }
    Some(envelope_ap(&is_tp, gt.len()))
}

/// Classic per-class hard NMS that suppresses any detection overlapping an
/// already kept one at all (tIoU > 0).
pub fn hard_nms_any_overlap(dets: &[Detection]) -> Vec<Detection> {
    let mut by_class: BTreeMap<usize, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by_class.entry(d.label_id).or_default().push(*d);
    }
    let mut out = Vec::new();
    for (_, mut list) in by_class {
        list.sort_by(detection_order);
        let mut kept: Vec<Detection> = Vec::new();
        for d in list {
            if kept.iter().all(|k| k.segment.tiou(&d.segment) == 0.0) {
                kept.push(d);
            }
        }
        out.extend(kept);
    }
    out.sort_by(detection_order);
    out
}
