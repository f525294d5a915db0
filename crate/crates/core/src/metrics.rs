//! Moment-query evaluation: per-class AP over tIoU thresholds, average mAP,
//! and Recall@kx.
//!
//! AP uses greedy score-ordered matching with one-to-one GT consumption and
//! all-point interpolation of the precision envelope. Classes without any
//! ground truth are left out of the mean and listed in the report instead.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::segment::{Detection, Segment, VideoRecord};

/// Detections keyed by video id.
pub type DetectionMap = BTreeMap<String, Vec<Detection>>;

/// tIoU thresholds of the moment-query protocol: 0.1, 0.2, ..., 0.5.
pub const DEFAULT_THRESHOLDS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];

#[derive(Debug, Clone, Copy)]
struct PooledDet<'a> {
    video_id: &'a str,
    score: f64,
    segment: Segment,
}

fn pooled_order(a: &PooledDet<'_>, b: &PooledDet<'_>) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.segment.start().total_cmp(&b.segment.start()))
        .then(a.video_id.cmp(b.video_id))
}

/// Index of the unmatched GT with the highest tIoU against `seg`, provided it
/// reaches `thr`. Equal tIoUs resolve to the lower index.
fn best_unmatched(seg: &Segment, gts: &[Segment], used: &[bool], thr: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, gt) in gts.iter().enumerate() {
        if used[j] {
            continue;
        }
        let iou = seg.tiou(gt);
        if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
            best = Some((j, iou));
        }
    }
    best.map(|(j, _)| j)
}

fn class_gts(gts: &[VideoRecord], class_id: usize) -> BTreeMap<&str, Vec<Segment>> {
    let mut out: BTreeMap<&str, Vec<Segment>> = BTreeMap::new();
    for video in gts {
        for inst in &video.instances {
            if inst.label_id == class_id {
                out.entry(video.video_id.as_str()).or_default().push(inst.segment);
            }
        }
    }
    out
}

/// All-point interpolated AP from a TP/FP sequence in score order.
pub fn ap_from_matches(is_tp: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 || is_tp.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(is_tp.len() + 2);
    let mut precision = Vec::with_capacity(is_tp.len() + 2);
    recall.push(0.0);
    precision.push(0.0);
    let mut tp = 0usize;
    for (i, &hit) in is_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        recall.push(tp as f64 / num_gt as f64);
        precision.push(tp as f64 / (i + 1) as f64);
    }
    recall.push(1.0);
    precision.push(0.0);
    for i in (0..precision.len() - 1).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let mut ap = 0.0;
    for i in 1..recall.len() {
        ap += (recall[i] - recall[i - 1]) * precision[i];
    }
    ap
}

/// Average precision for one class at one tIoU threshold, or `None` when the
/// class has no ground truth.
pub fn average_precision(
    dets: &DetectionMap,
    gts: &[VideoRecord],
    class_id: usize,
    tiou_thr: f64,
) -> Option<f64> {
    let gt_by_video = class_gts(gts, class_id);
    let num_gt: usize = gt_by_video.values().map(Vec::len).sum();
    if num_gt == 0 {
        return None;
    }

    let mut pooled: Vec<PooledDet<'_>> = dets
        .iter()
        .flat_map(|(vid, list)| {
            list.iter()
                .filter(|d| d.label_id == class_id)
                .map(move |d| PooledDet {
                    video_id: vid.as_str(),
                    score: d.score,
                    segment: d.segment,
                })
        })
        .collect();
    pooled.sort_by(pooled_order);

    let mut used: BTreeMap<&str, Vec<bool>> = gt_by_video
        .iter()
        .map(|(v, segs)| (*v, vec![false; segs.len()]))
        .collect();
    let is_tp: Vec<bool> = pooled
        .iter()
        .map(|d| {
            let Some(gt_segs) = gt_by_video.get(d.video_id) else {
                return false;
            };
            let flags = used.get_mut(d.video_id).expect("flags exist for every GT video");
            match best_unmatched(&d.segment, gt_segs, flags, tiou_thr) {
                Some(j) => {
                    flags[j] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    Some(ap_from_matches(&is_tp, num_gt))
}

/// Per-threshold mAP over classes with at least one GT instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanAp {
    pub thresholds: Vec<f64>,
    /// `per_class_ap[t][class]` for every evaluated class.
    pub per_class_ap: Vec<BTreeMap<usize, f64>>,
    pub map_per_threshold: Vec<f64>,
    pub average_map: f64,
    pub excluded_classes: Vec<usize>,
}

fn classes_present(dets: &DetectionMap, gts: &[VideoRecord]) -> BTreeSet<usize> {
    gts.iter()
        .flat_map(|v| v.instances.iter().map(|i| i.label_id))
        .chain(dets.values().flatten().map(|d| d.label_id))
        .collect()
}

pub fn mean_ap(dets: &DetectionMap, gts: &[VideoRecord], thresholds: &[f64]) -> MeanAp {
    let classes = classes_present(dets, gts);
    let mut per_class_ap = Vec::with_capacity(thresholds.len());
    let mut map_per_threshold = Vec::with_capacity(thresholds.len());
    let mut excluded = BTreeSet::new();
    for &thr in thresholds {
        let mut aps = BTreeMap::new();
        for &c in &classes {
            match average_precision(dets, gts, c, thr) {
                Some(ap) => {
                    aps.insert(c, ap);
                }
                None => {
                    excluded.insert(c);
                }
            }
        }
        let m = if aps.is_empty() {
            0.0
        } else {
            aps.values().sum::<f64>() / aps.len() as f64
        };
        map_per_threshold.push(m);
        per_class_ap.push(aps);
    }
    let average_map = if map_per_threshold.is_empty() {
        0.0
    } else {
        map_per_threshold.iter().sum::<f64>() / map_per_threshold.len() as f64
    };
    MeanAp {
        thresholds: thresholds.to_vec(),
        per_class_ap,
        map_per_threshold,
        average_map,
        excluded_classes: excluded.into_iter().collect(),
    }
}

/// Recall@kx: for every (video, class) with `x` GTs, the top `k*x` detections
/// are matched one-to-one to GTs in score order at tIoU >= `tiou_thr`.
/// Recall is pooled over all GT instances.
pub fn recall_at_kx(dets: &DetectionMap, gts: &[VideoRecord], k: usize, tiou_thr: f64) -> f64 {
    let mut total = 0usize;
    let mut matched = 0usize;
    for video in gts {
        let mut by_class: BTreeMap<usize, Vec<Segment>> = BTreeMap::new();
        for inst in &video.instances {
            by_class.entry(inst.label_id).or_default().push(inst.segment);
        }
        let video_dets = dets.get(&video.video_id);
        for (class, gt_segs) in by_class {
            total += gt_segs.len();
            let Some(video_dets) = video_dets else {
                continue;
            };
            let mut cand: Vec<&Detection> =
                video_dets.iter().filter(|d| d.label_id == class).collect();
            cand.sort_by(|a, b| crate::segment::detection_order(a, b));
            cand.truncate(k * gt_segs.len());
            let mut used = vec![false; gt_segs.len()];
            for d in cand {
                if let Some(j) = best_unmatched(&d.segment, &gt_segs, &used, tiou_thr) {
                    used[j] = true;
                    matched += 1;
                }
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        matched as f64 / total as f64
    }
}

/// Full evaluation summary, serialized with these exact field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub per_class_ap: Vec<BTreeMap<usize, f64>>,
    pub map_per_threshold: Vec<f64>,
    #[serde(rename = "average_mAP")]
    pub average_map: f64,
    pub recall_at_1x_tiou05: f64,
    pub recall_k: usize,
    pub recall_tiou: f64,
    pub gt_per_class: BTreeMap<usize, usize>,
    pub detections_used: usize,
    pub excluded_classes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub k: usize,
    pub recall_tiou: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            k: 1,
            recall_tiou: 0.5,
        }
    }
}

pub fn evaluate(dets: &DetectionMap, gts: &[VideoRecord], cfg: &EvalConfig) -> EvalReport {
    let m = mean_ap(dets, gts, &cfg.thresholds);
    let recall = recall_at_kx(dets, gts, cfg.k, cfg.recall_tiou);
    let mut gt_per_class = BTreeMap::new();
    for inst in gts.iter().flat_map(|v| &v.instances) {
        *gt_per_class.entry(inst.label_id).or_insert(0) += 1;
    }
    let known: BTreeSet<&str> = gts.iter().map(|v| v.video_id.as_str()).collect();
    let detections_used = dets
        .iter()
        .filter(|(v, _)| known.contains(v.as_str()))
        .map(|(_, l)| l.len())
        .sum();
    EvalReport {
        thresholds: m.thresholds,
        per_class_ap: m.per_class_ap,
        map_per_threshold: m.map_per_threshold,
        average_map: m.average_map,
        recall_at_1x_tiou05: recall,
        recall_k: cfg.k,
        recall_tiou: cfg.recall_tiou,
        gt_per_class,
        detections_used,
        excluded_classes: m.excluded_classes,
    }
}

impl EvalReport {
    /// Human-readable summary with percentages at two decimals.
    pub fn table(&self) -> String {
        let mut out = String::new();
        out.push_str("tIoU   mAP(%)\n");
        for (t, m) in self.thresholds.iter().zip(&self.map_per_threshold) {
            out.push_str(&format!("{t:.1}    {:.2}\n", 100.0 * m));
        }
        out.push_str(&format!("Average mAP: {:.2}\n", 100.0 * self.average_map));
        out.push_str(&format!(
            "Recall@{}x (tIoU={}): {:.2}\n",
            self.recall_k,
            self.recall_tiou,
            100.0 * self.recall_at_1x_tiou05
        ));
        out
    }
}
