//! Center-sampled target assignment over pyramid points.
//!
//! Point `i` of level `l` sits at finest-grid position `c = i * stride_l`.
//! It is positive for instance `(ts, te)` when it lies within
//! `radius * stride_l` of the instance midpoint, strictly inside the
//! instance, and its larger regression distance falls in the level's range.
//! Overlapping claims go to the shortest instance.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::model::{ModelConfig, RegressionRange};

/// An instance in finest-grid units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridInstance {
    pub label_id: usize,
    pub start: f64,
    pub end: f64,
}

impl GridInstance {
    pub fn from_seconds(label_id: usize, start: f64, end: f64, seconds_per_step: f64) -> Self {
        Self {
            label_id,
            start: start / seconds_per_step,
            end: end / seconds_per_step,
        }
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelGeometry {
    pub stride: usize,
    pub len: usize,
    pub range: RegressionRange,
    /// Number of leading valid points.
    pub valid: usize,
}

/// Level geometry for a padded input with `valid_steps` real steps.
pub fn pyramid_geometry(cfg: &ModelConfig, valid_steps: usize) -> Vec<LevelGeometry> {
    (0..cfg.num_levels)
        .map(|l| {
            let stride = cfg.level_stride(l);
            LevelGeometry {
                stride,
                len: cfg.max_seq_len / stride,
                range: cfg.regression_ranges[l],
                // downsampled masks keep every stride-th entry
                valid: valid_steps.div_ceil(stride).min(cfg.max_seq_len / stride),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssignConfig {
    /// Center-sampling radius in units of the level stride.
    pub center_sampling_radius: f64,
}

impl Default for AssignConfig {
    fn default() -> Self {
        Self {
            center_sampling_radius: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelTargets {
    /// `T_l x C`, one-hot on positives.
    pub cls: Array2<f64>,
    /// `T_l x 2` distances `(c - ts, te - c)` in finest-grid steps; zero on negatives.
    pub reg: Array2<f64>,
    /// Index of the assigned instance for positives.
    pub assigned: Vec<Option<usize>>,
    pub valid: Vec<bool>,
    pub stride: usize,
}

impl LevelTargets {
    pub fn is_positive(&self, i: usize) -> bool {
        self.assigned[i].is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointTargets {
    pub levels: Vec<LevelTargets>,
    /// Instances that no point claimed.
    pub unassignable: Vec<usize>,
}

impl PointTargets {
    pub fn num_positives(&self) -> usize {
        self.levels
            .iter()
            .map(|l| l.assigned.iter().filter(|a| a.is_some()).count())
            .sum()
    }
}

pub fn assign_targets(
    instances: &[GridInstance],
    geometry: &[LevelGeometry],
    num_classes: usize,
    cfg: &AssignConfig,
) -> PointTargets {
    let mut claimed = vec![false; instances.len()];
    let mut levels = Vec::with_capacity(geometry.len());
    for geo in geometry {
        let s = geo.stride as f64;
        let radius = cfg.center_sampling_radius * s;
        let mut best: Vec<Option<usize>> = vec![None; geo.len];
        for (n, inst) in instances.iter().enumerate() {
            let mid = 0.5 * (inst.start + inst.end);
            // candidate index window, widened by one so the exact test below decides
            let lo = (((mid - radius) / s).floor() as i64 - 1).max(0);
            let hi = (((mid + radius) / s).ceil() as i64 + 1).min(geo.valid as i64 - 1);
            for i in lo..=hi {
                let i = i as usize;
                let c = (i * geo.stride) as f64;
                let near = (c - mid).abs() <= radius;
                let inside = c > inst.start && c < inst.end;
                if !(near && inside && geo.range.contains((c - inst.start).max(inst.end - c))) {
                    continue;
                }
                let shorter = match best[i] {
                    None => true,
                    Some(prev) => inst.length() < instances[prev].length(),
                };
                if shorter {
                    best[i] = Some(n);
                }
            }
        }
        let mut cls = Array2::zeros((geo.len, num_classes));
        let mut reg = Array2::zeros((geo.len, 2));
        for (i, b) in best.iter().enumerate() {
            if let Some(n) = *b {
                let inst = instances[n];
                let c = (i * geo.stride) as f64;
                cls[[i, inst.label_id]] = 1.0;
                reg[[i, 0]] = c - inst.start;
                reg[[i, 1]] = inst.end - c;
                claimed[n] = true;
            }
        }
        levels.push(LevelTargets {
            cls,
            reg,
            assigned: best,
            valid: (0..geo.len).map(|i| i < geo.valid).collect(),
            stride: geo.stride,
        });
    }
    let unassignable = claimed
        .iter()
        .enumerate()
        .filter(|(_, c)| !**c)
        .map(|(n, _)| n)
        .collect();
    PointTargets {
        levels,
        unassignable,
    }
}
