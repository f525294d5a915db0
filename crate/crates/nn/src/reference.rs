//! Deliberately naive reference implementations used as test oracles.

use ndarray::Array2;

use crate::targets::{AssignConfig, GridInstance, LevelGeometry, LevelTargets, PointTargets};

/// Exhaustive target assignment: every point of every level is tested
/// against every instance, and among qualifying instances the shortest (then
/// the lowest index) wins.
pub fn brute_force_assign(
    instances: &[GridInstance],
    geometry: &[LevelGeometry],
    num_classes: usize,
    cfg: &AssignConfig,
) -> PointTargets {
    let mut claimed = vec![false; instances.len()];
    let mut levels = Vec::with_capacity(geometry.len());
    for geo in geometry {
        let s = geo.stride as f64;
        let mut cls = Array2::zeros((geo.len, num_classes));
        let mut reg = Array2::zeros((geo.len, 2));
        let mut assigned = vec![None; geo.len];
        for i in 0..geo.valid {
            let c = (i * geo.stride) as f64;
            let winner = instances
                .iter()
                .enumerate()
                .filter(|(_, g)| {
                    let mid = (g.start + g.end) / 2.0;
                    let left = c - g.start;
                    let right = g.end - c;
                    (c - mid).abs() <= cfg.center_sampling_radius * s
                        && left > 0.0
                        && right > 0.0
                        && geo.range.contains(left.max(right))
                })
                .min_by(|a, b| a.1.length().total_cmp(&b.1.length()).then(a.0.cmp(&b.0)));
            if let Some((n, g)) = winner {
                assigned[i] = Some(n);
                cls[[i, g.label_id]] = 1.0;
                reg[[i, 0]] = c - g.start;
                reg[[i, 1]] = g.end - c;
                claimed[n] = true;
            }
        }
        levels.push(LevelTargets {
            cls,
            reg,
            assigned,
            valid: (0..geo.len).map(|i| i < geo.valid).collect(),
            stride: geo.stride,
        });
    }
    PointTargets {
        levels,
        unassignable: (0..instances.len()).filter(|&n| !claimed[n]).collect(),
    }
}
