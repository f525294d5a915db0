//! Time intervals and the records built on them.
//!
//! All times are seconds. Grid indices only exist inside the model and the
//! decoder, so everything here is grid-agnostic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A half-open-looking but closed time interval `[start, end]` with `start < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Segment {
    start: f64,
    end: f64,
}

impl Segment {
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::Domain(format!(
                "segment endpoints must be finite, got [{start}, {end}]"
            )));
        }
        if start >= end {
            return Err(Error::Domain(format!(
                "degenerate segment [{start}, {end}]: start must be < end"
            )));
        }
        Ok(Self { start, end })
    }

    #[inline]
    pub fn start(&self) -> f64 {
        self.start
    }

    #[inline]
    pub fn end(&self) -> f64 {
        self.end
    }

    #[inline]
    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    #[inline]
    pub fn center(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Temporal intersection-over-union.
    pub fn tiou(&self, other: &Segment) -> f64 {
        let inter = (self.end.min(other.end) - self.start.max(other.start)).max(0.0);
        if inter <= 0.0 {
            return 0.0;
        }
        // union of two overlapping intervals is their hull
        let union = self.end.max(other.end) - self.start.min(other.start);
        (inter / union).clamp(0.0, 1.0)
    }

    /// Clamp both endpoints into `[0, duration]`.
    ///
    /// Returns `None` when nothing is left, in which case callers drop the
    /// detection.
    pub fn clip(&self, duration: f64) -> Option<Segment> {
        let start = self.start.clamp(0.0, duration);
        let end = self.end.clamp(0.0, duration);
        Segment::new(start, end).ok()
    }

    pub fn contains(&self, other: &Segment) -> bool {
        other.start >= self.start && other.end <= self.end
    }
}

impl TryFrom<[f64; 2]> for Segment {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Self> {
        Segment::new(v[0], v[1])
    }
}

impl From<Segment> for [f64; 2] {
    fn from(s: Segment) -> Self {
        [s.start, s.end]
    }
}

/// Temporal IoU of two segments; symmetric, in `[0, 1]`.
pub fn tiou(a: &Segment, b: &Segment) -> f64 {
    a.tiou(b)
}

/// Clip a segment to a video of the given duration.
pub fn clip_segment(s: &Segment, duration: f64) -> Result<Segment> {
    if !(duration > 0.0) {
        return Err(Error::Domain(format!("duration must be > 0, got {duration}")));
    }
    s.clip(duration).ok_or(Error::EmptyAfterClip {
        start: s.start,
        end: s.end,
        duration,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionInstance {
    pub label_id: usize,
    pub segment: Segment,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub label_id: usize,
    pub score: f64,
    pub segment: Segment,
}

impl Detection {
    pub fn new(label_id: usize, score: f64, segment: Segment) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Domain(format!("detection score {score} outside [0, 1]")));
        }
        Ok(Self {
            label_id,
            score,
            segment,
        })
    }
}

/// Orders detections by score descending, then earlier start, then smaller label.
///
/// This is the single tie-break rule used by decoding, capping and evaluation.
pub fn detection_order(a: &Detection, b: &Detection) -> std::cmp::Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.segment.start().total_cmp(&b.segment.start()))
        .then(a.label_id.cmp(&b.label_id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub video_id: String,
    pub duration: f64,
    pub instances: Vec<ActionInstance>,
}

impl VideoRecord {
    pub fn new(
        video_id: impl Into<String>,
        duration: f64,
        instances: Vec<ActionInstance>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(Error::Validation {
                video_id,
                index: None,
                reason: format!("duration must be positive and finite, got {duration}"),
            });
        }
        for (i, inst) in instances.iter().enumerate() {
            if inst.segment.start() < 0.0 || inst.segment.end() > duration {
                return Err(Error::Validation {
                    video_id,
                    index: Some(i),
                    reason: format!(
                        "instance [{}, {}] outside [0, {duration}]",
                        inst.segment.start(),
                        inst.segment.end()
                    ),
                });
            }
        }
        Ok(Self {
            video_id,
            duration,
            instances,
        })
    }
}
