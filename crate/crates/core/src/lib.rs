//! Temporal action localization toolkit: interval geometry, feature files,
//! multi-source fusion, pyramid decoding with SoftNMS, moment-query metrics
//! and a seeded synthetic dataset.

pub mod decode;
pub mod error;
pub mod fusion;
pub mod io;
pub mod metrics;
pub mod reference;
pub mod segment;
pub mod synth;

pub use decode::{DecodeConfig, PyramidLevel, PyramidOutput};
pub use error::{Error, Result};
pub use fusion::{AlignMode, FeatureSequence, Projection, ProjectionSpec};
pub use metrics::{DetectionMap, EvalConfig, EvalReport};
pub use segment::{clip_segment, tiou, ActionInstance, Detection, Segment, VideoRecord};
