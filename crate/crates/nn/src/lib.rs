//! Trainable temporal localizer built on a small reverse-mode tape.
//!
//! The model fuses aligned feature sources, embeds them with convolutions,
//! builds a local self-attention pyramid and scores every pyramid point with
//! heads shared across levels. Training assigns center-sampled targets and
//! minimizes focal + IoU losses with AdamW.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod optim;
pub mod params;
pub mod reference;
pub mod schedule;
pub mod targets;
pub mod train;

pub use error::{Error, Result};
pub use model::{FusionMode, InputSource, Localizer, ModelConfig};
pub use train::{train, TrainConfig};
