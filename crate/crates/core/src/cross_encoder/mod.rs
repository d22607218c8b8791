//! Joint-input transformer relevance classifier, trained from scratch with a
//! hand-written backward pass.

mod config;
mod model;
mod params;

pub use config::{CrossEncoderConfig, CrossTrainConfig, Preset};
pub use model::{grad_check, CrossEncoderModel};
pub use params::{CrossEncoderParams, LayerParams};
