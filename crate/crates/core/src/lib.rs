//! Advertiser keyphrase relevance filters aligned with Search relevance
//! judgments.
//!
//! The crate covers the whole loop: a marketplace simulator that exhibits
//! the selection bias of click logs, a Jaccard baseline, bi- and
//! cross-encoders trained from scratch, alignment metrics, and a serving
//! pipeline with full-batch, daily-diff and near-real-time paths.

pub mod error;
pub mod bi_encoder;
pub mod checkpoint;
pub mod cross_encoder;
pub mod eval;
pub mod experiment;
pub mod io;
pub mod jaccard;
pub mod scoring;
pub mod serving;
pub mod sim;
pub mod text;

pub use checkpoint::{Checkpoint, RelevanceModel};
pub use error::{Error, Result};
pub use eval::{ConfusionCounts, PairKey, Prf1Report};
pub use jaccard::JaccardConfig;
pub use sim::{ClickLogRecord, RelevanceJudgment, SimConfig, World};
pub use text::{ItemDoc, Keyphrase, TokenSeq, Vocab};
