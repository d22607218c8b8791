//! Synthetic marketplace reproducing the Advertising → Search → click funnel.
//!
//! Ground truth is known, so the simulator can show what the click log hides:
//! pairs Search rejects never reach an auction and therefore never appear in
//! click data, and relevant items ranked low collect no clicks.

mod config;
mod judgments;
mod traffic;
mod world;

pub use config::SimConfig;
pub use judgments::{derive_judgment_dataset, split_judgments, RelevanceJudgment};
pub use traffic::{
    advertise, click_prob, derive_click_dataset, measure_middleman_bias, run_auctions, simulate_traffic,
    ClickLogRecord, MiddlemanReport, RankStat, TrafficLog,
};
pub(crate) use world::stream_rng;
pub use world::{GroundTruth, KeyphraseTopic, SearchOracle, TopicMixture, TopicVocabulary, World};
