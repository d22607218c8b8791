//! Full-batch, daily-diff and near-real-time scoring into a persistent
//! score store.

mod batch;
mod bench;
mod http;
mod nrt;
mod store;

pub use batch::{
    apply_diff, batch_score_diff, batch_score_full, candidate_pairs, plan_diff, score_records, AllPairs,
    CategoryPairs, DiffPlan, DiffReport, ExplicitPairs, PairSource,
};
pub use bench::{bench_throughput, BenchReport, Workload};
pub use http::service;
pub use nrt::{
    dedup_events, CatalogEvent, Clock, DeadLetter, Enrichment, EventKind, ManualClock, MapEnrichment, NrtPipeline,
    SystemClock, Window, WindowBuffer, WindowReport, DEFAULT_WINDOW_MS,
};
pub use store::{newer, Manifest, ScoreRecord, ScoreStore, SegmentInfo, MANIFEST, RECORD_BYTES, SEGMENT_MAGIC, SEGMENT_VERSION};
