use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::batch::{apply_diff, plan_diff, PairSource};
use super::store::{ScoreRecord, ScoreStore};
use crate::error::{Error, Result};
use crate::scoring::{Catalog, Scorer};
use crate::text::{ItemDoc, Keyphrase};

pub const DEFAULT_WINDOW_MS: u64 = 500;
const KEPT_REPORTS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ItemCreated,
    ItemRevised,
    KeyphraseCreated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogEvent {
    pub kind: EventKind,
    pub id: u64,
    /// UTC milliseconds.
    pub event_time: u64,
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }
}

/// Test clock advanced by hand.
#[derive(Debug, Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// A closed tumbling window, already deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub start_ms: u64,
    pub received: usize,
    /// One event per `(kind, id)`, the one with the latest event time
    /// (arrival order breaks ties), sorted by `(kind, id)`.
    pub events: Vec<CatalogEvent>,
}

pub fn dedup_events(events: &[CatalogEvent]) -> Vec<CatalogEvent> {
    let mut latest: BTreeMap<(EventKind, u64), CatalogEvent> = BTreeMap::new();
    for ev in events {
        let slot = latest.entry((ev.kind, ev.id)).or_insert(*ev);
        if ev.event_time >= slot.event_time {
            *slot = *ev;
        }
    }
    latest.into_values().collect()
}

/// Tumbling windows over processing time: window `n` covers
/// `[n * window_ms, (n + 1) * window_ms)`.
#[derive(Debug, Clone)]
pub struct WindowBuffer {
    window_ms: u64,
    current: Option<u64>,
    events: Vec<CatalogEvent>,
}

impl WindowBuffer {
    pub fn new(window_ms: u64) -> Result<Self> {
        if window_ms == 0 {
            return Err(Error::Config("window_ms must be positive".into()));
        }
        Ok(Self {
            window_ms,
            current: None,
            events: Vec::new(),
        })
    }

    pub fn window_ms(&self) -> u64 {
        self.window_ms
    }

    /// Buffers `event` arriving at `now_ms`; returns the previous window if
    /// this arrival closed it.
    pub fn push(&mut self, event: CatalogEvent, now_ms: u64) -> Option<Window> {
        let closed = self.poll(now_ms);
        self.current.get_or_insert(now_ms / self.window_ms);
        self.events.push(event);
        closed
    }

    /// Closes the open window if `now_ms` lies past its end.
    pub fn poll(&mut self, now_ms: u64) -> Option<Window> {
        match self.current {
            Some(idx) if now_ms / self.window_ms > idx => self.flush(),
            _ => None,
        }
    }

    pub fn flush(&mut self) -> Option<Window> {
        let idx = self.current.take()?;
        let events = std::mem::take(&mut self.events);
        Some(Window {
            start_ms: idx * self.window_ms,
            received: events.len(),
            events: dedup_events(&events),
        })
    }

    pub fn pending(&self) -> usize {
        self.events.len()
    }
}

/// Resolves event ids to full documents (the feature store).
pub trait Enrichment: Send + Sync {
    fn item(&self, id: u64) -> Option<ItemDoc>;
    fn keyphrase(&self, id: u64) -> Option<Keyphrase>;
}

/// In-memory enrichment source.
#[derive(Debug, Default)]
pub struct MapEnrichment {
    items: RwLock<BTreeMap<u64, ItemDoc>>,
    keyphrases: RwLock<BTreeMap<u64, Keyphrase>>,
}

impl MapEnrichment {
    pub fn new(items: impl IntoIterator<Item = ItemDoc>, keyphrases: impl IntoIterator<Item = Keyphrase>) -> Self {
        Self {
            items: RwLock::new(items.into_iter().map(|i| (i.item_id, i)).collect()),
            keyphrases: RwLock::new(keyphrases.into_iter().map(|k| (k.keyphrase_id, k)).collect()),
        }
    }

    pub fn put_item(&self, item: ItemDoc) {
        self.items.write().unwrap().insert(item.item_id, item);
    }

    pub fn put_keyphrase(&self, kp: Keyphrase) {
        self.keyphrases.write().unwrap().insert(kp.keyphrase_id, kp);
    }
}

impl Enrichment for MapEnrichment {
    fn item(&self, id: u64) -> Option<ItemDoc> {
        self.items.read().unwrap().get(&id).cloned()
    }

    fn keyphrase(&self, id: u64) -> Option<Keyphrase> {
        self.keyphrases.read().unwrap().get(&id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeadLetter {
    pub event: CatalogEvent,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub start_ms: u64,
    pub received: usize,
    pub unique: usize,
    pub dead_lettered: usize,
    pub scored: usize,
    pub applied: usize,
    pub removed: usize,
    pub latency_ms: f64,
}

/// Applies closed windows to a live store. Windows are applied one at a
/// time and each is swapped in under a single write lock, so readers see
/// either all of a window or none of it.
pub struct NrtPipeline {
    scorer: Arc<Scorer>,
    source: Arc<dyn PairSource>,
    enrichment: Arc<dyn Enrichment>,
    catalog: RwLock<Catalog>,
    store: RwLock<ScoreStore>,
    writer: Mutex<()>,
    dead_letters: Mutex<Vec<DeadLetter>>,
    reports: Mutex<Vec<WindowReport>>,
}

impl NrtPipeline {
    pub fn new(
        scorer: Arc<Scorer>,
        source: Arc<dyn PairSource>,
        enrichment: Arc<dyn Enrichment>,
        catalog: Catalog,
        store: ScoreStore,
    ) -> Result<Self> {
        if store.model_version() != scorer.model_version() {
            return Err(Error::VersionMismatch {
                store: store.model_version().to_string(),
                model: scorer.model_version().to_string(),
            });
        }
        Ok(Self {
            scorer,
            source,
            enrichment,
            catalog: RwLock::new(catalog),
            store: RwLock::new(store),
            writer: Mutex::new(()),
            dead_letters: Mutex::new(Vec::new()),
            reports: Mutex::new(Vec::new()),
        })
    }

    pub fn model_version(&self) -> &str {
        self.scorer.model_version()
    }

    pub fn get(&self, item_id: u64, keyphrase_id: u64) -> Option<ScoreRecord> {
        self.store.read().unwrap().get(item_id, keyphrase_id)
    }

    pub fn store_len(&self) -> usize {
        self.store.read().unwrap().len()
    }

    pub fn store_snapshot(&self) -> ScoreStore {
        self.store.read().unwrap().clone()
    }

    pub fn catalog_snapshot(&self) -> Catalog {
        self.catalog.read().unwrap().clone()
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        self.dead_letters.lock().unwrap().clone()
    }

    pub fn reports(&self) -> Vec<WindowReport> {
        self.reports.lock().unwrap().clone()
    }

    pub fn process_window(&self, window: &Window) -> Result<WindowReport> {
        let _single_writer = self.writer.lock().unwrap();
        let started = Instant::now();
        let mut dead = Vec::new();
        let mut changed_items = Vec::new();
        let mut new_kps = Vec::new();
        let mut catalog = self.catalog.read().unwrap().clone();
        for ev in &window.events {
            match ev.kind {
                EventKind::ItemCreated | EventKind::ItemRevised => match self.enrichment.item(ev.id) {
                    Some(item) if item.item_id == ev.id => {
                        if catalog.upsert_item(item, ev.event_time) {
                            changed_items.push(ev.id);
                        }
                    }
                    _ => dead.push(DeadLetter {
                        event: *ev,
                        reason: format!("enrichment miss for item {}", ev.id),
                    }),
                },
                EventKind::KeyphraseCreated => match self.enrichment.keyphrase(ev.id) {
                    Some(kp) if kp.keyphrase_id == ev.id => {
                        if catalog.upsert_keyphrase(kp, ev.event_time) {
                            new_kps.push(ev.id);
                        }
                    }
                    _ => dead.push(DeadLetter {
                        event: *ev,
                        reason: format!("enrichment miss for keyphrase {}", ev.id),
                    }),
                },
            }
        }
        changed_items.sort_unstable();
        changed_items.dedup();
        let mut staged = self.store.read().unwrap().clone();
        let plan = plan_diff(&staged, &self.scorer, &catalog, &changed_items, &new_kps, self.source.as_ref())?;
        let scored = plan.upserts.len();
        let diff = apply_diff(&mut staged, plan)?;
        {
            let mut store = self.store.write().unwrap();
            let mut cat = self.catalog.write().unwrap();
            *store = staged;
            *cat = catalog;
        }
        let report = WindowReport {
            start_ms: window.start_ms,
            received: window.received,
            unique: window.events.len(),
            dead_lettered: dead.len(),
            scored,
            applied: diff.rewritten,
            removed: diff.removed,
            latency_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        if !dead.is_empty() {
            tracing::warn!(count = dead.len(), "dead-lettered events");
        }
        self.dead_letters.lock().unwrap().extend(dead);
        let mut reports = self.reports.lock().unwrap();
        reports.push(report.clone());
        if reports.len() > KEPT_REPORTS {
            let excess = reports.len() - KEPT_REPORTS;
            reports.drain(..excess);
        }
        Ok(report)
    }
}
