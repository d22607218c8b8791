use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::store::{ScoreRecord, ScoreStore};
use crate::error::{Error, Result};
use crate::eval::PairKey;
use crate::scoring::{Catalog, Scorer};
use crate::text::{ItemDoc, Keyphrase};

/// Which (item, keyphrase) pairs are worth scoring. Retrieval happens
/// upstream; this only answers membership.
pub trait PairSource: Send + Sync {
    fn is_candidate(&self, item: &ItemDoc, kp: &Keyphrase) -> bool;
}

/// Every item with every keyphrase.
#[derive(Debug, Clone, Copy, Default)]
pub struct AllPairs;

impl PairSource for AllPairs {
    fn is_candidate(&self, _: &ItemDoc, _: &Keyphrase) -> bool {
        true
    }
}

/// Items with the keyphrases assigned to their category. Keyphrases
/// without an assignment have no candidates.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CategoryPairs {
    pub keyphrase_category: HashMap<u64, u32>,
}

impl CategoryPairs {
    pub fn new(assignments: impl IntoIterator<Item = (u64, u32)>) -> Self {
        Self {
            keyphrase_category: assignments.into_iter().collect(),
        }
    }
}

impl PairSource for CategoryPairs {
    fn is_candidate(&self, item: &ItemDoc, kp: &Keyphrase) -> bool {
        self.keyphrase_category.get(&kp.keyphrase_id) == Some(&item.category_id)
    }
}

/// A fixed pair list.
#[derive(Debug, Clone, Default)]
pub struct ExplicitPairs(pub HashSet<PairKey>);

impl PairSource for ExplicitPairs {
    fn is_candidate(&self, item: &ItemDoc, kp: &Keyphrase) -> bool {
        self.0.contains(&(item.item_id, kp.keyphrase_id))
    }
}

pub fn candidate_pairs(catalog: &Catalog, source: &dyn PairSource) -> Vec<PairKey> {
    let mut out = Vec::new();
    for item in catalog.items.values() {
        for kp in catalog.keyphrases.values() {
            if source.is_candidate(item, kp) {
                out.push((item.item_id, kp.keyphrase_id));
            }
        }
    }
    out
}

/// Scores `pairs` into records stamped with the scorer's version and each
/// pair's event time.
pub fn score_records(scorer: &Scorer, catalog: &Catalog, pairs: &[PairKey]) -> Result<Vec<ScoreRecord>> {
    let scores = scorer.score_pairs(catalog, pairs)?;
    Ok(to_records(scorer, catalog, pairs, scores))
}

fn to_records(scorer: &Scorer, catalog: &Catalog, pairs: &[PairKey], scores: Vec<f64>) -> Vec<ScoreRecord> {
    pairs
        .iter()
        .zip(scores)
        .map(|(&(item_id, keyphrase_id), score)| ScoreRecord {
            item_id,
            keyphrase_id,
            score,
            pass: scorer.passes(score),
            model_version: scorer.model_version().to_string(),
            updated_at: catalog.pair_time((item_id, keyphrase_id)),
        })
        .collect()
}

/// Scores every candidate pair of the catalog once.
pub fn batch_score_full(scorer: &Scorer, catalog: &Catalog, source: &dyn PairSource) -> Result<ScoreStore> {
    let pairs = candidate_pairs(catalog, source);
    let mut store = ScoreStore::new(scorer.model_version(), scorer.threshold());
    let scores = scorer.score_pairs_full(catalog, &pairs)?;
    store.merge(to_records(scorer, catalog, &pairs, scores))?;
    Ok(store)
}

/// What a diff pass will do to a store.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiffPlan {
    /// Stored pairs of touched entities that are no longer candidates.
    pub removals: Vec<PairKey>,
    pub upserts: Vec<ScoreRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffReport {
    pub scored: usize,
    pub rewritten: usize,
    pub removed: usize,
}

fn check_version(store: &ScoreStore, scorer: &Scorer) -> Result<()> {
    if store.model_version() != scorer.model_version() {
        return Err(Error::VersionMismatch {
            store: store.model_version().to_string(),
            model: scorer.model_version().to_string(),
        });
    }
    Ok(())
}

/// Scores only the pairs touching `changed_items` or `new_keyphrases`
/// against the post-change `catalog`.
pub fn plan_diff(
    store: &ScoreStore,
    scorer: &Scorer,
    catalog: &Catalog,
    changed_items: &[u64],
    new_keyphrases: &[u64],
    source: &dyn PairSource,
) -> Result<DiffPlan> {
    check_version(store, scorer)?;
    let mut touched: BTreeSet<PairKey> = BTreeSet::new();
    for &i in changed_items {
        let item = catalog.item(i)?;
        for kp in catalog.keyphrases.values() {
            if source.is_candidate(item, kp) {
                touched.insert((i, kp.keyphrase_id));
            }
        }
    }
    for &k in new_keyphrases {
        let kp = catalog.keyphrase(k)?;
        for item in catalog.items.values() {
            if source.is_candidate(item, kp) {
                touched.insert((item.item_id, k));
            }
        }
    }
    let mut removals = Vec::new();
    for &i in changed_items {
        removals.extend(store.keys_for_item(i).into_iter().filter(|k| !touched.contains(k)));
    }
    if !new_keyphrases.is_empty() {
        let new: HashSet<u64> = new_keyphrases.iter().copied().collect();
        removals.extend(store.keys().filter(|k| new.contains(&k.1) && !touched.contains(k)));
    }
    removals.sort_unstable();
    removals.dedup();
    let pairs: Vec<PairKey> = touched.into_iter().collect();
    Ok(DiffPlan {
        removals,
        upserts: score_records(scorer, catalog, &pairs)?,
    })
}

/// Applies a plan as one unit: removals, then a last-write-wins merge.
pub fn apply_diff(store: &mut ScoreStore, plan: DiffPlan) -> Result<DiffReport> {
    let scored = plan.upserts.len();
    let mut staged = store.clone();
    let removed = staged.remove(&plan.removals);
    let rewritten = staged.merge(plan.upserts)?;
    *store = staged;
    Ok(DiffReport {
        scored,
        rewritten,
        removed,
    })
}

pub fn batch_score_diff(
    store: &mut ScoreStore,
    scorer: &Scorer,
    catalog: &Catalog,
    changed_items: &[u64],
    new_keyphrases: &[u64],
    source: &dyn PairSource,
) -> Result<DiffReport> {
    let plan = plan_diff(store, scorer, catalog, changed_items, new_keyphrases, source)?;
    apply_diff(store, plan)
}
