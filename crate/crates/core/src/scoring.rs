//! One scoring path for every model family, shared by evaluation, batch
//! jobs and the NRT service so identical inputs always give identical
//! scores.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::bi_encoder::BiEncoderModel;
use crate::checkpoint::{Checkpoint, RelevanceModel};
use crate::error::{Error, Result};
use crate::eval::PairKey;
use crate::jaccard::jaccard_score;
use crate::text::{encode_bi_item, encode_bi_keyphrase, encode_cross_pair, ItemDoc, Keyphrase, Vocab, DEFAULT_MAX_LEN};

/// Items and keyphrases addressable by id, with revision bookkeeping.
///
/// Each accepted revision gets a stamp: its event time (UTC ms), raised to
/// one past the latest stamp already issued when the event arrives late.
/// Stamps therefore strictly increase with every change to the catalog, and
/// a pair's time (the later of its two stamps) increases whenever either
/// side changes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Catalog {
    pub items: BTreeMap<u64, ItemDoc>,
    pub keyphrases: BTreeMap<u64, Keyphrase>,
    /// Event time of each entity's accepted revision.
    pub item_revised: BTreeMap<u64, u64>,
    pub keyphrase_revised: BTreeMap<u64, u64>,
    item_stamp: BTreeMap<u64, u64>,
    keyphrase_stamp: BTreeMap<u64, u64>,
    clock: u64,
}

impl Catalog {
    pub fn new(items: impl IntoIterator<Item = ItemDoc>, keyphrases: impl IntoIterator<Item = Keyphrase>) -> Self {
        Self {
            items: items.into_iter().map(|i| (i.item_id, i)).collect(),
            keyphrases: keyphrases.into_iter().map(|k| (k.keyphrase_id, k)).collect(),
            ..Self::default()
        }
    }

    fn stamp(&mut self, event_time: u64) -> u64 {
        self.clock = if event_time > self.clock { event_time } else { self.clock + 1 };
        self.clock
    }

    /// Inserts or replaces an item unless a newer revision is present.
    /// Returns whether the catalog changed.
    pub fn upsert_item(&mut self, item: ItemDoc, revised_at: u64) -> bool {
        if self.item_revised.get(&item.item_id).is_some_and(|&t| t > revised_at) {
            return false;
        }
        let stamp = self.stamp(revised_at);
        self.item_revised.insert(item.item_id, revised_at);
        self.item_stamp.insert(item.item_id, stamp);
        self.items.insert(item.item_id, item);
        true
    }

    pub fn upsert_keyphrase(&mut self, kp: Keyphrase, revised_at: u64) -> bool {
        if self.keyphrase_revised.get(&kp.keyphrase_id).is_some_and(|&t| t > revised_at) {
            return false;
        }
        let stamp = self.stamp(revised_at);
        self.keyphrase_revised.insert(kp.keyphrase_id, revised_at);
        self.keyphrase_stamp.insert(kp.keyphrase_id, stamp);
        self.keyphrases.insert(kp.keyphrase_id, kp);
        true
    }

    /// Store timestamp of a pair: the later of its two entities' stamps.
    pub fn pair_time(&self, (item_id, kp_id): PairKey) -> u64 {
        let i = self.item_stamp.get(&item_id).copied().unwrap_or(0);
        let k = self.keyphrase_stamp.get(&kp_id).copied().unwrap_or(0);
        i.max(k)
    }

    pub fn item(&self, id: u64) -> Result<&ItemDoc> {
        self.items.get(&id).ok_or(Error::UnknownId { kind: "item", id })
    }

    pub fn keyphrase(&self, id: u64) -> Result<&Keyphrase> {
        self.keyphrases.get(&id).ok_or(Error::UnknownId { kind: "keyphrase", id })
    }

    pub fn check_pairs(&self, pairs: &[PairKey]) -> Result<()> {
        for &(i, k) in pairs {
            self.item(i)?;
            self.keyphrase(k)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallCounts {
    /// Single-entity encoder calls (bi-encoder towers).
    pub encodes: u64,
    /// Joint pair forward passes (cross-encoder).
    pub forwards: u64,
}

/// A model bound to its vocabulary and version, with call counters.
#[derive(Debug)]
pub struct Scorer {
    model: RelevanceModel,
    vocab: Vocab,
    model_version: String,
    encodes: AtomicU64,
    forwards: AtomicU64,
}

impl Scorer {
    pub fn new(checkpoint: &Checkpoint) -> Self {
        Self::from_parts(
            checkpoint.model.clone(),
            checkpoint.vocab.clone(),
            checkpoint.model_version(),
        )
    }

    pub fn from_parts(model: RelevanceModel, vocab: Vocab, model_version: impl Into<String>) -> Self {
        Self {
            model,
            vocab,
            model_version: model_version.into(),
            encodes: AtomicU64::new(0),
            forwards: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &RelevanceModel {
        &self.model
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn model_version(&self) -> &str {
        &self.model_version
    }

    pub fn threshold(&self) -> f64 {
        self.model.threshold()
    }

    pub fn passes(&self, score: f64) -> bool {
        score >= self.threshold()
    }

    pub fn counts(&self) -> CallCounts {
        CallCounts {
            encodes: self.encodes.load(Ordering::Relaxed),
            forwards: self.forwards.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counts(&self) {
        self.encodes.store(0, Ordering::Relaxed);
        self.forwards.store(0, Ordering::Relaxed);
    }

    /// Scores `pairs` in order. The bi-encoder encodes each distinct item
    /// and keyphrase once; the cross-encoder runs one forward per pair.
    pub fn score_pairs(&self, catalog: &Catalog, pairs: &[PairKey]) -> Result<Vec<f64>> {
        catalog.check_pairs(pairs)?;
        match &self.model {
            RelevanceModel::Jaccard(cfg) => pairs
                .iter()
                .map(|&(i, k)| Ok(jaccard_score(catalog.item(i)?, catalog.keyphrase(k)?, cfg)))
                .collect(),
            RelevanceModel::Bi(m) => {
                let item_ids: BTreeSet<u64> = pairs.iter().map(|p| p.0).collect();
                let kp_ids: BTreeSet<u64> = pairs.iter().map(|p| p.1).collect();
                self.score_bi(m, catalog, item_ids, kp_ids, pairs)
            }
            RelevanceModel::Cross(m) => {
                let seqs = pairs
                    .iter()
                    .map(|&(i, k)| {
                        Ok(encode_cross_pair(
                            catalog.keyphrase(k)?,
                            catalog.item(i)?,
                            &self.vocab,
                            m.config.max_seq_len,
                        ))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let out = m.predict_batch(&seqs)?;
                self.forwards.fetch_add(pairs.len() as u64, Ordering::Relaxed);
                Ok(out)
            }
        }
    }
}

impl Scorer {
    /// Like [`score_pairs`](Self::score_pairs), but the bi-encoder first
    /// encodes every catalog entity, as a full batch job does, so its
    /// encode count is `items + keyphrases` whatever the pairs.
    pub fn score_pairs_full(&self, catalog: &Catalog, pairs: &[PairKey]) -> Result<Vec<f64>> {
        match &self.model {
            RelevanceModel::Bi(m) => {
                catalog.check_pairs(pairs)?;
                self.score_bi(
                    m,
                    catalog,
                    catalog.items.keys().copied(),
                    catalog.keyphrases.keys().copied(),
                    pairs,
                )
            }
            _ => self.score_pairs(catalog, pairs),
        }
    }

    fn score_bi(
        &self,
        m: &BiEncoderModel,
        catalog: &Catalog,
        item_ids: impl IntoIterator<Item = u64>,
        kp_ids: impl IntoIterator<Item = u64>,
        pairs: &[PairKey],
    ) -> Result<Vec<f64>> {
        let mut item_vecs: HashMap<u64, Array1<f64>> = HashMap::new();
        for i in item_ids {
            let seq = encode_bi_item(catalog.item(i)?, &self.vocab, DEFAULT_MAX_LEN);
            item_vecs.insert(i, m.encode(&seq)?);
            self.encodes.fetch_add(1, Ordering::Relaxed);
        }
        let mut kp_vecs: HashMap<u64, Array1<f64>> = HashMap::new();
        for k in kp_ids {
            let seq = encode_bi_keyphrase(catalog.keyphrase(k)?, &self.vocab, DEFAULT_MAX_LEN);
            kp_vecs.insert(k, m.encode(&seq)?);
            self.encodes.fetch_add(1, Ordering::Relaxed);
        }
        Ok(pairs
            .iter()
            .map(|(i, k)| m.score_vectors(item_vecs[i].view(), kp_vecs[k].view()))
            .collect())
    }
}
