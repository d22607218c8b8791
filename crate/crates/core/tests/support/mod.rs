//! Fixtures shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use keyrel::bi_encoder::{BiEncoderModel, LabeledPair, Objective, PositivePair};
use keyrel::experiment::vocab_for;
use keyrel::scoring::{Catalog, Scorer};
use keyrel::serving::CategoryPairs;
use keyrel::{ConfusionCounts, ItemDoc, JaccardConfig, Keyphrase, PairKey, RelevanceJudgment, RelevanceModel, SimConfig, TokenSeq, Vocab, World};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn seq(ids: &[u32]) -> TokenSeq {
    TokenSeq::new(ids.to_vec())
}

/// Random token sequence of length `1..=max_len` over ids `4..vocab`.
pub fn random_seq(rng: &mut ChaCha8Rng, vocab: u32, max_len: usize) -> TokenSeq {
    let n = rng.random_range(1..=max_len);
    TokenSeq::new((0..n).map(|_| rng.random_range(4..vocab)).collect())
}

pub fn labeled_batch(rng: &mut ChaCha8Rng, vocab: u32, n: usize) -> Vec<LabeledPair> {
    (0..n)
        .map(|i| LabeledPair {
            item: random_seq(rng, vocab, 4),
            keyphrase: random_seq(rng, vocab, 3),
            label: i % 2 == 0,
        })
        .collect()
}

pub fn positive_batch(rng: &mut ChaCha8Rng, vocab: u32, n: usize) -> Vec<PositivePair> {
    (0..n)
        .map(|_| PositivePair {
            item: random_seq(rng, vocab, 4),
            keyphrase: random_seq(rng, vocab, 3),
        })
        .collect()
}

/// `n` positive pairs of 1..=3 tokens each, no token shared anywhere in
/// the batch, so every pair of entities is unrelated.
pub fn disjoint_positive_batch(rng: &mut ChaCha8Rng, n: usize) -> (u32, Vec<PositivePair>) {
    let vocab = 4 + 6 * n as u32;
    let mut ids: Vec<u32> = (4..vocab).collect();
    ids.shuffle(rng);
    let mut it = ids.into_iter();
    let mut take = |rng: &mut ChaCha8Rng| {
        let k = rng.random_range(1..=3);
        TokenSeq::new(it.by_ref().take(k).collect())
    };
    let pairs = (0..n)
        .map(|_| PositivePair {
            item: take(rng),
            keyphrase: take(rng),
        })
        .collect();
    (vocab, pairs)
}

/// Cross-encoder input `[CLS] a [SEP] b` over ids `4..vocab`.
pub fn cross_batch(rng: &mut ChaCha8Rng, vocab: u32, n: usize, max_len: usize) -> Vec<(TokenSeq, bool)> {
    (0..n)
        .map(|i| {
            let a = rng.random_range(1..=2);
            let b = rng.random_range(1..=max_len - a - 2);
            let mut ids = vec![2];
            ids.extend((0..a).map(|_| rng.random_range(4..vocab)));
            ids.push(3);
            ids.extend((0..b).map(|_| rng.random_range(4..vocab)));
            (TokenSeq::new(ids), i % 2 == 0)
        })
        .collect()
}

/// Linearly separable matching task: tokens `4..4+groups*per_group` fall
/// into groups; a pair is relevant iff the keyphrase token shares the
/// item's group.
pub struct GroupToy {
    pub vocab: u32,
    pub pairs: Vec<LabeledPair>,
}

impl GroupToy {
    pub fn new(groups: u32, per_group: u32, n: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let token = |r: &mut ChaCha8Rng, g: u32| 4 + g * per_group + r.random_range(0..per_group);
        let pairs = (0..n)
            .map(|i| {
                let g = r.random_range(0..groups);
                let label = i % 2 == 0;
                let kg = if label { g } else { (g + r.random_range(1..groups)) % groups };
                LabeledPair {
                    item: seq(&[token(&mut r, g), token(&mut r, g)]),
                    keyphrase: seq(&[token(&mut r, kg)]),
                    label,
                }
            })
            .collect();
        Self {
            vocab: 4 + groups * per_group,
            pairs,
        }
    }
}

/// Cross-encoder pairs `[CLS] item [SEP] keyphrase` over ids `4..vocab`,
/// relevant iff the keyphrase shares a token with the item. Negatives are
/// token-disjoint.
pub fn shared_token_toy(vocab: u32, n: usize, seed: u64) -> Vec<(TokenSeq, bool)> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            let mut pool: Vec<u32> = (4..vocab).collect();
            pool.shuffle(&mut r);
            let n_item = r.random_range(2..=3);
            let item = &pool[..n_item];
            let mut kp = vec![pool[n_item]];
            if label {
                kp.push(*item.choose(&mut r).expect("item"));
                kp.shuffle(&mut r);
            }
            let mut ids = vec![2];
            ids.extend(item);
            ids.push(3);
            ids.extend(kp);
            (TokenSeq::new(ids), label)
        })
        .collect()
}

pub fn counts_f1(c: &ConfusionCounts) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

/// Small world for serving tests.
pub fn small_world(n_items: usize, n_keyphrases: usize, seed: u64) -> World {
    World::generate(&SimConfig {
        n_items,
        n_keyphrases,
        n_topics: 4,
        seed,
        ..SimConfig::default()
    })
    .expect("world")
}

pub fn catalog_of(world: &World) -> Catalog {
    Catalog::new(world.items.clone(), world.keyphrases.clone())
}

pub fn jaccard_scorer(vocab: Vocab) -> Scorer {
    Scorer::from_parts(RelevanceModel::Jaccard(JaccardConfig::default()), vocab, "jaccard-test")
}

pub fn bi_scorer(vocab: Vocab, dim: usize, seed: u64) -> Scorer {
    let model = BiEncoderModel::new(vocab.len(), dim, Objective::Contrastive, seed);
    Scorer::from_parts(RelevanceModel::Bi(model), vocab, format!("bi-test-{seed}"))
}

pub fn world_vocab(world: &World) -> Vocab {
    vocab_for(world)
}

/// Category assignments of the world's keyphrases plus `extra_ids` future
/// keyphrases spread over `n_topics` categories.
pub fn category_source(world: &World, extra_ids: impl IntoIterator<Item = u64>) -> CategoryPairs {
    let n_topics = world.config.n_topics as u64;
    let mut assign: BTreeMap<u64, u32> = world
        .keyphrase_categories()
        .into_iter()
        .map(|k| (k.keyphrase_id, k.category_id))
        .collect();
    for id in extra_ids {
        assign.insert(id, (id % n_topics) as u32);
    }
    CategoryPairs::new(assign)
}

/// One catalog edit with its event time.
#[derive(Debug, Clone)]
pub enum Edit {
    Item(ItemDoc, u64),
    Keyphrase(Keyphrase, u64),
}

pub const NEW_ITEM_BASE: u64 = 1_000_000;
pub const NEW_KEYPHRASE_BASE: u64 = 2_000_000;
pub const NEW_KEYPHRASES: u64 = 16;

/// Random edits against `world`: title and category revisions of existing
/// items, new items, new keyphrases, and occasional stale (older) revisions.
pub fn random_edits(world: &World, r: &mut ChaCha8Rng, n: usize, clock: &mut u64) -> Vec<Edit> {
    let words: Vec<String> = world
        .items
        .iter()
        .flat_map(|i| i.title.split(' ').map(str::to_string).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let n_topics = world.config.n_topics as u32;
    let title = |r: &mut ChaCha8Rng| {
        let n = r.random_range(1..=4);
        (0..n).map(|_| words.choose(r).expect("words").clone()).collect::<Vec<_>>().join(" ")
    };
    (0..n)
        .map(|_| {
            *clock += r.random_range(1..50);
            let t = if r.random_bool(0.1) { clock.saturating_sub(200) } else { *clock };
            match r.random_range(0..10) {
                0..=5 => {
                    let id = if r.random_bool(0.8) {
                        world.items.choose(r).expect("items").item_id
                    } else {
                        NEW_ITEM_BASE + r.random_range(0..20)
                    };
                    let cat = r.random_range(0..n_topics);
                    Edit::Item(ItemDoc::new(id, title(r), cat, format!("cat {cat}")).expect("item"), t)
                }
                _ => {
                    let id = NEW_KEYPHRASE_BASE + r.random_range(0..NEW_KEYPHRASES);
                    Edit::Keyphrase(Keyphrase::new(id, title(r)).expect("keyphrase"), t)
                }
            }
        })
        .collect()
}

/// Applies edits to `catalog`; returns the changed item and keyphrase ids.
pub fn apply_edits(catalog: &mut Catalog, edits: &[Edit]) -> (Vec<u64>, Vec<u64>) {
    let mut items = BTreeSet::new();
    let mut kps = BTreeSet::new();
    for e in edits {
        match e {
            Edit::Item(doc, t) => {
                if catalog.upsert_item(doc.clone(), *t) {
                    items.insert(doc.item_id);
                }
            }
            Edit::Keyphrase(kp, t) => {
                if catalog.upsert_keyphrase(kp.clone(), *t) {
                    kps.insert(kp.keyphrase_id);
                }
            }
        }
    }
    (items.into_iter().collect(), kps.into_iter().collect())
}

/// Brute-force confusion recount straight from the definition.
pub fn brute_confusion(preds: &[(PairKey, bool)], judgments: &[RelevanceJudgment]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for &(key, pass) in preds {
        let label = judgments.iter().find(|j| (j.item_id, j.keyphrase_id) == key).expect("judged").label == 1;
        match (pass, label) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}
