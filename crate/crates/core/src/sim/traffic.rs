//! Advertising → Search → auction → click funnel.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::world::{stream_rng, TopicVocabulary, World};
use crate::error::{Error, Result};
use crate::eval::PairKey;
use crate::text::tokenize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClickLogRecord {
    pub item_id: u64,
    pub keyphrase_id: u64,
    pub impressions: u64,
    pub clicks: u64,
    pub sales: u64,
}

impl ClickLogRecord {
    pub fn key(&self) -> PairKey {
        (self.item_id, self.keyphrase_id)
    }

    pub fn ctr(&self) -> f64 {
        if self.impressions == 0 {
            0.0
        } else {
            self.clicks as f64 / self.impressions as f64
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankStat {
    pub impressions: u64,
    pub clicks: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrafficLog {
    /// Sorted by `(item_id, keyphrase_id)`.
    pub records: Vec<ClickLogRecord>,
    /// Aggregate exposure and clicks per result position.
    pub rank_stats: Vec<RankStat>,
}

impl TrafficLog {
    pub fn rank_ctr(&self) -> Vec<f64> {
        self.rank_stats
            .iter()
            .map(|s| if s.impressions == 0 { 0.0 } else { s.clicks as f64 / s.impressions as f64 })
            .collect()
    }
}

/// Advertising's candidate retrieval: for every item, keyphrases of its own
/// topic, of the sibling topic in its family, or sharing any title token,
/// subsampled to `candidates_per_item`. Sorted by pair key.
pub fn advertise(world: &World) -> Vec<PairKey> {
    let cfg = &world.config;
    let mut by_family: HashMap<usize, Vec<u64>> = HashMap::new();
    let mut by_token: HashMap<String, Vec<u64>> = HashMap::new();
    for kp in &world.keyphrases {
        let topic = world.keyphrase_topic(kp.keyphrase_id).expect("catalog keyphrase");
        by_family
            .entry(TopicVocabulary::family_of(topic))
            .or_default()
            .push(kp.keyphrase_id);
        for tok in tokenize(&kp.text) {
            by_token.entry(tok).or_default().push(kp.keyphrase_id);
        }
    }
    let mut rng = stream_rng(cfg.seed, 2);
    let mut pairs = Vec::new();
    for item in &world.items {
        let topic = world.item_topic(item.item_id).expect("catalog item");
        let mut pool: Vec<u64> = by_family
            .get(&TopicVocabulary::family_of(topic))
            .cloned()
            .unwrap_or_default();
        for tok in tokenize(&item.title) {
            if let Some(ids) = by_token.get(&tok) {
                pool.extend(ids);
            }
        }
        pool.sort_unstable();
        pool.dedup();
        pool.shuffle(&mut rng);
        pool.truncate(cfg.candidates_per_item);
        pairs.extend(pool.into_iter().map(|k| (item.item_id, k)));
    }
    pairs.sort_unstable();
    pairs
}

/// Click probability at `rank`; irrelevant entrants only receive the floor.
pub fn click_prob(rank: usize, relevant: bool, cfg: &SimConfig) -> f64 {
    let base = if relevant {
        cfg.base_click_prob
    } else {
        cfg.base_click_prob * cfg.irrelevant_click_floor
    };
    base * cfg.position_decay.powi(rank as i32)
}

fn binomial(rng: &mut ChaCha8Rng, n: u64, p: f64) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    Binomial::new(n, p.min(1.0)).expect("valid binomial").sample(rng)
}

/// Runs `cfg.auction_rounds` rounds over every keyphrase auction. Each
/// auction lists `(item_id, ground_truth_relevant)` entrants; entrants are
/// ranked by accumulated clicks (ties by item id), so early winners keep
/// winning.
pub fn run_auctions(
    auctions: &BTreeMap<u64, Vec<(u64, bool)>>,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> TrafficLog {
    let mut popularity: HashMap<u64, u64> = HashMap::new();
    let mut records: BTreeMap<PairKey, ClickLogRecord> = BTreeMap::new();
    let mut rank_stats: Vec<RankStat> = Vec::new();
    for _ in 0..cfg.auction_rounds {
        for (&kp, entrants) in auctions {
            let mut ranked = entrants.clone();
            ranked.sort_by(|a, b| {
                let pa = popularity.get(&a.0).copied().unwrap_or(0);
                let pb = popularity.get(&b.0).copied().unwrap_or(0);
                pb.cmp(&pa).then(a.0.cmp(&b.0))
            });
            for (rank, &(item, relevant)) in ranked.iter().enumerate() {
                let impressions = cfg.impressions_per_auction;
                let clicks = binomial(rng, impressions, click_prob(rank, relevant, cfg));
                let sales = binomial(rng, clicks, cfg.sale_prob);
                let rec = records.entry((item, kp)).or_insert(ClickLogRecord {
                    item_id: item,
                    keyphrase_id: kp,
                    impressions: 0,
                    clicks: 0,
                    sales: 0,
                });
                rec.impressions += impressions;
                rec.clicks += clicks;
                rec.sales += sales;
                *popularity.entry(item).or_insert(0) += clicks;
                if rank_stats.len() <= rank {
                    rank_stats.resize(rank + 1, RankStat::default());
                }
                rank_stats[rank].impressions += impressions;
                rank_stats[rank].clicks += clicks;
            }
        }
    }
    TrafficLog {
        records: records.into_values().collect(),
        rank_stats,
    }
}

/// Only pairs passing the Search oracle enter an auction, so only they can
/// ever be logged.
pub fn simulate_traffic(world: &World, advertised: &[PairKey], cfg: &SimConfig) -> Result<TrafficLog> {
    let mut auctions: BTreeMap<u64, Vec<(u64, bool)>> = BTreeMap::new();
    for &(item, kp) in advertised {
        if world.search_oracle(item, kp)? {
            auctions
                .entry(kp)
                .or_default()
                .push((item, world.truth.relevant(item, kp)?));
        }
    }
    let mut rng = stream_rng(cfg.seed, 4);
    Ok(run_auctions(&auctions, cfg, &mut rng))
}

/// Keeps logged pairs with enough clicks, impressions and CTR to count as
/// click positives.
pub fn derive_click_dataset(log: &[ClickLogRecord], cfg: &SimConfig) -> Vec<ClickLogRecord> {
    log.iter()
        .filter(|r| {
            r.clicks >= cfg.min_clicks && r.impressions >= cfg.min_impressions && r.ctr() >= cfg.min_ctr
        })
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiddlemanReport {
    pub click_pairs: usize,
    /// Fraction of click-dataset pairs the Search oracle rejects.
    pub oracle_fail_fraction: f64,
    /// Advertised pairs the Search oracle rejects.
    pub search_irrelevant_pairs: usize,
    /// Fraction of those present in the click dataset.
    pub search_irrelevant_coverage: f64,
    pub rank_ctr: Vec<f64>,
    /// Logged, ground-truth relevant pairs that never received a click.
    pub relevant_zero_click_pairs: usize,
}

pub fn measure_middleman_bias(
    click_dataset: &[ClickLogRecord],
    world: &World,
    log: &TrafficLog,
    advertised: &[PairKey],
) -> Result<MiddlemanReport> {
    let mut failing = 0usize;
    for r in click_dataset {
        if !world.search_oracle(r.item_id, r.keyphrase_id)? {
            failing += 1;
        }
    }
    let click_keys: HashSet<PairKey> = click_dataset.iter().map(ClickLogRecord::key).collect();
    let mut irrelevant = 0usize;
    let mut covered = 0usize;
    for &(i, k) in advertised {
        if !world.search_oracle(i, k)? {
            irrelevant += 1;
            covered += click_keys.contains(&(i, k)) as usize;
        }
    }
    let mut zero_click = 0usize;
    for r in &log.records {
        if r.clicks == 0 && world.truth.relevant(r.item_id, r.keyphrase_id)? {
            zero_click += 1;
        }
    }
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(MiddlemanReport {
        click_pairs: click_dataset.len(),
        oracle_fail_fraction: frac(failing, click_dataset.len()),
        search_irrelevant_pairs: irrelevant,
        search_irrelevant_coverage: frac(covered, irrelevant),
        rank_ctr: log.rank_ctr(),
        relevant_zero_click_pairs: zero_click,
    })
}

pub(crate) fn check_pairs(world: &World, pairs: &[PairKey]) -> Result<()> {
    for &(i, k) in pairs {
        world.truth.item_pos(i)?;
        world.truth.kp_pos(k)?;
    }
    if pairs.is_empty() {
        return Err(Error::Data("no pairs".into()));
    }
    Ok(())
}
