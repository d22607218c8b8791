use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use super::traffic::check_pairs;
use super::world::{stream_rng, World};
use crate::error::Result;
use crate::eval::PairKey;

/// Search pass (1) / fail (0) for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelevanceJudgment {
    pub item_id: u64,
    pub keyphrase_id: u64,
    pub label: u8,
}

impl RelevanceJudgment {
    pub fn key(&self) -> PairKey {
        (self.item_id, self.keyphrase_id)
    }

    pub fn passes(&self) -> bool {
        self.label == 1
    }
}

/// Samples `cfg.n_judgments` pairs stratified by item category, each
/// category receiving its traffic share but at least
/// `cfg.judgments_per_topic_floor` pairs (or all it has), and labels them
/// with the Search oracle.
pub fn derive_judgment_dataset(world: &World, pairs: &[PairKey], cfg: &SimConfig) -> Result<Vec<RelevanceJudgment>> {
    check_pairs(world, pairs)?;
    let mut by_topic: BTreeMap<usize, Vec<PairKey>> = BTreeMap::new();
    for &p in pairs {
        by_topic.entry(world.item_topic(p.0)?).or_default().push(p);
    }
    let total = pairs.len() as f64;
    let mut rng = stream_rng(cfg.seed, 3);
    let mut out = Vec::new();
    for group in by_topic.values_mut() {
        let share = (cfg.n_judgments as f64 * group.len() as f64 / total).round() as usize;
        let quota = share.max(cfg.judgments_per_topic_floor).min(group.len());
        group.sort_unstable();
        group.shuffle(&mut rng);
        for &(i, k) in &group[..quota] {
            out.push(RelevanceJudgment {
                item_id: i,
                keyphrase_id: k,
                label: world.search_oracle(i, k)? as u8,
            });
        }
    }
    out.sort_unstable();
    Ok(out)
}

/// Splits judgments into disjoint train / eval sets.
pub fn split_judgments(
    judgments: &[RelevanceJudgment],
    eval_fraction: f64,
    seed: u64,
) -> (Vec<RelevanceJudgment>, Vec<RelevanceJudgment>) {
    let mut shuffled = judgments.to_vec();
    shuffled.sort_unstable();
    shuffled.dedup_by_key(|j| j.key());
    shuffled.shuffle(&mut stream_rng(seed, 5));
    let n_eval = ((shuffled.len() as f64) * eval_fraction).round() as usize;
    let mut eval = shuffled[..n_eval].to_vec();
    let mut train = shuffled[n_eval..].to_vec();
    eval.sort_unstable();
    train.sort_unstable();
    (train, eval)
}
