use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Knobs of the synthetic marketplace. Defaults give a 2000-item,
/// 500-keyphrase world with 10% Search noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n_items: usize,
    pub n_keyphrases: usize,
    pub n_topics: usize,
    /// Probability that Search flips the ground-truth label of a pair.
    pub search_noise: f64,
    /// Click probability multiplier per result position.
    pub position_decay: f64,
    pub base_click_prob: f64,
    pub impressions_per_auction: u64,
    pub auction_rounds: usize,
    /// Click probability of an irrelevant entrant, as a fraction of `base_click_prob`.
    pub irrelevant_click_floor: f64,
    pub sale_prob: f64,
    pub min_impressions: u64,
    pub min_ctr: f64,
    pub min_clicks: u64,
    /// Discriminative tokens per topic as seen in titles.
    pub tokens_per_topic: usize,
    /// Leading title tokens of each topic that have a keyphrase-side synonym.
    pub synonyms_per_topic: usize,
    /// Probability a keyphrase uses the synonym of a token when one exists.
    pub synonym_rate: f64,
    /// Non-discriminative tokens shared by the two topics of a family.
    pub family_tokens: usize,
    /// Advertised keyphrases retrieved per item.
    pub candidates_per_item: usize,
    /// Judgment sample size before the train/eval split.
    pub n_judgments: usize,
    pub judgments_per_topic_floor: usize,
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_items: 2000,
            n_keyphrases: 500,
            n_topics: 8,
            search_noise: 0.1,
            position_decay: 0.5,
            base_click_prob: 0.3,
            impressions_per_auction: 20,
            auction_rounds: 3,
            irrelevant_click_floor: 0.02,
            sale_prob: 0.2,
            min_impressions: 30,
            min_ctr: 0.05,
            min_clicks: 1,
            tokens_per_topic: 14,
            synonyms_per_topic: 4,
            synonym_rate: 0.5,
            family_tokens: 5,
            candidates_per_item: 12,
            n_judgments: 4000,
            judgments_per_topic_floor: 150,
            eval_fraction: 0.4,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name}={v} is not a probability")))
            }
        };
        prob("search_noise", self.search_noise)?;
        prob("irrelevant_click_floor", self.irrelevant_click_floor)?;
        prob("sale_prob", self.sale_prob)?;
        prob("min_ctr", self.min_ctr)?;
        prob("synonym_rate", self.synonym_rate)?;
        if !(self.position_decay > 0.0 && self.position_decay <= 1.0) {
            return Err(Error::Config(format!(
                "position_decay={} must be in (0, 1]",
                self.position_decay
            )));
        }
        if !(self.base_click_prob > 0.0 && self.base_click_prob < 1.0) {
            return Err(Error::Config(format!(
                "base_click_prob={} must be in (0, 1)",
                self.base_click_prob
            )));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!(
                "eval_fraction={} must be in (0, 1)",
                self.eval_fraction
            )));
        }
        if self.min_impressions < 1 {
            return Err(Error::Config("min_impressions must be >= 1".into()));
        }
        if self.n_items == 0 || self.n_keyphrases == 0 {
            return Err(Error::Config("n_items and n_keyphrases must be positive".into()));
        }
        if self.n_topics < 2 {
            return Err(Error::Config("n_topics must be >= 2".into()));
        }
        if self.tokens_per_topic < 4 {
            return Err(Error::Config("tokens_per_topic must be >= 4".into()));
        }
        if self.synonyms_per_topic > self.tokens_per_topic {
            return Err(Error::Config(
                "synonyms_per_topic cannot exceed tokens_per_topic".into(),
            ));
        }
        if self.impressions_per_auction == 0 || self.auction_rounds == 0 {
            return Err(Error::Config(
                "impressions_per_auction and auction_rounds must be positive".into(),
            ));
        }
        Ok(())
    }
}
