//! Token-set Jaccard relevance filter.

use std::collections::HashSet;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{tokenize, ItemDoc, Keyphrase};

pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JaccardConfig {
    pub threshold: f64,
    pub use_category_tokens: bool,
}

impl Default for JaccardConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            use_category_tokens: false,
        }
    }
}

impl JaccardConfig {
    pub fn new(threshold: f64, use_category_tokens: bool) -> Result<Self> {
        let cfg = Self {
            threshold,
            use_category_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::Config(format!(
                "jaccard threshold {} outside [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// `|a ∩ b| / |a ∪ b|`, zero when both sets are empty.
pub fn jaccard_index<T: Eq + Hash>(a: &HashSet<T>, b: &HashSet<T>) -> f64 {
    let inter = a.iter().filter(|t| b.contains(*t)).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JaccardDecision {
    pub keyphrase_id: u64,
    pub score: f64,
    pub pass: bool,
}

pub fn item_token_set(item: &ItemDoc, use_category_tokens: bool) -> HashSet<String> {
    let mut set: HashSet<String> = tokenize(&item.title).into_iter().collect();
    if use_category_tokens {
        set.extend(tokenize(&item.category_name));
    }
    set
}

pub fn jaccard_score(item: &ItemDoc, kp: &Keyphrase, cfg: &JaccardConfig) -> f64 {
    let item_set = item_token_set(item, cfg.use_category_tokens);
    let kp_set: HashSet<String> = tokenize(&kp.text).into_iter().collect();
    jaccard_index(&item_set, &kp_set)
}

/// Scores every keyphrase against `item`, preserving input order.
pub fn jaccard_filter(item: &ItemDoc, kps: &[Keyphrase], cfg: &JaccardConfig) -> Vec<JaccardDecision> {
    let item_set = item_token_set(item, cfg.use_category_tokens);
    kps.iter()
        .map(|kp| {
            let kp_set: HashSet<String> = tokenize(&kp.text).into_iter().collect();
            let score = jaccard_index(&item_set, &kp_set);
            JaccardDecision {
                keyphrase_id: kp.keyphrase_id,
                score,
                pass: score >= cfg.threshold,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::collection::vec;
    use proptest::prelude::*;

    fn set(v: &[&str]) -> HashSet<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn index_examples() {
        let title = set(&["red", "nike", "shoes", "size", "9"]);
        assert_eq!(jaccard_index(&title, &set(&["nike", "shoes"])), 0.4);
        assert_eq!(jaccard_index(&title, &title), 1.0);
        assert_eq!(jaccard_index(&title, &set(&["lamp"])), 0.0);
        assert_eq!(jaccard_index(&set(&[]), &set(&[])), 0.0);
    }

    #[test]
    fn filter_examples() {
        let item = ItemDoc::new(1, "red nike shoes size 9", 1, "Footwear").unwrap();
        let kps = vec![
            Keyphrase::new(10, "nike shoes").unwrap(),
            Keyphrase::new(11, "nike").unwrap(),
            Keyphrase::new(12, "garden hose").unwrap(),
        ];
        let out = jaccard_filter(&item, &kps, &JaccardConfig::default());
        assert_eq!(out.iter().map(|d| d.keyphrase_id).collect::<Vec<_>>(), vec![10, 11, 12]);
        assert!(out[0].pass);
        assert!((out[1].score - 0.2).abs() < 1e-12);
        assert!(!out[1].pass);
        assert!(!out[2].pass);

        let all = jaccard_filter(&item, &kps, &JaccardConfig::new(0.0, false).unwrap());
        assert!(all.iter().all(|d| d.pass));
    }

    #[test]
    fn category_tokens_are_optional() {
        let item = ItemDoc::new(1, "red shoes", 1, "Footwear").unwrap();
        let kp = Keyphrase::new(1, "footwear").unwrap();
        assert_eq!(jaccard_score(&item, &kp, &JaccardConfig::default()), 0.0);
        let cfg = JaccardConfig::new(0.3, true).unwrap();
        assert!((jaccard_score(&item, &kp, &cfg) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_validated() {
        assert!(JaccardConfig::new(1.5, false).is_err());
        assert!(JaccardConfig::new(-0.1, false).is_err());
    }

    fn brute_force(a: &[u8], b: &[u8]) -> f64 {
        // count over the 0..16 universe
        let (mut inter, mut union) = (0, 0);
        for t in 0..16u8 {
            let (ia, ib) = (a.contains(&t), b.contains(&t));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_symmetric(a in vec(0u8..16, 0..10), b in vec(0u8..16, 0..10)) {
            let sa: HashSet<u8> = a.iter().copied().collect();
            let sb: HashSet<u8> = b.iter().copied().collect();
            let j = jaccard_index(&sa, &sb);
            prop_assert_eq!(j, jaccard_index(&sb, &sa));
            prop_assert!((j - brute_force(&a, &b)).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&j));
        }

        #[test]
        fn contained_keyphrase_score_grows_with_length(n in 2usize..12, k in 1usize..11) {
            prop_assume!(k < n);
            let title: HashSet<usize> = (0..n).collect();
            let short: HashSet<usize> = (0..k).collect();
            let longer: HashSet<usize> = (0..k + 1).collect();
            let js = jaccard_index(&title, &short);
            prop_assert!((js - k as f64 / n as f64).abs() < 1e-15);
            prop_assert!(jaccard_index(&title, &longer) > js);
        }
    }
}
