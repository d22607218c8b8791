//! Synthetic catalog with known ground-truth relevance and a noisy Search
//! oracle standing between Advertising and buyers.

use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::SimConfig;
use crate::error::{Error, Result};
use crate::text::{tokenize, ItemDoc, Keyphrase};

const TOPIC_NAMES: [&str; 16] = [
    "footwear",
    "electronics",
    "jewelry",
    "toys",
    "books",
    "garden",
    "kitchen",
    "sporting",
    "automotive",
    "music",
    "beauty",
    "crafts",
    "cameras",
    "tools",
    "collectibles",
    "pets",
];

const NOISE_TOKENS: [&str; 8] = ["new", "used", "lot", "vintage", "sale", "genuine", "original", "authentic"];

const CONSONANTS: &[u8] = b"bdklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Three consonant-vowel syllables; distinct `n` give distinct words.
fn pseudo_word(n: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let space = syllables.pow(3);
    let mut k = (n * 7919 + 12345) % space;
    let mut word = String::with_capacity(6);
    for _ in 0..3 {
        let s = k % syllables;
        k /= syllables;
        word.push(CONSONANTS[s / VOWELS.len()] as char);
        word.push(VOWELS[s % VOWELS.len()] as char);
    }
    word
}

/// Per-topic token pools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicVocabulary {
    pub names: Vec<String>,
    /// Discriminative tokens that appear in titles.
    pub title_tokens: Vec<Vec<String>>,
    /// Keyphrase-side synonyms of the leading title tokens; never in titles.
    pub synonyms: Vec<Vec<String>>,
    /// Tokens shared by both topics of a family (topic / 2).
    pub family_tokens: Vec<Vec<String>>,
    pub noise: Vec<String>,
}

impl TopicVocabulary {
    pub fn capacity() -> usize {
        TOPIC_NAMES.len()
    }

    fn generate(cfg: &SimConfig) -> Result<Self> {
        if cfg.n_topics > TOPIC_NAMES.len() {
            return Err(Error::Config(format!(
                "n_topics={} exceeds the topic pool capacity {}",
                cfg.n_topics,
                TOPIC_NAMES.len()
            )));
        }
        let mut next = 0usize;
        let mut fresh = |count: usize| -> Vec<String> {
            let words = (next..next + count).map(pseudo_word).collect();
            next += count;
            words
        };
        let title_tokens: Vec<Vec<String>> = (0..cfg.n_topics).map(|_| fresh(cfg.tokens_per_topic)).collect();
        let synonyms = (0..cfg.n_topics).map(|_| fresh(cfg.synonyms_per_topic)).collect();
        let n_families = cfg.n_topics.div_ceil(2);
        let family_tokens = (0..n_families).map(|_| fresh(cfg.family_tokens)).collect();
        Ok(Self {
            names: TOPIC_NAMES[..cfg.n_topics].iter().map(|s| s.to_string()).collect(),
            title_tokens,
            synonyms,
            family_tokens,
            noise: NOISE_TOKENS.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn family_of(topic: usize) -> usize {
        topic / 2
    }

    pub fn discriminative(&self) -> HashSet<String> {
        self.title_tokens
            .iter()
            .chain(self.synonyms.iter())
            .flatten()
            .cloned()
            .collect()
    }
}

/// Topic weights of one entity; the argmax is its primary topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMixture(pub Vec<(usize, f64)>);

impl TopicMixture {
    pub fn argmax(&self) -> usize {
        self.0
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|&(t, _)| t)
            .expect("mixtures are never empty")
    }
}

/// The relevance Search approximates: same primary topic, or a shared
/// topic-discriminative token.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub item_topics: Vec<TopicMixture>,
    pub kp_topics: Vec<TopicMixture>,
    item_tokens: Vec<HashSet<String>>,
    kp_tokens: Vec<HashSet<String>>,
    discriminative: HashSet<String>,
    item_index: HashMap<u64, usize>,
    kp_index: HashMap<u64, usize>,
}

impl GroundTruth {
    pub fn item_pos(&self, item_id: u64) -> Result<usize> {
        self.item_index
            .get(&item_id)
            .copied()
            .ok_or(Error::UnknownId { kind: "item", id: item_id })
    }

    pub fn kp_pos(&self, kp_id: u64) -> Result<usize> {
        self.kp_index
            .get(&kp_id)
            .copied()
            .ok_or(Error::UnknownId { kind: "keyphrase", id: kp_id })
    }

    pub fn relevant(&self, item_id: u64, kp_id: u64) -> Result<bool> {
        let (i, k) = (self.item_pos(item_id)?, self.kp_pos(kp_id)?);
        if self.item_topics[i].argmax() == self.kp_topics[k].argmax() {
            return Ok(true);
        }
        Ok(self.kp_tokens[k]
            .iter()
            .any(|t| self.discriminative.contains(t) && self.item_tokens[i].contains(t)))
    }
}

/// Search's relevance filter: ground truth flipped with probability
/// `noise`. The flip is a pure function of `(seed, pair)`, so repeated
/// queries for a pair always agree regardless of query order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchOracle {
    pub noise: f64,
    pub seed: u64,
}

impl SearchOracle {
    pub fn flipped(&self, item_id: u64, kp_id: u64) -> bool {
        let h = splitmix64(
            splitmix64(self.seed ^ 0x5EA2_C4E5) ^ splitmix64(item_id).rotate_left(17) ^ splitmix64(!kp_id),
        );
        let u = (h >> 11) as f64 / (1u64 << 53) as f64;
        u < self.noise
    }

    pub fn judge(&self, truth: &GroundTruth, item_id: u64, kp_id: u64) -> Result<bool> {
        Ok(truth.relevant(item_id, kp_id)? != self.flipped(item_id, kp_id))
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub topics: TopicVocabulary,
    pub items: Vec<ItemDoc>,
    pub keyphrases: Vec<Keyphrase>,
    pub truth: GroundTruth,
    pub oracle: SearchOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyphraseTopic {
    pub keyphrase_id: u64,
    pub category_id: u32,
}

/// Zipf-like topic popularity so traffic differs across categories.
fn topic_weights(n: usize) -> Vec<f64> {
    (0..n).map(|t| 1.0 / ((t + 1) as f64).powf(0.7)).collect()
}

fn weighted_pick(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

impl World {
    /// Generates items, keyphrases and ground truth deterministically from
    /// `cfg.seed`.
    pub fn generate(cfg: &SimConfig) -> Result<World> {
        cfg.validate()?;
        let topics = TopicVocabulary::generate(cfg)?;
        let weights = topic_weights(cfg.n_topics);
        let mut rng = stream_rng(cfg.seed, 1);

        let mut items = Vec::with_capacity(cfg.n_items);
        let mut item_topics = Vec::with_capacity(cfg.n_items);
        for i in 0..cfg.n_items {
            let primary = weighted_pick(&mut rng, &weights);
            let n_title = rng.random_range(3..=5);
            let mut words: Vec<String> = topics.title_tokens[primary]
                .choose_multiple(&mut rng, n_title)
                .cloned()
                .collect();
            let mut mixture = vec![(primary, 1.0)];
            if rng.random_bool(0.4) {
                let mut secondary = rng.random_range(0..cfg.n_topics - 1);
                if secondary >= primary {
                    secondary += 1;
                }
                words.push(topics.title_tokens[secondary].choose(&mut rng).unwrap().clone());
                mixture = vec![(primary, 0.7), (secondary, 0.3)];
            }
            if rng.random_bool(0.7) {
                let fam = &topics.family_tokens[TopicVocabulary::family_of(primary)];
                if let Some(t) = fam.choose(&mut rng) {
                    words.push(t.clone());
                }
            }
            if rng.random_bool(0.5) {
                words.push(topics.noise.choose(&mut rng).unwrap().clone());
            }
            words.shuffle(&mut rng);
            items.push(ItemDoc::new(
                i as u64,
                words.join(" "),
                primary as u32,
                topics.names[primary].clone(),
            )?);
            item_topics.push(TopicMixture(mixture));
        }

        let mut keyphrases = Vec::with_capacity(cfg.n_keyphrases);
        let mut kp_topics = Vec::with_capacity(cfg.n_keyphrases);
        let mut seen_texts = HashSet::new();
        for k in 0..cfg.n_keyphrases {
            let mut attempt = 0;
            let (topic, text) = loop {
                let topic = weighted_pick(&mut rng, &weights);
                let len = match rng.random::<f64>() {
                    x if x < 0.45 => 1,
                    x if x < 0.85 => 2,
                    _ => 3,
                };
                let pool = &topics.title_tokens[topic];
                let mut idx: Vec<usize> = (0..pool.len()).collect();
                idx.shuffle(&mut rng);
                let mut words: Vec<String> = idx[..len]
                    .iter()
                    .map(|&j| {
                        if j < topics.synonyms[topic].len() && rng.random_bool(cfg.synonym_rate) {
                            topics.synonyms[topic][j].clone()
                        } else {
                            pool[j].clone()
                        }
                    })
                    .collect();
                if rng.random_bool(0.4) {
                    let fam = &topics.family_tokens[TopicVocabulary::family_of(topic)];
                    if let Some(t) = fam.choose(&mut rng) {
                        words.insert(0, t.clone());
                    }
                }
                if rng.random_bool(0.15) {
                    words.insert(0, topics.noise.choose(&mut rng).unwrap().clone());
                }
                let text = words.join(" ");
                attempt += 1;
                if seen_texts.insert(text.clone()) || attempt > 50 {
                    break (topic, text);
                }
            };
            keyphrases.push(Keyphrase::new(k as u64, text)?);
            kp_topics.push(TopicMixture(vec![(topic, 1.0)]));
        }

        let truth = GroundTruth {
            item_tokens: items.iter().map(|i| tokenize(&i.title).into_iter().collect()).collect(),
            kp_tokens: keyphrases.iter().map(|k| tokenize(&k.text).into_iter().collect()).collect(),
            discriminative: topics.discriminative(),
            item_index: items.iter().enumerate().map(|(p, i)| (i.item_id, p)).collect(),
            kp_index: keyphrases.iter().enumerate().map(|(p, k)| (k.keyphrase_id, p)).collect(),
            item_topics,
            kp_topics,
        };
        let oracle = SearchOracle {
            noise: cfg.search_noise,
            seed: cfg.seed,
        };
        Ok(World {
            config: cfg.clone(),
            topics,
            items,
            keyphrases,
            truth,
            oracle,
        })
    }

    pub fn item(&self, item_id: u64) -> Result<&ItemDoc> {
        Ok(&self.items[self.truth.item_pos(item_id)?])
    }

    pub fn keyphrase(&self, kp_id: u64) -> Result<&Keyphrase> {
        Ok(&self.keyphrases[self.truth.kp_pos(kp_id)?])
    }

    pub fn search_oracle(&self, item_id: u64, kp_id: u64) -> Result<bool> {
        self.oracle.judge(&self.truth, item_id, kp_id)
    }

    pub fn item_topic(&self, item_id: u64) -> Result<usize> {
        Ok(self.truth.item_topics[self.truth.item_pos(item_id)?].argmax())
    }

    pub fn keyphrase_topic(&self, kp_id: u64) -> Result<usize> {
        Ok(self.truth.kp_topics[self.truth.kp_pos(kp_id)?].argmax())
    }

    /// Keyphrase → category assignment used by the same-category pair source.
    pub fn keyphrase_categories(&self) -> Vec<KeyphraseTopic> {
        self.keyphrases
            .iter()
            .zip(&self.truth.kp_topics)
            .map(|(k, m)| KeyphraseTopic {
                keyphrase_id: k.keyphrase_id,
                category_id: m.argmax() as u32,
            })
            .collect()
    }
}
