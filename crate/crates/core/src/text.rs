//! Tokenization, vocabulary and encoder input assembly.
//!
//! Both encoder families and the Jaccard filter share one token basis:
//! lowercased text split on anything that is not alphanumeric.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
pub const SEP: u32 = 3;

const SPECIALS: [&str; 4] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"];

pub const DEFAULT_MAX_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemDoc {
    pub item_id: u64,
    pub title: String,
    pub category_id: u32,
    pub category_name: String,
}

impl ItemDoc {
    pub fn new(
        item_id: u64,
        title: impl Into<String>,
        category_id: u32,
        category_name: impl Into<String>,
    ) -> Result<Self> {
        let item = Self {
            item_id,
            title: title.into(),
            category_id,
            category_name: category_name.into(),
        };
        item.validate()?;
        Ok(item)
    }

    pub fn validate(&self) -> Result<()> {
        if tokenize(&self.title).is_empty() {
            return Err(Error::Data(format!("item {} has an empty title", self.item_id)));
        }
        if self.category_name.trim().is_empty() {
            return Err(Error::Data(format!(
                "item {} has an empty category_name",
                self.item_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keyphrase {
    pub keyphrase_id: u64,
    pub text: String,
}

impl Keyphrase {
    pub fn new(keyphrase_id: u64, text: impl Into<String>) -> Result<Self> {
        let kp = Self {
            keyphrase_id,
            text: text.into(),
        };
        kp.validate()?;
        Ok(kp)
    }

    pub fn validate(&self) -> Result<()> {
        if tokenize(&self.text).is_empty() {
            return Err(Error::Data(format!(
                "keyphrase {} yields no tokens",
                self.keyphrase_id
            )));
        }
        Ok(())
    }

    pub fn token_len(&self) -> usize {
        tokenize(&self.text).len()
    }
}

/// Splits `text` into lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Token vocabulary with the four special tokens pinned at ids 0..4.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, u32> = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        for (pos, tok) in tokens.into_iter().map(Into::into).enumerate() {
            if pos < SPECIALS.len() {
                if tok != SPECIALS[pos] {
                    return Err(Error::Data(format!(
                        "vocab entry {pos} must be {}, found {tok}",
                        SPECIALS[pos]
                    )));
                }
                continue;
            }
            if index.contains_key(&tok) {
                return Err(Error::Data(format!("duplicate vocab token {tok:?}")));
            }
            index.insert(tok.clone(), all.len() as u32);
            all.push(tok);
        }
        Ok(Self { tokens: all, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        // specials are always present
        false
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps the tokens of `text` to ids, OOV tokens becoming UNK.
    pub fn ids_of(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Stable content hash, stored in checkpoints to catch vocab drift.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0u8]);
        }
        hex::encode(hasher.finalize())
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocab::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

/// Builds a vocabulary from every token seen at least `min_freq` times,
/// ordered by descending frequency then lexicographically.
pub fn build_vocab<I, S>(corpus: I, min_freq: usize) -> Vocab
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let min_freq = min_freq.max(1);
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for tok in tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_tokens(
        SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(kept.into_iter().map(|(t, _)| t)),
    )
    .expect("tokenized text never collides with special tokens")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSeq(Vec<u32>);

impl TokenSeq {
    pub fn new(ids: Vec<u32>) -> Self {
        Self(ids)
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn truncated(mut ids: Vec<u32>, max_len: usize) -> Self {
        ids.truncate(max_len);
        Self(ids)
    }
}

impl From<Vec<u32>> for TokenSeq {
    fn from(ids: Vec<u32>) -> Self {
        Self(ids)
    }
}

/// `title [SEP] category name`
pub fn encode_bi_item(item: &ItemDoc, vocab: &Vocab, max_len: usize) -> TokenSeq {
    let mut ids = vocab.ids_of(&item.title);
    ids.push(SEP);
    ids.extend(vocab.ids_of(&item.category_name));
    TokenSeq::truncated(ids, max_len)
}

pub fn encode_bi_keyphrase(kp: &Keyphrase, vocab: &Vocab, max_len: usize) -> TokenSeq {
    TokenSeq::truncated(vocab.ids_of(&kp.text), max_len)
}

/// `[CLS] keyphrase [SEP] category name [SEP] title`
pub fn encode_cross_pair(kp: &Keyphrase, item: &ItemDoc, vocab: &Vocab, max_len: usize) -> TokenSeq {
    let mut ids = vec![CLS];
    ids.extend(vocab.ids_of(&kp.text));
    ids.push(SEP);
    ids.extend(vocab.ids_of(&item.category_name));
    ids.push(SEP);
    ids.extend(vocab.ids_of(&item.title));
    TokenSeq::truncated(ids, max_len)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Red Nike Shoes, Size 9"),
            toks(&["red", "nike", "shoes", "size", "9"])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("nike  nike"), toks(&["nike", "nike"]));
        assert_eq!(tokenize("  ...!!  "), Vec::<String>::new());
    }

    #[test]
    fn vocab_examples() {
        let v = build_vocab(["a b", "a"], 1);
        assert_eq!(v.len(), 6);
        assert_eq!(&v.tokens()[..4], &toks(&["[PAD]", "[UNK]", "[CLS]", "[SEP]"])[..]);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), 5);

        let v = build_vocab(["a b", "a"], 2);
        assert_eq!(v.id("a"), 4);
        assert_eq!(v.id("b"), UNK);
        assert_eq!(v.len(), 5);

        let v = build_vocab(Vec::<String>::new(), 1);
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn vocab_orders_by_frequency_then_lexicographic() {
        let v = build_vocab(["c b a", "c b", "c d"], 1);
        assert_eq!(&v.tokens()[4..], &toks(&["c", "b", "a", "d"])[..]);
    }

    #[test]
    fn vocab_rejects_bad_token_lists() {
        assert!(Vocab::from_tokens(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a", "a"]).is_err());
        assert!(Vocab::from_tokens(["x"]).is_err());
        let v = build_vocab(["nike shoes"], 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    fn shoe_world() -> (Vocab, ItemDoc, Keyphrase) {
        let vocab = build_vocab(["red nike shoes footwear"], 1);
        let item = ItemDoc::new(1, "red nike shoes", 7, "Footwear").unwrap();
        let kp = Keyphrase::new(2, "nike shoes").unwrap();
        (vocab, item, kp)
    }

    #[test]
    fn bi_item_layout() {
        let (vocab, _, _) = shoe_world();
        let item = ItemDoc::new(1, "red shoes", 7, "Footwear").unwrap();
        let seq = encode_bi_item(&item, &vocab, DEFAULT_MAX_LEN);
        let expect: Vec<u32> = vec![vocab.id("red"), vocab.id("shoes"), SEP, vocab.id("footwear")];
        assert_eq!(seq.ids(), &expect[..]);

        let oov = ItemDoc::new(1, "zzz qqq", 7, "Footwear").unwrap();
        let seq = encode_bi_item(&oov, &vocab, DEFAULT_MAX_LEN);
        assert_eq!(seq.ids(), &[UNK, UNK, SEP, vocab.id("footwear")]);

        let seq = encode_bi_item(&item, &vocab, 2);
        assert_eq!(seq.ids(), &expect[..2]);
    }

    #[test]
    fn cross_pair_layout() {
        let (vocab, item, kp) = shoe_world();
        let seq = encode_cross_pair(&kp, &item, &vocab, DEFAULT_MAX_LEN);
        let id = |t| vocab.id(t);
        assert_eq!(
            seq.ids(),
            &[CLS, id("nike"), id("shoes"), SEP, id("footwear"), SEP, id("red"), id("nike"), id("shoes")]
        );
        let seq = encode_cross_pair(&kp, &item, &vocab, 4);
        assert_eq!(seq.ids(), &[CLS, id("nike"), id("shoes"), SEP]);
    }

    #[test]
    fn doc_invariants() {
        assert!(ItemDoc::new(1, " , ", 1, "cat").is_err());
        assert!(ItemDoc::new(1, "title", 1, "  ").is_err());
        assert!(Keyphrase::new(1, "--").is_err());
    }

    proptest! {
        #[test]
        fn tokenize_idempotent_on_joined_output(s in "\\PC{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn cross_ids_in_range_and_sep_position(
            kp in "[a-e]{1,3}( [a-e]{1,3}){0,3}",
            title in "[a-h]{1,3}( [a-h]{1,3}){0,6}",
            cat in "[a-c]{1,4}",
        ) {
            let vocab = build_vocab([kp.as_str(), title.as_str()], 1);
            let item = ItemDoc::new(1, title.clone(), 1, cat).unwrap();
            let k = Keyphrase::new(1, kp.clone()).unwrap();
            let seq = encode_cross_pair(&k, &item, &vocab, DEFAULT_MAX_LEN);
            prop_assert!(seq.ids().iter().all(|&i| (i as usize) < vocab.len()));
            let first_sep = seq.ids().iter().position(|&i| i == SEP).unwrap();
            prop_assert_eq!(first_sep, 1 + tokenize(&kp).len());
            prop_assert_eq!(seq.clone(), encode_cross_pair(&k, &item, &vocab, DEFAULT_MAX_LEN));
            let bi = encode_bi_item(&item, &vocab, DEFAULT_MAX_LEN);
            prop_assert!(bi.ids().iter().all(|&i| (i as usize) < vocab.len()));
        }
    }
}
