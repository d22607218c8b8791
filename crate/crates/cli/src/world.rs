//! The world directory written by `simulate` and read by later stages.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use keyrel::experiment::StudyData;
use keyrel::io::{read_items, read_jsonl, read_keyphrases, write_atomic, write_jsonl};
use keyrel::scoring::Catalog;
use keyrel::sim::KeyphraseTopic;
use keyrel::{ClickLogRecord, ItemDoc, Keyphrase, PairKey, RelevanceJudgment, Vocab};
use serde::{Deserialize, Serialize};

pub const ITEMS: &str = "items.jsonl";
pub const KEYPHRASES: &str = "keyphrases.jsonl";
pub const KEYPHRASE_CATEGORIES: &str = "keyphrase_categories.jsonl";
pub const ADVERTISED: &str = "advertised.jsonl";
pub const CLICK_LOG: &str = "click_log.jsonl";
pub const CLICK_DATASET: &str = "click_dataset.jsonl";
pub const JUDGMENTS: &str = "judgments.jsonl";
pub const JUDGMENTS_TRAIN: &str = "judgments_train.jsonl";
pub const JUDGMENTS_EVAL: &str = "judgments_eval.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const MIDDLEMAN: &str = "middleman.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct AdvertisedPair {
    item_id: u64,
    keyphrase_id: u64,
}

/// Writes every dataset derived from one simulated world into `dir`.
pub fn write_world(dir: &Path, data: &StudyData) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let w = &data.world;
    write_jsonl(&dir.join(ITEMS), &w.items)?;
    write_jsonl(&dir.join(KEYPHRASES), &w.keyphrases)?;
    write_jsonl(&dir.join(KEYPHRASE_CATEGORIES), &w.keyphrase_categories())?;
    let advertised: Vec<AdvertisedPair> = data
        .advertised
        .iter()
        .map(|&(item_id, keyphrase_id)| AdvertisedPair { item_id, keyphrase_id })
        .collect();
    write_jsonl(&dir.join(ADVERTISED), &advertised)?;
    write_jsonl(&dir.join(CLICK_LOG), &data.click_log)?;
    write_jsonl(&dir.join(CLICK_DATASET), &data.click_positives)?;
    let mut all: Vec<RelevanceJudgment> = data.train.iter().chain(&data.eval).copied().collect();
    all.sort_unstable();
    write_jsonl(&dir.join(JUDGMENTS), &all)?;
    write_jsonl(&dir.join(JUDGMENTS_TRAIN), &data.train)?;
    write_jsonl(&dir.join(JUDGMENTS_EVAL), &data.eval)?;
    write_atomic(&dir.join(VOCAB), &serde_json::to_vec_pretty(data.vocab.tokens())?)?;
    write_atomic(&dir.join(MIDDLEMAN), &serde_json::to_vec_pretty(&data.middleman)?)?;
    Ok(())
}

/// Read access to a world directory.
#[derive(Debug, Clone)]
pub struct WorldDir {
    pub root: PathBuf,
}

impl WorldDir {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.join(ITEMS).is_file() {
            return Err(keyrel::Error::Data(format!("{} is not a world directory (no {ITEMS})", root.display())).into());
        }
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn items(&self) -> Result<Vec<ItemDoc>> {
        Ok(read_items(&self.path(ITEMS))?)
    }

    pub fn keyphrases(&self) -> Result<Vec<Keyphrase>> {
        Ok(read_keyphrases(&self.path(KEYPHRASES))?)
    }

    pub fn catalog(&self) -> Result<Catalog> {
        Ok(Catalog::new(self.items()?, self.keyphrases()?))
    }

    pub fn vocab(&self) -> Result<Vocab> {
        let bytes = std::fs::read(self.path(VOCAB)).with_context(|| format!("reading {}", self.path(VOCAB).display()))?;
        let tokens: Vec<String> = serde_json::from_slice(&bytes)?;
        Ok(Vocab::from_tokens(tokens)?)
    }

    pub fn keyphrase_categories(&self) -> Result<Vec<KeyphraseTopic>> {
        Ok(read_jsonl(&self.path(KEYPHRASE_CATEGORIES))?)
    }

    pub fn advertised(&self) -> Result<Vec<PairKey>> {
        let rows: Vec<AdvertisedPair> = read_jsonl(&self.path(ADVERTISED))?;
        Ok(rows.into_iter().map(|p| (p.item_id, p.keyphrase_id)).collect())
    }

    pub fn click_dataset(&self) -> Result<Vec<ClickLogRecord>> {
        Ok(read_jsonl(&self.path(CLICK_DATASET))?)
    }

    pub fn judgments(&self, name: &str) -> Result<Vec<RelevanceJudgment>> {
        Ok(read_jsonl(&self.path(name))?)
    }
}
