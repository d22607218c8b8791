use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::bi_encoder::{BiEncoderModel, Objective};
use crate::checkpoint::RelevanceModel;
use crate::cross_encoder::{CrossEncoderConfig, CrossEncoderModel, Preset};
use crate::error::{Error, Result};
use crate::eval::PairKey;
use crate::experiment::{vocab_for, ModelFamily};
use crate::jaccard::JaccardConfig;
use crate::scoring::{Catalog, Scorer};
use crate::sim::{stream_rng, SimConfig, World};

/// Fixed-seed synthetic scoring workload.
#[derive(Debug)]
pub struct Workload {
    pub catalog: Catalog,
    pub pairs: Vec<PairKey>,
    pub scorer: Scorer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub family: String,
    pub n_items: usize,
    pub n_keyphrases: usize,
    pub n_pairs: usize,
    pub repeats: usize,
    pub encodes: u64,
    pub forwards: u64,
    /// Median over repeats.
    pub wall_ms: f64,
    pub pairs_per_sec: f64,
}

impl Workload {
    /// Catalog of the given size, `n_pairs` distinct pairs drawn uniformly,
    /// and a freshly initialized model of `family`.
    pub fn generate(family: ModelFamily, n_items: usize, n_keyphrases: usize, n_pairs: usize, seed: u64) -> Result<Self> {
        let total = n_items * n_keyphrases;
        if n_pairs > total {
            return Err(Error::Config(format!(
                "{n_pairs} pairs requested from a {n_items} x {n_keyphrases} catalog"
            )));
        }
        let world = World::generate(&SimConfig {
            n_items,
            n_keyphrases,
            seed,
            ..SimConfig::default()
        })?;
        let vocab = vocab_for(&world);
        let model = match family {
            ModelFamily::Jaccard => RelevanceModel::Jaccard(JaccardConfig::default()),
            ModelFamily::BiContrastive | ModelFamily::BiSoftmax | ModelFamily::BiIrns => RelevanceModel::Bi(
                BiEncoderModel::new(vocab.len(), 64, family.objective().unwrap_or(Objective::Contrastive), seed),
            ),
            ModelFamily::CrossTiny | ModelFamily::CrossMini => {
                let preset = if family == ModelFamily::CrossTiny { Preset::Tiny } else { Preset::Mini };
                RelevanceModel::Cross(CrossEncoderModel::new(CrossEncoderConfig::preset(preset, vocab.len(), seed))?)
            }
        };
        let mut rng = stream_rng(seed, 7);
        let mut pairs: Vec<PairKey> = sample(&mut rng, total, n_pairs)
            .into_iter()
            .map(|idx| {
                (
                    world.items[idx / n_keyphrases].item_id,
                    world.keyphrases[idx % n_keyphrases].keyphrase_id,
                )
            })
            .collect();
        pairs.sort_unstable();
        let catalog = Catalog::new(world.items, world.keyphrases);
        Ok(Self {
            catalog,
            pairs,
            scorer: Scorer::from_parts(model, vocab, family.name()),
        })
    }

    pub fn run(&self, repeats: usize) -> Result<BenchReport> {
        let repeats = repeats.max(1);
        let mut times = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            self.scorer.reset_counts();
            let t = Instant::now();
            std::hint::black_box(self.scorer.score_pairs_full(&self.catalog, &self.pairs)?);
            times.push(t.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        let wall_ms = times[times.len() / 2];
        let counts = self.scorer.counts();
        Ok(BenchReport {
            family: self.scorer.model_version().to_string(),
            n_items: self.catalog.items.len(),
            n_keyphrases: self.catalog.keyphrases.len(),
            n_pairs: self.pairs.len(),
            repeats,
            encodes: counts.encodes,
            forwards: counts.forwards,
            wall_ms,
            pairs_per_sec: self.pairs.len() as f64 / (wall_ms / 1e3).max(1e-9),
        })
    }
}

pub fn bench_throughput(
    family: ModelFamily,
    n_items: usize,
    n_keyphrases: usize,
    n_pairs: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport> {
    Workload::generate(family, n_items, n_keyphrases, n_pairs, seed)?.run(repeats)
}
