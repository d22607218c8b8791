//! The bias study: the same architectures trained on Search judgments and
//! on click-derived positives, all scored against the Search oracle.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bi_encoder::{BiEncoderModel, BiTrainConfig, BiTrainData, LabeledPair, Objective};
use crate::checkpoint::{Checkpoint, RelevanceModel};
use crate::cross_encoder::{CrossEncoderConfig, CrossEncoderModel, CrossTrainConfig, Preset};
use crate::error::{Error, Result};
use crate::eval::{confusion, fn_length_breakdown, prf1, ConfusionCounts, ModelRow, PairKey, Prf1Report};
use crate::jaccard::JaccardConfig;
use crate::scoring::{Catalog, Scorer};
use crate::sim::{
    advertise, derive_click_dataset, derive_judgment_dataset, measure_middleman_bias, simulate_traffic,
    split_judgments, stream_rng, ClickLogRecord, MiddlemanReport, RelevanceJudgment, SimConfig, World,
};
use crate::text::{build_vocab, encode_bi_item, encode_bi_keyphrase, encode_cross_pair, Vocab, DEFAULT_MAX_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    Jaccard,
    BiContrastive,
    BiSoftmax,
    BiIrns,
    CrossTiny,
    CrossMini,
}

impl ModelFamily {
    pub fn name(self) -> &'static str {
        match self {
            ModelFamily::Jaccard => "jaccard",
            ModelFamily::BiContrastive => "bi-contrastive",
            ModelFamily::BiSoftmax => "bi-softmax",
            ModelFamily::BiIrns => "bi-irns",
            ModelFamily::CrossTiny => "cross-tiny",
            ModelFamily::CrossMini => "cross-mini",
        }
    }

    pub fn objective(self) -> Option<Objective> {
        match self {
            ModelFamily::BiContrastive => Some(Objective::Contrastive),
            ModelFamily::BiSoftmax => Some(Objective::Softmax),
            ModelFamily::BiIrns => Some(Objective::Irns),
            _ => None,
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            ModelFamily::Jaccard,
            ModelFamily::BiContrastive,
            ModelFamily::BiSoftmax,
            ModelFamily::BiIrns,
            ModelFamily::CrossTiny,
            ModelFamily::CrossMini,
        ]
        .into_iter()
        .find(|f| f.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown model family {s:?}")))
    }
}

/// Where training labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    /// Search pass/fail judgments.
    Judgments,
    /// Filtered click positives plus uniformly random negatives.
    Clicks,
}

impl LabelSource {
    pub fn name(self) -> &'static str {
        match self {
            Self::Judgments => "judgments",
            Self::Clicks => "clicks",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arm {
    pub model: ModelFamily,
    pub labels: LabelSource,
}

impl Arm {
    pub fn new(model: ModelFamily, labels: LabelSource) -> Self {
        Self { model, labels }
    }

    pub fn name(&self) -> String {
        match (self.model, self.labels) {
            (ModelFamily::Jaccard, _) => "jaccard".into(),
            (m, LabelSource::Judgments) => m.name().into(),
            (m, LabelSource::Clicks) => format!("{}[clicks]", m.name()),
        }
    }
}

/// Model and training settings shared by every arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    pub jaccard: JaccardConfig,
    pub bi: BiTrainConfig,
    pub bi_dim: usize,
    pub cross_tiny: CrossTrainConfig,
    pub cross_mini: CrossTrainConfig,
    pub max_seq_len: usize,
    /// Random negatives sampled per click positive.
    pub negatives_per_positive: usize,
    /// Share of the training labels held out to calibrate bi-encoder
    /// thresholds.
    pub calibration_fraction: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            jaccard: JaccardConfig::default(),
            bi: BiTrainConfig::default(),
            bi_dim: 64,
            cross_tiny: CrossTrainConfig {
                epochs: 6,
                ..CrossTrainConfig::default()
            },
            cross_mini: CrossTrainConfig {
                epochs: 4,
                ..CrossTrainConfig::default()
            },
            max_seq_len: 32,
            negatives_per_positive: 1,
            calibration_fraction: 0.2,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        self.jaccard.validate()?;
        self.bi.validate()?;
        self.cross_tiny.validate()?;
        self.cross_mini.validate()?;
        if self.bi_dim == 0 || self.max_seq_len < 4 {
            return Err(Error::Config("bi_dim >= 1 and max_seq_len >= 4 required".into()));
        }
        if !(0.0..1.0).contains(&self.calibration_fraction) {
            return Err(Error::Config("calibration_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub arms: Vec<Arm>,
    pub train: TrainOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            arms: vec![
                Arm::new(ModelFamily::Jaccard, LabelSource::Judgments),
                Arm::new(ModelFamily::CrossTiny, LabelSource::Judgments),
                Arm::new(ModelFamily::CrossTiny, LabelSource::Clicks),
            ],
            train: TrainOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.arms.is_empty() {
            return Err(Error::Config("no study arms configured".into()));
        }
        Ok(())
    }
}

/// A simulated world with everything derived from it.
#[derive(Debug, Clone)]
pub struct StudyData {
    pub world: World,
    pub catalog: Catalog,
    pub vocab: Vocab,
    pub advertised: Vec<PairKey>,
    /// Aggregated click log over every auction.
    pub click_log: Vec<ClickLogRecord>,
    pub click_positives: Vec<ClickLogRecord>,
    pub train: Vec<RelevanceJudgment>,
    pub eval: Vec<RelevanceJudgment>,
    pub middleman: MiddlemanReport,
}

impl StudyData {
    pub fn generate(sim: &SimConfig) -> Result<Self> {
        let world = World::generate(sim)?;
        let advertised = advertise(&world);
        let log = simulate_traffic(&world, &advertised, sim)?;
        let click_positives = derive_click_dataset(&log.records, sim);
        let middleman = measure_middleman_bias(&click_positives, &world, &log, &advertised)?;
        let judgments = derive_judgment_dataset(&world, &advertised, sim)?;
        let (train, eval) = split_judgments(&judgments, sim.eval_fraction, sim.seed);
        let vocab = vocab_for(&world);
        let catalog = Catalog::new(world.items.clone(), world.keyphrases.clone());
        Ok(Self {
            world,
            catalog,
            vocab,
            advertised,
            click_log: log.records,
            click_positives,
            train,
            eval,
            middleman,
        })
    }

    /// Labeled training pairs for `source`, sorted by key.
    pub fn training_pairs(&self, source: LabelSource, negatives_per_positive: usize) -> Vec<(PairKey, bool)> {
        match source {
            LabelSource::Judgments => judgment_training_pairs(&self.train),
            LabelSource::Clicks => {
                let positives: Vec<PairKey> = self.click_positives.iter().map(ClickLogRecord::key).collect();
                click_training_pairs(&self.catalog, &positives, negatives_per_positive, self.world.config.seed)
            }
        }
    }
}

pub fn judgment_training_pairs(judgments: &[RelevanceJudgment]) -> Vec<(PairKey, bool)> {
    let mut out: Vec<(PairKey, bool)> = judgments.iter().map(|j| (j.key(), j.passes())).collect();
    out.sort_unstable();
    out
}

/// Click positives plus `negatives_per_positive` uniformly random catalog
/// pairs per positive, labeled 0. Sorted by key.
pub fn click_training_pairs(
    catalog: &Catalog,
    positives: &[PairKey],
    negatives_per_positive: usize,
    seed: u64,
) -> Vec<(PairKey, bool)> {
    let positives: HashSet<PairKey> = positives.iter().copied().collect();
    let items: Vec<u64> = catalog.items.keys().copied().collect();
    let kps: Vec<u64> = catalog.keyphrases.keys().copied().collect();
    let mut out: Vec<(PairKey, bool)> = positives.iter().map(|&k| (k, true)).collect();
    if !items.is_empty() && !kps.is_empty() {
        let mut rng = stream_rng(seed, 6);
        let want = positives.len() * negatives_per_positive;
        let mut negatives = BTreeSet::new();
        let mut attempts = 0;
        while negatives.len() < want && attempts < want * 20 {
            attempts += 1;
            let pair = (items[rng.random_range(0..items.len())], kps[rng.random_range(0..kps.len())]);
            if !positives.contains(&pair) {
                negatives.insert(pair);
            }
        }
        out.extend(negatives.into_iter().map(|k| (k, false)));
    }
    out.sort_unstable();
    out
}

/// Vocabulary over every title, category name and keyphrase in the world.
pub fn vocab_for(world: &World) -> Vocab {
    let texts = world
        .items
        .iter()
        .flat_map(|i| [i.title.as_str(), i.category_name.as_str()])
        .chain(world.keyphrases.iter().map(|k| k.text.as_str()));
    build_vocab(texts, 1)
}

/// Trains one model family on labeled pairs and wraps it in a checkpoint.
/// The bi-encoder threshold is calibrated on a held-out share of `pairs`.
pub fn train_model(
    family: ModelFamily,
    catalog: &Catalog,
    vocab: &Vocab,
    pairs: &[(PairKey, bool)],
    cfg: &TrainOptions,
    seed: u64,
) -> Result<(Checkpoint, Vec<f64>)> {
    let (model, trace) = match family {
        ModelFamily::Jaccard => (RelevanceModel::Jaccard(cfg.jaccard), Vec::new()),
        ModelFamily::BiContrastive | ModelFamily::BiSoftmax | ModelFamily::BiIrns => {
            let objective = family.objective().expect("bi family");
            let labeled = pairs
                .iter()
                .map(|&((i, k), label)| {
                    Ok(LabeledPair {
                        item: encode_bi_item(catalog.item(i)?, vocab, DEFAULT_MAX_LEN),
                        keyphrase: encode_bi_keyphrase(catalog.keyphrase(k)?, vocab, DEFAULT_MAX_LEN),
                        label,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let n_cal = (labeled.len() as f64 * cfg.calibration_fraction).round() as usize;
            let (cal, fit) = labeled.split_at(n_cal);
            let data = match objective {
                Objective::Irns => BiTrainData::Positives(
                    fit.iter()
                        .filter(|p| p.label)
                        .map(|p| crate::bi_encoder::PositivePair {
                            item: p.item.clone(),
                            keyphrase: p.keyphrase.clone(),
                        })
                        .collect(),
                ),
                _ => BiTrainData::Labeled(fit.to_vec()),
            };
            let mut model = BiEncoderModel::new(vocab.len(), cfg.bi_dim, objective, seed);
            let train_cfg = BiTrainConfig {
                objective,
                seed,
                ..cfg.bi.clone()
            };
            let trace = model.train(&data, &train_cfg)?;
            if !cal.is_empty() {
                model.calibrate(cal)?;
            }
            (RelevanceModel::Bi(model), trace)
        }
        ModelFamily::CrossTiny | ModelFamily::CrossMini => {
            let (preset, train_cfg) = if family == ModelFamily::CrossTiny {
                (Preset::Tiny, &cfg.cross_tiny)
            } else {
                (Preset::Mini, &cfg.cross_mini)
            };
            let model_cfg = CrossEncoderConfig {
                max_seq_len: cfg.max_seq_len,
                ..CrossEncoderConfig::preset(preset, vocab.len(), seed)
            };
            let seqs = pairs
                .iter()
                .map(|&((i, k), label)| {
                    Ok((
                        encode_cross_pair(catalog.keyphrase(k)?, catalog.item(i)?, vocab, cfg.max_seq_len),
                        label,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut model = CrossEncoderModel::new(model_cfg)?;
            let trace = model.train(
                &seqs,
                &CrossTrainConfig {
                    seed,
                    ..train_cfg.clone()
                },
            )?;
            (RelevanceModel::Cross(model), trace)
        }
    };
    let meta = serde_json::json!({
        "family": family.name(),
        "seed": seed,
        "train_pairs": pairs.len(),
        "loss_trace": trace,
    });
    Ok((Checkpoint::new(family.name(), vocab.clone(), model, meta)?, trace))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub arm: Arm,
    pub name: String,
    pub model_version: String,
    pub train_pairs: usize,
    pub train_ms: u128,
    pub loss_trace: Vec<f64>,
    pub counts: ConfusionCounts,
    pub report: Prf1Report,
    /// False negatives on the eval set by keyphrase token length.
    pub fn_by_length: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub counts: ConfusionCounts,
    pub report: Prf1Report,
    /// False negatives by keyphrase token length.
    pub fn_by_length: BTreeMap<usize, u64>,
}

/// Scores the judged pairs with `checkpoint` and compares to their labels.
pub fn evaluate_checkpoint(checkpoint: &Checkpoint, catalog: &Catalog, judgments: &[RelevanceJudgment]) -> Result<EvalOutcome> {
    let scorer = Scorer::new(checkpoint);
    let keys: Vec<PairKey> = judgments.iter().map(RelevanceJudgment::key).collect();
    let scores = scorer.score_pairs(catalog, &keys)?;
    let preds: Vec<(PairKey, bool)> = keys.iter().zip(&scores).map(|(&k, &s)| (k, scorer.passes(s))).collect();
    let counts = confusion(&preds, judgments)?;
    let keyphrases: Vec<_> = catalog.keyphrases.values().cloned().collect();
    Ok(EvalOutcome {
        counts,
        report: prf1(&counts),
        fn_by_length: fn_length_breakdown(&preds, judgments, &keyphrases)?,
    })
}

pub fn run_arm(arm: Arm, data: &StudyData, cfg: &ExperimentConfig) -> Result<ArmResult> {
    let pairs = data.training_pairs(arm.labels, cfg.train.negatives_per_positive);
    if pairs.is_empty() {
        return Err(Error::Data(format!("no training pairs for {}", arm.name())));
    }
    let started = Instant::now();
    let (ck, trace) = train_model(arm.model, &data.catalog, &data.vocab, &pairs, &cfg.train, cfg.sim.seed)?;
    let train_ms = started.elapsed().as_millis();
    let EvalOutcome {
        counts,
        report,
        fn_by_length,
    } = evaluate_checkpoint(&ck, &data.catalog, &data.eval)?;
    tracing::info!(arm = %arm.name(), f1 = report.f1, train_ms, "arm done");
    Ok(ArmResult {
        arm,
        name: arm.name(),
        model_version: ck.model_version(),
        train_pairs: pairs.len(),
        train_ms,
        loss_trace: trace,
        counts,
        report,
        fn_by_length,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub seed: u64,
    pub train_judgments: usize,
    pub eval_judgments: usize,
    pub click_positives: usize,
    pub middleman: MiddlemanReport,
    pub arms: Vec<ArmResult>,
}

impl StudyReport {
    pub fn arm(&self, model: ModelFamily, labels: LabelSource) -> Option<&ArmResult> {
        self.arms
            .iter()
            .find(|a| a.arm.model == model && (model == ModelFamily::Jaccard || a.arm.labels == labels))
    }

    pub fn rows(&self) -> Vec<ModelRow> {
        self.arms
            .iter()
            .map(|a| ModelRow {
                model: a.name.clone(),
                report: a.report.clone(),
            })
            .collect()
    }
}

pub fn run_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let data = StudyData::generate(&cfg.sim)?;
    let arms = cfg
        .arms
        .iter()
        .map(|&arm| run_arm(arm, &data, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyReport {
        seed: cfg.sim.seed,
        train_judgments: data.train.len(),
        eval_judgments: data.eval.len(),
        click_positives: data.click_positives.len(),
        middleman: data.middleman.clone(),
        arms,
    })
}
