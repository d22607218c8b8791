use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use keyrel::eval::{format_table, ModelRow};
use keyrel::experiment::{
    click_training_pairs, evaluate_checkpoint, judgment_training_pairs, run_study, train_model, EvalOutcome,
    LabelSource, ModelFamily, StudyData, StudyReport,
};
use keyrel::io::{read_jsonl, write_atomic, write_jsonl};
use keyrel::scoring::{Catalog, Scorer};
use keyrel::serving::{
    batch_score_diff, batch_score_full, bench_throughput, candidate_pairs, service, AllPairs, CategoryPairs,
    ExplicitPairs, MapEnrichment, NrtPipeline, PairSource, ScoreStore, SystemClock,
};
use keyrel::{Checkpoint, ConfusionCounts, ItemDoc, Keyphrase, PairKey, Prf1Report, RelevanceModel, Vocab};
use serde::{Deserialize, Serialize};

use crate::config::{PairMode, RunConfig};
use crate::exit::{ConfigError, GateFailure};
use crate::manifest::RunManifest;
use crate::world::{write_world, WorldDir, CLICK_DATASET, JUDGMENTS_EVAL, JUDGMENTS_TRAIN};

pub const MODEL_FILE: &str = "model.ckpt";
pub const STORE_DIR: &str = "store";
pub const CHANGES_FILE: &str = "changes.jsonl";

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(write_atomic(path, &bytes)?)
}

/// `jaccard` builds the baseline from config; anything else is a model
/// directory or checkpoint file.
fn model_path(spec: &str) -> PathBuf {
    let p = PathBuf::from(spec);
    if p.is_dir() {
        p.join(MODEL_FILE)
    } else {
        p
    }
}

pub fn load_model(spec: &str, vocab: &Vocab, cfg: &RunConfig, manifest: &mut RunManifest) -> Result<Checkpoint> {
    if spec == "jaccard" {
        return Ok(Checkpoint::new(
            "jaccard",
            vocab.clone(),
            RelevanceModel::Jaccard(cfg.train.jaccard),
            serde_json::Value::Null,
        )?);
    }
    let path = model_path(spec);
    let ck = Checkpoint::load_for_vocab(&path, vocab).with_context(|| format!("loading model {spec}"))?;
    manifest.input(&path)?;
    Ok(ck)
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let data = StudyData::generate(&cfg.sim)?;
    write_world(out, &data)?;
    RunManifest::new("simulate", cfg).finish(out)?;
    println!(
        "world {}: {} items, {} keyphrases, {} advertised pairs, {} click positives, {} judgments ({} train / {} eval)",
        out.display(),
        data.world.items.len(),
        data.world.keyphrases.len(),
        data.advertised.len(),
        data.click_positives.len(),
        data.train.len() + data.eval.len(),
        data.train.len(),
        data.eval.len()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    family: &'static str,
    labels: LabelSource,
    model_version: String,
    train_pairs: usize,
    positives: usize,
    threshold: f64,
    loss_trace: Vec<f64>,
}

pub fn train(cfg: &RunConfig, world: &Path, family: ModelFamily, labels: LabelSource, out: &Path) -> Result<()> {
    let w = WorldDir::open(world)?;
    let mut manifest = RunManifest::new("train", cfg);
    let catalog = w.catalog()?;
    let vocab = w.vocab()?;
    let pairs = match labels {
        LabelSource::Judgments => {
            manifest.input(&w.path(JUDGMENTS_TRAIN))?;
            judgment_training_pairs(&w.judgments(JUDGMENTS_TRAIN)?)
        }
        LabelSource::Clicks => {
            manifest.input(&w.path(CLICK_DATASET))?;
            let positives: Vec<PairKey> = w.click_dataset()?.iter().map(|r| r.key()).collect();
            click_training_pairs(&catalog, &positives, cfg.train.negatives_per_positive, cfg.seed)
        }
    };
    if pairs.is_empty() {
        return Err(keyrel::Error::Data(format!("no {} training pairs in {}", labels.name(), world.display())).into());
    }
    for f in [crate::world::ITEMS, crate::world::KEYPHRASES, crate::world::VOCAB] {
        manifest.input(&w.path(f))?;
    }
    tracing::info!(family = family.name(), pairs = pairs.len(), "training");
    let (ck, trace) = train_model(family, &catalog, &vocab, &pairs, &cfg.train, cfg.seed)?;
    create_dir(out)?;
    ck.save(&out.join(MODEL_FILE))?;
    let summary = TrainSummary {
        family: family.name(),
        labels,
        model_version: ck.model_version(),
        train_pairs: pairs.len(),
        positives: pairs.iter().filter(|p| p.1).count(),
        threshold: ck.model.threshold(),
        loss_trace: trace,
    };
    write_json(&out.join("train.json"), &summary)?;
    manifest.model_version = Some(summary.model_version.clone());
    manifest.finish(out)?;
    println!(
        "trained {} on {} {} pairs -> {} (model_version {})",
        family.name(),
        summary.train_pairs,
        labels.name(),
        out.display(),
        summary.model_version
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalEntry {
    pub model: String,
    pub family: String,
    pub model_version: String,
    pub counts: ConfusionCounts,
    pub report: Prf1Report,
    pub fn_by_length: BTreeMap<usize, u64>,
}

pub fn eval(cfg: &RunConfig, world: &Path, models: &[String], min_f1: Option<f64>, out: Option<&Path>) -> Result<()> {
    let w = WorldDir::open(world)?;
    let mut manifest = RunManifest::new("eval", cfg);
    let catalog = w.catalog()?;
    let vocab = w.vocab()?;
    let judgments = w.judgments(JUDGMENTS_EVAL)?;
    manifest.input(&w.path(JUDGMENTS_EVAL))?;
    let mut entries = Vec::new();
    for spec in models {
        let ck = load_model(spec, &vocab, cfg, &mut manifest)?;
        let EvalOutcome {
            counts,
            report,
            fn_by_length,
        } = evaluate_checkpoint(&ck, &catalog, &judgments)?;
        entries.push(EvalEntry {
            model: spec.clone(),
            family: ck.family.clone(),
            model_version: ck.model_version(),
            counts,
            report,
            fn_by_length,
        });
    }
    let rows: Vec<ModelRow> = entries
        .iter()
        .map(|e| ModelRow {
            model: e.model.clone(),
            report: e.report,
        })
        .collect();
    print!("{}", format_table(&rows));
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &entries)?;
        write_atomic(&dir.join("table.txt"), format_table(&rows).as_bytes())?;
        if let [only] = entries.as_slice() {
            manifest.model_version = Some(only.model_version.clone());
        }
        manifest.finish(dir)?;
    }
    let min_f1 = min_f1.or(cfg.eval.min_f1);
    if let Some(min) = min_f1 {
        let failing: Vec<String> = entries
            .iter()
            .filter(|e| !(e.report.f1 >= min))
            .map(|e| format!("{} F1 {:.4}", e.model, e.report.f1))
            .collect();
        if !failing.is_empty() {
            return Err(GateFailure(format!("below min F1 {min}: {}", failing.join(", "))).into());
        }
    }
    Ok(())
}

/// A catalog edit applied by `diff` and replayed by `serve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Change {
    Item {
        item: ItemDoc,
        revised_at: u64,
    },
    Keyphrase {
        keyphrase: Keyphrase,
        /// Category the keyphrase is targeted at, for the category pair source.
        #[serde(default)]
        category_id: Option<u32>,
        revised_at: u64,
    },
}

/// Catalog state: the world plus every change applied so far.
struct LiveCatalog {
    catalog: Catalog,
    categories: BTreeMap<u64, u32>,
}

impl LiveCatalog {
    fn new(w: &WorldDir) -> Result<Self> {
        let categories = w
            .keyphrase_categories()?
            .into_iter()
            .map(|k| (k.keyphrase_id, k.category_id))
            .collect();
        Ok(Self {
            catalog: w.catalog()?,
            categories,
        })
    }

    /// Returns the item or keyphrase id if the change took effect.
    fn apply(&mut self, change: &Change) -> Result<Option<(bool, u64)>> {
        match change {
            Change::Item { item, revised_at } => {
                item.validate()?;
                Ok(self
                    .catalog
                    .upsert_item(item.clone(), *revised_at)
                    .then_some((true, item.item_id)))
            }
            Change::Keyphrase {
                keyphrase,
                category_id,
                revised_at,
            } => {
                keyphrase.validate()?;
                let id = keyphrase.keyphrase_id;
                if !self.catalog.upsert_keyphrase(keyphrase.clone(), *revised_at) {
                    return Ok(None);
                }
                if let Some(c) = category_id {
                    self.categories.insert(id, *c);
                }
                Ok(Some((false, id)))
            }
        }
    }
}

fn pair_source(mode: PairMode, w: &WorldDir, categories: &BTreeMap<u64, u32>) -> Result<Arc<dyn PairSource>> {
    Ok(match mode {
        PairMode::Category => Arc::new(CategoryPairs::new(categories.iter().map(|(&k, &c)| (k, c)))),
        PairMode::All => Arc::new(AllPairs),
        PairMode::Advertised => Arc::new(ExplicitPairs(w.advertised()?.into_iter().collect::<HashSet<_>>())),
    })
}

fn read_changes(path: &Path) -> Result<Vec<Change>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    Ok(read_jsonl(path)?)
}

pub fn filter(cfg: &RunConfig, world: &Path, model: &str, items: &[u64], show_all: bool) -> Result<()> {
    let w = WorldDir::open(world)?;
    let mut manifest = RunManifest::new("filter", cfg);
    let live = LiveCatalog::new(&w)?;
    let ck = load_model(model, &w.vocab()?, cfg, &mut manifest)?;
    let scorer = Scorer::new(&ck);
    let source = pair_source(cfg.serve.pairs, &w, &live.categories)?;
    let mut pairs = candidate_pairs(&live.catalog, source.as_ref());
    if !items.is_empty() {
        for &i in items {
            live.catalog.item(i)?;
        }
        let wanted: HashSet<u64> = items.iter().copied().collect();
        pairs.retain(|p| wanted.contains(&p.0));
    }
    let scores = scorer.score_pairs(&live.catalog, &pairs)?;
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let mut kept = 0usize;
    for (&(item_id, keyphrase_id), &score) in pairs.iter().zip(&scores) {
        let pass = scorer.passes(score);
        if pass || show_all {
            kept += usize::from(pass);
            serde_json::to_writer(
                &mut out,
                &serde_json::json!({"item_id": item_id, "keyphrase_id": keyphrase_id, "score": score, "pass": pass}),
            )?;
            out.write_all(b"\n")?;
        }
    }
    out.flush()?;
    tracing::info!(candidates = pairs.len(), passed = kept, "filtered");
    Ok(())
}

pub fn batch(cfg: &RunConfig, world: &Path, model: &str, out: &Path) -> Result<()> {
    let w = WorldDir::open(world)?;
    let mut manifest = RunManifest::new("batch", cfg);
    manifest.input(&w.path(crate::world::ITEMS))?;
    manifest.input(&w.path(crate::world::KEYPHRASES))?;
    let live = LiveCatalog::new(&w)?;
    let ck = load_model(model, &w.vocab()?, cfg, &mut manifest)?;
    let scorer = Scorer::new(&ck);
    let source = pair_source(cfg.serve.pairs, &w, &live.categories)?;
    let store = batch_score_full(&scorer, &live.catalog, source.as_ref())?;
    create_dir(out)?;
    store.save(&out.join(STORE_DIR))?;
    let changes = out.join(CHANGES_FILE);
    if changes.exists() {
        std::fs::remove_file(&changes)?;
    }
    let counts = scorer.counts();
    manifest.model_version = Some(scorer.model_version().to_string());
    manifest.finish(out)?;
    println!(
        "scored {} pairs ({} pass) into {} [encodes {}, forwards {}]",
        store.len(),
        store.records().filter(|r| r.pass).count(),
        out.join(STORE_DIR).display(),
        counts.encodes,
        counts.forwards
    );
    Ok(())
}

fn replay(w: &WorldDir, batch_dir: &Path) -> Result<(LiveCatalog, Vec<Change>)> {
    let mut live = LiveCatalog::new(w)?;
    let applied = read_changes(&batch_dir.join(CHANGES_FILE))?;
    for c in &applied {
        live.apply(c)?;
    }
    Ok((live, applied))
}

pub fn diff(cfg: &RunConfig, world: &Path, model: &str, batch_dir: &Path, change_files: &[PathBuf]) -> Result<()> {
    let w = WorldDir::open(world)?;
    let mut manifest = RunManifest::new("diff", cfg);
    let ck = load_model(model, &w.vocab()?, cfg, &mut manifest)?;
    let scorer = Scorer::new(&ck);
    let mut store = ScoreStore::load(&batch_dir.join(STORE_DIR))?;
    let (mut live, mut applied) = replay(&w, batch_dir)?;
    let mut changed_items = Vec::new();
    let mut new_kps = Vec::new();
    for path in change_files {
        manifest.input(path)?;
        for change in read_changes(path).with_context(|| format!("reading changes {}", path.display()))? {
            match live.apply(&change)? {
                Some((true, id)) => changed_items.push(id),
                Some((false, id)) => new_kps.push(id),
                None => {}
            }
            applied.push(change);
        }
    }
    changed_items.sort_unstable();
    changed_items.dedup();
    new_kps.sort_unstable();
    new_kps.dedup();
    let source = pair_source(cfg.serve.pairs, &w, &live.categories)?;
    let report = batch_score_diff(&mut store, &scorer, &live.catalog, &changed_items, &new_kps, source.as_ref())?;
    store.save(&batch_dir.join(STORE_DIR))?;
    write_jsonl(&batch_dir.join(CHANGES_FILE), &applied)?;
    manifest.model_version = Some(scorer.model_version().to_string());
    manifest.finish(batch_dir)?;
    println!(
        "diff: {} items, {} keyphrases changed; scored {}, rewritten {}, removed {}; store now {} records",
        changed_items.len(),
        new_kps.len(),
        report.scored,
        report.rewritten,
        report.removed,
        store.len()
    );
    Ok(())
}

pub fn serve(
    cfg: &RunConfig,
    world: &Path,
    model: &str,
    batch_dir: &Path,
    features: &[PathBuf],
    addr: Option<&str>,
    window_ms: Option<u64>,
) -> Result<()> {
    let w = WorldDir::open(world)?;
    let mut manifest = RunManifest::new("serve", cfg);
    let ck = load_model(model, &w.vocab()?, cfg, &mut manifest)?;
    let scorer = Arc::new(Scorer::new(&ck));
    let store = ScoreStore::load(&batch_dir.join(STORE_DIR))?;
    let (mut live, _) = replay(&w, batch_dir)?;
    let enrichment = MapEnrichment::new(live.catalog.items.values().cloned(), live.catalog.keyphrases.values().cloned());
    for path in features {
        for change in read_changes(path).with_context(|| format!("reading features {}", path.display()))? {
            match change {
                Change::Item { item, .. } => enrichment.put_item(item),
                Change::Keyphrase {
                    keyphrase, category_id, ..
                } => {
                    if let Some(c) = category_id {
                        live.categories.insert(keyphrase.keyphrase_id, c);
                    }
                    enrichment.put_keyphrase(keyphrase);
                }
            }
        }
    }
    let source = pair_source(cfg.serve.pairs, &w, &live.categories)?;
    let pipeline = Arc::new(NrtPipeline::new(scorer, source, Arc::new(enrichment), live.catalog, store)?);
    let addr = addr.unwrap_or(&cfg.serve.addr).to_string();
    let window_ms = window_ms.unwrap_or(cfg.serve.window_ms);
    if window_ms == 0 {
        return Err(ConfigError("window_ms must be positive".into()).into());
    }
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let (router, ticker) = service(pipeline, window_ms, Arc::new(SystemClock))?;
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        println!("serving on http://{} (window {window_ms} ms)", listener.local_addr()?);
        axum::serve(listener, router)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        ticker.abort();
        anyhow::Ok(())
    })
}

pub struct BenchArgs {
    pub family: ModelFamily,
    pub n_items: usize,
    pub n_keyphrases: usize,
    pub n_pairs: usize,
    pub repeats: usize,
}

pub fn bench(cfg: &RunConfig, args: &BenchArgs, out: Option<&Path>) -> Result<()> {
    if args.repeats == 0 {
        return Err(ConfigError("--repeats must be positive".into()).into());
    }
    let report = bench_throughput(args.family, args.n_items, args.n_keyphrases, args.n_pairs, args.repeats, cfg.seed)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if let Some(dir) = out {
        create_dir(dir)?;
        write_json(&dir.join("bench.json"), &report)?;
        RunManifest::new("bench", cfg).finish(dir)?;
    }
    Ok(())
}

/// F1 of judgment-trained minus click-trained arms, per family that has both.
pub fn label_gaps(report: &StudyReport) -> Vec<(ModelFamily, f64)> {
    let families: Vec<ModelFamily> = report.arms.iter().map(|a| a.arm.model).collect();
    let mut out: Vec<(ModelFamily, f64)> = Vec::new();
    for f in families {
        if f == ModelFamily::Jaccard || out.iter().any(|(g, _)| *g == f) {
            continue;
        }
        let find = |l| report.arms.iter().find(|a| a.arm.model == f && a.arm.labels == l);
        if let (Some(j), Some(c)) = (find(LabelSource::Judgments), find(LabelSource::Clicks)) {
            out.push((f, j.report.f1 - c.report.f1));
        }
    }
    out
}

pub fn experiment(cfg: &RunConfig, out: &Path, min_gap: Option<f64>) -> Result<()> {
    let report = run_study(&cfg.experiment())?;
    let table = format_table(&report.rows());
    let gaps = label_gaps(&report);
    let mut text = table.clone();
    text.push_str(&format!(
        "\nclick positives {}, Search-failing share {:.3}\n",
        report.click_positives, report.middleman.oracle_fail_fraction
    ));
    for (f, gap) in &gaps {
        text.push_str(&format!("{}: judgment-trained F1 - click-trained F1 = {gap:+.4}\n", f.name()));
    }
    print!("{text}");
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_atomic(&out.join("table.txt"), text.as_bytes())?;
    RunManifest::new("experiment", cfg).finish(out)?;
    if let Some(min) = min_gap.or(cfg.experiment.min_gap) {
        if gaps.is_empty() {
            return Err(ConfigError("min_gap needs an arm trained on both label sources".into()).into());
        }
        let short: Vec<String> = gaps
            .iter()
            .filter(|(_, g)| !(*g >= min))
            .map(|(f, g)| format!("{} {g:+.4}", f.name()))
            .collect();
        if !short.is_empty() {
            return Err(GateFailure(format!("label gap below {min}: {}", short.join(", "))).into());
        }
    }
    Ok(())
}
